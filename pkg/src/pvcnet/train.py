"""Training loop: Adam with step decay, accumulation over variable-size clouds.

Clouds in a batch are processed one at a time with gradients accumulated at
1/batch scale, so variable point counts never need padding. Voxelization and
neighbor search depend only on positions, which are constant, so the geometry
for every cloud is computed once up front and reused across epochs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import ByteCursor
from .errors import DomainError, FormatError, TrainingError
from .geometry import PointCloud, normalize_cloud
from .heads import classification_loss, segmentation_loss
from .network import (
    ForwardResult,
    NetworkConfig,
    NetworkGeometry,
    NetworkParams,
    config_from_dict,
    config_to_dict,
    forward,
    init_network_params,
    network_geometry,
)
from .tensor import GradTape

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BASE_LR = 1e-3
LR_DECAY = 0.5
LR_DECAY_EPOCHS = 20
DEFAULT_BATCH_SIZE = 16


def lr_at_epoch(epoch: int, base_lr: float = BASE_LR) -> float:
    """Step decay: halves every 20 epochs."""
    return base_lr * LR_DECAY ** (epoch // LR_DECAY_EPOCHS)


@dataclass
class OptimState:
    """Per-parameter Adam moment accumulators, keyed by parameter name."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def init_optim_state(params: NetworkParams) -> OptimState:
    state = OptimState()
    for name, t in params.named():
        state.m[name] = np.zeros_like(t.data, dtype=np.float64)
        state.v[name] = np.zeros_like(t.data, dtype=np.float64)
    return state


def adam_step(state: OptimState, params: NetworkParams, lr: float) -> None:
    """Bias-corrected Adam update in float64, written back at parameter dtype."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, p in params.named():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        g64 = g.astype(np.float64, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g64
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g64 * g64
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    per_class_iou: np.ndarray  # NaN for classes absent from prediction and truth
    mean_iou: float
    per_head_accuracy: list
    confusion: np.ndarray  # rows: ground truth, cols: prediction


def _iou_from_confusion(confusion: np.ndarray):
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    iou = np.full(confusion.shape[0], np.nan)
    iou[present] = tp[present] / denom[present]
    mean = float(iou[present].mean()) if present.any() else 0.0
    return iou, mean


def metrics_from_confusion(confusion: np.ndarray, per_head=None) -> Metrics:
    total = confusion.sum()
    accuracy = float(np.diag(confusion).sum() / total) if total else 0.0
    iou, mean = _iou_from_confusion(confusion)
    return Metrics(
        accuracy=accuracy,
        per_class_iou=iou,
        mean_iou=mean,
        per_head_accuracy=list(per_head) if per_head is not None else [],
        confusion=confusion,
    )


def _accumulate_confusion(confusion, labels, pred, mask):
    keep = slice(None) if mask is None else mask
    true_kept = labels[keep]
    pred_kept = pred[keep]
    np.add.at(confusion, (true_kept, pred_kept), 1)


# ---------------------------------------------------------------------------
# Dataset preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedCloud:
    """A cloud with normalized positions and cached per-layer geometry."""

    cloud: PointCloud
    positions: np.ndarray
    geometry: NetworkGeometry

    @property
    def class_label(self) -> int:
        return int(self.cloud.labels[0])


def prepare_dataset(
    dataset: list, config: NetworkConfig, knn_method: str = "auto"
) -> list:
    if not dataset:
        raise DomainError("dataset is empty")
    prepared = []
    for cloud in dataset:
        if cloud.labels is None:
            raise DomainError("training requires labeled clouds")
        pos, _, _ = normalize_cloud(cloud.positions)
        prepared.append(
            PreparedCloud(
                cloud=cloud,
                positions=pos,
                geometry=network_geometry(pos, config, method=knn_method),
            )
        )
    return prepared


def _item_loss(config: NetworkConfig, params: NetworkParams, item: PreparedCloud):
    dtype = params.layers[0].point_w.dtype
    result = forward(
        config,
        params,
        item.positions,
        item.cloud.features.astype(dtype, copy=False),
        geometry=item.geometry,
    )
    if config.task == "classification":
        loss = classification_loss(result.class_scores, item.class_label)
        return loss, result
    for logp in result.head_log_probs:
        if not np.all(np.isfinite(logp.data)):
            raise TrainingError("non-finite head log-probabilities, training diverged")
    loss, _ = segmentation_loss(result.head_log_probs, item.cloud.labels, item.cloud.mask)
    return loss, result


def _item_confusion(confusion, config, result: ForwardResult, item: PreparedCloud):
    preds = result.predictions()
    if config.task == "classification":
        confusion[item.class_label, int(preds.labels[0])] += 1
    else:
        _accumulate_confusion(
            confusion, item.cloud.labels, preds.labels, item.cloud.mask
        )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    accuracy: float
    mean_iou: float


@dataclass
class TrainResult:
    params: NetworkParams
    history: list
    best_mean_iou: float
    best_epoch: int
    best_state: dict


def train(
    config: NetworkConfig,
    dataset: list,
    epochs: int,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    target_accuracy: float | None = None,
    knn_method: str = "auto",
    dtype=np.float32,
    params: NetworkParams | None = None,
    log_fn=None,
) -> TrainResult:
    """Train on a list of labeled clouds; returns final params plus history.

    Deterministic for a fixed seed and thread count: init, shuffling and every
    reduction happen in fixed order. Stops early once training accuracy
    reaches ``target_accuracy``.
    """
    if epochs < 1:
        raise DomainError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_network_params(rng, config, dtype=dtype)
    state = init_optim_state(params)
    items = prepare_dataset(dataset, config, knn_method)

    history = []
    best_miou, best_epoch = -1.0, -1
    best_state = params.state_dict()
    for epoch in range(epochs):
        lr = lr_at_epoch(epoch)
        order = rng.permutation(len(items))
        confusion = np.zeros((config.num_classes, config.num_classes), dtype=np.int64)
        loss_sum, loss_count = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            for _, p in params.named():
                p.zero_grad()
            scale = 1.0 / len(batch)
            for idx in batch:
                item = items[idx]
                with GradTape() as tape:
                    loss, result = _item_loss(config, params, item)
                    scaled = loss * scale
                tape.backward(scaled)
                loss_val = float(loss.item())
                if not np.isfinite(loss_val):
                    raise TrainingError(f"loss diverged at epoch {epoch}")
                loss_sum += loss_val
                loss_count += 1
                _item_confusion(confusion, config, result, item)
            adam_step(state, params, lr)

        metrics = metrics_from_confusion(confusion)
        stats = EpochStats(
            epoch=epoch,
            lr=lr,
            loss=loss_sum / loss_count,
            accuracy=metrics.accuracy,
            mean_iou=metrics.mean_iou,
        )
        history.append(stats)
        if log_fn is not None:
            log_fn(stats)
        if metrics.mean_iou > best_miou:
            best_miou = metrics.mean_iou
            best_epoch = epoch
            best_state = params.state_dict()
        if target_accuracy is not None and metrics.accuracy >= target_accuracy:
            break

    return TrainResult(
        params=params,
        history=history,
        best_mean_iou=best_miou,
        best_epoch=best_epoch,
        best_state=best_state,
    )


def evaluate(
    config: NetworkConfig,
    params: NetworkParams,
    dataset: list,
    knn_method: str = "auto",
) -> Metrics:
    """Accuracy and IoU over unmasked points (overall accuracy for classification)."""
    items = prepare_dataset(dataset, config, knn_method)
    n_heads = 1 if config.task == "classification" else len(params.heads.aux)
    confusion = np.zeros((config.num_classes, config.num_classes), dtype=np.int64)
    head_hits = np.zeros(n_heads, dtype=np.int64)
    head_total = 0
    for item in items:
        dtype = params.layers[0].point_w.dtype
        result = forward(
            config,
            params,
            item.positions,
            item.cloud.features.astype(dtype, copy=False),
            geometry=item.geometry,
        )
        preds = result.predictions()
        if config.task == "classification":
            pred = int(preds.labels[0])
            confusion[item.class_label, pred] += 1
            head_hits[0] += pred == item.class_label
            head_total += 1
        else:
            labels = item.cloud.labels
            mask = item.cloud.mask
            keep = slice(None) if mask is None else mask
            _accumulate_confusion(confusion, labels, preds.labels, mask)
            for h, probs in enumerate(preds.per_head_probs):
                head_pred = probs.argmax(axis=1)
                head_hits[h] += int((head_pred[keep] == labels[keep]).sum())
            head_total += int(labels[keep].size)
    per_head = (head_hits / head_total).tolist() if head_total else []
    return metrics_from_confusion(confusion, per_head=per_head)


# ---------------------------------------------------------------------------
# Checkpoint file (PVCK)
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"PVCK"
_CKPT_VERSION = 1


def checkpoint_bytes(config: NetworkConfig, params: NetworkParams) -> bytes:
    config_json = json.dumps(config_to_dict(config), sort_keys=True).encode()
    named = params.named()
    parts = [
        _CKPT_MAGIC,
        struct.pack("<I", _CKPT_VERSION),
        struct.pack("<I", len(config_json)),
        config_json,
        struct.pack("<I", len(named)),
    ]
    for name, t in named:
        encoded = name.encode()
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, config: NetworkConfig, params: NetworkParams) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(config, params))


def load_checkpoint_bytes(data: bytes):
    cur = ByteCursor(data)
    if cur.take(4) != _CKPT_MAGIC:
        raise FormatError("bad checkpoint magic, expected PVCK")
    version = cur.u32()
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    config = config_from_dict(json.loads(cur.take(cur.u32()).decode()))
    params = init_network_params(np.random.default_rng(0), config, dtype=np.float32)
    expected = dict(params.named())
    n_params = cur.u32()
    if n_params != len(expected):
        raise FormatError(
            f"checkpoint stores {n_params} parameters, config implies {len(expected)}"
        )
    state = {}
    for _ in range(n_params):
        name = cur.take(cur.u32()).decode()
        rank = cur.u32()
        shape = struct.unpack(f"<{rank}I", cur.take(4 * rank))
        values = np.frombuffer(
            cur.take(4 * int(np.prod(shape, dtype=np.int64))), dtype="<f4"
        ).reshape(shape)
        if name not in expected:
            raise FormatError(f"checkpoint has unexpected parameter {name!r}")
        state[name] = values.copy()
    cur.expect_end("checkpoint")
    params.load_state_dict(state)
    return config, params


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())
