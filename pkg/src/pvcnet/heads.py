"""Prediction heads: deep supervision for segmentation, max-pool classification.

Every layer of the backbone gets its own auxiliary classifier. The layer
outputs are concatenated into a global per-point feature, reduced by an MLP,
re-attached to each layer's output, passed through a channel attention block,
and classified. Training sums the per-head losses; prediction averages the
per-head probabilities. Classification replaces all of that with a single
max-pooled feature and one linear map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .tensor import (
    Tensor,
    concat,
    gather_rows,
    log_softmax,
    matmul,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    softmax,
    transpose,
)


@dataclass
class AuxHeadParams:
    """One per-layer classifier: projection, attention scale, linear classifier."""

    proj_w: Tensor
    proj_b: Tensor
    gamma: Tensor  # channel-attention residual scale, starts at 0 (identity)
    cls_w: Tensor
    cls_b: Tensor

    def named(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [
            (prefix + "proj_w", self.proj_w),
            (prefix + "proj_b", self.proj_b),
            (prefix + "gamma", self.gamma),
            (prefix + "cls_w", self.cls_w),
            (prefix + "cls_b", self.cls_b),
        ]


@dataclass
class HeadParams:
    """Head parameters for one task.

    Segmentation: ``reduce_*`` compress the concatenated layer outputs to the
    global width, ``aux`` holds one classifier per backbone layer.
    Classification: only ``fc_*`` over the max-pooled concatenation.
    """

    reduce_w: Tensor | None = None
    reduce_b: Tensor | None = None
    aux: list[AuxHeadParams] = field(default_factory=list)
    fc_w: Tensor | None = None
    fc_b: Tensor | None = None

    def named(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        if self.reduce_w is not None:
            out.append((prefix + "reduce_w", self.reduce_w))
            out.append((prefix + "reduce_b", self.reduce_b))
        for i, head in enumerate(self.aux):
            out.extend(head.named(f"{prefix}aux{i}."))
        if self.fc_w is not None:
            out.append((prefix + "fc_w", self.fc_w))
            out.append((prefix + "fc_b", self.fc_b))
        return out


def _uniform_init(rng, shape, fan_in, dtype) -> Tensor:
    bound = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_head_params(
    rng: np.random.Generator,
    layer_channels: list[int],
    num_classes: int,
    task: str = "segmentation",
    dtype=np.float32,
) -> HeadParams:
    total = int(sum(layer_channels))
    if task == "classification":
        return HeadParams(
            fc_w=_uniform_init(rng, (total, num_classes), total, dtype),
            fc_b=_zeros((num_classes,), dtype),
        )
    c_g = 2 * int(layer_channels[0])
    params = HeadParams(
        reduce_w=_uniform_init(rng, (total, c_g), total, dtype),
        reduce_b=_zeros((c_g,), dtype),
    )
    for c_l in layer_channels:
        params.aux.append(
            AuxHeadParams(
                proj_w=_uniform_init(rng, (c_l + c_g, c_l), c_l + c_g, dtype),
                proj_b=_zeros((c_l,), dtype),
                gamma=_zeros((1,), dtype),
                cls_w=_uniform_init(rng, (c_l, num_classes), c_l, dtype),
                cls_b=_zeros((num_classes,), dtype),
            )
        )
    return params


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def build_global_feature(layer_outputs: list[Tensor], params: HeadParams) -> Tensor:
    """Concat all layer outputs channel-wise, then reduce: (N, C_g)."""
    n = layer_outputs[0].shape[0]
    for out in layer_outputs[1:]:
        if out.shape[0] != n:
            raise DimensionError(
                f"layer outputs disagree on point count: {n} vs {out.shape[0]}"
            )
    stacked = concat(layer_outputs, axis=1)
    return relu(matmul(stacked, params.reduce_w) + params.reduce_b)


def channel_affinity(f: Tensor) -> Tensor:
    """Row-normalized channel affinity A = softmax_rows(F^T F), shape (C, C)."""
    return softmax(matmul(transpose(f), f))


def channel_attention(f: Tensor, gamma: Tensor) -> Tensor:
    """Mix channels by their affinity, scaled into a residual: gamma*(F A^T) + F.

    With gamma at its zero init this is exactly the identity, so enabling the
    block never perturbs a fresh network.
    """
    affinity = channel_affinity(f)
    return gamma * matmul(f, transpose(affinity)) + f


def auxiliary_head(
    layer_out: Tensor,
    global_feat: Tensor,
    params: AuxHeadParams,
    use_cam: bool = True,
) -> Tensor:
    """Log-probabilities (N, num_classes) from one layer's output."""
    if layer_out.shape[0] != global_feat.shape[0]:
        raise DimensionError(
            f"point counts disagree: {layer_out.shape[0]} vs {global_feat.shape[0]}"
        )
    h = relu(matmul(concat([layer_out, global_feat], axis=1), params.proj_w) + params.proj_b)
    if use_cam:
        h = channel_attention(h, params.gamma)
    return log_softmax(matmul(h, params.cls_w) + params.cls_b)


# ---------------------------------------------------------------------------
# Predictions and losses
# ---------------------------------------------------------------------------


@dataclass
class Predictions:
    """Per-head and averaged class probabilities for one cloud."""

    per_head_probs: list[np.ndarray]
    final_probs: np.ndarray

    def __post_init__(self):
        for probs in self.per_head_probs + [self.final_probs]:
            sums = probs.sum(axis=-1)
            if not np.allclose(sums, 1.0, atol=1e-6):
                raise DomainError("probability rows do not sum to 1")

    @property
    def labels(self) -> np.ndarray:
        return self.final_probs.argmax(axis=-1)


def predictions_from_log_probs(head_log_probs: list[Tensor]) -> Predictions:
    per_head = [np.exp(lp.data.astype(np.float64)) for lp in head_log_probs]
    final = np.mean(per_head, axis=0)
    return Predictions(per_head_probs=per_head, final_probs=final)


def segmentation_loss(
    head_log_probs: list[Tensor],
    labels: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, Predictions]:
    """Sum over heads of the mean negative log-likelihood on unmasked points.

    Returns the differentiable loss and the (head-averaged) predictions.
    """
    if not head_log_probs:
        raise DimensionError("no prediction heads given")
    n, num_classes = head_log_probs[0].shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"labels must be ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(
            f"labels must be in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    keep = np.arange(n) if mask is None else np.flatnonzero(np.asarray(mask, dtype=bool))
    if keep.size == 0:
        raise DomainError("all points are masked out of the loss")

    dtype = head_log_probs[0].dtype
    onehot = np.zeros((keep.size, num_classes), dtype=dtype)
    onehot[np.arange(keep.size), labels[keep]] = 1.0
    onehot_t = Tensor(onehot)

    total = None
    for logp in head_log_probs:
        picked = reduce_sum(gather_rows(logp, keep) * onehot_t, 1)
        head_loss = reduce_mean(picked, 0) * -1.0
        total = head_loss if total is None else total + head_loss
    return total, predictions_from_log_probs(head_log_probs)


def classification_head(layer_outputs: list[Tensor], params: HeadParams) -> Tensor:
    """Max over points of the concatenated layer outputs -> class scores (1, K)."""
    stacked = concat(layer_outputs, axis=1)
    pooled = reshape(reduce_max(stacked, 0), (1, stacked.shape[1]))
    return matmul(pooled, params.fc_w) + params.fc_b


def classification_loss(scores: Tensor, label: int) -> Tensor:
    """Cross-entropy of one cloud-level label against (1, K) scores."""
    num_classes = scores.shape[1]
    if not 0 <= label < num_classes:
        raise DomainError(f"label {label} outside [0, {num_classes})")
    onehot = np.zeros((1, num_classes), dtype=scores.dtype)
    onehot[0, label] = 1.0
    picked = reduce_sum(reduce_sum(log_softmax(scores) * Tensor(onehot), 1), 0)
    return picked * -1.0
