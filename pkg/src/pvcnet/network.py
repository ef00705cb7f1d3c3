"""Network assembly: stacked point-voxel layers plus task heads.

The backbone is a fixed stack of point-voxel convolution layers run at
decreasing grid resolutions with increasing neighbor dilations. Channel widths
double per layer from a base width scaled by the width multiplier. All
parameters are created unconditionally so that ablation switches never change
the random init stream.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .geometry import PointCloud
from .heads import (
    HeadParams,
    Predictions,
    auxiliary_head,
    build_global_feature,
    classification_head,
    init_head_params,
    predictions_from_log_probs,
)
from .layer import init_layer_params, layer_geometry, pvc_forward
from .neighbors import NeighborConfig
from .tensor import Tensor

TASKS = ("segmentation", "classification")


@dataclass(frozen=True)
class Switches:
    """Ablation toggles; each guards exactly one architectural path."""

    local_aggregation: bool = True
    fsm: bool = True
    cam: bool = True


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int
    in_features: int = 3
    num_layers: int = 4
    grid_sizes: tuple = (32, 16, 8, 4)
    k_neighbors: int = 32
    dilations: tuple = (1, 2, 4, 8)
    base_channels: int = 64
    width: float = 1.0
    task: str = "segmentation"
    switches: Switches = field(default_factory=Switches)

    def __post_init__(self):
        object.__setattr__(self, "grid_sizes", tuple(int(g) for g in self.grid_sizes))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if isinstance(self.switches, dict):
            object.__setattr__(self, "switches", Switches(**self.switches))
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if len(self.grid_sizes) != self.num_layers:
            raise ConfigError(
                f"expected {self.num_layers} grid sizes, got {len(self.grid_sizes)}"
            )
        if len(self.dilations) != self.num_layers:
            raise ConfigError(
                f"expected {self.num_layers} dilations, got {len(self.dilations)}"
            )
        if any(g < 1 for g in self.grid_sizes):
            raise ConfigError(f"grid sizes must be >= 1, got {self.grid_sizes}")
        if any(d < 1 for d in self.dilations):
            raise ConfigError(f"dilations must be >= 1, got {self.dilations}")
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.in_features < 1:
            raise ConfigError(f"in_features must be >= 1, got {self.in_features}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if not self.width > 0:
            raise ConfigError(f"width must be positive, got {self.width}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")

    def layer_channels(self) -> list:
        """Per-layer output widths: scaled base doubling each layer."""
        c0 = max(1, int(round(self.width * self.base_channels)))
        return [c0 * 2 ** i for i in range(self.num_layers)]


def config_to_dict(config: NetworkConfig) -> dict:
    d = asdict(config)
    d["grid_sizes"] = list(config.grid_sizes)
    d["dilations"] = list(config.dilations)
    return d


def config_from_dict(d: dict) -> NetworkConfig:
    d = dict(d)
    if "switches" in d and isinstance(d["switches"], dict):
        d["switches"] = Switches(**d["switches"])
    known = NetworkConfig.__dataclass_fields__.keys()
    extra = set(d) - set(known)
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if "num_classes" not in d:
        raise ConfigError("config is missing num_classes")
    return NetworkConfig(**d)


@dataclass
class NetworkParams:
    layers: list
    heads: HeadParams

    def named(self) -> list:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named(f"layer{i}."))
        out.extend(self.heads.named("heads."))
        return out

    def state_dict(self) -> dict:
        return {name: t.data.copy() for name, t in self.named()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, t in own.items():
            arr = state[name]
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"{name}: stored shape {arr.shape} != expected {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype, copy=True)


def count_parameters(params: NetworkParams) -> int:
    return sum(t.data.size for _, t in params.named())


def init_network_params(
    rng: np.random.Generator, config: NetworkConfig, dtype=np.float32
) -> NetworkParams:
    """Draw every parameter in a fixed order independent of the switches."""
    channels = config.layer_channels()
    layers = []
    c_in = config.in_features
    for c_out in channels:
        layers.append(init_layer_params(rng, c_in, c_out, dtype=dtype, k_neighbors=config.k_neighbors))
        c_in = c_out
    heads = init_head_params(rng, channels, config.num_classes, config.task, dtype)
    return NetworkParams(layers=layers, heads=heads)


# ---------------------------------------------------------------------------
# Geometry cache and forward pass
# ---------------------------------------------------------------------------


@dataclass
class NetworkGeometry:
    """Voxelization and neighbor tables for one cloud, all layers.

    Positions never change during training, so this is computed once per
    cloud and reused every epoch.
    """

    layers: list


def network_geometry(
    positions: np.ndarray, config: NetworkConfig, method: str = "auto"
) -> NetworkGeometry:
    layers = []
    for grid_size, dilation in zip(config.grid_sizes, config.dilations):
        nbr = NeighborConfig(k=config.k_neighbors, dilation=dilation)
        layers.append(layer_geometry(positions, grid_size, nbr, method=method))
    return NetworkGeometry(layers=layers)


@dataclass
class ForwardResult:
    layer_outputs: list
    head_log_probs: list
    class_scores: Tensor | None = None

    def predictions(self) -> Predictions:
        if self.class_scores is not None:
            probs = np.exp(
                self.class_scores.data.astype(np.float64)
                - self.class_scores.data.max()
            )
            probs = probs / probs.sum()
            return Predictions(per_head_probs=[probs], final_probs=probs)
        return predictions_from_log_probs(self.head_log_probs)


def forward(
    config: NetworkConfig,
    params: NetworkParams,
    positions: np.ndarray,
    features: Tensor | np.ndarray,
    geometry: NetworkGeometry | None = None,
    knn_method: str = "auto",
) -> ForwardResult:
    """Run the backbone and heads on one cloud.

    Positions are expected normalized to the unit cube; they drive voxel and
    neighbor geometry only and carry no gradient.
    """
    if not isinstance(features, Tensor):
        features = Tensor(features)
    if features.shape[1] != config.in_features:
        raise DimensionError(
            f"expected {config.in_features} input features, got {features.shape[1]}"
        )
    if positions.shape[0] != features.shape[0]:
        raise DimensionError(
            f"positions have {positions.shape[0]} points, features {features.shape[0]}"
        )
    if len(params.layers) != config.num_layers:
        raise ConfigError(
            f"params hold {len(params.layers)} layers, config wants {config.num_layers}"
        )

    sw = config.switches
    x = features
    outputs = []
    for i, layer in enumerate(params.layers):
        geo = geometry.layers[i] if geometry is not None else None
        x = pvc_forward(
            positions,
            x,
            layer,
            config.grid_sizes[i],
            NeighborConfig(k=config.k_neighbors, dilation=config.dilations[i]),
            local_aggregation=sw.local_aggregation,
            fsm=sw.fsm,
            geometry=geo,
            knn_method=knn_method,
        )
        outputs.append(x)

    if config.task == "classification":
        scores = classification_head(outputs, params.heads)
        return ForwardResult(layer_outputs=outputs, head_log_probs=[], class_scores=scores)

    global_feat = build_global_feature(outputs, params.heads)
    log_probs = [
        auxiliary_head(out, global_feat, head, use_cam=sw.cam)
        for out, head in zip(outputs, params.heads.aux)
    ]
    return ForwardResult(layer_outputs=outputs, head_log_probs=log_probs)


def forward_cloud(
    config: NetworkConfig,
    params: NetworkParams,
    cloud: PointCloud,
    geometry: NetworkGeometry | None = None,
    knn_method: str = "auto",
) -> ForwardResult:
    dtype = params.layers[0].point_w.dtype
    return forward(
        config,
        params,
        cloud.positions,
        cloud.features.astype(dtype, copy=False),
        geometry=geometry,
        knn_method=knn_method,
    )
