"""Point-voxel convolution networks on the CPU: numpy kernels with
reverse-mode autodiff, training, verification and benchmarking.

Attributes are loaded lazily so that importing :mod:`pvcnet` (or its CLI)
stays cheap until numerics are actually needed; the command line uses this
window to pin BLAS thread counts before numpy comes in.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    # tensor engine
    "Tensor": "tensor",
    "GradTape": "tensor",
    "no_grad": "tensor",
    "gradcheck": "tensor",
    "GradcheckReport": "tensor",
    # geometry + data
    "PointCloud": "geometry",
    "GridSpec": "geometry",
    "voxelize": "geometry",
    "devoxelize": "geometry",
    "normalize_cloud": "geometry",
    "read_cloud": "data",
    "write_cloud": "data",
    "read_cloud_csv": "data",
    "write_cloud_csv": "data",
    "generate_scene": "data",
    "synthetic_dataset": "data",
    "split_blocks": "data",
    # model + training
    "NetworkConfig": "network",
    "Switches": "network",
    "NetworkParams": "network",
    "init_network_params": "network",
    "network_geometry": "network",
    "forward": "network",
    "forward_cloud": "network",
    "count_parameters": "network",
    "train": "train",
    "evaluate": "train",
    "Metrics": "train",
    "save_checkpoint": "train",
    "load_checkpoint": "train",
    # verification + benchmarking
    "gradcheck_suite": "verify",
    "run_benchmark": "bench",
    "compare_knn": "bench",
    # errors
    "ConfigError": "errors",
    "DimensionError": "errors",
    "DomainError": "errors",
    "FormatError": "errors",
    "TrainingError": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(import_module(f".{module}", __name__), name)


def __dir__():
    return __all__
