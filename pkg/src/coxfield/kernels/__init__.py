from .influence_kernel import (
    KERNELS,
    GaussianKernel,
    InfluenceKernel,
    MarkFullKernel,
    MarkRangeKernel,
    MarkStrengthKernel,
    NoInfluence,
    kernel_class,
    kernel_from_config,
)

__all__ = [
    "KERNELS",
    "GaussianKernel",
    "InfluenceKernel",
    "MarkFullKernel",
    "MarkRangeKernel",
    "MarkStrengthKernel",
    "NoInfluence",
    "kernel_class",
    "kernel_from_config",
]
