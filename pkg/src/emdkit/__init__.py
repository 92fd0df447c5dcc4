"""emdkit: point-cloud optimal transport with exact, classical and learned solvers."""

from .core import (
    CloudPair,
    CostMatrix,
    Matching,
    Norm,
    PointCloud,
    SoftMatching,
    apply_permutation,
    pairwise_cost,
    substream,
)
from .exact import ExactResult, brute_force, emd, emd_gradient, hungarian
from .approx import (
    ChamferResult,
    SinkhornResult,
    SinkhornStatus,
    chamfer,
    chamfer_gradient,
    relative_lambda,
    sinkhorn,
    sinkhorn_gradient,
    sinkhorn_matching,
)

__version__ = "0.1.0"
