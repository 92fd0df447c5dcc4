"""Classical EMD approximations: Chamfer distance and Sinkhorn scaling.

Sinkhorn uses the uniform-marginal convention: both marginals are 1/N, so
the transport cost <plan, c> compares to (exact EMD) / N. Callers reporting
against EMD should use :meth:`SinkhornResult.emd_scale_distance`, which
multiplies back by N.

This is the plain (non log-space) scaling variant; instead of numerical
stabilisation it detects breakdown (NaN/Inf scalings or a zero row/column
in the kernel) and reports ``NUMERICAL_FAILURE`` so callers can count and
skip failed pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import CostMatrix, GradientField, Norm, PointCloud, SoftMatching

__all__ = [
    "ChamferResult",
    "SinkhornStatus",
    "SinkhornResult",
    "chamfer",
    "chamfer_gradient",
    "relative_lambda",
    "sinkhorn",
    "sinkhorn_matching",
    "sinkhorn_gradient",
]


@dataclass(frozen=True)
class ChamferResult:
    """Chamfer distance plus the argmin index arrays that produced it.

    nn_fwd[i] is the target point nearest to source point i; nn_bwd[j] the
    source point nearest to target point j.
    """

    distance: float
    nn_fwd: np.ndarray
    nn_bwd: np.ndarray


def _cross_distances(u: PointCloud, v: PointCloud, norm: Norm) -> np.ndarray:
    diff = u.points[:, None, :] - v.points[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return np.sqrt(sq) if norm is Norm.L2 else sq


def chamfer(u: PointCloud, v: PointCloud, norm: Norm = Norm.L2_SQUARED) -> ChamferResult:
    """Sum of nearest-neighbour distances in both directions.

    Cloud sizes may differ. The squared form is the textbook definition;
    ``Norm.L2`` makes the value comparable to EMD.
    """
    if u.d != v.d:
        raise ValueError(f"clouds must have the same dimension ({u.d} != {v.d})")
    d = _cross_distances(u, v, norm)
    nn_fwd = d.argmin(axis=1)
    nn_bwd = d.argmin(axis=0)
    distance = float(d[np.arange(u.n), nn_fwd].sum() + d[nn_bwd, np.arange(v.n)].sum())
    return ChamferResult(distance=distance, nn_fwd=nn_fwd, nn_bwd=nn_bwd)


def chamfer_gradient(
    u: PointCloud, v: PointCloud, r: ChamferResult, norm: Norm = Norm.L2_SQUARED
) -> GradientField:
    """Analytic gradient of the Chamfer sum w.r.t. each target point.

    The argmin indices recorded in ``r`` are held fixed, which matches the
    piecewise-smooth structure of the distance away from argmin switches.
    """

    def directed(diff: np.ndarray) -> np.ndarray:
        # d/dx of ||x - y|| (or ||x - y||^2) evaluated at diff = x - y
        if norm is Norm.L2_SQUARED:
            return 2.0 * diff
        norms = np.linalg.norm(diff, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(norms > 0, diff / norms, 0.0)

    grads = np.zeros_like(v.points)
    # forward sum: each source point pulls on its nearest target
    fwd = directed(v.points[r.nn_fwd] - u.points)
    np.add.at(grads, r.nn_fwd, fwd)
    # backward sum: each target point is pulled toward its nearest source
    grads += directed(v.points - u.points[r.nn_bwd])
    return grads


class SinkhornStatus(Enum):
    CONVERGED = "converged"
    ITER_LIMIT = "iter_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SinkhornResult:
    """Entropy-regularised transport plan with uniform 1/N marginals.

    ``distance`` is <plan, c>; ``plan`` is None when the run failed
    numerically. ``iterations_run`` counts full row+column scaling sweeps.
    """

    plan: np.ndarray | None
    distance: float
    iterations_run: int
    status: SinkhornStatus

    @property
    def failed(self) -> bool:
        return self.status is SinkhornStatus.NUMERICAL_FAILURE

    def emd_scale_distance(self) -> float:
        """Transport cost on the EMD scale (sum over points, not average)."""
        if self.failed:
            return float("nan")
        return self.distance * self.plan.shape[0]


def relative_lambda(c: CostMatrix | np.ndarray, mult: float = 0.1) -> float:
    """Regularisation strength tied to the cost scale: mult * mean(c)."""
    arr = c.c if isinstance(c, CostMatrix) else np.asarray(c)
    return float(mult * arr.mean())


def sinkhorn(
    c: CostMatrix | np.ndarray,
    lam: float | None = None,
    max_iters: int = 100,
    tol: float = 1e-9,
) -> SinkhornResult:
    """Sinkhorn-Knopp scaling of exp(-c / lam) toward uniform marginals.

    Stops when the worst marginal violation (max-norm against 1/N) drops to
    ``tol`` or after ``max_iters`` sweeps. ``lam=None`` uses the relative
    default 0.1 * mean(c); pass an absolute value to reproduce a fixed
    regularisation level.
    """
    arr = c.c if isinstance(c, CostMatrix) else np.asarray(c, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {arr.shape}")
    if not np.isfinite(arr).all() or (arr < 0).any():
        raise ValueError("cost entries must be finite and nonnegative")
    if lam is None:
        lam = relative_lambda(arr)
    if lam <= 0:
        raise ValueError("lam must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    n = arr.shape[0]
    marginal = 1.0 / n

    def failure(iters: int) -> SinkhornResult:
        return SinkhornResult(
            plan=None,
            distance=float("nan"),
            iterations_run=iters,
            status=SinkhornStatus.NUMERICAL_FAILURE,
        )

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        kernel = np.exp(-arr / lam)
        if (kernel.sum(axis=1) == 0).any() or (kernel.sum(axis=0) == 0).any():
            return failure(0)

        u = np.full(n, 1.0)
        v = np.full(n, 1.0)
        status = SinkhornStatus.ITER_LIMIT
        iters = 0
        for iters in range(1, max_iters + 1):
            kv = kernel @ v
            if (kv == 0).any():
                return failure(iters)
            u = marginal / kv
            ku = kernel.T @ u
            if (ku == 0).any():
                return failure(iters)
            v = marginal / ku
            if not (np.isfinite(u).all() and np.isfinite(v).all()):
                return failure(iters)
            plan = u[:, None] * kernel * v[None, :]
            violation = max(
                np.abs(plan.sum(axis=1) - marginal).max(),
                np.abs(plan.sum(axis=0) - marginal).max(),
            )
            if violation <= tol:
                status = SinkhornStatus.CONVERGED
                break
        if not np.isfinite(plan).all():
            return failure(iters)

    distance = float(np.sum(plan * arr))
    return SinkhornResult(plan=plan, distance=distance, iterations_run=iters, status=status)


def sinkhorn_matching(r: SinkhornResult) -> SoftMatching:
    """Argmax extraction of directed matchings from a transport plan.

    forward[i] = argmax_j plan[i, j]; backward[j] = argmax_i plan[i, j].
    Ties resolve to the smallest index.
    """
    if r.failed:
        raise RuntimeError("cannot extract a matching from a failed Sinkhorn run")
    return SoftMatching(
        forward=r.plan.argmax(axis=1), backward=r.plan.argmax(axis=0)
    )


def sinkhorn_gradient(u: PointCloud, v: PointCloud, r: SinkhornResult) -> GradientField:
    """Gradient of <plan, c(u, v)> w.r.t. target points, with the plan frozen.

    Row j sums plan[i, j] * (v_j - u_i) / ||v_j - u_i|| over sources; pairs
    with coincident points contribute zero.
    """
    if r.failed:
        raise RuntimeError("cannot differentiate a failed Sinkhorn run")
    diff = v.points[None, :, :] - u.points[:, None, :]  # (i, j, d)
    norms = np.linalg.norm(diff, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(norms > 0, r.plan / norms, 0.0)
    return np.einsum("ij,ijd->jd", w, diff)
