"""Alternating least squares solvers: plain TALS and slab-reweighted IRALS.

Both solvers sweep the factors in the order A, B, C (IRALS then refreshes
the slab weights) and stop when the absolute change of the tracked cost
drops below ``tol_abs_cost`` or after ``max_iters`` sweeps.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .model import FactorTriple, reconstruct, phi_p, weight_update
from .tensor_core import as_tensor, khatri_rao, mttkrp, unfold

log = logging.getLogger(__name__)

JITTER_STEPS = (0.0, 1e-12, 1e-8)


class SingularGramError(LinAlgError):
    """Raised when an R x R normal-equation matrix stays singular after jitter."""


@dataclass
class SolverConfig:
    """Settings shared by :func:`tals`, :func:`irals` and the constrained solver.

    ``init`` is ``"random"``, ``"tals"`` (run ``init_iters`` TALS sweeps from a
    random start) or a :class:`FactorTriple` used as given.
    """

    p: float = 0.5
    eps: float = 1e-4
    max_iters: int = 1000
    tol_abs_cost: float = 1e-8
    ridge_jitter: float = 0.0
    init: object = "random"
    init_iters: int = 50
    seed: int | None = 0

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.tol_abs_cost > 0:
            raise ValueError(f"tol_abs_cost must be positive, got {self.tol_abs_cost}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ridge_jitter < 0:
            raise ValueError("ridge_jitter must be nonnegative")


@dataclass
class FitResult:
    factors: FactorTriple
    weights: np.ndarray
    cost_trace: np.ndarray
    iterations: int
    converged: bool
    info: dict = field(default_factory=dict)


def solve_gram(G, rhs, ridge=0.0):
    """Solve ``(G + ridge I) X = rhs`` for symmetric PSD ``G``.

    Cholesky first; on failure a diagonal jitter of ``delta * trace(G) / R``
    is tried for each delta in ``JITTER_STEPS``.
    """
    R = G.shape[0]
    scale = np.trace(G) / R
    if not np.isfinite(scale):
        raise SingularGramError("Gram matrix has non-finite entries")
    if scale <= 0:
        scale = 1.0
    eye = np.eye(R)
    for delta in JITTER_STEPS:
        try:
            c = cho_factor(G + (ridge + delta * scale) * eye, lower=True, check_finite=False)
        except LinAlgError:
            continue
        X = cho_solve(c, rhs, check_finite=False)
        if np.all(np.isfinite(X)):
            if delta:
                log.debug("gram solve needed jitter %g", delta)
            return X
    raise SingularGramError(f"{R}x{R} Gram matrix is numerically singular")


def _check_rank(shape, R):
    I, J, K = shape
    if R < 1:
        raise ValueError("rank must be >= 1")
    if R > min(I * J, J * K, I * K):
        raise ValueError(f"rank {R} exceeds min(IJ, JK, IK) = {min(I * J, J * K, I * K)}")


def _check_weights(w, I):
    w = np.asarray(w, dtype=float)
    if w.shape != (I,):
        raise ValueError(f"need {I} slab weights, got shape {w.shape}")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("slab weights must be finite and strictly positive")
    return w


def factor_system(mode, t, f, w=None):
    """Gram matrix and right-hand side of one weighted factor subproblem.

    Returns ``(G, M)`` with ``G`` the R x R Hadamard gram and ``M`` the
    R x n MTTKRP, so the unconstrained update is ``solve(G, M).T``. Weights
    enter through ``W^2 A`` only; ``W kron I`` is never formed. The A
    subproblem separates over rows of A, each scaled by its own weight, so
    its minimizer does not depend on `w`.
    """
    A, B, C = f.A, f.B, f.C
    if mode == 3:
        return (C.T @ C) * (B.T @ B), mttkrp(t, C, B, 3)
    w2A = A if w is None else A * w[:, None]
    AwA = A.T @ w2A
    if mode == 1:
        return AwA * (C.T @ C), mttkrp(t, w2A, C, 1)
    if mode == 2:
        return (B.T @ B) * AwA, mttkrp(t, B, w2A, 2)
    raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def weighted_ls_factor(mode, t, f, w=None, ridge=0.0):
    """Exact minimizer of the slab-weighted least-squares problem for one factor.

    Mode 1 returns B, mode 2 returns C, mode 3 returns A. `w` holds the
    slab weights ``w_i`` (``W = Diag(sqrt(w))``); ``None`` means all ones.
    `ridge` adds ``ridge * ||factor||_F^2`` to the objective.
    """
    t = np.asarray(t, dtype=float)
    if tuple(t.shape) != f.shape:
        raise ValueError(f"tensor shape {t.shape} does not match factors {f.shape}")
    if w is not None:
        w = _check_weights(w, t.shape[0])
    G, M = factor_system(mode, t, f, w)
    return solve_gram(G, M, ridge).T


def residual_norms_sq(X3, f):
    """Squared residual norm of each horizontal slab given the mode-3 unfolding."""
    resid = X3 - khatri_rao(f.C, f.B) @ f.A.T
    return np.einsum("ij,ij->j", resid, resid)


def init_factors(strategy, t, R, seed=None, iters=50):
    """Starting factors: ``"random"``, ``"tals"`` or a given :class:`FactorTriple`."""
    t = np.asarray(t, dtype=float)
    I, J, K = t.shape
    if isinstance(strategy, FactorTriple):
        if strategy.shape != (I, J, K) or strategy.rank != R:
            raise ValueError(
                f"given factors have shape {strategy.shape} and rank {strategy.rank}, "
                f"need {(I, J, K)} and {R}"
            )
        return strategy
    if strategy == "random":
        rng = np.random.default_rng(seed)
        return FactorTriple(
            rng.standard_normal((I, R)), rng.standard_normal((J, R)), rng.standard_normal((K, R))
        )
    if strategy == "tals":
        cfg = SolverConfig(max_iters=iters, init="random", seed=seed)
        return tals(t, R, cfg).factors
    raise ValueError(f"unknown init strategy {strategy!r}")


def tals(t, R, cfg=None):
    """Trilinear alternating least squares on ``||X - [[A, B, C]]||_F^2``."""
    cfg = cfg or SolverConfig()
    t = as_tensor(t)
    _check_rank(t.shape, R)
    f = init_factors(cfg.init, t, R, cfg.seed, cfg.init_iters)
    X3 = unfold(t, 3)

    trace = [float(np.sum(residual_norms_sq(X3, f)))]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        f = _sweep(t, f, None, cfg.ridge_jitter)
        trace.append(float(np.sum(residual_norms_sq(X3, f))))
        if abs(trace[-2] - trace[-1]) < cfg.tol_abs_cost:
            converged = True
            break
    return FitResult(f, np.ones(t.shape[0]), np.asarray(trace), it, converged)


def _sweep(t, f, w, ridge):
    f = f.replace(A=weighted_ls_factor(3, t, f, w, ridge))
    f = f.replace(B=weighted_ls_factor(1, t, f, w, ridge))
    return f.replace(C=weighted_ls_factor(2, t, f, w, ridge))


def surrogate_cost(r2, w, p, eps):
    """Weighted surrogate from precomputed squared slab residuals."""
    return float(np.sum(w * r2) + np.sum(phi_p(w, p, eps)))


def irals(t, R, cfg=None):
    """Iteratively reweighted ALS for the smoothed l_p slab-sparse fit.

    Starts from ``W = I``, then repeats: A from the unweighted normal
    equations, B and C from the slab-weighted ones, and every weight set to
    its closed-form optimum given the new residuals. ``cost_trace`` holds
    the weighted surrogate after each sweep (entry 0 at the start point).
    Small final weights flag outlying slabs.
    """
    cfg = cfg or SolverConfig()
    t = as_tensor(t)
    _check_rank(t.shape, R)
    f = init_factors(cfg.init, t, R, cfg.seed, cfg.init_iters)
    X3 = unfold(t, 3)
    w = np.ones(t.shape[0])

    trace = [surrogate_cost(residual_norms_sq(X3, f), w, cfg.p, cfg.eps)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        f = _sweep(t, f, w, cfg.ridge_jitter)
        r2 = residual_norms_sq(X3, f)
        w = weight_update(r2, cfg.p, cfg.eps)
        trace.append(surrogate_cost(r2, w, cfg.p, cfg.eps))
        if abs(trace[-2] - trace[-1]) < cfg.tol_abs_cost:
            converged = True
            break
    return FitResult(f, np.asarray(w), np.asarray(trace), it, converged)


def relative_error(t, f):
    """Relative reconstruction error ``||X - [[A, B, C]]|| / ||X||``."""
    t = np.asarray(t, dtype=float)
    nrm = np.linalg.norm(t)
    err = np.linalg.norm(t - reconstruct(f))
    return err / nrm if nrm else err
