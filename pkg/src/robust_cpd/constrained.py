"""Constrained and regularized IRALS with ADMM factor updates.

Each factor subproblem

    min_X  1/2 ||weighted fit||^2 + lam * g(X)   s.t.  X in S

is split as ``X = X1`` (least squares), ``X = X2`` (proximal step on ``g``)
and solved with scaled-dual ADMM; ``X`` itself is the projection of the
average of the two split variables onto ``S``. The tracked outer objective is

    1/2 * sum_i (||r_i||^2 + eps)^(p/2) + lam_a f(A) + lam_b g(B) + lam_c h(C)

evaluated after each full sweep (A, B, C, then the slab weights).
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import FactorTriple, phi_p, weight_update
from .solvers import (
    SolverConfig,
    FitResult,
    SingularGramError,
    factor_system,
    init_factors,
    residual_norms_sq,
    _check_rank,
    _check_weights,
)
from .tensor_core import as_tensor, unfold

log = logging.getLogger(__name__)

REGULARIZERS = ("none", "ridge", "smooth", "l1")
CONSTRAINTS = ("unconstrained", "nonnegative", "box")


@dataclass(frozen=True)
class Regularizer:
    """Penalty ``lam * g(X)`` on one factor.

    ``ridge``: ``g = 1/2 ||X||_F^2``; ``smooth``: ``g = 1/2 ||T X||_F^2`` with
    ``T`` the second-difference operator along the rows; ``l1``: ``g = ||X||_1``.
    """

    kind: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.kind!r}; choose from {REGULARIZERS}")
        if not self.lam >= 0:
            raise ValueError(f"regularization weight must be nonnegative, got {self.lam}")

    @property
    def active(self):
        return self.kind != "none" and self.lam > 0

    def value(self, X):
        if not self.active:
            return 0.0
        X = np.asarray(X)
        if self.kind == "ridge":
            return 0.5 * self.lam * float(np.sum(X**2))
        if self.kind == "smooth":
            return 0.5 * self.lam * float(np.sum((smoothness_operator(X.shape[0]) @ X) ** 2))
        return self.lam * float(np.sum(np.abs(X)))


@dataclass(frozen=True)
class ConstraintSet:
    kind: str = "unconstrained"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.kind!r}; choose from {CONSTRAINTS}")
        if self.kind == "box" and not self.lo < self.hi:
            raise ValueError(f"box needs lo < hi, got [{self.lo}, {self.hi}]")

    def contains(self, X, tol=0.0):
        X = np.asarray(X)
        if self.kind == "nonnegative":
            return bool(np.all(X >= -tol))
        if self.kind == "box":
            return bool(np.all((X >= self.lo - tol) & (X <= self.hi + tol)))
        return True


@dataclass
class AdmmConfig:
    """ADMM settings; ``rho=None`` uses the mean diagonal of the current gram.

    The inner loop stops once both ``||X - X1|| + ||X - X2||`` and the
    change of ``X`` over one step are at most ``tol_split``.
    """

    rho: float | None = None
    max_inner_iters: int = 500
    tol_split: float = 1e-6
    warm_start: bool = True

    def __post_init__(self):
        if self.rho is not None and not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")
        if not self.tol_split > 0:
            raise ValueError("tol_split must be positive")


@dataclass
class AdmmState:
    """Scaled duals carried between calls when warm starting."""

    U1: np.ndarray | None = None
    U2: np.ndarray | None = None
    rho: float | None = None
    iterations: int = 0
    split_residual: float = np.inf


def smoothness_operator(n):
    """``(n-2) x n`` second-difference matrix with stencil ``1 -2 1``."""
    if n < 3:
        raise ValueError(f"smoothness operator needs at least 3 rows, got {n}")
    T = np.zeros((n - 2, n))
    idx = np.arange(n - 2)
    T[idx, idx] = 1.0
    T[idx, idx + 1] = -2.0
    T[idx, idx + 2] = 1.0
    return T


def prox(reg, rho, V):
    """Minimizer of ``reg.lam * g(X) + rho/2 ||X - V||_F^2``."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    V = np.asarray(V, dtype=float)
    if not reg.active:
        return V.copy()
    lam = reg.lam
    if reg.kind == "ridge":
        return rho / (lam + rho) * V
    if reg.kind == "smooth":
        T = smoothness_operator(V.shape[0])
        H = lam * (T.T @ T) + rho * np.eye(V.shape[0])
        return np.linalg.solve(H, rho * V)
    thr = lam / rho
    return np.sign(V) * np.maximum(np.abs(V) - thr, 0.0)


def _prox_fn(reg, rho, n):
    """`prox` with `reg` and `rho` fixed; the smoothness system is factored once."""
    if reg.active and reg.kind == "smooth":
        T = smoothness_operator(n)
        c = cho_factor(reg.lam * (T.T @ T) + rho * np.eye(n), lower=True, check_finite=False)
        return lambda V: cho_solve(c, rho * V, check_finite=False)
    return lambda V: prox(reg, rho, V)


def project(cons, V):
    """Euclidean projection onto the constraint set."""
    V = np.asarray(V, dtype=float)
    if cons.kind == "nonnegative":
        return np.maximum(V, 0.0)
    if cons.kind == "box":
        return np.clip(V, cons.lo, cons.hi)
    return V.copy()


def admm_solve(G, M, X0, reg, cons, acfg, state=None):
    """ADMM for ``min 1/2 tr(X G X^T) - tr(M X) + lam g(X)`` over ``X in S``.

    `G` is R x R, `M` is R x n and `X0` (n x R) is the starting primal point.
    Returns the projected primal iterate; `state` (if given) receives the
    final duals, rho and convergence info.
    """
    state = state if state is not None else AdmmState()
    R = G.shape[0]
    rho = acfg.rho if acfg.rho is not None else float(np.trace(G)) / R
    if not rho > 0:
        rho = 1.0
    X = np.array(X0, dtype=float)
    if acfg.warm_start and state.U1 is not None and state.U1.shape == X.shape:
        # scaled duals are y / rho, so rescale if rho moved
        ratio = state.rho / rho
        U1, U2 = state.U1 * ratio, state.U2 * ratio
    else:
        U1, U2 = np.zeros_like(X), np.zeros_like(X)

    try:
        chol = cho_factor(G + rho * np.eye(R), lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularGramError("shifted gram is not positive definite") from exc

    prox_v = _prox_fn(reg, rho, X.shape[0])
    split = np.inf
    it = 0
    for it in range(1, acfg.max_inner_iters + 1):
        X_prev = X
        X1 = cho_solve(chol, M + rho * (X + U1).T, check_finite=False).T
        X2 = prox_v(X + U2)
        X = project(cons, 0.5 * (X1 - U1 + X2 - U2))
        U1 += X - X1
        U2 += X - X2
        split = np.linalg.norm(X - X1) + np.linalg.norm(X - X2)
        if not np.isfinite(split):
            raise FloatingPointError("ADMM produced non-finite iterates")
        # the split alone vanishes at the second step from any start, before
        # the duals settle, so the iterate change must be small as well
        if split <= acfg.tol_split and np.linalg.norm(X - X_prev) <= acfg.tol_split:
            break

    state.U1, state.U2, state.rho = U1, U2, rho
    state.iterations, state.split_residual = it, split
    return X


def _admm_factor(mode, t, f, w, reg, cons, acfg, state):
    G, M = factor_system(mode, t, f, w)
    X0 = {1: f.B, 2: f.C, 3: f.A}[mode]
    return admm_solve(G, M, X0, reg, cons, acfg, state)


def admm_update_B(t, f, w, reg=Regularizer(), cons=ConstraintSet(), acfg=None, state=None):
    """ADMM update of B with slab weights `w` (mode-1 unfolding)."""
    w = _check_weights(w, np.shape(t)[0])
    return _admm_factor(1, t, f, w, reg, cons, acfg or AdmmConfig(), state)


def admm_update_C(t, f, w, reg=Regularizer(), cons=ConstraintSet(), acfg=None, state=None):
    """ADMM update of C with slab weights `w` (mode-2 unfolding)."""
    w = _check_weights(w, np.shape(t)[0])
    return _admm_factor(2, t, f, w, reg, cons, acfg or AdmmConfig(), state)


def admm_update_A(t, f, reg=Regularizer(), cons=ConstraintSet(), acfg=None, state=None):
    """ADMM update of A; the A subproblem carries no slab weights."""
    return _admm_factor(3, t, f, None, reg, cons, acfg or AdmmConfig(), state)


def feasible_start(X, cons):
    """Map a starting factor into the constraint set.

    CP columns are only defined up to sign, so a start with mostly negative
    columns (typical of least-squares or Gaussian starts) is first folded
    onto the positive orthant with ``abs`` and then projected. Projecting
    directly can zero whole columns and collapse components.
    """
    X = np.asarray(X, dtype=float)
    if cons.kind == "unconstrained":
        return X
    return project(cons, np.abs(X))


def _per_factor(spec, default, name):
    if spec is None:
        return (default,) * 3
    if isinstance(spec, (Regularizer, ConstraintSet)):
        return (spec,) * 3
    if isinstance(spec, dict):
        return tuple(spec.get(k, default) for k in "ABC")
    spec = tuple(spec)
    if len(spec) != 3:
        raise ValueError(f"{name} needs one entry per factor (A, B, C)")
    return spec


def objective(r2, f, regs, p, eps):
    """Outer objective: half the smoothed l_p cost plus the penalties."""
    fit = 0.5 * float(np.sum((r2 + eps) ** (p / 2)))
    return fit + sum(reg.value(X) for reg, X in zip(regs, (f.A, f.B, f.C)))


def irals_constrained(t, R, cfg=None, regs=None, cons=None, acfg=None):
    """IRALS whose A, B and C steps are ADMM solves.

    `regs` and `cons` give one :class:`Regularizer` / :class:`ConstraintSet`
    per factor, as a 3-sequence ordered (A, B, C), a dict keyed by
    ``"A"``/``"B"``/``"C"`` or a single instance applied to all three.
    Starting factors pass through :func:`feasible_start`.
    ``cost_trace`` records :func:`objective` per sweep.
    """
    cfg = cfg or SolverConfig()
    acfg = acfg or AdmmConfig()
    t = as_tensor(t)
    _check_rank(t.shape, R)
    regs = _per_factor(regs, Regularizer(), "regs")
    cons = _per_factor(cons, ConstraintSet(), "cons")
    for reg, X_rows in zip(regs, t.shape):
        if reg.kind == "smooth" and X_rows < 3:
            raise ValueError("smooth regularization needs a factor with at least 3 rows")

    f = init_factors(cfg.init, t, R, cfg.seed, cfg.init_iters)
    f = FactorTriple(*(feasible_start(X, c) for X, c in zip((f.A, f.B, f.C), cons)))
    X3 = unfold(t, 3)
    w = np.ones(t.shape[0])
    states = {"A": AdmmState(), "B": AdmmState(), "C": AdmmState()}
    reg_a, reg_b, reg_c = regs
    con_a, con_b, con_c = cons

    r2 = residual_norms_sq(X3, f)
    # start point is weighted with W = I, as in the unconstrained solver
    penalty = sum(reg.value(X) for reg, X in zip(regs, (f.A, f.B, f.C)))
    trace = [0.5 * float(np.sum(w * r2) + np.sum(phi_p(w, cfg.p, cfg.eps))) + penalty]
    inner = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        f = f.replace(A=admm_update_A(t, f, reg_a, con_a, acfg, states["A"]))
        f = f.replace(B=admm_update_B(t, f, w, reg_b, con_b, acfg, states["B"]))
        f = f.replace(C=admm_update_C(t, f, w, reg_c, con_c, acfg, states["C"]))
        inner.append(tuple(states[k].iterations for k in "ABC"))
        r2 = residual_norms_sq(X3, f)
        w = weight_update(r2, cfg.p, cfg.eps)
        trace.append(objective(r2, f, regs, cfg.p, cfg.eps))
        if abs(trace[-2] - trace[-1]) < cfg.tol_abs_cost:
            converged = True
            break
    info = {
        "admm_iterations": np.asarray(inner),
        "split_residuals": {k: s.split_residual for k, s in states.items()},
    }
    return FitResult(f, np.asarray(w), np.asarray(trace), it, converged, info)

