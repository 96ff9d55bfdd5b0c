"""CP factor container, robust costs and the alignment-based error metric."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tensor_core import unfold, khatri_rao

DB_FLOOR = -300.0


@dataclass(frozen=True)
class FactorTriple:
    """Loading matrices ``A`` (I x R), ``B`` (J x R) and ``C`` (K x R)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        mats = []
        for name in "ABC":
            m = np.array(getattr(self, name), dtype=float)
            if m.ndim != 2:
                raise ValueError(f"factor {name} must be a matrix, got ndim={m.ndim}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"factor {name} has non-finite entries")
            m.setflags(write=False)
            object.__setattr__(self, name, m)
            mats.append(m)
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1 or 0 in ranks:
            raise ValueError(f"factor column counts must agree and be >= 1, got {[m.shape[1] for m in mats]}")

    @property
    def rank(self):
        return self.A.shape[1]

    @property
    def shape(self):
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    def replace(self, **kw):
        return FactorTriple(kw.get("A", self.A), kw.get("B", self.B), kw.get("C", self.C))


def reconstruct(f):
    """Dense tensor ``sum_r A[:, r] o B[:, r] o C[:, r]``."""
    return np.einsum("ir,jr,kr->ijk", f.A, f.B, f.C)


def _check_dims(t, f):
    if tuple(np.shape(t)) != f.shape:
        raise ValueError(f"tensor shape {np.shape(t)} does not match factors {f.shape}")


def slab_residual_norms(t, f):
    """Euclidean norm of each horizontal-slab residual (length I)."""
    _check_dims(t, f)
    resid = unfold(t, 3) - khatri_rao(f.C, f.B) @ f.A.T
    return np.linalg.norm(resid, axis=0)


def _check_p_eps(p, eps, p_max=1.0):
    if not 0 < p <= p_max:
        raise ValueError(f"p must lie in (0, {p_max}], got {p}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def cost_lp(t, f, p, eps):
    """Smoothed l_p group cost ``sum_i (||r_i||^2 + eps)^(p/2)``."""
    _check_p_eps(p, eps)
    r2 = slab_residual_norms(t, f) ** 2
    return float(np.sum((r2 + eps) ** (p / 2)))


def phi_p(w, p, eps):
    """Penalty paired with weight ``w`` so that ``min_w w x^2 + phi_p(w)`` is the smoothed cost.

    Broadcasts over `w`, `p` and `eps`.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("phi_p is defined for positive weights only")
    if np.any(~((np.asarray(p) > 0) & (np.asarray(p) < 2))):
        raise ValueError(f"p must lie in (0, 2), got {p}")
    if np.any(np.asarray(eps) < 0):
        raise ValueError(f"eps must be nonnegative, got {eps}")
    val = (2 - p) / 2 * (2 / p * w) ** (p / (p - 2)) + eps * w
    return float(val) if val.ndim == 0 else val


def weight_update(x_norm_sq, p, eps):
    """Optimal slab weight ``(p/2) (x^2 + eps)^((p-2)/2)``; vectorized."""
    x = np.asarray(x_norm_sq, dtype=float)
    w = p / 2 * (x + eps) ** ((p - 2) / 2)
    return float(w) if w.ndim == 0 else w


def cost_weighted(t, f, w, p, eps):
    """Weighted surrogate ``sum_i w_i ||r_i||^2 + phi_p(w_i)``.

    Zero weights are rejected: the penalty diverges as a weight goes to zero.
    """
    _check_p_eps(p, eps)
    w = np.asarray(w, dtype=float)
    if w.shape != (f.shape[0],):
        raise ValueError(f"need {f.shape[0]} slab weights, got shape {w.shape}")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("slab weights must be finite and strictly positive")
    r2 = slab_residual_norms(t, f) ** 2
    return float(np.sum(w * r2) + np.sum(phi_p(w, p, eps)))


def _unit_columns(M, name):
    M = np.asarray(M, dtype=float)
    norms = np.linalg.norm(M, axis=0)
    if np.any(norms == 0):
        raise ValueError(f"{name} has a zero-norm column")
    return M / norms


def align_and_mse(truth, estimate, return_perm=False):
    """Permutation- and sign-aligned MSE between normalized factor columns.

    Returns ``min (1/R) sum_r || t_r - c_r e_pi(r) ||^2`` over permutations
    ``pi`` and signs ``c_r``, with every column scaled to unit norm first.
    The minimization is an assignment problem on the R x R matrix of
    best-sign distances, solved exactly.

    With ``return_perm=True`` also returns ``(perm, signs)`` such that
    truth column ``r`` pairs with estimate column ``perm[r]``.
    """
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError(f"shapes differ: {truth.shape} vs {estimate.shape}")
    T = _unit_columns(truth, "truth")
    E = _unit_columns(estimate, "estimate")
    # direct differences rather than 2 - 2|<t, e>|, which cancels near a match
    plus = np.sum((T[:, :, None] - E[:, None, :]) ** 2, axis=0)
    minus = np.sum((T[:, :, None] + E[:, None, :]) ** 2, axis=0)
    cost = np.minimum(plus, minus)
    rows, cols = linear_sum_assignment(cost)
    mse = float(cost[rows, cols].mean())
    if return_perm:
        signs = np.where(minus[rows, cols] < plus[rows, cols], -1.0, 1.0)
        return mse, cols, signs
    return mse


def to_db(mse):
    """Convert a linear MSE to dB, floored at ``DB_FLOOR`` for exact matches."""
    mse = float(mse)
    if mse <= 10 ** (DB_FLOOR / 10):
        return DB_FLOOR
    return 10 * np.log10(mse)
