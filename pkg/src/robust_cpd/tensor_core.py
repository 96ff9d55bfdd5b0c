"""Dense three-way tensors: slabs, unfoldings and Khatri-Rao kernels.

Layout
------
A tensor is a ``numpy.ndarray`` of shape ``(I, J, K)`` in C order, so element
``(i, j, k)`` lives at flat offset ``(i * J + j) * K + k``. Modes are numbered
1, 2, 3 and indices are zero-based.

The three unfoldings vectorize one slab type column-major and stack the
results as columns, which makes the Khatri-Rao identities hold literally::

    unfold(X, 1) = khatri_rao(A, C) @ B.T    # (K*I, J), row i*K + k
    unfold(X, 2) = khatri_rao(B, A) @ C.T    # (I*J, K), row j*I + i
    unfold(X, 3) = khatri_rao(C, B) @ A.T    # (J*K, I), row k*J + j

``khatri_rao(U, V)[:, r]`` is ``kron(U[:, r], V[:, r])``, i.e. row ``u * V.rows + v``.
"""

from itertools import combinations

import numpy as np

# axis order (slow row, fast row, column) of each unfolding
_UNFOLD_AXES = {1: (0, 2, 1), 2: (1, 0, 2), 3: (2, 1, 0)}

KRUSKAL_MAX_COLS = 12


def as_tensor(data):
    """Return `data` as a finite float64 three-way array."""
    t = np.asarray(data, dtype=float)
    if t.ndim != 3:
        raise ValueError(f"expected a three-way array, got ndim={t.ndim}")
    if min(t.shape) < 1:
        raise ValueError(f"tensor dimensions must be positive, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains NaN or Inf")
    return t


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def slab(t, mode, index):
    """Extract one slab of `t` by fixing the index of `mode`.

    Orientation follows the model identities: lateral slabs (mode 1) are
    ``K x I`` and equal ``C D_j(B) A^T``; frontal slabs (mode 2) are ``I x J``
    and equal ``A D_k(C) B^T``; horizontal slabs (mode 3) are ``J x K`` and
    equal ``B D_i(A) C^T``.
    """
    _check_mode(mode)
    t = np.asarray(t)
    # the mode that fixes the slab is not the axis one might expect:
    # mode 1 slices j, mode 2 slices k, mode 3 slices i
    axis = {1: 1, 2: 2, 3: 0}[mode]
    n = t.shape[axis]
    if not 0 <= index < n:
        raise IndexError(f"slab index {index} out of range for mode {mode} (size {n})")
    s = np.take(t, index, axis=axis)
    if mode == 1:
        # s has axes (i, k); lateral slab is (k, i)
        return s.T.copy()
    return s.copy()


def unfold(t, mode):
    """Matricize `t`; column ``n`` is the column-major vec of slab ``n``."""
    _check_mode(mode)
    t = np.asarray(t)
    I, J, K = t.shape
    moved = t.transpose(_UNFOLD_AXES[mode])
    rows = {1: I * K, 2: J * I, 3: K * J}[mode]
    return moved.reshape(rows, -1)


def fold(m, mode, dims):
    """Inverse of :func:`unfold` for a tensor of shape `dims`."""
    _check_mode(mode)
    m = np.asarray(m, dtype=float)
    I, J, K = (int(d) for d in dims)
    expected = {1: (K * I, J), 2: (I * J, K), 3: (J * K, I)}[mode]
    if m.shape != expected:
        raise ValueError(f"mode-{mode} unfolding of {dims} must be {expected}, got {m.shape}")
    if mode == 1:
        return m.reshape(I, K, J).transpose(0, 2, 1).copy()
    if mode == 2:
        return m.reshape(J, I, K).transpose(1, 0, 2).copy()
    return m.reshape(K, J, I).transpose(2, 1, 0).copy()


def khatri_rao(U, V):
    """Column-wise Kronecker product ``U ⊙ V``."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim != 2 or V.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if U.shape[1] != V.shape[1]:
        raise ValueError(f"column counts differ: {U.shape[1]} vs {V.shape[1]}")
    return (U[:, None, :] * V[None, :, :]).reshape(U.shape[0] * V.shape[0], U.shape[1])


def mttkrp(t, U, V, mode):
    """Compute ``khatri_rao(U, V).T @ unfold(t, mode)`` without forming either.

    Returns an ``R x n`` matrix where ``n`` is the size of `mode`.
    """
    _check_mode(mode)
    t = np.asarray(t, dtype=float)
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    I, J, K = t.shape
    rows = {1: (I, K), 2: (J, I), 3: (K, J)}[mode]
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
        raise ValueError("U and V must be matrices with equal column counts")
    if (U.shape[0], V.shape[0]) != rows:
        raise ValueError(
            f"mode-{mode} MTTKRP needs factors with {rows} rows, got {(U.shape[0], V.shape[0])}"
        )
    # contract the largest index against a factor first (one BLAS call),
    # then finish the Khatri-Rao contraction column by column
    if mode == 1:
        # U = A, V = C
        return np.einsum("ijr,ir->rj", np.tensordot(t, V, axes=(2, 0)), U)
    if mode == 2:
        # U = B, V = A
        return np.einsum("jkr,jr->rk", np.tensordot(t, V, axes=(0, 0)), U)
    # U = C, V = B
    return np.einsum("ijr,jr->ri", np.tensordot(t, U, axes=(2, 0)), V)


def kruskal_rank(M, rtol=1e-9):
    """Largest k such that every set of k columns of `M` is independent.

    Brute force over column subsets, so only matrices with at most
    ``KRUSKAL_MAX_COLS`` columns are accepted. A subset counts as independent
    when its smallest singular value exceeds ``rtol * sigma_max(M)``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("kruskal_rank expects a matrix")
    n = M.shape[1]
    if n > KRUSKAL_MAX_COLS:
        raise ValueError(f"kruskal_rank limited to {KRUSKAL_MAX_COLS} columns, got {n}")
    if n == 0 or not np.any(M):
        return 0
    thresh = rtol * np.linalg.norm(M, 2)
    k = 0
    for size in range(1, min(n, M.shape[0]) + 1):
        for cols in combinations(range(n), size):
            s = np.linalg.svd(M[:, cols], compute_uv=False)
            if s[-1] <= thresh:
                return k
        k = size
    return k
