"""Robust PARAFAC decomposition of three-way tensors with outlying slabs.

The main entry points are :func:`irals` (slab-reweighted alternating least
squares), :func:`tals` (the plain least-squares baseline) and
:func:`irals_constrained` (ADMM factor updates with constraints and
penalties).
"""

from .tensor_core import as_tensor, slab, unfold, fold, khatri_rao, mttkrp, kruskal_rank
from .model import (
    FactorTriple,
    reconstruct,
    slab_residual_norms,
    cost_lp,
    cost_weighted,
    phi_p,
    weight_update,
    align_and_mse,
    to_db,
)
from .solvers import SolverConfig, FitResult, SingularGramError, tals, irals, weighted_ls_factor, init_factors
from .constrained import (
    Regularizer,
    ConstraintSet,
    AdmmConfig,
    prox,
    project,
    admm_update_A,
    admm_update_B,
    admm_update_C,
    irals_constrained,
)
from .harness import SyntheticSpec, generate, identifiability_margin, run_sweep

__version__ = "0.1.0"
