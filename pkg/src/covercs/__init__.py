"""Cover-tree accelerated inexact projected gradient for dictionary CS."""

from covercs.covertree import (
    CoverTree,
    PointSet,
    SearchResult,
    ann_search,
    ann_search_additive,
    build,
    nn_exact_brute,
    validate_invariants,
)
from covercs.model import Dictionary, ConeProjection, cone_project_exact, cone_project_approx, product_project
from covercs.operators import DenseOperator, EPIOperator, lattice_epi_pattern, estimate_bilipschitz, operator_norm
from covercs.solver import EpsilonSchedule, SolverConfig, ipg_run, compute_bound, next_epsilon, residual_bound_check
from covercs.mrf import ExcitationSequence, ParameterGrid, Phantom, bloch_bssfp_fingerprint, build_dictionary, synthesize_phantom, params_from_atoms

__version__ = "0.1.0"
