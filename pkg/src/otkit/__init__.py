"""Discrete optimal-transport toolkit.

Exact linear-programming transport, entropic Sinkhorn scaling, low-rank
(Nystrom) accelerated Sinkhorn, and projection-based Monge-map estimators,
with a CLI front end (``otkit``).
"""

from .measures import (
    CostMatrix,
    Coupling,
    DiscreteMeasure,
    SimplexWeights,
    TransportMapEstimate,
    entropy,
    load_measure_csv,
    make_cost_matrix,
    marginal_violation,
    write_measure_csv,
)
from .exact import ExactSolution, brute_force_ot, solve_exact_ot, wasserstein_distance
from .sinkhorn import (
    GibbsKernel,
    SinkhornConfig,
    SinkhornResult,
    SinkhornState,
    default_eta,
    gibbs_kernel,
    sinkhorn_distance,
    sinkhorn_knopp,
)
from .nystrom import (
    ColumnSelection,
    FactoredPlan,
    NysSinkResult,
    NystromFactors,
    gibbs_kernel_columns,
    nys_sink,
    nystrom_apply,
    nystrom_factors,
    select_columns,
)
from .projection import (
    Direction,
    IterationTrace,
    Otm1dResult,
    ProjectionConfig,
    SaveResult,
    low_discrepancy_directions,
    otm_1d,
    ppmm,
    random_direction,
    random_projection_otm,
    save_direction,
    seeded_directions,
    sliced_otm,
    sliced_wasserstein,
)

__version__ = "0.1.0"
