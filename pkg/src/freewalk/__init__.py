"""Random walks on free products of two graphs: Green functions, capacities of sets
of words, and Monte Carlo estimators for the capacity of the range."""

__version__ = "0.1.0"

from .capacity import (
    ConeConstraint,
    avoid_cone_after_start,
    avoid_initial_factor,
    block_capacity,
    block_capacity_parts,
    capacity,
    capacity_report,
    escape_probability,
    hitting_probability,
    stay_in,
)
from .config import fixture
from .core import (
    ExplicitFactor,
    FreeProduct,
    Letter,
    RayFactor,
    TwoLeafStar,
    Word,
    free_product_from_spec,
    step_distribution,
    transition_probability,
    validate,
)
from .errors import (
    AssumptionError,
    DegenerateError,
    FreewalkError,
    ModelError,
    NumericError,
    TransienceError,
)
from .estimators import (
    chat_direct,
    chat_regen,
    clt_experiment,
    decomposition_audit,
    ell_hat,
    range_hat,
    regen_blocks,
    sigma2_hat,
    sweep,
)
from .genfun import (
    factor_first_visit,
    factor_last_visit,
    green_at_root,
    l_product_check,
    radius_estimate,
    return_weights,
    transience_check,
)
from .sim import exit_times, range_curve, regeneration_blocks, run_walk

__all__ = [name for name in dir() if not name.startswith("_")]
