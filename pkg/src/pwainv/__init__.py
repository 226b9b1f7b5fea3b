"""Modeling, inversion, stable inversion and iterative learning control of
piecewise-affine discrete-time systems."""

from .errors import *  # noqa: F401,F403
from .pwa import (
    HyperplaneArrangement,
    Location,
    LocationSignatureSet,
    PwaSystem,
    PwdSystem,
    Schedule,
    Trajectory,
    enumerate_signatures,
)
from .lifted import (
    LiftedFilterSet,
    LiftedModel,
    build_filters,
    build_lifted,
    condition_number,
    finite_difference_jacobian,
    jacobian,
)
from .inversion import (
    InversePwaSystem,
    RelativeDegreeReport,
    detect_global_relative_degree,
    invert,
    invert_mu0,
    invert_mu1,
    invert_mu2,
)
from .stable_inversion import (
    DecoupledInverse,
    SwitchingClass,
    decouple,
    lifted_stable_inverse,
    modal_split,
    stable_invert_stable_switching,
    stable_invert_unstable_switching,
)
from .picard import InverseDynamics, assemble_lifted_inverse, picard_iterate
from .ilc import (
    ControlModels,
    IlcScheme,
    SchemeKind,
    TrialLog,
    convergence_metrics,
    nrmse,
    run_campaign,
)

__version__ = "0.1.0"
