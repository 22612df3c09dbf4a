"""Sequential MCMC on finite state spaces with exact Feynman-Kac propagators.

The particle sampler runs alongside exact propagators, so its estimators can
be checked against closed-form variances, and every constant in the
non-asymptotic error bound can be evaluated and stress-tested.
"""

from .errors import (
    CapacityError,
    ConfigError,
    DegenerateWeightsError,
    DimensionMismatchError,
    InfeasibleError,
    SeqMCError,
)
from .feynman_kac import (
    LevelSequence,
    Propagator,
    compose,
    hatted_one_step,
    normalized_potential,
    one_step_propagator,
    propagate,
    propagators_to,
)
from .measures import (
    MarkovKernel,
    ProbMeasure,
    StateFunction,
    StateSpace,
    integrate,
    kernel_power,
    lp_norm,
    metropolis_kernel,
    variance,
)
from .particles import Ensemble, ParticleCloud, run, simulate, step
from .stability import StabilityConstants, chain_constants, falsify_inequality
from .tempering import (
    ProductSpec,
    TemperingSpec,
    build_product,
    build_tempered,
    dimension_sweep,
    fixture_a,
)

__version__ = "0.1.0"
