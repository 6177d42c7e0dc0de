"""Kinetic Monte Carlo for continuous-time Markov chains with two time scales."""

from .ctmc import (
    IntensityMatrix,
    LatticeChain,
    RngStream,
    Target,
    Trajectory,
    first_hit,
    first_hit_time,
    sample_next,
    simulate,
)
from .effective import derive, limit_process
from .errors import (
    AbsorbingState,
    BadDimension,
    ConfigError,
    EnergyNotConserved,
    EventBudgetExceeded,
    InadmissibleEnergy,
    KMCError,
    NegativeRate,
    NotIrreducible,
    TooFewSamples,
)
from .modelfile import load_model, preset
from .models import (
    EnergyModel,
    RingModel,
    TwoMacroModel,
    build_energy,
    build_paper_energy,
    build_paper_ring,
    build_paper_two_macro,
    build_ring,
    build_two_macro,
)
from .stationary import invariant_measure, is_irreducible
from .stats import (
    discrepancy,
    histogram,
    l1_error,
    martingale_residual,
    moments,
    sample_exit_times,
    sweep,
)

__version__ = "0.1.0"
