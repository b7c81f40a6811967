"""oppsyn: optimal pulse pattern synthesis with certified distortion lower bounds."""

__version__ = "0.1.0"

from .graph import build_graph, enumerate_paths  # noqa: F401
from .pattern import (  # noqa: F401
    ConverterProblem,
    Harmonic,
    PatternReport,
    Ratings,
    SwitchingSequence,
    check_feasibility,
    expand_quarter_wave,
    fourier_coefficient,
    quality_metric,
    signal_energy,
    tdd,
    zero_mean_initial_current,
)
from .recovery import recover_sequence, refine  # noqa: F401
from .reference import five_level_problem, reference_pattern  # noqa: F401
from .sdp import bound_to_q, solve_hierarchy  # noqa: F401
