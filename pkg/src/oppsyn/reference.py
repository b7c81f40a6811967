"""Bundled five-level reference configuration and a known locally optimal pattern.

The reference pattern (d = 8, M = 0.9) reproduces the regression targets
b1 - 0.9 = 3.0758e-8, b3 = -3.3773e-3 and Q = 1.16004e-2 used throughout the
test suite.
"""

from __future__ import annotations

import math

from .pattern import ConverterProblem, Harmonic, SwitchingSequence

FIVE_LEVELS = (-1.0, -0.5, 0.0, 0.5, 1.0)
INTERLOCK = math.pi / 100.0

REFERENCE_ANGLES = (
    0.2024544700177305,
    0.2838049469537771,
    0.36499921040577954,
    0.8630415911560174,
    0.9905475461194156,
    1.1149523681902667,
    1.3339934630343329,
    1.4177071125398069,
)
REFERENCE_LEVEL_INDICES = (3, 4, 3, 4, 5, 4, 5, 4, 5)


def five_level_problem(
    d: int = 8,
    m: float = 0.9,
    b3_box: tuple[float, float] | None = (-0.01, 0.01),
    unipolar: bool = True,
    objective: str = "current",
) -> ConverterProblem:
    """Five-level converter problem with fundamental pinned to m."""
    harmonics = [Harmonic(1, m, m)]
    if b3_box is not None:
        harmonics.append(Harmonic(3, b3_box[0], b3_box[1]))
    return ConverterProblem(
        levels=FIVE_LEVELS,
        pulse_number=d,
        interlock=INTERLOCK,
        harmonics=tuple(harmonics),
        unipolar=unipolar,
        objective=objective,
    )


def reference_pattern() -> SwitchingSequence:
    """The d=8, M=0.9 locally optimal reference pattern."""
    return SwitchingSequence(REFERENCE_ANGLES, REFERENCE_LEVEL_INDICES)
