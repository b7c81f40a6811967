"""Quarter-and-half-wave switching patterns: spectra, energy, distortion, feasibility.

A pattern is described on the first quarter period [0, pi/2] by d switching
angles and d+1 converter level indices; quarter-and-half-wave symmetry defines
the signal on the full period.  All angles are radians, all levels per-unit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

QUARTER = math.pi / 2.0

# numeric feasibility windows used by check_feasibility
EQ_WINDOW = 1e-7          # equality harmonic b = v accepted within [v, v + 1e-7]
BOX_GRACE = 1e-9          # float grace on inequality box edges
GEOM_GRACE = 1e-12        # float grace on interlock geometry


class PatternError(ValueError):
    """Invalid pattern or problem data."""


class NegativeRadicand(ArithmeticError):
    """Energy/Fourier inconsistency: quality radicand below -1e-12."""


@dataclass(frozen=True)
class Harmonic:
    """One harmonic constraint: coefficient of order `order` confined to [lo, hi]."""

    order: int
    lo: float
    hi: float

    @property
    def is_equality(self) -> bool:
        return self.lo == self.hi

    @property
    def degree(self) -> int:
        return self.order


@dataclass(frozen=True)
class ConverterProblem:
    """Parameter set of a single-phase pulse-pattern synthesis problem."""

    levels: tuple[float, ...]
    pulse_number: int
    interlock: float
    harmonics: tuple[Harmonic, ...]
    current_bound: float | None = None
    unipolar: bool = True
    objective: str = "current"

    def __post_init__(self):
        lv = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "levels", lv)
        if len(lv) < 3 or len(lv) % 2 == 0:
            raise PatternError("levels must be an odd-length vector with at least 3 entries")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise PatternError("levels must be strictly increasing")
        if any(abs(a + b) > 1e-12 for a, b in zip(lv, reversed(lv))):
            raise PatternError("levels must be symmetric about zero")
        if abs(lv[len(lv) // 2]) > 1e-12:
            raise PatternError("central level must be zero")
        if not (isinstance(self.pulse_number, int) and self.pulse_number >= 1):
            raise PatternError("pulse_number must be an integer >= 1")
        if not (self.interlock > 0.0):
            raise PatternError("interlock angle must be positive")
        if self.pulse_number * self.interlock >= QUARTER:
            raise PatternError("pulse_number * interlock must stay below pi/2")
        hs = tuple(
            h if isinstance(h, Harmonic) else Harmonic(*h) for h in self.harmonics
        )
        object.__setattr__(self, "harmonics", hs)
        for h in hs:
            if h.order < 1 or h.order % 2 == 0:
                raise PatternError("harmonic orders must be odd positive integers")
            if not (math.isfinite(h.lo) and math.isfinite(h.hi) and h.lo <= h.hi):
                raise PatternError("harmonic bounds must be finite with lo <= hi")
        if self.current_bound is None:
            object.__setattr__(self, "current_bound", lv[-1] * QUARTER)
        if not (self.current_bound > 0.0):
            raise PatternError("current_bound must be positive")
        if self.objective not in ("current", "voltage"):
            raise PatternError("objective must be 'current' or 'voltage'")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def center_index(self) -> int:
        """1-based index of the zero level."""
        return (len(self.levels) + 1) // 2

    @property
    def modulation_index(self) -> float:
        """Lower bound of the fundamental harmonic entry."""
        for h in self.harmonics:
            if h.order == 1:
                return h.lo
        raise PatternError("problem has no fundamental (order-1) harmonic entry")

    def level(self, n: int) -> float:
        """Level value for 1-based index n."""
        return self.levels[n - 1]


@dataclass(frozen=True)
class Ratings:
    """Physical ratings used to scale the quality metric into a current TDD."""

    f1: float
    V_dc: float
    L_load: float
    I_R: float

    def __post_init__(self):
        if min(self.f1, self.V_dc, self.L_load, self.I_R) <= 0.0:
            raise PatternError("all ratings must be strictly positive")


@dataclass(frozen=True)
class SwitchingSequence:
    """Switching angles over [0, pi/2] plus 1-based level indices, one per segment."""

    angles: tuple[float, ...]
    level_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "level_indices", tuple(int(n) for n in self.level_indices))
        if len(self.level_indices) != len(self.angles) + 1:
            raise PatternError("need exactly one more level index than angles")

    @property
    def d(self) -> int:
        return len(self.angles)

    def validate(self, prob: ConverterProblem) -> None:
        """Raise PatternError on structural defects (feasibility is reported, not raised)."""
        if self.d != prob.pulse_number:
            raise PatternError(
                f"sequence has {self.d} angles but problem expects {prob.pulse_number}"
            )
        a = np.asarray(self.angles)
        if np.any(a < -GEOM_GRACE) or np.any(a > QUARTER + GEOM_GRACE):
            raise PatternError("angles must lie within [0, pi/2]")
        if np.any(np.diff(a) <= 0.0):
            raise PatternError("angles must be strictly increasing (zero-width segments rejected)")
        n = self.level_indices
        if any(k < 1 or k > prob.n_levels for k in n):
            raise PatternError("level indices out of range")
        if n[0] != prob.center_index:
            raise PatternError("pattern must start on the zero level")
        if any(abs(b - a_) != 1 for a_, b in zip(n, n[1:])):
            raise PatternError("consecutive level indices must differ by exactly 1")

    def level_values(self, prob: ConverterProblem) -> np.ndarray:
        return np.array([prob.level(n) for n in self.level_indices])

    def segment_edges(self) -> np.ndarray:
        """Angles extended with 0 and pi/2: edges of the d+1 constant segments."""
        return np.concatenate(([0.0], np.asarray(self.angles), [QUARTER]))


@dataclass(frozen=True)
class PatternReport:
    """Evaluation summary for one sequence against one problem."""

    fourier: dict[int, float]
    energy: float
    initial_current: float
    quality: float
    tdd: float | None
    feasible: bool
    violations: tuple[str, ...] = field(default_factory=tuple)


def fourier_coefficient(seq: SwitchingSequence, prob: ConverterProblem, ell: int) -> float:
    """Sine-series coefficient b_ell of the switching signal; zero for even orders."""
    if ell < 1:
        raise PatternError("harmonic order must be >= 1")
    if ell % 2 == 0:
        return 0.0
    u = seq.level_values(prob)
    du = np.diff(u)
    a = np.asarray(seq.angles)
    return 4.0 / (ell * math.pi) * float(np.sum(du * np.cos(ell * a)))


def fourier_gradient(seq: SwitchingSequence, prob: ConverterProblem, ell: int) -> np.ndarray:
    """d b_ell / d alpha^i = -(4/pi) * du_i * sin(ell * alpha^i)."""
    if ell % 2 == 0:
        return np.zeros(seq.d)
    u = seq.level_values(prob)
    du = np.diff(u)
    a = np.asarray(seq.angles)
    return -4.0 / math.pi * du * np.sin(ell * a)


def zero_mean_initial_current(seq: SwitchingSequence, prob: ConverterProblem) -> float:
    """The unique I(0) that makes the quarter-trajectory end at I(pi/2) = 0.

    This choice makes the quarter-and-half-wave extension of the current
    zero-mean, which is the convention behind the quality metric.
    """
    u = seq.level_values(prob)
    w = np.diff(seq.segment_edges())
    return -float(np.sum(u * w))


def minimum_energy_initial_current(seq: SwitchingSequence, prob: ConverterProblem) -> float:
    """I(0) minimizing the quarter-period energy with the level sequence fixed."""
    i0 = zero_mean_initial_current(seq, prob)
    u = seq.level_values(prob)
    edges = seq.segment_edges()
    w = np.diff(edges)
    J = np.concatenate(([i0], i0 + np.cumsum(u * w)))
    # A = integral of the zero-mean current over the quarter period
    A = float(np.sum(J[:-1] * w + 0.5 * u * w * w))
    return i0 - 2.0 * A / math.pi


def signal_energy(seq: SwitchingSequence, prob: ConverterProblem, i0: float) -> float:
    """Closed-form full-period energy of the current for initial value i0.

    Piecewise linear current: cubic antiderivative per segment, branch on a
    zero level, scaled by 4 for the quarter-to-full-period symmetry.
    """
    u = seq.level_values(prob)
    w = np.diff(seq.segment_edges())
    J = np.concatenate(([i0], i0 + np.cumsum(u * w)))
    total = 0.0
    for i in range(len(u)):
        if u[i] == 0.0:
            total += J[i] * J[i] * w[i]
        else:
            total += (J[i + 1] ** 3 - J[i] ** 3) / (3.0 * u[i])
    return 4.0 * total


def energy_gradient(seq: SwitchingSequence, prob: ConverterProblem) -> tuple[float, np.ndarray]:
    """Energy and its exact gradient w.r.t. the angles, with zero-mean I(0) eliminated.

    dI0/d a_j = du_j; dJ_i/d a_j is u_j at j == i, du_j past the segment, 0 before.
    """
    d = seq.d
    u = seq.level_values(prob)
    du = np.diff(u)
    edges = seq.segment_edges()
    w = np.diff(edges)
    i0 = -float(np.sum(u * w))
    J = np.concatenate(([i0], i0 + np.cumsum(u * w)))
    dJ = np.zeros((d + 2, d))
    for i in range(d + 2):
        for j in range(1, d + 1):
            if j == i:
                dJ[i, j - 1] = u[j]
            elif j > i:
                dJ[i, j - 1] = du[j - 1]
    energy = 0.0
    grad = np.zeros(d)
    for i in range(d + 1):
        if u[i] == 0.0:
            energy += J[i] ** 2 * w[i]
            grad += 2.0 * J[i] * w[i] * dJ[i]
            if i + 1 <= d:
                grad[i] += J[i] ** 2
            if 1 <= i:
                grad[i - 1] -= J[i] ** 2
        else:
            energy += (J[i + 1] ** 3 - J[i] ** 3) / (3.0 * u[i])
            grad += (J[i + 1] ** 2 * dJ[i + 1] - J[i] ** 2 * dJ[i]) / u[i]
    return 4.0 * energy, 4.0 * grad


def quality_metric(seq: SwitchingSequence, prob: ConverterProblem) -> float:
    """Q = sqrt(energy/pi - b1^2) with the zero-mean initial current."""
    i0 = zero_mean_initial_current(seq, prob)
    energy = signal_energy(seq, prob, i0)
    b1 = fourier_coefficient(seq, prob, 1)
    radicand = energy / math.pi - b1 * b1
    if radicand < -1e-12:
        raise NegativeRadicand(f"quality radicand {radicand:.3e} below -1e-12")
    return math.sqrt(max(radicand, 0.0))


def tdd(seq: SwitchingSequence, prob: ConverterProblem, ratings: Ratings) -> float:
    """Current total demand distortion: the quality metric under physical scaling."""
    q = quality_metric(seq, prob)
    omega1 = 2.0 * math.pi * ratings.f1
    return q * ratings.V_dc / (2.0 * math.sqrt(2.0) * ratings.I_R * omega1 * ratings.L_load)


def parseval_energy(seq: SwitchingSequence, prob: ConverterProblem, max_order: int) -> tuple[float, float]:
    """Truncated spectral energy pi * sum (b_l / l)^2 and a bound on the dropped tail."""
    total = 0.0
    for ell in range(1, max_order + 1, 2):
        b = fourier_coefficient(seq, prob, ell)
        total += (b / ell) ** 2
    du_sum = float(np.sum(np.abs(np.diff(seq.level_values(prob)))))
    tail = (4.0 / math.pi) ** 2 * du_sum**2 * sum(
        ell**-4 for ell in range(max_order + 2, max_order + 200002, 2)
    )
    return math.pi * total, math.pi * tail


def check_feasibility(
    seq: SwitchingSequence,
    prob: ConverterProblem,
    ratings: Ratings | None = None,
) -> PatternReport:
    """Evaluate the sequence and collect named constraint violations.

    Equality harmonic entries are accepted within [v, v + 1e-7]; inequality
    boxes verbatim up to float grace.  Never raises: defects land in the report.
    """
    violations: list[str] = []
    a = np.asarray(seq.angles)
    n = seq.level_indices
    th = prob.interlock

    if seq.d != prob.pulse_number:
        violations.append("pulse-number")
    if any(k < 1 or k > prob.n_levels for k in n):
        violations.append("level-range")
    if any(abs(b - a_) != 1 for a_, b in zip(n, n[1:])):
        violations.append("level-step")
    if n[0] != prob.center_index:
        violations.append("start-level")
    if prob.unipolar and any(k < prob.center_index for k in n):
        violations.append("unipolar")
    if np.any(np.diff(a) <= 0.0):
        violations.append("zero-width")
    if a.size:
        if a[0] < th / 2.0 - GEOM_GRACE:
            violations.append("interlock")
        if np.any(np.diff(a) < th - GEOM_GRACE):
            violations.append("interlock")
        if a[-1] > QUARTER - th / 2.0 + GEOM_GRACE:
            violations.append("interlock")
    # dedupe, preserving order
    violations = list(dict.fromkeys(violations))

    fourier = {h.order: fourier_coefficient(seq, prob, h.order) for h in prob.harmonics}
    for h in prob.harmonics:
        b = fourier[h.order]
        if h.is_equality:
            ok = h.lo - BOX_GRACE <= b <= h.lo + EQ_WINDOW + BOX_GRACE
        else:
            ok = h.lo - BOX_GRACE <= b <= h.hi + BOX_GRACE
        if not ok:
            violations.append(f"harmonic-{h.order}")

    i0 = zero_mean_initial_current(seq, prob)
    energy = signal_energy(seq, prob, i0)
    b1 = fourier.get(1, fourier_coefficient(seq, prob, 1))
    radicand = energy / math.pi - b1 * b1
    quality = math.sqrt(max(radicand, 0.0))
    report_tdd = None
    if ratings is not None:
        omega1 = 2.0 * math.pi * ratings.f1
        report_tdd = quality * ratings.V_dc / (
            2.0 * math.sqrt(2.0) * ratings.I_R * omega1 * ratings.L_load
        )
    return PatternReport(
        fourier=fourier,
        energy=energy,
        initial_current=i0,
        quality=quality,
        tdd=report_tdd,
        feasible=not violations,
        violations=tuple(violations),
    )


def expand_quarter_wave(
    seq: SwitchingSequence, prob: ConverterProblem
) -> tuple[np.ndarray, np.ndarray]:
    """Full-period angles (4d of them) and the 4d+1 level values between them."""
    a = np.asarray(seq.angles)
    u = seq.level_values(prob)
    angles = np.concatenate(
        [a, math.pi - a[::-1], math.pi + a, 2.0 * math.pi - a[::-1]]
    )
    levels = np.concatenate([u, u[-2::-1], -u[1:], -u[-2::-1]])
    return angles, levels


def sample_signal(
    seq: SwitchingSequence, prob: ConverterProblem, thetas: np.ndarray
) -> np.ndarray:
    """Switching signal u(theta) on arbitrary points of [0, 2pi]."""
    angles, levels = expand_quarter_wave(seq, prob)
    idx = np.searchsorted(angles, np.mod(thetas, 2.0 * math.pi), side="right")
    return levels[idx]


def sample_current(
    seq: SwitchingSequence,
    prob: ConverterProblem,
    thetas: np.ndarray,
    i0: float | None = None,
) -> np.ndarray:
    """Current I(theta) on arbitrary points of [0, 2pi] for initial value i0."""
    if i0 is None:
        i0 = zero_mean_initial_current(seq, prob)
    angles, levels = expand_quarter_wave(seq, prob)
    edges = np.concatenate(([0.0], angles, [2.0 * math.pi]))
    w = np.diff(edges)
    J = np.concatenate(([i0], i0 + np.cumsum(levels * w)))
    t = np.mod(thetas, 2.0 * math.pi)
    idx = np.searchsorted(angles, t, side="right")
    return J[idx] + levels[idx] * (t - edges[idx])


# ---------------------------------------------------------------------------
# JSON serialization


def problem_to_dict(prob: ConverterProblem) -> dict:
    return {
        "levels": list(prob.levels),
        "pulse_number": prob.pulse_number,
        "interlock": prob.interlock,
        "harmonics": [{"order": h.order, "lo": h.lo, "hi": h.hi} for h in prob.harmonics],
        "current_bound": prob.current_bound,
        "unipolar": prob.unipolar,
        "objective": prob.objective,
    }


_PROBLEM_KEYS = {
    "levels", "pulse_number", "interlock", "harmonics",
    "current_bound", "unipolar", "objective",
}
_HARMONIC_KEYS = {"order", "lo", "hi"}
_SEQUENCE_KEYS = {"angles", "level_indices"}


def problem_from_dict(data: dict) -> ConverterProblem:
    unknown = set(data) - _PROBLEM_KEYS
    if unknown:
        raise PatternError(f"unknown problem keys: {sorted(unknown)}")
    for req in ("levels", "pulse_number", "interlock", "harmonics"):
        if req not in data:
            raise PatternError(f"missing problem key: {req}")
    harmonics = []
    for h in data["harmonics"]:
        unknown = set(h) - _HARMONIC_KEYS
        if unknown:
            raise PatternError(f"unknown harmonic keys: {sorted(unknown)}")
        harmonics.append(Harmonic(int(h["order"]), float(h["lo"]), float(h["hi"])))
    return ConverterProblem(
        levels=tuple(data["levels"]),
        pulse_number=int(data["pulse_number"]),
        interlock=float(data["interlock"]),
        harmonics=tuple(harmonics),
        current_bound=data.get("current_bound"),
        unipolar=bool(data.get("unipolar", True)),
        objective=data.get("objective", "current"),
    )


def sequence_to_dict(seq: SwitchingSequence) -> dict:
    return {"angles": list(seq.angles), "level_indices": list(seq.level_indices)}


def sequence_from_dict(data: dict) -> SwitchingSequence:
    unknown = set(data) - _SEQUENCE_KEYS
    if unknown:
        raise PatternError(f"unknown pattern keys: {sorted(unknown)}")
    for req in _SEQUENCE_KEYS:
        if req not in data:
            raise PatternError(f"missing pattern key: {req}")
    return SwitchingSequence(tuple(data["angles"]), tuple(data["level_indices"]))


def report_to_dict(report: PatternReport) -> dict:
    return {
        "fourier": {str(k): v for k, v in report.fourier.items()},
        "energy": report.energy,
        "initial_current": report.initial_current,
        "quality": report.quality,
        "tdd": report.tdd,
        "feasible": report.feasible,
        "violations": list(report.violations),
    }


def load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise PatternError(f"malformed JSON in {path}: {exc}") from exc
