"""Problem parameters, mark (jump-size) models, and closed-form regime classification.

A compound Poisson observation process has baseline arrival rate ``mu`` and
baseline jump law ``beta0``.  At an unobservable exponential(``lam``) time the
rate moves up to ``mu + 1`` or ``mu + 2`` and the jump law switches to
``beta1``.  Everything downstream (filtering, solving, simulation) reads its
constants from :class:`ModelParams`, which is therefore the single source of
truth for every formula in the package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import InvalidParamsError, MarkSupportError

#: Tolerance deciding when the disorder rate sits on a special flow branch.
BRANCH_TOL = 1e-12

#: Tolerance for probability vectors that must sum to one.
PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Statistic:
    """A point of the two-dimensional filtered state, one coordinate per post-change rate atom.

    ``phi0`` weighs the ``mu + 1`` atom and ``phi1`` the ``mu + 2`` atom; both
    are conditional-probability ratios and live in the nonnegative quadrant.
    """

    phi0: float
    phi1: float

    def __post_init__(self):
        if not (math.isfinite(self.phi0) and math.isfinite(self.phi1)):
            raise InvalidParamsError(["statistic coordinates must be finite"])
        if self.phi0 < 0.0 or self.phi1 < 0.0:
            raise InvalidParamsError(["statistic coordinates must be nonnegative"])

    @property
    def total(self) -> float:
        return self.phi0 + self.phi1

    def as_tuple(self) -> tuple[float, float]:
        return (self.phi0, self.phi1)


@dataclass(frozen=True)
class DegenerateMarks:
    """Jump sizes carry no information: the post-change jump law equals the baseline one.

    Simulated mark values are the constant 1.0; the likelihood ratio is
    identically one, so the value is never looked at.
    """

    variant = "degenerate"


@dataclass(frozen=True)
class ExponentialPairMarks:
    """Baseline marks are exponential(``a0``); post-change marks exponential(``a1``)."""

    a0: float
    a1: float

    variant = "exponential_pair"


@dataclass(frozen=True)
class FiniteDiscreteMarks:
    """Marks on a finite support with baseline weights ``p0`` and post-change weights ``p1``."""

    values: tuple[float, ...]
    p0: tuple[float, ...]
    p1: tuple[float, ...]

    variant = "finite_discrete"


MarkModel = Union[DegenerateMarks, ExponentialPairMarks, FiniteDiscreteMarks]


def _mark_violations(marks: object) -> list[str]:
    out: list[str] = []
    if isinstance(marks, DegenerateMarks):
        return out
    if isinstance(marks, ExponentialPairMarks):
        if not (marks.a0 > 0.0 and math.isfinite(marks.a0)):
            out.append("mark rate a0 must be positive and finite")
        if not (marks.a1 > 0.0 and math.isfinite(marks.a1)):
            out.append("mark rate a1 must be positive and finite")
        return out
    if isinstance(marks, FiniteDiscreteMarks):
        k = len(marks.values)
        if k == 0:
            out.append("finite mark support must be nonempty")
            return out
        if len(marks.p0) != k or len(marks.p1) != k:
            out.append("mark support and probability vectors must share one length")
            return out
        if len(set(marks.values)) != k:
            out.append("mark support points must be distinct")
        if any(not math.isfinite(v) for v in marks.values):
            out.append("mark support points must be finite")
        if any(p <= 0.0 for p in marks.p0):
            out.append("every baseline mark probability must be strictly positive")
        if any(p <= 0.0 for p in marks.p1):
            out.append("every post-change mark probability must be strictly positive "
                       "(the two mark laws must be mutually absolutely continuous)")
        if abs(sum(marks.p0) - 1.0) > PROB_SUM_TOL:
            out.append("baseline mark probabilities must sum to 1 within 1e-12")
        if abs(sum(marks.p1) - 1.0) > PROB_SUM_TOL:
            out.append("post-change mark probabilities must sum to 1 within 1e-12")
        return out
    out.append(f"unknown mark model {type(marks).__name__}")
    return out


@dataclass(frozen=True)
class ModelParams:
    """Problem parameters.

    Attributes:
        lam: disorder rate (> 0, per unit time).
        c: delay cost rate (> 0, per unit time).
        mu: baseline arrival rate (> 0, per unit time).
        m: first-moment parameter of the post-change rate increase,
           ``m = 2 P{rate = mu+2} + P{rate = mu+1}``; must lie strictly inside
           (1, 2) or the two-dimensional state collapses to one dimension.
        pi: prior probability in [0, 1) that the change happened at time 0.
        marks: jump-size model.
    """

    lam: float
    c: float
    mu: float
    m: float
    pi: float = 0.0
    marks: MarkModel = DegenerateMarks()

    def __post_init__(self):
        violations: list[str] = []
        for name in ("lam", "c", "mu", "m", "pi"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                violations.append(f"{name} must be a finite number")
        if not violations:
            if self.lam <= 0.0:
                violations.append("disorder rate lam must be > 0")
            if self.c <= 0.0:
                violations.append("delay cost c must be > 0")
            if self.mu <= 0.0:
                violations.append("baseline arrival rate mu must be > 0")
            if not (1.0 < self.m < 2.0):
                violations.append("moment parameter m must lie strictly in (1, 2); "
                                  "at the endpoints the filtered state degenerates to one dimension")
            if not (0.0 <= self.pi < 1.0):
                violations.append("prior mass pi must lie in [0, 1); pi = 1 makes stopping at 0 trivially optimal")
        violations.extend(_mark_violations(self.marks))
        if violations:
            raise InvalidParamsError(violations)

    @property
    def p_up_one(self) -> float:
        """Probability that the post-change rate is ``mu + 1``."""
        return 2.0 - self.m

    @property
    def p_up_two(self) -> float:
        """Probability that the post-change rate is ``mu + 2``."""
        return self.m - 1.0

    @property
    def cost_threshold(self) -> float:
        """Level ``lam / c`` of the coordinate sum at which the running cost changes sign."""
        return self.lam / self.c

    def to_dict(self) -> dict:
        d = {"lambda": self.lam, "c": self.c, "mu": self.mu, "m": self.m, "pi": self.pi,
             "marks": marks_to_dict(self.marks)}
        return d


def marks_to_dict(marks: MarkModel) -> dict:
    if isinstance(marks, DegenerateMarks):
        return {"variant": "degenerate"}
    if isinstance(marks, ExponentialPairMarks):
        return {"variant": "exponential_pair", "a0": marks.a0, "a1": marks.a1}
    if isinstance(marks, FiniteDiscreteMarks):
        return {"variant": "finite_discrete", "values": list(marks.values),
                "p0": list(marks.p0), "p1": list(marks.p1)}
    raise InvalidParamsError([f"unknown mark model {type(marks).__name__}"])


def marks_from_dict(raw: Mapping) -> MarkModel:
    variant = raw.get("variant")
    if variant == "degenerate":
        return DegenerateMarks()
    if variant == "exponential_pair":
        try:
            return ExponentialPairMarks(a0=float(raw["a0"]), a1=float(raw["a1"]))
        except KeyError as exc:
            raise InvalidParamsError([f"exponential_pair marks need key {exc}"]) from exc
    if variant == "finite_discrete":
        try:
            return FiniteDiscreteMarks(values=tuple(float(v) for v in raw["values"]),
                                       p0=tuple(float(v) for v in raw["p0"]),
                                       p1=tuple(float(v) for v in raw["p1"]))
        except KeyError as exc:
            raise InvalidParamsError([f"finite_discrete marks need key {exc}"]) from exc
    raise InvalidParamsError([f"unknown marks variant {variant!r}"])


def validate_params(raw: Mapping) -> ModelParams:
    """Build :class:`ModelParams` from a JSON-shaped mapping, reporting every violation at once.

    Expected keys: ``lambda``, ``c``, ``mu``, ``m``, optional ``pi`` (default 0)
    and optional ``marks`` (default degenerate).
    """
    violations: list[str] = []
    values: dict[str, float] = {}
    for key, attr in (("lambda", "lam"), ("c", "c"), ("mu", "mu"), ("m", "m")):
        if key not in raw:
            violations.append(f"missing key {key!r}")
        else:
            try:
                values[attr] = float(raw[key])
            except (TypeError, ValueError):
                violations.append(f"key {key!r} is not a number")
    try:
        values["pi"] = float(raw.get("pi", 0.0))
    except (TypeError, ValueError):
        violations.append("key 'pi' is not a number")
    marks: MarkModel = DegenerateMarks()
    if "marks" in raw:
        try:
            marks = marks_from_dict(raw["marks"])
        except InvalidParamsError as exc:
            violations.extend(exc.violations)
    if violations:
        raise InvalidParamsError(violations)
    return ModelParams(marks=marks, **values)


def load_params(path: str) -> ModelParams:
    """Read model parameters from a JSON document."""
    with open(path, "r", encoding="utf-8") as fh:
        return validate_params(json.load(fh))


def likelihood_ratio(marks: MarkModel, y) -> float:
    """Density ratio of the post-change jump law against the baseline one at mark value ``y``.

    Accepts a scalar or an ndarray; raises :class:`MarkSupportError` off the
    baseline support (a corrupted-path signal, not a statistics question).
    """
    if isinstance(marks, DegenerateMarks):
        if np.ndim(y) == 0:
            return 1.0
        return np.ones_like(np.asarray(y, dtype=float))
    if isinstance(marks, ExponentialPairMarks):
        y_arr = np.asarray(y, dtype=float)
        if np.any(y_arr < 0.0):
            raise MarkSupportError("negative mark value outside exponential support")
        out = (marks.a1 / marks.a0) * np.exp(-(marks.a1 - marks.a0) * y_arr)
        return float(out) if np.ndim(y) == 0 else out
    if isinstance(marks, FiniteDiscreteMarks):
        values = np.asarray(marks.values)
        ratios = np.asarray(marks.p1) / np.asarray(marks.p0)
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        idx = np.argmin(np.abs(y_arr[:, None] - values[None, :]), axis=1)
        matched = np.abs(y_arr - values[idx]) <= 1e-12 * np.maximum(1.0, np.abs(values[idx]))
        if not np.all(matched):
            bad = y_arr[~matched][0]
            raise MarkSupportError(f"mark value {bad!r} is not a support point")
        out = ratios[idx]
        return float(out[0]) if np.ndim(y) == 0 else out
    raise InvalidParamsError([f"unknown mark model {type(marks).__name__}"])


@dataclass(frozen=True)
class RegimeClass:
    """Closed-form parameter regime plus the corner abscissa of the stopping boundary.

    ``xi`` is the smallest ``phi0`` beyond which the free boundary coincides
    with the line ``phi0 + phi1 = lam / c``; it is 0 when the whole boundary
    sits on that line and ``None`` in the regime where the boundary never
    touches it (alarms then fire only at arrival times).
    """

    tag: str
    xi: float | None


def classify_regime(params: ModelParams) -> RegimeClass:
    """Assign the unique closed-form regime tag R1..R7 for ``(lam, c, m)``.

    Threshold cases resolve toward the regime with the stronger explicit
    conclusion: ``c = 2 - lam`` classifies as R2/R3 and both R6 boundary
    values of ``c`` classify as R6.
    """
    lam, c, m = params.lam, params.c, params.m
    if lam >= 2.0:
        return RegimeClass("R1", 0.0)
    if lam >= 1.0:
        if c >= 2.0 - lam:
            return RegimeClass("R2", 0.0)
        return RegimeClass("R4", lam * (-1.0 + (2.0 - lam) / c))
    # lam in (0, 1); note max(2 - lam, 1 - lam) = 2 - lam throughout.
    c_explicit = 2.0 - lam
    c_mid = (2.0 - lam) * (1.0 - lam) / (3.0 - lam - m)
    c_low = 2.0 * (1.0 - lam) / (3.0 - m)
    if c >= c_explicit:
        return RegimeClass("R3", 0.0)
    if c > c_mid:
        return RegimeClass("R5", lam * (-1.0 + (2.0 - lam) / c))
    if c >= c_low:
        return RegimeClass("R6", max(0.0, (2.0 - lam) / c + m - 3.0))
    return RegimeClass("R7", None)


def initial_statistic(params: ModelParams) -> Statistic:
    """Filtered state at time zero implied by the prior mass ``pi``."""
    odds = params.pi / (1.0 - params.pi)
    return Statistic((2.0 - params.m) * odds, (params.m - 1.0) * odds)


def params_digest(params: ModelParams) -> str:
    """Short stable digest of the parameters, for tagging output files."""
    import hashlib

    blob = json.dumps(params.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
