"""Detector response functions: firing probability as a function of photon count.

A response function Theta(x) maps an integer number of incident photons to a
firing probability.  All models share threshold semantics: Theta(x) = 0 for
x < N and Theta(N) > 0, with Theta non-decreasing.  Detectors are not photon
number resolving; a firing detector reveals only "at least threshold".
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np


class ResponseFunction:
    """Base class; subclasses implement __call__ on non-negative integers."""

    threshold: int

    def __call__(self, x: int) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def saturation_point(self) -> int:
        """Smallest x beyond which Theta is constant."""
        raise NotImplementedError

    @property
    def saturation_value(self) -> float:
        return self(self.saturation_point)

    def table(self, x_max: int) -> np.ndarray:
        """Theta evaluated on 0..x_max inclusive."""
        return _theta_table(self, x_max)


def _check_threshold(n: int) -> int:
    n = int(n)
    if n < 1:
        raise ValueError(f"threshold must be a positive integer, got {n}")
    return n


@dataclass(frozen=True)
class PerfectStep(ResponseFunction):
    """Theta(x < N) = 0, Theta(x >= N) = 1."""

    threshold: int

    def __post_init__(self):
        object.__setattr__(self, "threshold", _check_threshold(self.threshold))

    def __call__(self, x: int) -> float:
        return 1.0 if x >= self.threshold else 0.0

    @property
    def saturation_point(self) -> int:
        return self.threshold


@dataclass(frozen=True)
class SmoothStep(ResponseFunction):
    """Theta(x < N) = 0, Theta(N) = eta, Theta(x > N) = 1.

    eta = 1 is accepted and degenerates to a perfect step.
    """

    threshold: int
    eta: float

    def __post_init__(self):
        object.__setattr__(self, "threshold", _check_threshold(self.threshold))
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")

    def __call__(self, x: int) -> float:
        if x < self.threshold:
            return 0.0
        if x == self.threshold:
            return self.eta
        return 1.0

    @property
    def saturation_point(self) -> int:
        return self.threshold + 1


@dataclass(frozen=True)
class SCurve(ResponseFunction):
    """Tabulated S-shaped response on integer photon counts.

    ``points`` maps photon counts to probabilities; counts below the threshold
    evaluate to 0, counts beyond the last table entry clamp to its value.  The
    shape of real biological response curves is only loosely constrained
    (roughly 20% efficiency at 60 photons for dark-adapted human observers),
    so the table stays pluggable; ``from_logistic`` is one convenient
    generator, not a claim about the true curve.
    """

    threshold: int
    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "threshold", _check_threshold(self.threshold))
        pts = tuple((int(x), float(t)) for x, t in self.points)
        if not pts:
            raise ValueError("SCurve requires at least one table point")
        xs = [x for x, _ in pts]
        ts = [t for _, t in pts]
        if xs != sorted(set(xs)):
            raise ValueError("SCurve photon counts must be strictly increasing")
        if xs[0] < self.threshold:
            raise ValueError("SCurve table must not assign probability below the threshold")
        if any(t < 0.0 or t > 1.0 for t in ts):
            raise ValueError("SCurve probabilities must lie in [0, 1]")
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("SCurve probabilities must be non-decreasing")
        if ts[0] <= 0.0:
            raise ValueError("SCurve must be strictly positive at its first table point")
        object.__setattr__(self, "points", pts)

    def __call__(self, x: int) -> float:
        if x < self.threshold:
            return 0.0
        value = 0.0
        for xi, ti in self.points:
            if x >= xi:
                value = ti
            else:
                break
        return value

    @property
    def saturation_point(self) -> int:
        return self.points[-1][0]

    @classmethod
    def from_logistic(
        cls, threshold: int, midpoint: float, steepness: float, x_max: int | None = None
    ) -> "SCurve":
        """Logistic table 1/(1 + exp(-k (x - x0))) truncated to 0 below the threshold."""
        if steepness <= 0:
            raise ValueError("steepness must be positive")
        if x_max is None:
            x_max = int(math.ceil(midpoint + 40.0 / steepness))
        xs = range(threshold, max(x_max, threshold) + 1)
        pts = tuple((x, 1.0 / (1.0 + math.exp(-steepness * (x - midpoint)))) for x in xs)
        return cls(threshold, pts)

    @classmethod
    def from_csv(cls, path: str | Path) -> "SCurve":
        """Load a table from a CSV with header ``x,theta`` and ascending rows."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header] != ["x", "theta"]:
                raise ValueError(f"{path}: expected CSV header 'x,theta'")
            pts = []
            for row in reader:
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise ValueError(f"{path}: malformed row {row!r}")
                pts.append((int(row[0]), float(row[1])))
        if not pts:
            raise ValueError(f"{path}: empty response table")
        return cls(threshold=pts[0][0], points=tuple(pts))


def evaluate(f: ResponseFunction, x: int) -> float:
    """Theta(x); x must be a non-negative integer."""
    x = int(x)
    if x < 0:
        raise ValueError(f"photon count must be non-negative, got {x}")
    return float(f(x))


def is_perfect_step(f: ResponseFunction) -> bool:
    """True iff Theta takes only the values 0 and 1."""
    if isinstance(f, PerfectStep):
        return True
    if isinstance(f, SmoothStep):
        return f.eta == 1.0
    if isinstance(f, SCurve):
        return all(t in (0.0, 1.0) for _, t in f.points)
    values = f.table(f.saturation_point + 1)
    return bool(np.all((values == 0.0) | (values == 1.0)))


def parse_response(spec: str) -> ResponseFunction:
    """Parse ``step:N``, ``smooth:N:ETA`` or ``scurve:PATH``."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "step":
            return PerfectStep(int(rest))
        if kind == "smooth":
            n_str, _, eta_str = rest.partition(":")
            return SmoothStep(int(n_str), float(eta_str))
        if kind == "scurve":
            if not rest:
                raise ValueError("missing path")
            return SCurve.from_csv(rest)
    except (ValueError, OSError) as exc:
        raise ValueError(f"invalid response spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown response kind {kind!r} (expected step, smooth or scurve)")


@lru_cache(maxsize=None)
def _theta_table(f: ResponseFunction, x_max: int) -> np.ndarray:
    values = np.array([f(x) for x in range(x_max + 1)])
    values.setflags(write=False)
    return values
