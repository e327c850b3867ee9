"""Scaling parameters and exponent bookkeeping.

Everything here is a plain value type: safe to share across threads.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class ConstraintViolation(ValueError):
    """Raised when an exponent set breaks one of the admissibility intervals."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class RegularizationParams:
    """Particle number, mollifier exponent and light speed.

    The mollifier width is always recomputed as ``n_particles ** -theta``.
    """

    n_particles: int
    theta: float
    light_speed: float

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError(f"n_particles must be a positive integer, got {self.n_particles}")
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")
        if not (self.light_speed >= 1.0 and math.isfinite(self.light_speed)):
            raise ValueError(f"light_speed must be finite and >= 1, got {self.light_speed}")

    @property
    def mollifier_width(self) -> float:
        return float(self.n_particles) ** (-self.theta)

    @property
    def shell_half_width(self) -> float:
        """Radial half-thickness of the smeared light-cone shell (twice the width)."""
        return 2.0 * self.mollifier_width


@dataclass(frozen=True)
class ExponentSet:
    alpha: float
    beta: float
    theta: float
    eta: float
    gamma: float | None = field(default=None)

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", self.beta)

    def bounds(self) -> dict[str, tuple[float, float]]:
        """Open admissibility interval for each constrained exponent."""
        a, b = self.alpha, self.beta
        return {
            "alpha": (0.0, 1.0 / 8.0),
            "beta": (a, (1.0 - a) / 4.0),
            "theta": (0.0, (1.0 - a - 4.0 * b) / 16.0),
            "eta": (0.0, (1.0 - a - 4.0 * b - 16.0 * self.theta) / 4.0),
        }


def validate_exponents(e: ExponentSet, strict: bool = True) -> list[str]:
    """Check the exponent intervals.

    Returns the list of violated constraints (empty means admissible). In
    strict mode any violation raises :class:`ConstraintViolation`; otherwise
    each violation is logged as a warning and returned.
    """
    values = {"alpha": e.alpha, "beta": e.beta, "gamma": e.gamma, "theta": e.theta, "eta": e.eta}
    bad = [k for k, v in values.items() if v is None or not math.isfinite(v)]
    if bad:
        raise ValueError(f"non-finite exponents: {', '.join(bad)}")

    violations = []
    for name, (lo, hi) in e.bounds().items():
        v = values[name]
        if not (lo < v < hi):
            violations.append(f"{name}={v:g} not in ({lo:g}, {hi:g})")
    if violations and strict:
        raise ConstraintViolation(violations)
    for msg in violations:
        logger.warning("non-strict exponent set: %s", msg)
    return violations


def hat_velocity(v, c: float):
    """Relativistic transport velocity ``v / sqrt(1 + |v|^2 / c^2)``.

    Works on a single 3-vector or on an ``(..., 3)`` array.
    """
    v = np.asarray(v, dtype=float)
    speed2 = np.sum(v * v, axis=-1, keepdims=True)
    return v / np.sqrt(1.0 + speed2 / (c * c))
