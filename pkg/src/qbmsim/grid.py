"""Uniform time lattice shared by kernels, coefficients and integrators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform lattice ``t_j = j * dt`` for ``j = 0..n``.

    ``n`` counts steps, so the lattice holds ``n + 1`` points.
    """

    dt: float
    n: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("time step must be positive", "dt")
        if self.n < 0:
            raise ConfigurationError("number of steps must be non-negative", "n")

    @classmethod
    def from_span(cls, t_end: float, dt: float, rtol: float = 1e-9) -> "TimeGrid":
        """Build the grid covering ``[0, t_end]``; ``t_end`` must be a multiple of ``dt``."""
        if not dt > 0:
            raise ConfigurationError("time step must be positive", "dt")
        if t_end < 0:
            raise ConfigurationError("end time must be non-negative", "t_end")
        steps = t_end / dt
        n = int(round(steps))
        if abs(steps - n) > rtol * max(1.0, steps):
            raise ConfigurationError(f"t_end={t_end} is not a multiple of dt={dt}", "t_end")
        return cls(dt=float(dt), n=n)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n + 1)

    @property
    def t_end(self) -> float:
        return self.dt * self.n

    def __len__(self) -> int:
        return self.n + 1

    def refine(self, factor: int) -> "TimeGrid":
        """Same span with ``factor`` times as many steps."""
        return TimeGrid(self.dt / factor, self.n * factor)


def span_steps(t_span, dt: float, rtol: float = 1e-9) -> tuple[float, int]:
    """Start time and step count for a fixed-step run over ``t_span``."""
    t0, t1 = (float(v) for v in t_span)
    if t0 < 0 or t1 < t0:
        raise ConfigurationError(f"need 0 <= t0 <= t1, got {t_span}", "t_span")
    return t0, TimeGrid.from_span(t1 - t0, dt, rtol).n


def rk4_stage_times(t0: float, dt: float, n: int) -> np.ndarray:
    """``(n, 3)`` table of the times an RK4 step samples: start, midpoint, end."""
    starts = t0 + dt * np.arange(n)
    return np.stack([starts, starts + 0.5 * dt, starts + dt], axis=1)


# Largest |rate * dt| accepted by the fixed-step integrators. RK4 is stable on
# the negative real axis up to about 2.78; beyond this the coefficient is so
# close to a pole of F that the time-local generator is meaningless.
MAX_STEP_RATE = 2.5
