"""Random-scaling inference: studentization by a path-built matrix.

Instead of estimating the asymptotic covariance, the running average of the
synchronized iterates is studentized by V_hat, a weighted second moment of the
running means around the final mean.  The resulting statistic is pivotal but
not normal; its critical values depend only on the growth exponent beta of the
interval sequence and are tabulated separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import critvals
from .schedules import CommunicationSchedule, Schedule

__all__ = ["RScaleState", "RScaleObserver", "beta_for_schedule"]


@dataclass
class RScaleState:
    """Streaming accumulators behind V_hat.

    After m rounds:
        y_bar = mean of the first m synchronized points,
        A     = sum_n (n^2/E_n) y_bar_n y_bar_n',
        b     = sum_n (n^2/E_n) y_bar_n,
        s     = sum_n 1/E_n,
        q     = sum_n n^2/E_n.
    """

    dimension: int
    y_bar: np.ndarray = field(init=False)
    A: np.ndarray = field(init=False)
    b: np.ndarray = field(init=False)
    s: float = field(default=0.0, init=False)
    q: float = field(default=0.0, init=False)
    rounds_seen: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        d = self.dimension
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.y_bar = np.zeros(d)
        self.A = np.zeros((d, d))
        self.b = np.zeros(d)

    def observe(self, x_bar: np.ndarray, interval: int) -> "RScaleState":
        """Fold one synchronized point with its round's interval E_m."""
        if interval < 1:
            raise ValueError("interval must be >= 1")
        x_bar = np.asarray(x_bar, dtype=np.float64)
        if x_bar.shape != (self.dimension,):
            raise ValueError(f"x_bar must have shape ({self.dimension},)")
        m = self.rounds_seen + 1
        self.y_bar = ((m - 1) / m) * self.y_bar + x_bar / m
        w = m**2 / interval
        self.A += w * np.outer(self.y_bar, self.y_bar)
        self.b += w * self.y_bar
        self.s += 1.0 / interval
        self.q += w
        self.rounds_seen = m
        return self

    def v_hat(self) -> np.ndarray:
        """The studentizing matrix (A - y b' - b y' + q y y') / (m^2 s)."""
        if self.rounds_seen < 1:
            raise ValueError("no observations yet")
        y = self.y_bar
        v = self.A - np.outer(y, self.b) - np.outer(self.b, y) + self.q * np.outer(y, y)
        v /= self.rounds_seen**2 * self.s
        return (v + v.T) / 2.0

    def confidence_interval(
        self,
        beta: float,
        j: int,
        alpha: float,
        table: critvals.CriticalValueTable,
    ) -> tuple[float, float]:
        """Two-sided level-(1-alpha) interval for coordinate ``j`` of the optimum."""
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        v_jj = float(self.v_hat()[j, j])
        if v_jj < 0.0:
            # V_hat is PSD in exact arithmetic; tolerate square-root roundoff only.
            if v_jj < -1e-14:
                raise ValueError(f"V_hat diagonal {v_jj:g} is negative beyond roundoff")
            v_jj = 0.0
        half = critvals.lookup(table, alpha, beta) * np.sqrt(v_jj)
        center = float(self.y_bar[j])
        return center - half, center + half


def beta_for_schedule(schedule: Schedule) -> float:
    """Growth exponent selecting the critical-value row for a schedule.

    Constant and logarithmic interval growth both rescale time linearly, so
    they share the beta = 0 row; power growth E_m ~ m**beta uses its own beta.
    """
    if not isinstance(schedule, CommunicationSchedule):
        raise ValueError("no canonical growth exponent for explicit schedules")
    if schedule.kind == "power":
        return schedule.exponent
    return 0.0


class RScaleObserver:
    """Engine adapter feeding the random-scaling recursions."""

    needs_inference_draws = False

    def __init__(self, dimension: int):
        self.state = RScaleState(dimension)

    def observe_sync(self, round_index, iteration, x_bar, interval, grad_draw, hess_draw):
        self.state.observe(x_bar, interval)
