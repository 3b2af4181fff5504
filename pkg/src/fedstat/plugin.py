"""Online plug-in inference: running curvature/noise estimates and normal CIs.

At every synchronization the server receives one weighted stochastic gradient
and one weighted stochastic Hessian evaluated at the current average, both
built from a single fresh sample per client.  Their running means estimate the
Hessian G and the gradient-noise covariance S; the confidence interval for a
coordinate is centered at the running average of the synchronized iterates
with normal-quantile half-width scaled by sqrt(nu_hat / t_T).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np
import scipy.linalg

from .schedules import ScheduleDiagnostics

__all__ = ["PluginState", "PluginObserver", "SingularHessian"]

_MAX_CONDITION = 1e12


class SingularHessian(RuntimeError):
    """The running Hessian estimate is not invertible yet; run more rounds."""


def _z_quantile(alpha: float) -> float:
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


@dataclass
class PluginState:
    """Streaming accumulators for the sandwich covariance estimate.

    ``rounds_seen`` counts synchronized points folded into the center y_bar;
    ``gs_rounds`` counts gradient/Hessian draws folded into G_hat and S_hat
    (these differ only when warm-up rounds are excluded from estimation).
    """

    dimension: int
    g_hat: np.ndarray = field(init=False)
    s_hat: np.ndarray = field(init=False)
    y_bar: np.ndarray = field(init=False)
    rounds_seen: int = field(default=0, init=False)
    gs_rounds: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        d = self.dimension
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.g_hat = np.zeros((d, d))
        self.s_hat = np.zeros((d, d))
        self.y_bar = np.zeros(d)

    def observe(
        self,
        x_bar: np.ndarray,
        grad_draw: np.ndarray | None = None,
        hess_draw: np.ndarray | None = None,
    ) -> "PluginState":
        """Fold one synchronized point, and optionally its draws, into the means."""
        d = self.dimension
        x_bar = np.asarray(x_bar, dtype=np.float64)
        if x_bar.shape != (d,):
            raise ValueError(f"x_bar must have shape ({d},)")
        self.rounds_seen += 1
        self.y_bar += (x_bar - self.y_bar) / self.rounds_seen
        if (grad_draw is None) != (hess_draw is None):
            raise ValueError("gradient and Hessian draws come in pairs")
        if grad_draw is not None:
            grad_draw = np.asarray(grad_draw, dtype=np.float64)
            hess_draw = np.asarray(hess_draw, dtype=np.float64)
            if grad_draw.shape != (d,) or hess_draw.shape != (d, d):
                raise ValueError("draw dimensions do not match the state")
            self.gs_rounds += 1
            self.g_hat += (hess_draw - self.g_hat) / self.gs_rounds
            self.s_hat += (np.outer(grad_draw, grad_draw) - self.s_hat) / self.gs_rounds
        return self

    def sandwich(self) -> np.ndarray:
        """Ginv_hat @ S_hat @ Ginv_hat', symmetrized.

        Raises SingularHessian while too few draws have been seen or when the
        Hessian estimate is numerically singular (condition number > 1e12);
        both signal that the round count is still too small.
        """
        d = self.dimension
        if self.gs_rounds < d:
            raise SingularHessian(
                f"need at least {d} gradient/Hessian draws, have {self.gs_rounds}"
            )
        cond = np.linalg.cond(self.g_hat)
        if not np.isfinite(cond) or cond > _MAX_CONDITION:
            raise SingularHessian(
                f"Hessian estimate condition number {cond:.3g} exceeds {_MAX_CONDITION:g}"
            )
        ginv = scipy.linalg.solve(self.g_hat, np.eye(d), assume_a="sym")
        cov = ginv @ self.s_hat @ ginv.T
        return (cov + cov.T) / 2.0

    def confidence_interval(
        self, diag: ScheduleDiagnostics, j: int, alpha: float
    ) -> tuple[float, float]:
        """Two-sided level-(1-alpha) interval for coordinate ``j`` of the optimum."""
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        var_j = float(self.sandwich()[j, j])
        if var_j < 0.0:
            var_j = 0.0 if var_j > -1e-14 else var_j
        if var_j < 0.0:
            raise ValueError(f"sandwich diagonal {var_j:g} is negative beyond roundoff")
        half = _z_quantile(alpha) * np.sqrt(diag.nu_hat / diag.t_T) * np.sqrt(var_j)
        center = float(self.y_bar[j])
        return center - half, center + half


class PluginObserver:
    """Engine adapter; optionally keeps warm-up rounds out of G_hat/S_hat.

    The interval center always averages the full path (that is the estimator);
    ``skip_rounds`` only controls which draws feed the covariance estimate.
    """

    needs_inference_draws = True

    def __init__(self, dimension: int, skip_rounds: int = 0):
        self.state = PluginState(dimension)
        self.skip_rounds = skip_rounds

    def observe_sync(self, round_index, iteration, x_bar, interval, grad_draw, hess_draw):
        if round_index <= self.skip_rounds:
            self.state.observe(x_bar)
        else:
            self.state.observe(x_bar, grad_draw, hess_draw)
