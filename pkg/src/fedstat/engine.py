"""Multi-round locally updated SGD over simulated clients.

Each round m consists of E_m independent SGD steps per client with step size
eta_m, followed by synchronization: the server replaces every client state by
the weighted average.  Only the synchronized iterates leave this module; local
states are internal and discarded at each sync.

Randomness layout: every client owns two sequential substreams derived from
the run seed, one feeding the optimization samples and one feeding the fresh
samples that inference observers consume at sync times.  Streams are keyed by
client index, so adding clients or rounds never perturbs existing draws, and
attaching observers never changes the optimization path.  Samples are drawn
from each stream in chunks of `_BUFFER_CHUNK` for speed; within a stream they
are always consumed sequentially, one row per local iteration (or per sync for
the inference stream).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, Protocol, runtime_checkable

import numpy as np

from . import models, schedules

__all__ = [
    "SyncPath",
    "SyncObserver",
    "DivergenceError",
    "client_generators",
    "run",
    "average_estimate",
    "save_path_csv",
]

_BUFFER_CHUNK = 2048


class DivergenceError(RuntimeError):
    """The synchronized iterate left the allowed region; names the round."""


@dataclass(frozen=True)
class SyncPath:
    """The synchronized iterates and their iteration indices.

    points[m-1] is the average reached at the m-th synchronization, which
    happens at iteration comm_times[m-1]; total_iterations == comm_times[-1].
    """

    points: np.ndarray
    comm_times: np.ndarray
    total_iterations: int

    def __post_init__(self) -> None:
        if len(self.points) != len(self.comm_times):
            raise ValueError("points and comm_times must have equal length")
        if np.any(np.diff(self.comm_times) <= 0):
            raise ValueError("comm_times must be strictly increasing")

    @property
    def rounds(self) -> int:
        return len(self.points)


@runtime_checkable
class SyncObserver(Protocol):
    """Sink notified after every synchronization, in round order."""

    needs_inference_draws: bool

    def observe_sync(
        self,
        round_index: int,
        iteration: int,
        x_bar: np.ndarray,
        interval: int,
        grad_draw: np.ndarray | None,
        hess_draw: np.ndarray | None,
    ) -> None: ...


def client_generators(
    seed: int | np.random.SeedSequence, n_clients: int
) -> tuple[list[np.random.Generator], list[np.random.Generator]]:
    """Per-client (optimization, inference) generator pairs for a run seed."""
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    key = base.spawn_key
    opt = [
        np.random.default_rng(np.random.SeedSequence(base.entropy, spawn_key=(*key, 0, k)))
        for k in range(n_clients)
    ]
    inf = [
        np.random.default_rng(np.random.SeedSequence(base.entropy, spawn_key=(*key, 1, k)))
        for k in range(n_clients)
    ]
    return opt, inf


class SampleBuffer:
    """Sequential per-client samples, drawn in chunks and stacked client-major.

    ``take(n)`` returns (covariates (K, n, d), responses (K, n)) holding the
    next n samples of every client's stream.  Each client's rows appear in
    exactly the order its generator produces them, so the buffering granularity
    never changes which sample lands on which iteration for the linear kind
    (one normal block per draw); it is fixed at `_BUFFER_CHUNK` rows so results
    are reproducible for all kinds.
    """

    def __init__(
        self,
        clients: tuple[models.ClientModel, ...],
        rngs: list[np.random.Generator],
        chunk: int = _BUFFER_CHUNK,
    ):
        self._clients = clients
        self._rngs = rngs
        self._chunk = chunk
        self._cursor = 0
        self._size = 0
        self._A: np.ndarray | None = None
        self._B: np.ndarray | None = None

    def _refill(self, needed: int) -> None:
        size = max(self._chunk, needed)
        draws = [c.draw(rng, size) for c, rng in zip(self._clients, self._rngs)]
        fresh_a = np.stack([d[0] for d in draws])
        fresh_b = np.stack([d[1] for d in draws])
        left = self._size - self._cursor
        if left > 0:
            fresh_a = np.concatenate([self._A[:, self._cursor :, :], fresh_a], axis=1)
            fresh_b = np.concatenate([self._B[:, self._cursor :], fresh_b], axis=1)
        self._A, self._B = fresh_a, fresh_b
        self._cursor = 0
        self._size = fresh_a.shape[1]

    def take(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self._cursor + n > self._size:
            self._refill(n - (self._size - self._cursor))
        start = self._cursor
        self._cursor += n
        return self._A[:, start : self._cursor, :], self._B[:, start : self._cursor]


def run(
    federation: models.Federation,
    schedule: schedules.Schedule,
    total_rounds: int,
    x0: np.ndarray,
    seed: int | np.random.SeedSequence,
    observers: Iterable[SyncObserver] = (),
    divergence_bound: float = 1e8,
) -> SyncPath:
    """Run ``total_rounds`` communication rounds from ``x0``; returns the path.

    Deterministic given (federation, schedule, total_rounds, x0, seed).  After
    every synchronization the average is appended to the path and pushed to
    each observer, so inference runs strictly online.
    """
    if total_rounds < 1:
        raise ValueError("total_rounds must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    d = federation.dimension
    if x0.shape != (d,) or not np.all(np.isfinite(x0)):
        raise ValueError(f"x0 must be a finite vector of length {d}")

    observers = tuple(observers)
    need_draws = any(getattr(o, "needs_inference_draws", False) for o in observers)
    kind = federation.kind
    clients = federation.clients
    weights = federation.weights
    opt_rngs, inf_rngs = client_generators(seed, federation.size)

    e_all = schedules.intervals(schedule, total_rounds)
    _, etas = schedules.effective_steps(schedule, total_rounds)

    quadratic = kind == "quadratic"
    logistic = kind == "logistic"
    if quadratic:
        centers = np.stack([c.local_optimum for c in clients])
        curvatures = np.array([c.curvature for c in clients])
        opt_samples = inf_samples = None
        inf_hessian = float(weights @ curvatures) * np.eye(d)
    else:
        opt_samples = SampleBuffer(clients, opt_rngs)
        inf_samples = SampleBuffer(clients, inf_rngs) if need_draws else None

    X = np.tile(x0, (federation.size, 1))
    points = np.empty((total_rounds, d))
    comm_times = np.empty(total_rounds, dtype=np.int64)
    bound_sq = divergence_bound**2
    iteration = 0

    for m in range(1, total_rounds + 1):
        interval = int(e_all[m - 1])
        eta = etas[m - 1]
        if quadratic:
            for _ in range(interval):
                X -= eta * (curvatures[:, None] * (X - centers))
        else:
            A, B = opt_samples.take(interval)
            if logistic:
                for t in range(interval):
                    a_t = A[:, t, :]
                    p = models.sigmoid(np.einsum("kd,kd->k", a_t, X))
                    X -= eta * (a_t * (p - B[:, t])[:, None])
            else:
                for t in range(interval):
                    a_t = A[:, t, :]
                    resid = np.einsum("kd,kd->k", a_t, X) - B[:, t]
                    X -= eta * (a_t * resid[:, None])

        x_bar = weights @ X
        norm_sq = float(x_bar @ x_bar)
        if not norm_sq <= bound_sq:
            raise DivergenceError(
                f"synchronized iterate exceeded bound {divergence_bound:g} at round {m}"
            )
        X[:] = x_bar
        iteration += interval
        points[m - 1] = x_bar
        comm_times[m - 1] = iteration

        grad_draw = hess_draw = None
        if need_draws:
            if quadratic:
                gaps = np.broadcast_to(x_bar, centers.shape) - centers
                grad_draw = weights @ (curvatures[:, None] * gaps)
                hess_draw = inf_hessian
            else:
                A1, B1 = inf_samples.take(1)
                a = A1[:, 0, :]
                if logistic:
                    p = models.sigmoid(a @ x_bar)
                    grad_draw = weights @ (a * (p - B1[:, 0])[:, None])
                    hess_draw = np.einsum("k,ki,kj->ij", weights * p * (1.0 - p), a, a)
                else:
                    resid = a @ x_bar - B1[:, 0]
                    grad_draw = weights @ (a * resid[:, None])
                    hess_draw = np.einsum("k,ki,kj->ij", weights, a, a)
        for obs in observers:
            obs.observe_sync(m, iteration, x_bar, interval, grad_draw, hess_draw)

    return SyncPath(points=points, comm_times=comm_times, total_iterations=iteration)


def average_estimate(path: SyncPath) -> np.ndarray:
    """The final estimator: arithmetic mean of the synchronized iterates."""
    if path.rounds == 0:
        raise ValueError("path is empty")
    return path.points.mean(axis=0)


def save_path_csv(path: SyncPath, stream: IO[str]) -> None:
    """Dump the path as CSV rows (round, iteration, coordinates...)."""
    d = path.points.shape[1]
    header = "round,iteration," + ",".join(f"x{j}" for j in range(d))
    stream.write(header + "\n")
    for m, (t, point) in enumerate(zip(path.comm_times, path.points), start=1):
        coords = ",".join(f"{v:.17g}" for v in point)
        stream.write(f"{m},{t},{coords}\n")
