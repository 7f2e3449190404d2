"""Euler-Maruyama integration of the interacting mirror descent dynamics.

Three flavors share the same explicit update skeleton. With per-particle
dual states z^i, multipliers lambda^i and mirrored multipliers mu^i, one step
of length dt reads (L is the graph Laplacian applied blockwise, B the
Gaussian increment with variance sigma^2 dt per coordinate):

* plain coupling (ISMD):
    z <- z - dt * (eta * grad_f(x) + eps * L z) + B
* exact (EISMD), coupling on x by default, on z via ``interaction_on="z"``:
    z      <- z - dt * (eta * grad_f(x) + eps * L x + L lambda) + B
    lambda <- lambda + dt * L x
* preconditioned exact (EPISMD): the lambda integral runs through a second
  mirror map over the multipliers,
    mu <- mu + dt * L x,   lambda = dual.backward(mu)

with x = backward(z) re-applied after every step, so the primal iterates can
never leave the mirror map's range (for the entropy map, the open simplex).

Initial conditions: lambda_0 = 0, z_0 = forward(x_0), mu_0 = 0. Noise is a
counter-based Gaussian stream keyed by (seed, step, particle, coordinate),
so trajectories are pure functions of (seed, config) no matter how the work
is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .graphs import WeightedGraph
from .mirror_maps import MirrorMap
from .objectives import DistributedProblem

ALGORITHMS = ("ismd", "eismd", "epismd")


class DivergenceError(RuntimeError):
    """A state coordinate became non-finite during integration."""

    def __init__(self, step: int, records: list):
        super().__init__(f"integration diverged at step {step}")
        self.step = step
        self.records = records  # metrics collected before the blow-up


@dataclass(frozen=True)
class Hyperparams:
    eta: float = 1.0
    epsilon: float = 1.0
    sigma: float = 0.0
    dt: float = 0.01
    epochs: int = 1000

    def __post_init__(self):
        if self.eta <= 0 or self.epsilon <= 0 or self.dt <= 0:
            raise ValueError("eta, epsilon and dt must be positive")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


class NoiseStream:
    """Counter-based Gaussian increments, N(0, sigma^2 dt) per coordinate.

    Each step gets its own Philox counter block, so the (n, d) increment for
    step k is a pure function of (seed, k, particle, coordinate) and is
    independent of evaluation order or thread count.
    """

    def __init__(self, seed: int, n: int, d: int, sigma: float, dt: float):
        self.n = n
        self.d = d
        self.scale = sigma * math.sqrt(dt)
        self._key = SeedSequence(seed).generate_state(2, np.uint64)

    def block(self, step: int) -> np.ndarray:
        gen = Generator(Philox(counter=[0, 0, step, 0], key=self._key))
        return self.scale * gen.standard_normal((self.n, self.d))


@dataclass(frozen=True)
class ParticleSystem:
    """Stacked state of the particle system at one step.

    x rows always satisfy x^i = backward(z^i); lam is zero for ISMD and mu is
    carried only by the preconditioned dynamics.
    """

    z: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray | None
    step: int
    t: float

    @classmethod
    def initial(cls, mmap: MirrorMap, x0_rows: np.ndarray, with_mu: bool = False) -> "ParticleSystem":
        x0 = np.asarray(x0_rows, dtype=float)
        z0 = mmap.forward(x0)
        zeros = np.zeros_like(x0)
        return cls(
            z=z0,
            x=mmap.backward(z0),
            lam=zeros,
            mu=zeros.copy() if with_mu else None,
            step=0,
            t=0.0,
        )


def default_initial_rows(problem: DistributedProblem, mmap: MirrorMap, seed: int) -> np.ndarray:
    """Default x_0: the uniform simplex point for the entropy map, a standard
    normal draw per particle otherwise."""
    if mmap.kind == "entropy":
        return np.full((problem.n, problem.d), 1.0 / problem.d)
    rng = np.random.default_rng(seed)
    return rng.standard_normal((problem.n, problem.d))


def ismd_step(
    state: ParticleSystem,
    problem: DistributedProblem,
    mmap: MirrorMap,
    graph: WeightedGraph,
    hp: Hyperparams,
    noise: np.ndarray | None = None,
) -> ParticleSystem:
    g = problem.grads(state.x)
    drift = hp.eta * g + hp.epsilon * (graph.laplacian @ state.z)
    z = state.z - hp.dt * drift
    if noise is not None:
        z = z + noise
    k = state.step + 1
    return ParticleSystem(z=z, x=mmap.backward(z), lam=state.lam, mu=None, step=k, t=k * hp.dt)


def eismd_step(
    state: ParticleSystem,
    problem: DistributedProblem,
    mmap: MirrorMap,
    graph: WeightedGraph,
    hp: Hyperparams,
    noise: np.ndarray | None = None,
    interaction_on: str = "x",
) -> ParticleSystem:
    g = problem.grads(state.x)
    lap_x = graph.laplacian @ state.x
    inter = lap_x if interaction_on == "x" else graph.laplacian @ state.z
    drift = hp.eta * g + hp.epsilon * inter + graph.laplacian @ state.lam
    z = state.z - hp.dt * drift
    if noise is not None:
        z = z + noise
    lam = state.lam + hp.dt * lap_x
    k = state.step + 1
    return ParticleSystem(z=z, x=mmap.backward(z), lam=lam, mu=None, step=k, t=k * hp.dt)


def epismd_step(
    state: ParticleSystem,
    problem: DistributedProblem,
    mmap: MirrorMap,
    dual,
    graph: WeightedGraph,
    hp: Hyperparams,
    noise: np.ndarray | None = None,
    interaction_on: str = "x",
) -> ParticleSystem:
    g = problem.grads(state.x)
    lap_x = graph.laplacian @ state.x
    inter = lap_x if interaction_on == "x" else graph.laplacian @ state.z
    drift = hp.eta * g + hp.epsilon * inter + graph.laplacian @ state.lam
    z = state.z - hp.dt * drift
    if noise is not None:
        z = z + noise
    mu = state.mu + hp.dt * lap_x
    k = state.step + 1
    return ParticleSystem(
        z=z, x=mmap.backward(z), lam=dual.backward(mu), mu=mu, step=k, t=k * hp.dt
    )


# Magnitudes beyond this overflow the quadratic forms every diagnostic needs,
# so they are treated as divergence just like non-finite values.
_STATE_LIMIT = 1e150


def _finite(state: ParticleSystem) -> bool:
    for arr in (state.z, state.lam, state.mu):
        if arr is None:
            continue
        if not np.isfinite(arr).all() or np.abs(arr).max(initial=0.0) > _STATE_LIMIT:
            return False
    return True


def run(
    algorithm: str,
    problem: DistributedProblem,
    mmap: MirrorMap,
    graph: WeightedGraph,
    hp: Hyperparams,
    *,
    seed: int = 0,
    dual=None,
    interaction_on: str = "x",
    metrics_every: int = 50,
    recorder=None,
    x0_rows: np.ndarray | None = None,
) -> list:
    """Iterate the chosen step function for hp.epochs steps.

    A record is emitted at step 0, every ``metrics_every`` steps and at the
    final step. ``recorder`` maps a ParticleSystem to whatever should be kept
    (default: the state itself). On a non-finite state the run aborts with a
    DivergenceError carrying the step index and the records collected so far.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if interaction_on not in ("x", "z"):
        raise ValueError(f"interaction_on must be 'x' or 'z', got {interaction_on!r}")
    if algorithm == "epismd" and dual is None:
        raise ValueError("epismd needs a dual preconditioner")
    if metrics_every < 1:
        raise ValueError(f"metrics_every must be >= 1, got {metrics_every}")
    if recorder is None:
        recorder = lambda s: s  # noqa: E731 - identity recorder keeps raw states

    if x0_rows is None:
        x0_rows = default_initial_rows(problem, mmap, seed)
    state = ParticleSystem.initial(mmap, x0_rows, with_mu=(algorithm == "epismd"))
    noise = None
    if hp.sigma > 0:
        noise = NoiseStream(seed, problem.n, problem.d, hp.sigma, hp.dt)

    records = [recorder(state)]
    for k in range(hp.epochs):
        b = noise.block(k) if noise is not None else None
        if algorithm == "ismd":
            state = ismd_step(state, problem, mmap, graph, hp, b)
        elif algorithm == "eismd":
            state = eismd_step(state, problem, mmap, graph, hp, b, interaction_on)
        else:
            state = epismd_step(state, problem, mmap, dual, graph, hp, b, interaction_on)
        if not _finite(state):
            raise DivergenceError(state.step, records)
        if state.step % metrics_every == 0 or state.step == hp.epochs:
            records.append(recorder(state))
    return records
