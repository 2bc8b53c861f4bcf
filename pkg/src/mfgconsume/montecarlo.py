"""Monte-Carlo engine: wealth simulation, mean-field flow, utility
estimation, no-profitable-deviation and fixed-point consistency tests.

Determinism contract: every stochastic routine takes an integer seed and
derives independent counter-based streams (Philox) from (seed, purpose,
chunk). Samples are processed in fixed-size chunks and reduced in chunk
order, so results are bit-identical for any thread count; the
``MFG_CONSUME_THREADS`` environment variable only caps the worker pool.

Simulation is Euler in log-wealth coordinates with left-endpoint
coefficients, matching the Ito integral; for constant market parameters the
scheme is exact in distribution.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .closedform import EquilibriumSolution
from .grid import GridCurve, TimeGrid
from .odequad import cumtrapz_left
from .population import AgentType, Population, sample_agents

CHUNK = 4096

DEFAULT_PI_CAP = 10.0
DEFAULT_C_MIN = 1e-3
DEFAULT_C_MAX = 10.0

_MASK64 = (1 << 64) - 1

# stream-id namespaces; (domain, a, b) -> one 64-bit id
_DOM_UTIL_W0 = 1
_DOM_UTIL_W = 2
_DOM_CONS_W0 = 3
_DOM_CONS_TYPES = 4
_DOM_CONS_W = 5
_DOM_BUNDLE_W0 = 6
_DOM_BUNDLE_W = 7
_DOM_RELATION = 8


def _sid(domain: int, a: int = 0, b: int = 0) -> int:
    return ((domain << 56) | (a << 28) | b) & _MASK64


def philox_stream(seed: int, stream_id: int) -> np.random.Generator:
    """Independent counter-based stream keyed by (seed, stream id)."""
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _n_threads() -> int:
    raw = os.environ.get("MFG_CONSUME_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_ordered(fn: Callable[[int], object], count: int) -> list:
    """Apply fn to 0..count-1, in order; thread count never changes results."""
    threads = _n_threads()
    if threads <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(count)))


def _chunks(n: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]


# ---------------------------------------------------------------------------
# strategies and noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    """Deterministic control pair: per-knot investment rate ``pi`` and
    consumption rate ``c``. Admissibility bounds are enforced at
    construction: ``max|pi| <= pi_cap`` and ``c_min <= c <= c_max``."""

    grid: TimeGrid
    pi: NDArray
    c: NDArray
    pi_cap: float = DEFAULT_PI_CAP
    c_min: float = DEFAULT_C_MIN
    c_max: float = DEFAULT_C_MAX

    def __post_init__(self):
        if self.c_min <= 0.0 or self.c_max < self.c_min or self.pi_cap <= 0.0:
            raise ValueError("need c_max >= c_min > 0 and pi_cap > 0")
        pi = np.asarray(self.pi, dtype=np.float64).copy()
        c = np.asarray(self.c, dtype=np.float64).copy()
        n_knots = self.grid.n_steps + 1
        if pi.shape != (n_knots,) or c.shape != (n_knots,):
            raise ValueError(f"strategy curves must have {n_knots} knots")
        if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(c))):
            raise ValueError("strategy curves must be finite")
        if float(np.abs(pi).max()) > self.pi_cap:
            raise ValueError(f"|pi| exceeds cap {self.pi_cap}")
        if float(c.min()) < self.c_min or float(c.max()) > self.c_max:
            raise ValueError(f"c outside [{self.c_min}, {self.c_max}]")
        pi.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "c", c)


def equilibrium_strategy(
    sol: EquilibriumSolution,
    k: int,
    pi_cap: float = DEFAULT_PI_CAP,
    c_min: float = DEFAULT_C_MIN,
    c_max: float = DEFAULT_C_MAX,
) -> Strategy:
    """The solved equilibrium controls of type ``k`` as an admissible strategy."""
    return Strategy(sol.grid, sol.pi_star[k], sol.c_star[k], pi_cap, c_min, c_max)


@dataclass(frozen=True)
class NoiseBundle:
    """Brownian increments for a batch of samples: one shared common-noise
    path ``w0_increments`` (n_steps,) and per-sample idiosyncratic increments
    ``w_increments`` (n_samples, n_steps), each ~ N(0, dt) under the seeded
    counter-based generator."""

    w0_increments: NDArray
    w_increments: NDArray
    seed: int
    n_samples: int

    @classmethod
    def generate(cls, grid: TimeGrid, n_samples: int, seed: int) -> "NoiseBundle":
        if n_samples < 1:
            raise ValueError(f"need n_samples >= 1, got {n_samples}")
        sd = np.sqrt(grid.dt)
        w0 = philox_stream(seed, _sid(_DOM_BUNDLE_W0)).normal(0.0, sd, grid.n_steps)
        w = philox_stream(seed, _sid(_DOM_BUNDLE_W)).normal(0.0, sd, (n_samples, grid.n_steps))
        return cls(w0, w, seed, n_samples)


# ---------------------------------------------------------------------------
# wealth simulation
# ---------------------------------------------------------------------------


def _logwealth_paths(
    x0: float,
    h: NDArray,
    sigma: NDArray,
    sigma0: NDArray,
    pi: NDArray,
    c: NDArray,
    dw: NDArray,
    dw0: NDArray,
    dt: float,
) -> NDArray:
    """Euler log-wealth paths, left-endpoint coefficients; shape (m, n+1)."""
    drift = (pi * h - c - 0.5 * pi**2 * (sigma**2 + sigma0**2))[:-1] * dt
    incr = drift + (pi * sigma)[:-1] * dw + (pi * sigma0)[:-1] * dw0
    m = incr.shape[0]
    out = np.empty((m, incr.shape[1] + 1))
    out[:, 0] = np.log(x0)
    np.cumsum(incr, axis=1, out=out[:, 1:])
    out[:, 1:] += out[:, :1]
    return out


def simulate_wealth(
    agent: AgentType, strategy: Strategy, noise: NoiseBundle, sample_index: int = 0
) -> GridCurve:
    """Log-wealth path of one sample under the given bounded strategy."""
    grid = agent.grid
    dw = noise.w_increments[sample_index][None, :]
    dw0 = noise.w0_increments[None, :]
    path = _logwealth_paths(
        agent.x0, agent.h.values, agent.sigma.values, agent.sigma0.values,
        strategy.pi, strategy.c, dw, dw0, grid.dt,
    )
    return GridCurve(grid, path[0])


# ---------------------------------------------------------------------------
# mean-field flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanFieldFlow:
    """Log-geometric-mean processes conditional on one common-noise path:
    ``mu_hat(t) = E[log X* | common noise]`` and
    ``nu_hat(t) = E[log c*] + mu_hat(t)``; ``mu_hat(0) = E[log x0]``."""

    mu_hat: GridCurve
    nu_hat: GridCurve
    w0_increments: NDArray


class FlowModel:
    """Semi-analytic mean-field flow of a solved equilibrium.

    The idiosyncratic noise integrates out, so per common-noise path

        mu_hat(t) = E[log x0] + int_0^t E[pi* h - c* - pi*^2 (s^2+s0^2)/2] ds
                    + sum_{t_i < t} E[pi* sigma0](t_i) dW0_i

    is exact up to quadrature. The deterministic pieces are precomputed once
    so the flow can be re-evaluated per sample path cheaply.
    """

    def __init__(self, pop: Population, sol: EquilibriumSolution):
        self.grid = pop.grid
        pi, c = sol.pi_star, sol.c_star
        sig_tot2 = pop.sigma_mat**2 + pop.sigma0_mat**2
        gbar = pop.mean(pi * pop.h_mat - c - 0.5 * pi**2 * sig_tot2)
        self.e_logx = float(np.dot(pop.weights, np.log(pop.x0s)))
        self.mu_det = self.e_logx + cumtrapz_left(gbar, self.grid.dt)
        self.e_pis0 = pop.mean(pi * pop.sigma0_mat)
        self.e_logc = pop.mean(np.log(c))

    def mu_values(self, w0_increments: NDArray) -> NDArray:
        """mu_hat at every knot for one common-noise path, shape (n+1,)."""
        return self.mu_batch(np.asarray(w0_increments)[None, :])[0]

    def mu_batch(self, dw0: NDArray) -> NDArray:
        """mu_hat curves for a batch of common-noise paths, shape (m, n+1)."""
        m = dw0.shape[0]
        out = np.empty((m, self.grid.n_steps + 1))
        out[:, 0] = 0.0
        np.cumsum(self.e_pis0[:-1] * dw0, axis=1, out=out[:, 1:])
        return out + self.mu_det

    def along(self, w0_increments: NDArray) -> MeanFieldFlow:
        w0 = np.asarray(w0_increments, dtype=float)
        if w0.shape != (self.grid.n_steps,):
            raise ValueError(f"need {self.grid.n_steps} increments, got {w0.shape}")
        mu = self.mu_values(w0)
        return MeanFieldFlow(
            mu_hat=GridCurve(self.grid, mu),
            nu_hat=GridCurve(self.grid, self.e_logc + mu),
            w0_increments=w0,
        )


def mean_field_flow(pop: Population, sol: EquilibriumSolution, w0_increments) -> MeanFieldFlow:
    """Mean-field flow of the equilibrium along one common-noise path."""
    return FlowModel(pop, sol).along(w0_increments)


# ---------------------------------------------------------------------------
# expected utility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UtilityEstimate:
    """Monte-Carlo mean, standard error and sample count of an expected
    utility; ``stderr`` is exactly zero iff the payoff is degenerate."""

    mean: float
    stderr: float
    n_samples: int


class _Welford:
    """Order-fixed accumulation of (sum, sumsq, min, max) over chunks."""

    def __init__(self):
        self.s = 0.0
        self.s2 = 0.0
        self.n = 0
        self.lo = np.inf
        self.hi = -np.inf

    def add(self, x: NDArray) -> None:
        self.s += float(x.sum())
        self.s2 += float((x * x).sum())
        self.n += x.size
        self.lo = min(self.lo, float(x.min()))
        self.hi = max(self.hi, float(x.max()))

    def estimate(self) -> UtilityEstimate:
        mean = self.s / self.n
        if self.lo == self.hi:
            return UtilityEstimate(mean, 0.0, self.n)
        var = max(0.0, (self.s2 - self.n * mean * mean) / (self.n - 1))
        return UtilityEstimate(mean, float(np.sqrt(var / self.n)), self.n)


def _payoff_batch(
    agent: AgentType,
    strategy: Strategy,
    flow: FlowModel,
    dw: NDArray,
    dw0: NDArray,
) -> NDArray:
    """Per-sample utility under the strategy: terminal power utility of
    wealth relative to the population index, plus the time integral of the
    consumption utility (trapezoid in time)."""
    g, th, al = agent.gamma, agent.theta, agent.alpha
    dt = agent.grid.dt
    x = _logwealth_paths(
        agent.x0, agent.h.values, agent.sigma.values, agent.sigma0.values,
        strategy.pi, strategy.c, dw, dw0, dt,
    )
    mu = flow.mu_batch(dw0)
    nu = flow.e_logc + mu
    terminal = (1.0 / g) * np.exp(g * (x[:, -1] - th * mu[:, -1]))
    integrand = (al / g) * np.exp(g * (np.log(strategy.c) + x - th * nu))
    return terminal + np.trapezoid(integrand, dx=dt, axis=1)


def estimate_utility(
    agent: AgentType, strategy: Strategy, flow: FlowModel, n: int, seed: int
) -> UtilityEstimate:
    """Estimate the expected utility of ``strategy`` for one agent type.

    Both noises are integrated out: every sample draws a fresh common-noise
    path and a fresh idiosyncratic path, and the population flow is
    recomputed for each common-noise draw.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    sd = np.sqrt(agent.grid.dt)
    nst = agent.grid.n_steps
    ranges = _chunks(n)

    def one(i: int) -> NDArray:
        lo, hi = ranges[i]
        m = hi - lo
        dw0 = philox_stream(seed, _sid(_DOM_UTIL_W0, i)).normal(0.0, sd, (m, nst))
        dw = philox_stream(seed, _sid(_DOM_UTIL_W, i)).normal(0.0, sd, (m, nst))
        return _payoff_batch(agent, strategy, flow, dw, dw0)

    acc = _Welford()
    for payoff in _map_ordered(one, len(ranges)):
        acc.add(payoff)
    return acc.estimate()


# ---------------------------------------------------------------------------
# no-profitable-deviation test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    """A named admissible deviation from the equilibrium; ``large`` marks
    perturbations big enough that the utility gap must be statistically
    visible."""

    name: str
    strategy: Strategy
    large: bool


@dataclass(frozen=True)
class DeviationRow:
    name: str
    delta: float          # J(equilibrium) - J(perturbation), paired estimate
    stderr: float         # paired standard error
    large: bool
    flagged: bool         # delta < -2 * stderr: profitable deviation found


@dataclass(frozen=True)
class DeviationReport:
    rows: tuple[DeviationRow, ...]
    n_samples: int

    @property
    def passed(self) -> bool:
        return not any(r.flagged for r in self.rows)

    @property
    def large_detected(self) -> bool:
        return all(r.delta > 2.0 * r.stderr for r in self.rows if r.large)


def default_perturbations(
    sol: EquilibriumSolution,
    k: int,
    pi_cap: float = DEFAULT_PI_CAP,
    c_min: float = DEFAULT_C_MIN,
    c_max: float = DEFAULT_C_MAX,
) -> list[Perturbation]:
    """The standard 20-entry deviation library around type ``k``'s
    equilibrium: constant investment shifts, consumption rescalings, and
    time-localised bumps of both controls."""
    grid = sol.grid
    pi0 = sol.pi_star[k]
    c0 = sol.c_star[k]
    n = grid.n_steps
    mk = lambda pi, c: Strategy(grid, pi, c, pi_cap, c_min, c_max)

    out: list[Perturbation] = []
    for d in (0.1, 0.5, 1.0):
        out.append(Perturbation(f"pi+{d:g}", mk(pi0 + d, c0), d >= 0.5))
        out.append(Perturbation(f"pi-{d:g}", mk(pi0 - d, c0), d >= 0.5))
    for r in (0.5, 0.8, 1.25, 2.0):
        out.append(Perturbation(f"c*{r:g}", mk(pi0, c0 * r), r <= 0.5 or r >= 2.0))
    thirds = [(0, n // 3), (n // 3, 2 * n // 3), (2 * n // 3, n + 1)]
    for j, (lo, hi) in enumerate(thirds):
        for sign, tag in ((1.0, "+"), (-1.0, "-")):
            pi = pi0.copy()
            pi[lo:hi] += sign * 1.0
            out.append(Perturbation(f"pi{tag}1.0@third{j}", mk(pi, c0), True))
    halves = [(0, n // 2), (n // 2, n + 1)]
    for j, (lo, hi) in enumerate(halves):
        for r in (1.5, 0.7):
            c = c0.copy()
            c[lo:hi] *= r
            out.append(Perturbation(f"c*{r:g}@half{j}", mk(pi0, c), False))
    assert len(out) == 20
    return out


def deviation_test(
    pop: Population,
    k: int,
    sol: EquilibriumSolution,
    perturbations: Sequence[Perturbation],
    n: int,
    seed: int,
    pi_cap: float = DEFAULT_PI_CAP,
    c_min: float = DEFAULT_C_MIN,
    c_max: float = DEFAULT_C_MAX,
) -> DeviationReport:
    """Paired common-random-number comparison of the equilibrium against each
    perturbation: every sample reuses identical (W, W0) draws for all
    strategies, so delta estimates carry only the strategy difference."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    agent = pop.types[k]
    flow = FlowModel(pop, sol)
    eq = equilibrium_strategy(sol, k, pi_cap, c_min, c_max)
    sd = np.sqrt(pop.grid.dt)
    nst = pop.grid.n_steps
    ranges = _chunks(n)

    def one(i: int) -> list[NDArray]:
        lo, hi = ranges[i]
        m = hi - lo
        dw0 = philox_stream(seed, _sid(_DOM_UTIL_W0, i)).normal(0.0, sd, (m, nst))
        dw = philox_stream(seed, _sid(_DOM_UTIL_W, i)).normal(0.0, sd, (m, nst))
        j_eq = _payoff_batch(agent, eq, flow, dw, dw0)
        return [j_eq - _payoff_batch(agent, p.strategy, flow, dw, dw0) for p in perturbations]

    accs = [_Welford() for _ in perturbations]
    for diffs in _map_ordered(one, len(ranges)):
        for acc, d in zip(accs, diffs):
            acc.add(d)

    rows = []
    for p, acc in zip(perturbations, accs):
        est = acc.estimate()
        rows.append(
            DeviationRow(
                name=p.name,
                delta=est.mean,
                stderr=est.stderr,
                large=p.large,
                flagged=est.mean < -2.0 * est.stderr,
            )
        )
    return DeviationReport(tuple(rows), n)


# ---------------------------------------------------------------------------
# fixed-point consistency test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyRow:
    path_index: int
    t: float
    empirical_mean: float
    flow_mu: float
    stderr: float
    deviation_units: float


@dataclass(frozen=True)
class ConsistencyReport:
    rows: tuple[ConsistencyRow, ...]
    max_deviation_units: float
    n_agents: int


def consistency_test(
    pop: Population,
    sol: EquilibriumSolution,
    n_agents: int,
    n_w0_paths: int,
    seed: int,
    probe_times: Sequence[float] | None = None,
    stratified: bool = False,
    w0_seed: int | None = None,
) -> ConsistencyReport:
    """Fixed-point check: per common-noise path, the empirical mean
    log-wealth of ``n_agents`` simulated agents (types drawn by weight,
    independent idiosyncratic noise, equilibrium controls) is compared with
    the semi-analytic flow, in units of the empirical standard error.

    Agent noise streams are keyed independently of the common-noise values,
    so with no common-noise exposure the report does not depend on the
    common-noise path. ``stratified=True`` allocates agents to types by
    exact proportion instead of sampling, as a variance-reduction option.
    """
    if n_agents < 1 or n_w0_paths < 1:
        raise ValueError("need n_agents >= 1 and n_w0_paths >= 1")
    grid = pop.grid
    nst = grid.n_steps
    sd = np.sqrt(grid.dt)
    times = grid.times
    if probe_times is None:
        probe_times = np.linspace(0.2 * grid.T, grid.T, 5)
    probe_idx = [int(round(t / grid.dt)) for t in probe_times]
    for t in probe_times:
        grid.check_time(t)

    flow = FlowModel(pop, sol)
    sig_tot2 = pop.sigma_mat**2 + pop.sigma0_mat**2
    drift = (sol.pi_star * pop.h_mat - sol.c_star - 0.5 * sol.pi_star**2 * sig_tot2)[:, :-1] * grid.dt
    vol_w = (sol.pi_star * pop.sigma_mat)[:, :-1]
    vol_w0 = (sol.pi_star * pop.sigma0_mat)[:, :-1]
    log_x0 = np.log(pop.x0s)

    rows: list[ConsistencyRow] = []
    for p in range(n_w0_paths):
        w0 = philox_stream(seed if w0_seed is None else w0_seed, _sid(_DOM_CONS_W0, p)).normal(
            0.0, sd, nst
        )
        mu = flow.mu_values(w0)
        if stratified:
            counts = np.floor(pop.weights * n_agents).astype(int)
            counts[0] += n_agents - counts.sum()
            types = np.repeat(np.arange(pop.n_types), counts)
        else:
            types = sample_agents(pop, n_agents, philox_stream(seed, _sid(_DOM_CONS_TYPES, p)))
        ranges = _chunks(n_agents)

        def one(i: int):
            lo, hi = ranges[i]
            ti = types[lo:hi]
            m = hi - lo
            dw = philox_stream(seed, _sid(_DOM_CONS_W, p, i)).normal(0.0, sd, (m, nst))
            incr = drift[ti] + vol_w[ti] * dw + vol_w0[ti] * w0[None, :]
            x = np.empty((m, nst + 1))
            x[:, 0] = log_x0[ti]
            np.cumsum(incr, axis=1, out=x[:, 1:])
            x[:, 1:] += x[:, :1]
            probes = x[:, probe_idx]
            return probes.sum(axis=0), (probes * probes).sum(axis=0)

        s = np.zeros(len(probe_idx))
        s2 = np.zeros(len(probe_idx))
        for cs, cs2 in _map_ordered(one, len(ranges)):
            s += cs
            s2 += cs2

        for j, idx in enumerate(probe_idx):
            mean = s[j] / n_agents
            var = max(0.0, (s2[j] - n_agents * mean * mean) / max(1, n_agents - 1))
            stderr = float(np.sqrt(var / n_agents))
            diff = abs(mean - mu[idx])
            if stderr == 0.0:
                units = 0.0 if diff < 1e-12 else np.inf
            else:
                units = diff / stderr
            rows.append(
                ConsistencyRow(p, float(times[idx]), float(mean), float(mu[idx]), stderr, float(units))
            )

    max_units = max(r.deviation_units for r in rows)
    return ConsistencyReport(tuple(rows), float(max_units), n_agents)
