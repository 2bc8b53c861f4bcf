"""Checkable identities behind the closed-form equilibrium.

Four independent lines of defence, none of which reuses the code path it
checks:

* the backward-equation residual: finite-difference d(Ytilde)/dt plus the
  full driver (quadratic noise-response terms plus the two exponential
  consumption terms) must vanish on the solved equilibrium;
* the drift bracket of the candidate reward process: non-positive for every
  admissible control pair, zero exactly at the optimiser;
* the analytic value ``V = (1/gamma) exp(gamma*log(x0) + Y_0)``, which the
  Monte-Carlo module re-estimates from scratch;
* the algebraic relations tying the investment rate, consumption index and
  common-noise exposure together across the two equivalent formulations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .closedform import EquilibriumSolution, _check_one_plus, _den, _params_at
from .errors import ExponentRangeError
from .grid import GridCurve
from .population import Population

_EXP_CAP = 700.0


# ---------------------------------------------------------------------------
# driver: quadratic part
# ---------------------------------------------------------------------------


def eval_J(pop: Population, k: int, t: float, z_tilde: float, z0_tilde: float) -> float:
    """Quadratic noise-response part of the backward-equation driver for
    type ``k`` at time ``t``, evaluated at martingale loadings
    ``(z_tilde, z0_tilde)`` (shared by all types inside the expectations).

    With ``f(a) = a / den`` and the effective loading
    ``S = E[f(sigma0*h) + f(sigma0*sigma) z + f(sigma0^2) z0] / (1 + psi)``,
    the five groups are

        -theta*gamma * E[f(h^2) + f(sigma*h) z + f(sigma0*h) z0]
        +theta*gamma * E[theta*gamma*f(sigma0*h)] * S
        +theta*gamma * E[(sigma^2+sigma0^2)/2 * P^2]
        + z^2/2 + (z0 - theta*gamma*S)^2 / 2
        + gamma*(1-gamma)*(sigma^2+sigma0^2)/2 * P_own^2

    where ``P = f(h) + f(sigma) z + f(sigma0) z0 - theta*gamma*f(sigma0)*S``
    is the induced investment rate. At z = z0 = 0 this reduces to ``-A``.
    """
    h, sig, sig0 = _params_at(pop, t)
    g = pop.gammas
    tg = pop.thetas * g
    den = (1.0 - g) * (sig**2 + sig0**2)
    w = pop.weights

    psi = float(np.dot(w, tg * sig0**2 / den))
    _check_one_plus(psi, "psi")
    s = float(np.dot(w, (sig0 * h + sig0 * sig * z_tilde + sig0**2 * z0_tilde) / den)) / (1.0 + psi)

    p = (h + sig * z_tilde + sig0 * z0_tilde - tg * sig0 * s) / den
    sig_tot2 = sig**2 + sig0**2

    g1 = -tg[k] * float(np.dot(w, (h**2 + sig * h * z_tilde + sig0 * h * z0_tilde) / den))
    g2 = tg[k] * float(np.dot(w, tg * sig0 * h / den)) * s
    g3 = tg[k] * float(np.dot(w, sig_tot2 / 2.0 * p**2))
    g4 = z_tilde**2 / 2.0 + (z0_tilde - tg[k] * s) ** 2 / 2.0
    g5 = g[k] * (1.0 - g[k]) * sig_tot2[k] / 2.0 * p[k] ** 2
    return float(g1 + g2 + g3 + g4 + g5)


def _j_at_zero(pop: Population) -> NDArray:
    """Vectorised eval_J(., 0, 0) over all types and knots, shape (K, n+1)."""
    den = _den(pop)
    g = pop.gammas[:, None]
    tg = (pop.thetas * pop.gammas)[:, None]
    h, sig, sig0 = pop.h_mat, pop.sigma_mat, pop.sigma0_mat
    w = pop.weights
    psi = pop.mean(tg * sig0**2 / den)
    _check_one_plus(psi, "psi")
    s = pop.mean(sig0 * h / den) / (1.0 + psi)
    p = (h - tg * sig0 * s) / den
    sig_tot2 = sig**2 + sig0**2
    g1 = -tg * pop.mean(h**2 / den)
    g2 = tg * pop.mean(tg * sig0 * h / den) * s
    g3 = tg * pop.mean(sig_tot2 / 2.0 * p**2)
    g4 = (tg * s) ** 2 / 2.0
    g5 = g * (1.0 - g) * sig_tot2 / 2.0 * p**2
    return g1 + g2 + g3 + g4 + g5


# ---------------------------------------------------------------------------
# driver: exponential consumption terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriverInput:
    """Arguments of the backward-equation driver at one (type, time) point.

    ``y_tilde`` carries the candidate values for *all* types at ``t`` (the
    driver couples them through a population expectation). When
    ``c_population`` is given it is used directly for the population
    consumption term; otherwise both exponential terms are computed from
    ``y_tilde``.
    """

    population: Population
    type_index: int
    t: float
    y_tilde: NDArray
    z_tilde: float = 0.0
    z0_tilde: float = 0.0
    c_population: Optional[NDArray] = None


def _exp_terms(pop: Population, y_tilde: NDArray) -> NDArray:
    """Per-type consumption rate induced by candidate ``y_tilde`` values:
    exp( log(alpha)/(1-gamma) - y/(1-gamma)
         + theta*gamma*(E[y/(1-gamma)] - E[log(alpha)/(1-gamma)])
           / ((1-gamma)*(1 + E[theta*gamma/(1-gamma)])) ).

    ``y_tilde`` may be a (K,) vector for one time or a (K, n+1) matrix of
    whole curves; the result has the same shape.
    """
    y = np.asarray(y_tilde, dtype=float)
    col = (lambda a: a[:, None]) if y.ndim == 2 else (lambda a: a)
    omg = col(1.0 - pop.gammas)
    tg = col(pop.thetas * pop.gammas)
    e_theta = float(np.dot(pop.weights, pop.thetas * pop.gammas / (1.0 - pop.gammas)))
    _check_one_plus(e_theta, "E[theta*gamma/(1-gamma)]")
    e_logalpha = float(np.dot(pop.weights, np.log(pop.alphas) / (1.0 - pop.gammas)))
    e_y = pop.mean(y / omg)
    expo = col(np.log(pop.alphas)) / omg - y / omg + tg * (e_y - e_logalpha) / (omg * (1.0 + e_theta))
    if np.max(np.abs(expo)) > _EXP_CAP:
        raise ExponentRangeError("driver exponent exceeds range")
    return np.exp(expo)


def bsde_driver(inp: DriverInput) -> float:
    """Full driver value: quadratic part plus
    ``(1-gamma) * exp_term_own + theta*gamma * E[exp_term]``."""
    pop = inp.population
    k = inp.type_index
    y = np.asarray(inp.y_tilde, dtype=float)
    if y.shape != (pop.n_types,):
        raise ValueError(f"y_tilde must have one entry per type, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y_tilde must be finite")
    terms = _exp_terms(pop, y)
    if inp.c_population is not None:
        pop_term = float(np.dot(pop.weights, np.asarray(inp.c_population, dtype=float)))
    else:
        pop_term = float(np.dot(pop.weights, terms))
    j = eval_J(pop, k, inp.t, inp.z_tilde, inp.z0_tilde)
    tg = pop.thetas[k] * pop.gammas[k]
    return float(j + (1.0 - pop.gammas[k]) * terms[k] + tg * pop_term)


# ---------------------------------------------------------------------------
# backward-equation residual
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualReport:
    """Residual curve per type and its interior sup norm.

    The residual at a knot is (finite-difference dY/dt) + driver; central
    differences on interior knots, one-sided at the two endpoints. The
    endpoints are first-order and excluded from the reported sup norm.
    """

    residuals: NDArray     # (K, n+1)
    sup_norm: float
    n_steps: int

    def curve(self, grid, k: int) -> GridCurve:
        return GridCurve(grid, self.residuals[k])


def bsde_residual(
    pop: Population, sol: EquilibriumSolution, y_tilde: NDArray | None = None
) -> ResidualReport:
    """Residual of the backward equation on the grid for candidate
    ``y_tilde`` curves (defaults to the solved equilibrium's)."""
    y = sol.y_tilde if y_tilde is None else np.asarray(y_tilde, dtype=float)
    dt = pop.grid.dt
    n = pop.grid.n_steps

    terms = _exp_terms(pop, y)
    pop_term = pop.mean(terms)
    tg = (pop.thetas * pop.gammas)[:, None]
    driver = _j_at_zero(pop) + (1.0 - pop.gammas)[:, None] * terms + tg * pop_term

    dy = np.empty_like(y)
    dy[:, 1:-1] = (y[:, 2:] - y[:, :-2]) / (2.0 * dt)
    dy[:, 0] = (y[:, 1] - y[:, 0]) / dt
    dy[:, -1] = (y[:, -1] - y[:, -2]) / dt

    res = dy + driver
    sup = float(np.abs(res[:, 1:-1]).max()) if n >= 2 else float(np.abs(res).max())
    return ResidualReport(residuals=res, sup_norm=sup, n_steps=n)


# ---------------------------------------------------------------------------
# drift bracket of the candidate reward process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MopState:
    """State at which the drift bracket is evaluated: backward component Y,
    log consumption index nu_hat, market and preference parameters, and the
    martingale loadings (Z, Z0)."""

    Y: float
    nu_hat: float
    h: float
    sigma: float
    sigma0: float
    gamma: float
    theta: float
    alpha: float
    Z: float = 0.0
    Z0: float = 0.0


def mop_maximizer(state: MopState) -> tuple[float, float]:
    """The unique maximiser of the drift bracket:
    ``pi = (h + sigma Z + sigma0 Z0) / ((1-gamma)(sigma^2+sigma0^2))`` and
    ``c = K^{1/(1-gamma)}`` with ``K = alpha exp(-Y - theta*gamma*nu_hat)``."""
    sig_tot2 = state.sigma**2 + state.sigma0**2
    omg = 1.0 - state.gamma
    pi = (state.h + state.sigma * state.Z + state.sigma0 * state.Z0) / (omg * sig_tot2)
    k = state.alpha * np.exp(-state.Y - state.theta * state.gamma * state.nu_hat)
    return float(pi), float(k ** (1.0 / omg))


def mop_drift(state: MopState, pi: float, c: float) -> float:
    """Drift bracket of the candidate reward process at control ``(pi, c)``.

    The everywhere-positive prefactor ``X^gamma e^Y`` is omitted, so the sign
    of the bracket is the sign of the drift: non-positive for every control,
    zero at the maximiser. Requires ``c > 0``.
    """
    if c <= 0.0:
        raise ValueError(f"consumption rate must be positive, got {c}")
    sig_tot2 = state.sigma**2 + state.sigma0**2
    omg = 1.0 - state.gamma
    g = state.gamma
    pi_opt = (state.h + state.sigma * state.Z + state.sigma0 * state.Z0) / (omg * sig_tot2)
    quad = -0.5 * omg * sig_tot2 * (pi - pi_opt) ** 2
    k = state.alpha * np.exp(-state.Y - state.theta * g * state.nu_hat)
    cons = -c + (k / g) * c**g - (omg / g) * k ** (1.0 / omg)
    return float(quad + cons)


def drift_check(seed: int, n_draws: int = 10_000, regime: str = "positive") -> tuple[float, float]:
    """Randomised sign check of the drift bracket at desk scale.

    Draws states with gamma in (0.1, 0.7) (``regime='positive'``) or in
    (-2, -0.1) (``regime='negative'``) and admissible random controls
    pi in [-10, 10], c in [1e-3, 10]. Returns (max bracket over random
    controls, max |bracket| at the analytic maximiser); non-positivity
    holds up to rounding, so the first stays below ~1e-12 and the second
    below ~1e-10.
    """
    rng = np.random.default_rng(seed)
    if regime == "positive":
        gammas = rng.uniform(0.1, 0.7, n_draws)
    elif regime == "negative":
        gammas = rng.uniform(-2.0, -0.1, n_draws)
    else:
        raise ValueError(f"regime must be 'positive' or 'negative', got {regime!r}")

    worst = -np.inf
    worst_opt = 0.0
    for g in gammas:
        state = MopState(
            Y=rng.uniform(-1.0, 1.0),
            nu_hat=rng.uniform(-1.0, 1.0),
            h=rng.uniform(0.0, 0.4),
            sigma=rng.uniform(0.1, 0.6),
            sigma0=rng.uniform(0.0, 0.5),
            gamma=float(g),
            theta=rng.uniform(0.0, 1.0),
            alpha=rng.uniform(0.5, 2.0),
            Z=rng.uniform(-1.0, 1.0),
            Z0=rng.uniform(-1.0, 1.0),
        )
        worst = max(worst, mop_drift(state, rng.uniform(-10, 10), rng.uniform(1e-3, 10)))
        pi_opt, c_opt = mop_maximizer(state)
        worst_opt = max(worst_opt, abs(mop_drift(state, pi_opt, c_opt)))
    return float(worst), float(worst_opt)


# ---------------------------------------------------------------------------
# value function and cross-formulation relations
# ---------------------------------------------------------------------------


def value_function(pop: Population, k: int, sol: EquilibriumSolution) -> float:
    """Equilibrium value of type ``k``:
    ``(1/gamma) exp(gamma*log(x0) + Y_0)`` with
    ``Y_0 = Ytilde_0 - theta*gamma*E[log x0]``."""
    g = pop.gammas[k]
    e_logx = float(np.dot(pop.weights, np.log(pop.x0s)))
    y0 = sol.y_tilde[k, 0] - pop.thetas[k] * g * e_logx
    return float(1.0 / g * np.exp(g * np.log(pop.x0s[k]) + y0))


@dataclass(frozen=True)
class RelationReport:
    """Maximum absolute errors of the three cross-formulation identities:
    investment rate, consumption index, common-noise exposure."""

    max_err_investment: float
    max_err_nu_hat: float
    max_err_z0: float


def relation_check(
    pop: Population, sol: EquilibriumSolution, w0_increments: NDArray | None = None, seed: int = 0
) -> RelationReport:
    """Verify, at every knot, that the equilibrium solves both equivalent
    formulations: (i) the investment rate rebuilt from the vanishing
    martingale loadings matches ``pi_star``; (ii) the consumption index
    rebuilt from the backward components along a common-noise path matches
    ``E[log c*] + mu_hat``; (iii) the common-noise exposure rebuilt from the
    loading relation matches ``z0_common``.
    """
    from .montecarlo import FlowModel, philox_stream

    den = _den(pop)
    tg = (pop.thetas * pop.gammas)[:, None]
    h, sig0 = pop.h_mat, pop.sigma0_mat

    # (i): with vanishing loadings the investment rate reads
    # (h - theta*gamma*sigma0 * E[sigma0 h / den] / (1 + E[theta*gamma sigma0^2/den])) / den
    denom_shared = 1.0 + pop.mean(tg * sig0**2 / den)
    s = pop.mean(sig0 * h / den) / denom_shared
    pi_alt = (h - tg * sig0 * s) / den
    err_pi = float(np.abs(pi_alt - sol.pi_star).max())

    # (iii): exposure aggregate from the loading relation
    z0_alt = -pop.mean(tg * h * sig0 / den) / denom_shared
    err_z0 = float(np.abs(z0_alt - sol.z0_common).max())

    # (ii): consumption index along one sampled common-noise path
    if w0_increments is None:
        rng = philox_stream(seed, 0x52454C)  # dedicated stream for this check
        w0_increments = rng.normal(0.0, np.sqrt(pop.grid.dt), pop.grid.n_steps)
    flow = FlowModel(pop, sol)
    mu = flow.mu_values(w0_increments)
    omg = 1.0 - pop.gammas
    e_theta = float(np.dot(pop.weights, pop.thetas * pop.gammas / omg))
    e_logalpha = float(np.dot(pop.weights, np.log(pop.alphas) / omg))
    # per-type backward component Y = Ytilde - theta*gamma*mu_hat
    e_y_scaled = pop.mean(sol.y_tilde / omg[:, None]) - e_theta * mu
    nu_alt = (mu + e_logalpha - e_y_scaled) / (1.0 + e_theta)
    nu_flow = flow.e_logc + mu
    err_nu = float(np.abs(nu_alt - nu_flow).max())

    return RelationReport(err_pi, err_nu, err_z0)
