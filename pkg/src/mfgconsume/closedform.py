"""Closed-form equilibrium of the mean-field investment-consumption game.

Under deterministic market parameters the equilibrium of the game is known
in closed form. With the shorthand ``den = (1 - gamma) * (sigma^2 + sigma0^2)``
(per type) the building blocks are two population aggregates

    phi(t) = E[ h * sigma0 / den ]
    psi(t) = E[ theta * gamma * sigma0^2 / den ]

and, per type, the drift coefficient

    A(t) = -gamma * (h + sigma0 * z0)^2 / (2 * den)  -  z0^2 / 2
           + theta*gamma * E[pi* h]  -  theta*gamma / 2 * E[pi*^2 (sigma^2+sigma0^2)]

where ``z0 = -theta*gamma * phi / (1 + psi)`` is the type's common-noise
exposure and the equilibrium investment rate is

    pi*(t) = h / den - theta*gamma * sigma0 * phi / (den * (1 + psi)).

The equilibrium consumption rate solves the scalar Riccati equation
``y' = B(t) y + y^2`` backward from ``y(T) = D``, with

    B(t) = theta*gamma/(1-gamma) * E[A/(1-gamma)] / (1 + E[theta*gamma/(1-gamma)])
           - A(t)/(1-gamma)
    D    = exp( log(alpha)/(1-gamma)
                - theta*gamma * E[log(alpha)/(1-gamma)]
                  / ((1-gamma) * (1 + E[theta*gamma/(1-gamma)])) )

whose solution has the explicit quadrature form

    c*(t) = D * exp(-I(t)) / (1 + D * G(t)),
    I(t)  = integral_t^T B,     G(t) = integral_t^T exp(-I(s)) ds.

The log-certainty-equivalent curve of the equilibrium is

    Ytilde(t) = -theta*gamma*E[log D] - (1-gamma)*log D
                + theta*gamma*E[log Q](t) + (1-gamma)*log Q(t) + log(alpha),
    Q(t)      = exp(I(t)) * (1 + D * G(t)),

with Ytilde(T) = 0. All population expectations are exact finite sums; the
only numerical error sources are the trapezoid quadrature for I and G and
the RK4 cross-check of the Riccati equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ExponentRangeError, SingularAggregateError
from .grid import GridCurve, TimeGrid
from .odequad import cumtrapz_right, rk4_integrate
from .population import AgentType, Population

# treat 1 + psi (and 1 + E[theta*gamma/(1-gamma)]) as singular below this
_SINGULAR_TOL = 1e-12
# |B| = 0 branch switch of the constant-coefficient consumption formula
_B_ZERO_TOL = 1e-12
# hard cap on exponents before exp() would lose meaning
_EXP_CAP = 700.0


# ---------------------------------------------------------------------------
# population aggregates and per-type coefficient curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Aggregates:
    """Population-level curves and scalars every formula depends on.

    Holding these fixed while varying one tagged agent's parameters is what
    the sensitivity sweeps mean by an "individual" perturbation: a
    measure-zero agent cannot move the aggregates.
    """

    grid: TimeGrid
    phi: NDArray          # (n+1,)
    psi: NDArray          # (n+1,)
    e_pi_h: NDArray       # (n+1,)  E[pi* h]
    e_pi2_sig: NDArray    # (n+1,)  E[pi*^2 (sigma^2 + sigma0^2)]
    e_a_scaled: NDArray   # (n+1,)  E[A / (1 - gamma)]
    e_theta: float        # E[theta gamma / (1 - gamma)]
    e_logalpha: float     # E[log alpha / (1 - gamma)]


def _den(pop: Population) -> NDArray:
    return (1.0 - pop.gammas)[:, None] * (pop.sigma_mat**2 + pop.sigma0_mat**2)


def _phi_psi_arrays(pop: Population) -> tuple[NDArray, NDArray]:
    den = _den(pop)
    tg = pop.thetas * pop.gammas
    phi = pop.mean(pop.h_mat * pop.sigma0_mat / den)
    psi = pop.mean(tg[:, None] * pop.sigma0_mat**2 / den)
    return phi, psi


def _check_one_plus(x: NDArray | float, what: str) -> None:
    if np.min(np.abs(1.0 + np.asarray(x))) <= _SINGULAR_TOL or np.min(1.0 + np.asarray(x)) <= 0.0:
        raise SingularAggregateError(f"1 + {what} vanishes; closed form undefined")


def _coefficient_arrays(pop: Population):
    """Vectorised pi*, per-type z0, A, B, D over all knots.

    Returns (pi, z0, A, B, D, aggregates).
    """
    den = _den(pop)
    tg = (pop.thetas * pop.gammas)[:, None]
    phi, psi = _phi_psi_arrays(pop)
    _check_one_plus(psi, "psi")
    s = phi / (1.0 + psi)

    pi = pop.h_mat / den - tg * pop.sigma0_mat * s / den
    z0 = -tg * np.broadcast_to(s, den.shape)

    sig_tot2 = pop.sigma_mat**2 + pop.sigma0_mat**2
    e_pi_h = pop.mean(pi * pop.h_mat)
    e_pi2_sig = pop.mean(pi**2 * sig_tot2)
    a = (
        -pop.gammas[:, None] * (pop.h_mat + pop.sigma0_mat * z0) ** 2 / (2.0 * den)
        - z0**2 / 2.0
        + tg * e_pi_h
        - tg / 2.0 * e_pi2_sig
    )

    omg = 1.0 - pop.gammas
    e_theta = float(np.dot(pop.weights, pop.thetas * pop.gammas / omg))
    _check_one_plus(e_theta, "E[theta*gamma/(1-gamma)]")
    e_a = pop.mean(a / omg[:, None])
    b = (pop.thetas * pop.gammas / omg)[:, None] * e_a / (1.0 + e_theta) - a / omg[:, None]

    e_logalpha = float(np.dot(pop.weights, np.log(pop.alphas) / omg))
    d = np.exp(np.log(pop.alphas) / omg - pop.thetas * pop.gammas * e_logalpha / (omg * (1.0 + e_theta)))

    agg = Aggregates(
        grid=pop.grid,
        phi=phi,
        psi=psi,
        e_pi_h=e_pi_h,
        e_pi2_sig=e_pi2_sig,
        e_a_scaled=e_a,
        e_theta=e_theta,
        e_logalpha=e_logalpha,
    )
    return pi, z0, a, b, d, agg


def population_aggregates(pop: Population) -> Aggregates:
    """Aggregate curves/scalars of the population, for tagged-agent analyses."""
    return _coefficient_arrays(pop)[5]


def _consumption_from_b(b: NDArray, d: NDArray, dt: float):
    """c*, I = int_t^T B and G = int_t^T exp(-I) from per-type B curves."""
    ib = cumtrapz_right(b, dt)
    if np.max(np.abs(ib)) > _EXP_CAP:
        raise ExponentRangeError("integral of B exceeds exponent range")
    decay = np.exp(-ib)
    g = cumtrapz_right(decay, dt)
    d_col = np.asarray(d)[..., None]
    c = d_col * decay / (1.0 + d_col * g)
    return c, ib, g


# ---------------------------------------------------------------------------
# equilibrium solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumSolution:
    """The unique equilibrium on the shared grid.

    Per-type rows (K, n+1): investment rate ``pi_star``, consumption rate
    ``c_star``, log-certainty-equivalent ``y_tilde``, coefficient curves
    ``a_coeff`` and ``b_coeff``; per-type scalars ``d_coeff``. Shared knots
    (n+1,): ``phi``, ``psi`` and the common-noise exposure aggregate
    ``z0_common``. The martingale components vanish identically under
    deterministic market parameters (``z_tilde_zero``, ``z0_tilde_zero``).
    """

    grid: TimeGrid
    pi_star: NDArray
    c_star: NDArray
    y_tilde: NDArray
    a_coeff: NDArray
    b_coeff: NDArray
    d_coeff: NDArray
    phi: NDArray
    psi: NDArray
    z0_common: NDArray
    z_tilde_zero: bool = True
    z0_tilde_zero: bool = True

    def curve(self, name: str, k: int | None = None) -> GridCurve:
        vals = getattr(self, name)
        if vals.ndim == 2:
            if k is None:
                raise ValueError(f"{name} is per-type; pass a type index")
            vals = vals[k]
        return GridCurve(self.grid, vals)


def solve_equilibrium(pop: Population) -> EquilibriumSolution:
    """Compute the full closed-form equilibrium for a validated population."""
    pi, z0, a, b, d, agg = _coefficient_arrays(pop)
    c, ib, g = _consumption_from_b(b, d, pop.grid.dt)

    omg = 1.0 - pop.gammas
    tg = pop.thetas * pop.gammas
    log_d = np.log(d)
    e_logd = float(np.dot(pop.weights, log_d))
    log_q = ib + np.log1p(d[:, None] * g)
    e_logq = pop.mean(log_q)
    y_tilde = (
        -tg[:, None] * e_logd
        + tg[:, None] * e_logq
        - (omg * log_d)[:, None]
        + omg[:, None] * log_q
        + np.log(pop.alphas)[:, None]
    )

    den = _den(pop)
    z0_common = -pop.mean(tg[:, None] * pop.h_mat * pop.sigma0_mat / den) / (1.0 + agg.psi)

    return EquilibriumSolution(
        grid=pop.grid,
        pi_star=pi,
        c_star=c,
        y_tilde=y_tilde,
        a_coeff=a,
        b_coeff=b,
        d_coeff=d,
        phi=agg.phi,
        psi=agg.psi,
        z0_common=z0_common,
    )


# ---------------------------------------------------------------------------
# scalar operations (single time, single type)
# ---------------------------------------------------------------------------


def _params_at(pop: Population, t: float):
    """Interpolated per-type parameter values at one time."""
    pop.grid.check_time(t)
    h = np.array([tp.h(t) for tp in pop.types])
    sig = np.array([tp.sigma(t) for tp in pop.types])
    sig0 = np.array([tp.sigma0(t) for tp in pop.types])
    return h, sig, sig0


def phi_psi(pop: Population, t: float) -> tuple[float, float]:
    """The aggregates phi(t) and psi(t) as exact finite-mixture expectations."""
    h, sig, sig0 = _params_at(pop, t)
    den = (1.0 - pop.gammas) * (sig**2 + sig0**2)
    phi = float(np.dot(pop.weights, h * sig0 / den))
    psi = float(np.dot(pop.weights, pop.thetas * pop.gammas * sig0**2 / den))
    _check_one_plus(psi, "psi")
    return phi, psi


def _scalar_locals(pop: Population, t: float):
    h, sig, sig0 = _params_at(pop, t)
    den = (1.0 - pop.gammas) * (sig**2 + sig0**2)
    tg = pop.thetas * pop.gammas
    phi = float(np.dot(pop.weights, h * sig0 / den))
    psi = float(np.dot(pop.weights, tg * sig0**2 / den))
    _check_one_plus(psi, "psi")
    s = phi / (1.0 + psi)
    pi = h / den - tg * sig0 * s / den
    z0 = -tg * s
    return h, sig, sig0, den, tg, phi, psi, s, pi, z0


def optimal_investment(pop: Population, k: int, t: float) -> float:
    """Equilibrium investment rate of type ``k`` at time ``t``:
    ``h/den - theta*gamma*sigma0*phi / (den*(1+psi))``."""
    *_, pi, _ = _scalar_locals(pop, t)
    return float(pi[k])


def coeff_A(pop: Population, k: int, t: float) -> float:
    """Drift coefficient A of type ``k`` at time ``t`` (four-term expression)."""
    h, sig, sig0, den, tg, phi, psi, s, pi, z0 = _scalar_locals(pop, t)
    sig_tot2 = sig**2 + sig0**2
    e_pi_h = float(np.dot(pop.weights, pi * h))
    e_pi2 = float(np.dot(pop.weights, pi**2 * sig_tot2))
    g = pop.gammas[k]
    return float(
        -g * (h[k] + sig0[k] * z0[k]) ** 2 / (2.0 * den[k])
        - z0[k] ** 2 / 2.0
        + tg[k] * e_pi_h
        - tg[k] / 2.0 * e_pi2
    )


def coeff_B(pop: Population, k: int, t: float) -> float:
    """Riccati linear coefficient B of type ``k`` at time ``t``."""
    a = np.array([coeff_A(pop, j, t) for j in range(pop.n_types)])
    omg = 1.0 - pop.gammas
    e_theta = float(np.dot(pop.weights, pop.thetas * pop.gammas / omg))
    _check_one_plus(e_theta, "E[theta*gamma/(1-gamma)]")
    e_a = float(np.dot(pop.weights, a / omg))
    tg = pop.thetas[k] * pop.gammas[k]
    return float(tg / omg[k] * e_a / (1.0 + e_theta) - a[k] / omg[k])


def coeff_D(pop: Population, k: int) -> float:
    """Terminal consumption level D of type ``k`` (time independent)."""
    omg = 1.0 - pop.gammas
    e_theta = float(np.dot(pop.weights, pop.thetas * pop.gammas / omg))
    _check_one_plus(e_theta, "E[theta*gamma/(1-gamma)]")
    e_logalpha = float(np.dot(pop.weights, np.log(pop.alphas) / omg))
    tg = pop.thetas[k] * pop.gammas[k]
    return float(math.exp(math.log(pop.alphas[k]) / omg[k] - tg * e_logalpha / (omg[k] * (1.0 + e_theta))))


def optimal_consumption(pop: Population, k: int, t: float) -> float:
    """Equilibrium consumption rate of type ``k`` at time ``t`` via the
    quadrature form ``D e^{-I(t)} / (1 + D G(t))``; strictly positive, and
    exactly D at t = T."""
    _, _, _, b, d, _ = _coefficient_arrays(pop)
    c, _, _ = _consumption_from_b(b, d, pop.grid.dt)
    return float(GridCurve(pop.grid, c[k])(t))


def tilde_Y(pop: Population, k: int, t: float) -> float:
    """Log-certainty-equivalent curve of type ``k`` at time ``t``;
    terminal value 0."""
    sol = solve_equilibrium(pop)
    return float(GridCurve(pop.grid, sol.y_tilde[k])(t))


def common_noise_z0(pop: Population, t: float, k: int | None = None) -> float:
    """Common-noise exposure of the equilibrium at time ``t``.

    With ``k`` given, the type's own exposure ``-theta_k*gamma_k*phi/(1+psi)``.
    Without ``k``, the population aggregate with the ``theta*gamma`` factor
    taken inside the expectation,
    ``-E[theta*gamma*h*sigma0/den] / (1+psi)``; the two coincide whenever
    ``theta*gamma`` is constant across types.
    """
    h, sig, sig0 = _params_at(pop, t)
    den = (1.0 - pop.gammas) * (sig**2 + sig0**2)
    tg = pop.thetas * pop.gammas
    psi = float(np.dot(pop.weights, tg * sig0**2 / den))
    _check_one_plus(psi, "psi")
    if k is None:
        return float(-np.dot(pop.weights, tg * h * sig0 / den) / (1.0 + psi))
    phi = float(np.dot(pop.weights, h * sig0 / den))
    return float(-tg[k] * phi / (1.0 + psi))


def constant_consumption(b: float, d: float, horizon: float, t: float) -> float:
    """Consumption rate when all market parameters are time independent.

    ``{-1/B + (1/D + 1/B) e^{B (T-t)}}^{-1}`` for B away from zero, with the
    continuous limit ``1 / (T - t + 1/D)`` on the |B| < 1e-12 branch.
    """
    if d <= 0.0:
        raise ValueError(f"need D > 0, got {d}")
    tau = horizon - t
    if tau < 0:
        raise ValueError(f"time {t} beyond horizon {horizon}")
    if abs(b) < _B_ZERO_TOL:
        return 1.0 / (tau + 1.0 / d)
    if abs(b * tau) > _EXP_CAP:
        raise ExponentRangeError("B * (T - t) exceeds exponent range")
    # rearranged form of {-1/B + (1/D + 1/B) e^{B tau}}^{-1}; expm1 avoids
    # the 1/B cancellation as B -> 0
    return 1.0 / (math.exp(b * tau) / d + math.expm1(b * tau) / b)


def log_utility_ne(
    alpha: float, h: float, sigma: float, sigma0: float, t: float, horizon: float
) -> tuple[float, float]:
    """Equilibrium of the logarithmic-utility game, which decouples from the
    population: ``pi* = h / (sigma^2 + sigma0^2)``,
    ``c* = alpha / (1 + alpha (T - t))``."""
    sig_tot2 = sigma**2 + sigma0**2
    if sig_tot2 <= 0.0:
        raise ValueError("need sigma^2 + sigma0^2 > 0")
    if alpha <= 0.0:
        raise ValueError(f"need alpha > 0, got {alpha}")
    if not 0.0 <= t <= horizon:
        raise ValueError(f"time {t} outside [0, {horizon}]")
    return h / sig_tot2, alpha / (1.0 + alpha * (horizon - t))


# ---------------------------------------------------------------------------
# Riccati cross-check
# ---------------------------------------------------------------------------


def solve_riccati_numeric(pop: Population, k: int | None = None):
    """Backward RK4 sweep of the consumption Riccati equation
    ``y' = B(t) y + y^2`` from ``y(T) = D``.

    Independent of the quadrature form of ``c*``; agreement between the two
    is the primary internal consistency check. Returns a :class:`GridCurve`
    for one type, or the (K, n+1) matrix when ``k`` is None (all types are
    swept jointly either way).
    """
    _, _, _, b, d, _ = _coefficient_arrays(pop)
    grid = pop.grid
    n = grid.n_steps
    # RK4 only evaluates the rhs at knots and midpoints; pre-sampling B on
    # the half grid keeps the sweep exact for piecewise-linear B and cheap
    b_half = np.empty((pop.n_types, 2 * n + 1))
    b_half[:, 0::2] = b
    b_half[:, 1::2] = (b[:, :-1] + b[:, 1:]) / 2.0
    half_dt = grid.dt / 2.0

    def rhs(t, y):
        i = int(round(t / half_dt))
        return b_half[:, i] * y + y * y

    values = rk4_integrate(rhs, d, "backward", grid)
    if k is None:
        return values
    return GridCurve(grid, values[k])


# ---------------------------------------------------------------------------
# volatility thresholds of the investment rate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    """Roots of the stationarity condition d(pi*)/d(sigma0) = 0 in sigma0,
    holding phi, psi and the other own parameters fixed.

    ``valid`` is False when theta*gamma*phi = 0, in which case the slope
    never changes sign (it is strictly negative for h > 0) and no finite
    threshold exists.
    """

    sigma0_upper: float
    sigma0_lower: float
    valid: bool


def sigma0_thresholds(pop: Population, k: int, t: float) -> Thresholds:
    """Both roots of the sigma0-stationarity quadratic for type ``k`` at ``t``.

    The slope of pi* in the agent's own sigma0 is proportional to
    ``theta*gamma*phi/(1+psi) * s^2 - 2 h s - theta*gamma*phi*sigma^2/(1+psi)``
    evaluated at s = sigma0; the roots are
    ``a +/- sqrt(a^2 + sigma^2)`` with ``a = h (1+psi) / (theta*gamma*phi)``.
    """
    h, sig, sig0, den, tg, phi, psi, *_ = _scalar_locals(pop, t)
    lead = float(tg[k] * phi)
    if lead == 0.0:
        return Thresholds(math.nan, math.nan, False)
    a = float(h[k]) * (1.0 + psi) / lead
    root = math.sqrt(a * a + float(sig[k]) ** 2)
    return Thresholds(a + root, a - root, True)


# ---------------------------------------------------------------------------
# tagged-agent evaluation (sensitivity sweeps)
# ---------------------------------------------------------------------------


def tagged_policy_at0(agg: Aggregates, agent: AgentType) -> tuple[float, float]:
    """Equilibrium response (pi*, c*) at t = 0 of a measure-zero agent with
    the given parameters, facing fixed population aggregates.

    This is the object the monotonicity statements talk about: an individual
    perturbation changes the agent's own parameters while the aggregates
    stay put; a population perturbation changes the aggregates while the
    tagged agent keeps her parameters.
    """
    if abs(agent.gamma) < 1e-15 or agent.gamma >= 1.0:
        raise ValueError(f"gamma must lie in (-inf, 1) excluding 0, got {agent.gamma}")
    _check_one_plus(agg.psi, "psi")
    _check_one_plus(agg.e_theta, "E[theta*gamma/(1-gamma)]")

    h = agent.h.values
    sig = agent.sigma.values
    sig0 = agent.sigma0.values
    omg = 1.0 - agent.gamma
    tg = agent.theta * agent.gamma
    den = omg * (sig**2 + sig0**2)
    s = agg.phi / (1.0 + agg.psi)

    pi = h / den - tg * sig0 * s / den
    z0 = -tg * s
    a = (
        -agent.gamma * (h + sig0 * z0) ** 2 / (2.0 * den)
        - z0**2 / 2.0
        + tg * agg.e_pi_h
        - tg / 2.0 * agg.e_pi2_sig
    )
    b = tg / omg * agg.e_a_scaled / (1.0 + agg.e_theta) - a / omg
    d = math.exp(math.log(agent.alpha) / omg - tg * agg.e_logalpha / (omg * (1.0 + agg.e_theta)))
    c, _, _ = _consumption_from_b(b[None, :], np.array([d]), agg.grid.dt)
    return float(pi[0]), float(c[0, 0])
