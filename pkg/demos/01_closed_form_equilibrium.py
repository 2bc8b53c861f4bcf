"""Solve a heterogeneous two-type game in closed form and inspect the result.

Run:  python demos/01_closed_form_equilibrium.py
"""

import numpy as np

from mfgconsume import (
    GridCurve,
    AgentType,
    Population,
    TimeGrid,
    constant_type,
    solve_equilibrium,
    validate,
    value_function,
)

# One shared grid for everything: curves, quadrature, ODE sweeps.
grid = TimeGrid(T=1.0, n_steps=1000)
t = grid.times

# Two types: a competitive low-risk-aversion investor with a seasonal return
# curve, and a more risk-averse one with constant parameters.
seasonal = AgentType(
    weight=0.6,
    x0=1.0,
    gamma=0.5,
    theta=0.8,
    alpha=1.0,
    h=GridCurve(grid, 0.10 + 0.02 * np.sin(2 * np.pi * t)),
    sigma=GridCurve(grid, np.full_like(t, 0.25)),
    sigma0=GridCurve(grid, np.full_like(t, 0.10)),
)
steady = constant_type(
    grid, weight=0.4, x0=2.0, gamma=-1.0, theta=0.3, alpha=1.2,
    h=0.08, sigma=0.30, sigma0=0.05,
)
pop = Population((seasonal, steady))
print("validation:", validate(pop).describe())

sol = solve_equilibrium(pop)

print("\naggregates at t = 0: phi = %.4f, psi = %.4f" % (sol.phi[0], sol.psi[0]))
print("common-noise exposure z0(0) = %.4f" % sol.z0_common[0])

print("\n%6s | %20s | %20s" % ("t", "type 0 (pi*, c*)", "type 1 (pi*, c*)"))
for i in range(0, grid.n_steps + 1, 250):
    print(
        "%6.2f | %9.4f %9.4f  | %9.4f %9.4f"
        % (t[i], sol.pi_star[0, i], sol.c_star[0, i], sol.pi_star[1, i], sol.c_star[1, i])
    )

print("\nterminal conditions: c*(T) - D =", np.abs(sol.c_star[:, -1] - sol.d_coeff).max(),
      " Ytilde(T) =", np.abs(sol.y_tilde[:, -1]).max())

for k in range(pop.n_types):
    print(f"equilibrium value of type {k}: V = {value_function(pop, k, sol):+.5f}")

# Switching competition off recovers the classical single-agent ratio.
merton_pop = Population(
    (constant_type(grid, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0),)
)
merton_sol = solve_equilibrium(merton_pop)
print("\nno competition: pi* =", merton_sol.pi_star[0, 0],
      "(classical ratio h / ((1-gamma) sigma^2))")
