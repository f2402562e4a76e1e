"""Two-fidelity viscous free fall of a ball.

Input vector ``u = [y0, v0, rho_ball, r]``; the output field is the
altitude sampled on ``n_nodes`` evenly spaced times over ``[0, horizon]``.

The low-fidelity model uses a constant drag coefficient and the closed
form solution; the high-fidelity model integrates the equation of motion
with a Reynolds-dependent drag coefficient.
"""

from __future__ import annotations

import warnings
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .data import MultiFidelityDataset, SnapshotSet
from .doe import BoxDomain, NestedDoe

G = 9.81
RHO_FLUID = 998.3
ETA = 1.002e-3
CD_LF = 0.4

DOMAIN = BoxDomain([0.2, 10.0, 10.0, 0.1], [0.4, 20.0, 100.0, 1.0])
INPUT_NAMES = ("y0", "v0", "rho_ball", "r")

N_NODES = 101
# About half of the LF trajectories over DOMAIN reach the ground before
# this horizon (measured on a 10^4-point LHS).
DEFAULT_HORIZON = 2.0
DEFAULT_ODE_TOL = 1e-8

VARIANTS = ("no_ground", "ground")


class BallParams(NamedTuple):
    y0: float
    v0: float
    rho_ball: float
    r: float

    @classmethod
    def from_vector(cls, u) -> BallParams:
        u = np.asarray(u, dtype=float).ravel()
        if u.size != 4:
            raise ValueError(f"expected 4 inputs (y0, v0, rho_ball, r), got {u.size}")
        return cls(*map(float, u))

    @property
    def mass(self) -> float:
        return self.rho_ball * 4.0 * np.pi * self.r**3 / 3.0

    @property
    def area(self) -> float:
        return np.pi * self.r**2

    def in_domain(self) -> bool:
        u = np.array(self)
        return bool(np.all(u >= DOMAIN.lower) and np.all(u <= DOMAIN.upper))


def time_grid(n_nodes: int = N_NODES, horizon: float = DEFAULT_HORIZON) -> np.ndarray:
    if n_nodes < 2:
        raise ValueError("n_nodes must be >= 2")
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    return np.linspace(0.0, horizon, n_nodes)


def lf_constants(p: BallParams) -> tuple[float, float, float]:
    """``(c, tau, v_inf)`` of the constant-drag model."""
    c = 0.5 * CD_LF * RHO_FLUID * p.area
    tau = p.mass / c
    return c, tau, -p.mass * G / c


def lf_trajectory(p, n_nodes: int = N_NODES, horizon: float = DEFAULT_HORIZON) -> np.ndarray:
    """Closed-form low-fidelity altitude on the time grid."""
    p = p if isinstance(p, BallParams) else BallParams.from_vector(p)
    if not p.in_domain():
        warnings.warn(f"parameters {tuple(p)} lie outside the benchmark domain", stacklevel=2)
    t = time_grid(n_nodes, horizon)
    _, tau, v_inf = lf_constants(p)
    return p.y0 + v_inf * t + tau * (p.v0 - v_inf) * (-np.expm1(-t / tau))


def drag_force(v: float, p: BallParams) -> float:
    """High-fidelity drag force, signed to oppose the velocity.

    ``0.5 rho a Cd(Re) v|v|`` with ``Cd = 24/Re + 6/(1+sqrt(Re)) + 0.4``; the
    Stokes part ``24/Re`` is expanded analytically to ``6 pi eta r v`` so the
    expression stays finite at ``v = 0``.
    """
    re = RHO_FLUID * 2.0 * p.r * abs(v) / ETA
    stokes = 6.0 * np.pi * ETA * p.r * v
    return stokes + 0.5 * RHO_FLUID * p.area * (6.0 / (1.0 + np.sqrt(re)) + 0.4) * v * abs(v)


def hf_trajectory(
    p,
    n_nodes: int = N_NODES,
    horizon: float = DEFAULT_HORIZON,
    ode_tol: float = DEFAULT_ODE_TOL,
    force: Callable[[float, BallParams], float] = drag_force,
) -> np.ndarray:
    """Numerically integrated high-fidelity altitude on the time grid.

    ``force(v, p)`` is the drag law; the default is :func:`drag_force`.
    LSODA switches to a BDF scheme when the early deceleration is stiff.
    """
    p = p if isinstance(p, BallParams) else BallParams.from_vector(p)
    if not ode_tol > 0:
        raise ValueError("ode_tol must be > 0")
    if not p.in_domain():
        warnings.warn(f"parameters {tuple(p)} lie outside the benchmark domain", stacklevel=2)
    t = time_grid(n_nodes, horizon)
    m = p.mass

    def rhs(_, s):
        return (s[1], -G - force(s[1], p) / m)

    sol = solve_ivp(
        rhs, (0.0, horizon), [p.y0, p.v0], method="LSODA", t_eval=t,
        rtol=ode_tol, atol=ode_tol * 1e-2,
    )
    if not sol.success:
        raise RuntimeError(f"integration failed for u={tuple(p)}: {sol.message}")
    y = sol.y[0].copy()
    y[0] = p.y0
    return y


def apply_ground(field: np.ndarray) -> np.ndarray:
    """Clip negative altitudes to zero (inelastic ground at y = 0)."""
    return np.maximum(field, 0.0)


def lf_fields(u: np.ndarray, variant: str = "no_ground", n_nodes: int = N_NODES,
              horizon: float = DEFAULT_HORIZON) -> np.ndarray:
    """LF fields for every row of ``u``; usable as an LF provider."""
    u = np.atleast_2d(u)
    out = np.array([lf_trajectory(row, n_nodes, horizon) for row in u])
    return apply_ground(out) if variant == "ground" else out


def hf_fields(u: np.ndarray, variant: str = "no_ground", n_nodes: int = N_NODES,
              horizon: float = DEFAULT_HORIZON, ode_tol: float = DEFAULT_ODE_TOL) -> np.ndarray:
    u = np.atleast_2d(u)
    rows = []
    for i, row in enumerate(u):
        try:
            rows.append(hf_trajectory(row, n_nodes, horizon, ode_tol))
        except RuntimeError as exc:
            raise RuntimeError(f"HF simulation failed on input row {i}: {exc}") from exc
    out = np.array(rows)
    return apply_ground(out) if variant == "ground" else out


class LfSimulator:
    """Picklable LF field provider for the free-fall case."""

    def __init__(self, variant="no_ground", n_nodes=N_NODES, horizon=DEFAULT_HORIZON):
        self.variant, self.n_nodes, self.horizon = variant, n_nodes, horizon

    def __call__(self, u):
        return lf_fields(u, self.variant, self.n_nodes, self.horizon)


def generate_case(
    doe: NestedDoe,
    variant: str = "no_ground",
    n_nodes: int = N_NODES,
    horizon: float = DEFAULT_HORIZON,
    ode_tol: float = DEFAULT_ODE_TOL,
) -> MultiFidelityDataset:
    """Evaluate both simulators on a nested design."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    t = time_grid(n_nodes, horizon)[:, None]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        y1 = hf_fields(doe.u1, variant, n_nodes, horizon, ode_tol)
        y2 = lf_fields(doe.u2, variant, n_nodes, horizon)
    meta = {
        "case": "vff",
        "variant": variant,
        "horizon": horizon,
        "n_nodes": n_nodes,
        "ode_tol": ode_tol,
        "seed": doe.seed,
        "input_names": list(INPUT_NAMES),
    }
    return MultiFidelityDataset(
        SnapshotSet(doe.u1, y1, t, 1), SnapshotSet(doe.u2, y2, t, 2), metadata=meta
    )
