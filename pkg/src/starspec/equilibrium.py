"""Non-rotating equilibria: hydrostatic balance with self-consistent gravity.

With G = 1 and the enthalpy h = Phi'(rho) the radial equilibrium reduces to

    dm/dr = 4 pi r^2 rho(h),    dh/dr = -m / r^2,

started from the centre series and integrated outward until h vanishes at
the support radius R_mu.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import DomainError, NonCompactStarError, ToleranceError

DEFAULT_NODES = 800
DEFAULT_TOL = 1e-10
RADIUS_CAP = 1e4  # in units of the central length scale sqrt(h_c / (4 pi mu))


class ProfileValues(NamedTuple):
    rho: np.ndarray
    drho: np.ndarray
    m: np.ndarray
    h: np.ndarray
    P: np.ndarray
    Pprime: np.ndarray
    phi2: np.ndarray


@dataclass(frozen=True, eq=False)
class StarProfile:
    eos: object
    mu: float
    R_mu: float
    M: float
    grid: np.ndarray
    rho: np.ndarray
    drho: np.ndarray
    m: np.ndarray
    h: np.ndarray
    P: np.ndarray
    tol: float
    h_c: float
    r_start: float
    _sol: object = field(repr=False)

    @property
    def length_scale(self):
        return np.sqrt(self.h_c / (4.0 * np.pi * self.mu))

    def state(self, r):
        """(h, m) at radii r in [0, R_mu]."""
        r = np.asarray(r, dtype=float)
        flat = np.atleast_1d(r).ravel()
        h = np.empty_like(flat)
        m = np.empty_like(flat)
        core = flat <= self.r_start
        rc = flat[core]
        h[core] = self.h_c - (2.0 * np.pi / 3.0) * self.mu * rc**2
        m[core] = (4.0 * np.pi / 3.0) * self.mu * rc**3
        if np.any(~core):
            y = self._sol(flat[~core])
            h[~core] = y[0]
            m[~core] = y[1]
        h = np.maximum(h, 0.0)
        # exact boundary values
        at_edge = flat >= self.R_mu
        h[at_edge] = 0.0
        m[at_edge] = self.M
        return h.reshape(r.shape), m.reshape(r.shape)

    def query(self, r):
        return profile_query(self, r)


def _rhs(eos):
    four_pi = 4.0 * np.pi

    def rhs(r, y):
        h, m = y
        rho = eos.rho_from_enthalpy(h) if h > 0 else 0.0
        return [-m / (r * r), four_pi * r * r * rho]

    return rhs


def graded_grid(R, n_nodes):
    """Cosine-clustered nodes on [0, R], dense near both ends."""
    s = np.linspace(0.0, np.pi, n_nodes)
    g = 0.5 * R * (1.0 - np.cos(s))
    g[0] = 0.0
    g[-1] = R
    return g


def solve_profile(eos, mu, tol=DEFAULT_TOL, n_nodes=DEFAULT_NODES, radius_cap=RADIUS_CAP):
    """Integrate the equilibrium for centre density ``mu``."""
    if not (mu > 0 and np.isfinite(mu)):
        raise DomainError("centre density mu must be > 0")
    if not (0 < tol < 1e-2):
        raise DomainError("tol must lie in (0, 1e-2)")
    if n_nodes < 2:
        raise DomainError("n_nodes must be >= 2")
    mu = float(mu)
    h_c = eos.enthalpy(mu)
    ell = np.sqrt(h_c / (4.0 * np.pi * mu))
    r0 = 1e-4 * np.sqrt(h_c / mu)
    y0 = [h_c - (2.0 * np.pi / 3.0) * mu * r0**2, (4.0 * np.pi / 3.0) * mu * r0**3]

    def vacuum(r, y):
        return y[0]

    vacuum.terminal = True
    vacuum.direction = -1

    r_cap = radius_cap * ell
    sol = solve_ivp(
        _rhs(eos), (r0, r_cap), y0, method="DOP853", rtol=tol,
        atol=[tol * h_c, tol * 1e-30], dense_output=True, events=vacuum,
    )
    if sol.status == -1:
        raise ToleranceError(f"equilibrium integration failed at mu={mu}: {sol.message}")
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise NonCompactStarError(
            f"enthalpy did not vanish before r = {r_cap:.6g} (mu={mu}, gamma1={eos.gamma1});"
            " the star is not compact"
        )
    R = float(sol.t_events[0][0])
    dense = sol.sol
    if abs(dense(R)[0]) > 1e-12 * h_c:
        # the event root lives on the last step; bracket and bisect again
        lo = sol.t[-2] if len(sol.t) > 1 else r0
        try:
            R = brentq(lambda r: dense(r)[0], lo, R * (1 + 1e-12) if dense(R)[0] > 0 else R,
                       xtol=1e-15 * R, maxiter=200)
        except ValueError as exc:
            raise ToleranceError(f"vacuum boundary bisection failed at mu={mu}") from exc
        if abs(dense(R)[0]) > 1e-12 * h_c:
            raise ToleranceError(f"vacuum boundary not resolved to 1e-12 h_c at mu={mu}")
    M = float(dense(R)[1])

    grid = graded_grid(R, n_nodes)
    proto = StarProfile(
        eos=eos, mu=mu, R_mu=R, M=M, grid=grid, rho=grid, drho=grid, m=grid, h=grid,
        P=grid, tol=tol, h_c=h_c, r_start=r0, _sol=dense,
    )
    vals = profile_query(proto, grid)
    return StarProfile(
        eos=eos, mu=mu, R_mu=R, M=M, grid=grid, rho=vals.rho, drho=vals.drho, m=vals.m,
        h=vals.h, P=vals.P, tol=tol, h_c=h_c, r_start=r0, _sol=dense,
    )


def profile_query(profile, r):
    """Profile fields at radii ``r`` (scalar or array) inside [0, R_mu]."""
    r_arr = np.asarray(r, dtype=float)
    R = profile.R_mu
    if np.any(r_arr < 0) or np.any(r_arr > R * (1 + 1e-14)) or np.any(~np.isfinite(r_arr)):
        raise DomainError(f"query radius outside [0, R_mu={R}]")
    r_arr = np.minimum(r_arr, R)
    eos = profile.eos
    h, m = profile.state(r_arr)
    rho = eos.rho_from_enthalpy(h)
    rho = np.where(r_arr >= R, 0.0, rho)
    rho = np.where(r_arr == 0, profile.mu, rho)
    rho_a = np.atleast_1d(rho).astype(float)
    r_a = np.atleast_1d(r_arr)
    m_a = np.atleast_1d(m)
    # hydrostatic balance: d rho/dr = -(m/r^2) * rho/P'(rho)
    g = np.zeros_like(r_a)
    nz = r_a > 0
    g[nz] = m_a[nz] / r_a[nz] ** 2
    drho = -g * np.atleast_1d(eos.drho_dh(rho_a))
    P = np.atleast_1d(eos.pressure(rho_a))
    pos = rho_a > 0
    Pp = np.zeros_like(rho_a)
    ph2 = np.full_like(rho_a, np.inf)
    Pp[pos] = eos.dpressure(rho_a[pos])
    ph2[pos] = Pp[pos] / rho_a[pos]
    if np.ndim(r_arr) == 0:
        return ProfileValues(float(rho_a[0]), float(drho[0]), float(m_a[0]), float(np.atleast_1d(h)[0]),
                             float(P[0]), float(Pp[0]), float(ph2[0]))
    shape = r_arr.shape
    return ProfileValues(rho_a.reshape(shape), drho.reshape(shape), m_a.reshape(shape),
                         np.asarray(h).reshape(shape), P.reshape(shape), Pp.reshape(shape),
                         ph2.reshape(shape))


def radius_of_mass(profile, x, iterations=64):
    """Invert the enclosed mass m(r) = x by vectorised bisection."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > profile.M * (1 + 1e-14)):
        raise DomainError("mass coordinate outside [0, M]")
    lo = np.zeros_like(x)
    hi = np.full_like(x, profile.R_mu)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        _, m = profile.state(mid)
        below = m < x
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    out = np.where(x <= 0, 0.0, out)
    return np.where(x >= profile.M, profile.R_mu, out)


def hydrostatic_residual(profile, r, step=None):
    """|dh/dr + m/r^2| at interior radii, dh/dr from a five-point stencil on
    the dense solution (the step shrinks near the ends to stay inside)."""
    r = np.asarray(r, dtype=float)
    step = 1e-3 * min(profile.R_mu, profile.length_scale) if step is None else step
    s = np.minimum(step, 0.4 * np.minimum(r, profile.R_mu - r))
    h = [profile.state(r + k * s)[0] for k in (-2, -1, 1, 2)]
    dh = (h[0] - 8.0 * h[1] + 8.0 * h[2] - h[3]) / (12.0 * s)
    _, m = profile.state(r)
    return np.abs(dh + m / r**2)
