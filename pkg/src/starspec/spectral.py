"""Discrete spectral analysis of the linearised viscous star.

Radial perturbations u(r, t) of the equilibrium obey

    M u'' + D u' + K u = 0

once the three symmetric quadratic forms (kinetic weight, viscous damping,
and the stiffness with self-gravity) are discretised by piecewise linear
finite elements.  Everything here works on those matrices: inertia counts by
LDL^T pivots, the damped quadratic eigenproblem through a companion pencil,
the undamped (tau = 0) problem as a symmetric pencil, and a trapezoidal time
integrator for the linear dynamics.

Two assemblies are provided.  ``assemble_eulerian`` uses hat functions in the
radius r; ``assemble_mass_coord`` uses hat functions in the enclosed mass x
with the mass-coordinate forms.  They discretise the same operator pencil
(the mass-coordinate forms carry an overall factor 4 pi that cancels in
every eigenvalue) and serve as oracles for one another.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .equilibrium import graded_grid, profile_query, radius_of_mass
from .errors import AssemblyError, DegenerateError, DomainError, NumericalError

FOUR_PI = 4.0 * np.pi
GAUSS_POINTS = 3
EDGE_POINTS = 8
DEFAULT_TAU_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
UNSTABLE_REL = 1e-8
REAL_REL = 1e-8


@dataclass(frozen=True, eq=False)
class OperatorTriple:
    """The three symmetric tridiagonal matrices, stored as (2, n) bands in
    LAPACK upper form: row 0 holds the superdiagonal (shifted right by one),
    row 1 the diagonal.  Dense copies are built on first access."""
    grid: np.ndarray
    Mb: np.ndarray
    Db: np.ndarray
    Kb: np.ndarray
    nu1: float
    nu2: float
    coordinate: str
    mu: float = float("nan")
    # radii of the nodes (equal to grid for the Eulerian assembly)
    radii: np.ndarray = field(default=None, repr=False)

    @property
    def nu(self):
        return 4.0 * self.nu1 / 3.0 + self.nu2

    @property
    def n(self):
        return self.Mb.shape[1]

    @cached_property
    def Mmat(self):
        return band_to_dense(self.Mb)

    @cached_property
    def Dmat(self):
        return band_to_dense(self.Db)

    @cached_property
    def Kmat(self):
        return band_to_dense(self.Kb)

    @property
    def scale(self):
        """Characteristic rate sqrt(|K| / |M|) of the pencil."""
        return np.sqrt(_band_norm(self.Kb) / _band_norm(self.Mb))

    @classmethod
    def from_dense(cls, M, D, K, nu1=1.0, nu2=1.0, coordinate="eulerian"):
        """Wrap small symmetric tridiagonal matrices (tests, model problems)."""
        M, D, K = (np.atleast_2d(np.asarray(A, dtype=float)) for A in (M, D, K))
        grid = np.arange(M.shape[0] + 1, dtype=float)
        return cls(grid=grid, Mb=dense_to_band(M), Db=dense_to_band(D), Kb=dense_to_band(K),
                   nu1=float(nu1), nu2=float(nu2), coordinate=coordinate, radii=grid)

    def combine(self, a, b, c):
        """Bands of a M + b D + c K."""
        return a * self.Mb + b * self.Db + c * self.Kb


@dataclass
class SpectrumReport:
    mu: float
    n_cells: int
    nu1: float
    nu2: float
    n_minus: int
    ker_margin: float
    unstable_eigenvalues: list
    unstable_vectors: list = field(repr=False, default_factory=list)
    ep_unstable_eigenvalues: list = field(default_factory=list)
    homotopy_counts: list = field(default_factory=list)
    ktc_verified: object = False
    degenerate: bool = False
    max_imag_ratio: float = 0.0

    def to_dict(self):
        return {
            "mu": self.mu,
            "cells": self.n_cells,
            "nu1": self.nu1,
            "nu2": self.nu2,
            "n_minus": int(self.n_minus),
            "ker_margin": self.ker_margin,
            "unstable_eigenvalues": [{"re": float(np.real(z)), "im": float(np.imag(z))}
                                     for z in self.unstable_eigenvalues],
            "ep_unstable_eigenvalues": [float(z) for z in self.ep_unstable_eigenvalues],
            "homotopy_counts": [{"tau": float(t), "count": int(c)} for t, c in self.homotopy_counts],
            "ktc_verified": self.ktc_verified,
        }


def _norm(A):
    return float(np.max(np.sum(np.abs(A), axis=1)))


def _band_norm(ab):
    # infinity norm of the symmetric tridiagonal matrix
    a = np.abs(ab[1]).copy()
    off = np.abs(ab[0, 1:])
    a[:-1] += off
    a[1:] += off
    return float(np.max(a))


def dense_to_band(A):
    A = np.asarray(A, dtype=float)
    ab = np.zeros((2, A.shape[0]))
    ab[0, 1:] = np.diag(A, 1)
    ab[1] = np.diag(A)
    return ab


def band_to_dense(ab):
    return np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[0, 1:], -1)


def _band_matvec(ab, x):
    y = ab[1] * x
    y[:-1] += ab[0, 1:] * x[1:]
    y[1:] += ab[0, 1:] * x[:-1]
    return y


def _solve_band(ab, rhs):
    """Solve with a symmetric tridiagonal (2, n) band, partial pivoting."""
    full = np.zeros((3, ab.shape[1]))
    full[0] = ab[0]
    full[1] = ab[1]
    full[2, :-1] = ab[0, 1:]
    return sla.solve_banded((1, 1), full, rhs)


# ---------------------------------------------------------------- quadrature

def _cell_rule(a, b, n_points, edge_power=None):
    """Gauss points/weights on [a, b].  With ``edge_power`` k the substitution
    b - r = (b - a) t^k clusters the points toward the right end, where the
    density weight is degenerate."""
    t, w = np.polynomial.legendre.leggauss(n_points)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    if edge_power is None:
        return a + (b - a) * t, (b - a) * w
    k = edge_power
    return b - (b - a) * t**k, (b - a) * k * t ** (k - 1) * w


def _edge_power(gamma1):
    # (R - r)^(1/(gamma1-1)) style weights become smooth in t once
    # k / (gamma1 - 1) exceeds a few units
    return int(np.clip(np.ceil(2.0 * (gamma1 - 1.0) + 2.0), 3, 6))


def radial_rule(edges, gamma1, n_points=GAUSS_POINTS, edge_points=EDGE_POINTS):
    """Quadrature points (n_cells, q) and weights for cells with the given
    radial edges; the outermost cell uses the clustered edge rule."""
    n_cells = len(edges) - 1
    q = max(n_points, edge_points)
    pts = np.zeros((n_cells, q))
    wts = np.zeros((n_cells, q))
    t, w = np.polynomial.legendre.leggauss(n_points)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    a = edges[:-1, None]
    d = np.diff(edges)[:, None]
    pts[:, :n_points] = a + d * t
    wts[:, :n_points] = d * w
    # unused slots keep zero weight and a harmless location
    pts[:, n_points:] = a + 0.5 * d
    p, wt = _cell_rule(edges[-2], edges[-1], edge_points, _edge_power(gamma1))
    pts[-1, :] = 0.5 * (edges[-2] + edges[-1])
    wts[-1, :] = 0.0
    pts[-1, :edge_points] = p
    wts[-1, :edge_points] = wt
    return pts, wts


def _assemble(alpha, beta, c, wts, dphi, phiL, phiR):
    """Tridiagonal assembly of int alpha u'v' + beta (u'v + uv') + c uv over
    P1 elements.  ``phiL``/``phiR`` are the hat values at the points,
    ``dphi`` the (cell-constant) slope of the right hat."""
    dL = -dphi[:, None]
    dR = dphi[:, None]

    def integ(f):
        return np.sum(wts * f, axis=1)

    kLL = integ(alpha * dL * dL + 2 * beta * dL * phiL + c * phiL * phiL)
    kRR = integ(alpha * dR * dR + 2 * beta * dR * phiR + c * phiR * phiR)
    kLR = integ(alpha * dL * dR + beta * (dL * phiR + phiL * dR) + c * phiL * phiR)
    n = len(dphi) + 1
    ab = np.zeros((2, n))
    ab[1, :-1] += kLL
    ab[1, 1:] += kRR
    ab[0, 1:] = kLR
    return ab


def _eulerian_coefficients(profile, r, nu1, nu2):
    vals = profile_query(profile, r)
    rho = vals.rho
    if np.any(rho < 0):
        raise AssemblyError("negative density at a quadrature point")
    eos = profile.eos
    m = vals.m
    prho = eos.pressure_rho(rho)  # P'(rho) rho
    dhdr = eos.drho_dh(rho)  # rho / P'(rho)
    nu = 4.0 * nu1 / 3.0 + nu2
    safe_r = np.where(r > 0, r, 1.0)
    mass = (0.0 * r, 0.0 * r, rho * r * r)
    damp = (nu * r * r, (2.0 * nu2 - 4.0 * nu1 / 3.0) * r, (4.0 * nu2 + 4.0 * nu1 / 3.0) + 0.0 * r)
    stiff = (
        r * r * prho,
        2.0 * r * prho - rho * m,
        4.0 * prho - 4.0 * rho * m / safe_r + m * m * dhdr / safe_r**2 - FOUR_PI * r * r * rho**2,
    )
    return mass, damp, stiff


def _drop_centre(ab):
    out = np.ascontiguousarray(ab[:, 1:])
    out[0, 0] = 0.0
    return out


def _full_eulerian(profile, nu1, nu2, n_cells):
    edges = graded_grid(profile.R_mu, n_cells + 1)
    pts, wts = radial_rule(edges, profile.eos.gamma1)
    d = np.diff(edges)
    phiR = (pts - edges[:-1, None]) / d[:, None]
    phiL = 1.0 - phiR
    mass, damp, stiff = _eulerian_coefficients(profile, pts, nu1, nu2)
    dphi = 1.0 / d
    mats = [_assemble(*form, wts, dphi, phiL, phiR) for form in (mass, damp, stiff)]
    return edges, mats


def assemble_eulerian(profile, nu1, nu2, n_cells):
    """P1 elements in the radius with u(0) = 0 imposed by dropping node 0."""
    _check_visc(nu1, nu2)
    if n_cells < 16:
        raise DomainError("n_cells must be >= 16")
    edges, (Mf, Df, Kf) = _full_eulerian(profile, nu1, nu2, n_cells)
    return OperatorTriple(
        grid=edges, Mb=_drop_centre(Mf), Db=_drop_centre(Df), Kb=_drop_centre(Kf),
        nu1=float(nu1), nu2=float(nu2), coordinate="eulerian", mu=profile.mu, radii=edges,
    )


def full_mass_matrix(profile, n_cells):
    """Eulerian Gram matrix before the centre node is removed."""
    _, (Mf, _, _) = _full_eulerian(profile, 1.0, 1.0, n_cells)
    return band_to_dense(Mf)


def assemble_mass_coord(profile, nu1, nu2, n_cells):
    """P1 elements in the enclosed mass x in [0, M].

    Forms (per unit 1/(4 pi) of the Eulerian ones, theta = -4 pi r^2 u):
        m(theta) = int theta^2 / (16 pi^2 r^4) dx
        d(theta) = int nu2 rho theta_x^2 + (4 nu1/3) rho |r^3 (theta/r^3)_x|^2 dx
        k(theta) = int P'(rho) rho^2 theta_x^2 + P(rho)_x / (pi r^3) theta^2 dx
    Cell integrals are evaluated in the radial variable (dx = 4 pi r^2 rho dr)
    so the degenerate surface layer gets the same clustered rule as the
    Eulerian assembly.
    """
    _check_visc(nu1, nu2)
    if n_cells < 16:
        raise DomainError("n_cells must be >= 16")
    xg = graded_grid(profile.M, n_cells + 1)
    rg = radius_of_mass(profile, xg)
    rg[0] = 0.0
    rg[-1] = profile.R_mu
    if np.any(np.diff(rg) <= 0):
        raise AssemblyError("mass grid too fine for the radius inversion")
    pts, wts = radial_rule(rg, profile.eos.gamma1)
    vals = profile_query(profile, pts)
    rho, m = vals.rho, vals.m
    if np.any(rho < 0):
        raise AssemblyError("negative density at a quadrature point")
    r = pts
    dx = xg[1:] - xg[:-1]
    phiR = (m - xg[:-1, None]) / dx[:, None]
    phiL = 1.0 - phiR
    dphi = 1.0 / dx
    jac = FOUR_PI * r * r * rho  # dx/dr
    w = wts * jac
    eos = profile.eos
    prho = eos.pressure_rho(rho)
    nu = 4.0 * nu1 / 3.0 + nu2
    zero = 0.0 * r
    # terms singular like 1/rho are combined with the Jacobian analytically
    mass = (zero, zero, 1.0 / (16.0 * np.pi**2 * r**4))
    damp_alpha = nu * rho
    damp_beta = -nu1 / (np.pi * r**3)
    # (4 nu1/3) rho s^2 with s = 3/(4 pi r^3 rho); times jac gives 3 nu1/(pi r^4)
    damp_c_jac = 3.0 * nu1 / (np.pi * r**4)
    stiff_alpha = prho * rho
    stiff_c = -m / (4.0 * np.pi**2 * r**7)

    Mm = _assemble(*mass, w, dphi, phiL, phiR)
    Dm = _assemble(damp_alpha, damp_beta, zero, w, dphi, phiL, phiR)
    Dm += _assemble(zero, zero, damp_c_jac, wts, dphi, phiL, phiR)
    Km = _assemble(stiff_alpha, zero, stiff_c, w, dphi, phiL, phiR)
    return OperatorTriple(
        grid=xg, Mb=_drop_centre(Mm), Db=_drop_centre(Dm), Kb=_drop_centre(Km),
        nu1=float(nu1), nu2=float(nu2), coordinate="mass", mu=profile.mu, radii=rg,
    )


def _check_visc(nu1, nu2):
    if not (nu1 > 0 and nu2 > 0):
        raise DomainError("viscosities nu1, nu2 must be > 0")


# ------------------------------------------------------------------- inertia

def tridiagonal_ldl_pivots(A, band=None):
    """Pivots of the unpivoted LDL^T factorisation of a symmetric
    tridiagonal matrix, given dense or as a (2, n) band."""
    ab = _as_band(A, band)
    a = ab[1]
    b2 = ab[0, 1:] ** 2
    d = np.empty_like(a)
    d[0] = a[0]
    prev = a[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(1, len(a)):
            prev = a[i] - b2[i - 1] / prev
            d[i] = prev
    return d


def _as_band(A, band=None):
    # a (2, 2) array is read as dense unless band=True says otherwise
    A = np.asarray(A, dtype=float)
    if band is None:
        band = A.ndim == 2 and A.shape[0] == 2 and A.shape[1] != 2
    if band:
        if A.ndim != 2 or A.shape[0] != 2:
            raise DomainError("expected a (2, n) band")
        return A
    if A.ndim == 2 and A.shape[0] == A.shape[1]:
        return dense_to_band(A)
    raise DomainError("expected a square matrix or a (2, n) band")


def negative_count(A, rel=1e-13, band=None):
    """Number of negative eigenvalues of a symmetric tridiagonal matrix by
    Sylvester's law; a near-zero pivot falls back to a full eigensolve."""
    ab = _as_band(A, band)
    d = tridiagonal_ldl_pivots(ab, band=True)
    if np.all(np.isfinite(d)) and np.min(np.abs(d)) > rel * _band_norm(ab):
        return int(np.sum(d < 0))
    ev = sla.eigvalsh_tridiagonal(ab[1], ab[0, 1:], check_finite=False)
    return int(np.sum(ev < 0))


def inertia_nminus(triple):
    """(n_minus, ker_margin) of the stiffness pencil (K, M)."""
    n_minus = negative_count(triple.Kb, band=True)
    ker_margin = _smallest_abs_pencil(triple.Kb, triple.Mb)
    return n_minus, ker_margin


def _smallest_abs_pencil(Kb, Mb, iterations=60):
    """Smallest |sigma| with K x = sigma M x by inverse iteration at shift 0,
    polished with a Rayleigh quotient."""
    n = Kb.shape[1]
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    sigma = 0.0
    for _ in range(iterations):
        y = _solve_band(Kb, _band_matvec(Mb, x))
        mn = y @ _band_matvec(Mb, y)
        if not (np.isfinite(mn) and mn > 0):
            return 0.0
        y /= np.sqrt(mn)
        new = y @ _band_matvec(Kb, y)
        if abs(new - sigma) <= 1e-12 * abs(new):
            sigma = new
            break
        sigma, x = new, y
    return float(abs(sigma))


def kernel_threshold(triple):
    # the pencil eigenvalues are rates^2: compare against the pencil scale
    return 1e-8 * triple.scale**2


# ------------------------------------------------------ eigenvalue problems

def solve_qep(triple, tau=1.0, vectors=True):
    """All finite eigenvalues of lambda^2 M + lambda tau D + K.

    The companion pencil ([-K, 0; 0, M], [tau D, M; M, 0]) is badly scaled:
    near the vacuum boundary D/M grows without bound under refinement, and a
    direct QZ solve loses every O(1) eigenvalue.  The pencil is therefore
    shift-inverted at a real s above all real eigenvalues, where
    Q(s) = s^2 M + s tau D + K is SPD and tridiagonal, and the dense
    (2n x 2n) matrix (C - s)^-1 is diagonalised.  Stiff overdamped modes map
    to ~0 while the slow ones stay well resolved.  For tau = 0 the problem
    is the symmetric pencil (K, M) and lambda = +-sqrt(-sigma) exactly.

    Returns ``(eigenvalues, vectors)`` sorted by decreasing real part;
    ``vectors`` holds the u-block of each eigenvector as columns, or None.
    """
    if not (0.0 <= tau <= 1.0):
        raise DomainError("tau must lie in [0, 1]")
    if tau == 0.0:
        return _undamped_qep(triple, vectors)
    n = triple.n
    s = _qep_shift(triple)
    for _ in range(60):
        chol = _cholesky(triple.combine(s * s, s * tau, 1.0))
        if chol is not None:
            break
        s *= 2.0
    else:
        raise NumericalError("no admissible shift found for the quadratic problem")
    Ua = -sla.cho_solve_banded((chol, False), tau * triple.Dmat + s * triple.Mmat)
    Ub = -sla.cho_solve_banded((chol, False), triple.Mmat)
    T = np.empty((2 * n, 2 * n))
    T[:n, :n] = Ua
    T[:n, n:] = Ub
    T[n:, :n] = s * Ua + np.eye(n)
    T[n:, n:] = s * Ub
    if not np.all(np.isfinite(T)):
        raise NumericalError(f"shift-inverted companion not finite (shift {s:.3g})")
    # eig is backward stable: |z| below this level carries no sign information
    noise = 64 * np.finfo(float).eps * np.linalg.norm(T, 1)
    try:
        if vectors:
            z, V = sla.eig(T, overwrite_a=True, check_finite=False)
        else:
            z = sla.eigvals(T, overwrite_a=True, check_finite=False)
            V = None
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalError(f"dense eigensolve failed at shift {s:.3g}: {exc}") from exc
    # s lies above every real eigenvalue and complex ones have Re < 0, so
    # Re z < 0 throughout; z at noise level is a stiff overdamped mode
    # (lambda -> -inf) and is placed on the negative real axis
    keep = np.abs(z) > np.finfo(float).tiny
    z = z[keep]
    stiff = np.abs(z) <= noise
    z[stiff] = -np.abs(z[stiff])
    lam = s + 1.0 / z
    order = np.argsort(-lam.real, kind="stable")
    if V is not None:
        V = V[:n, keep][:, order]
    return lam[order], V


def _qep_shift(triple):
    # real roots of the damped problem never exceed the undamped ones
    sig = sla.eigh(triple.Kmat, triple.Mmat, eigvals_only=True)
    if sig[0] < 0:
        return 1.5 * np.sqrt(-sig[0])
    return np.sqrt(sig[0])


def _undamped_qep(triple, vectors):
    sig, X = sla.eigh(triple.Kmat, triple.Mmat)
    root = np.sqrt(np.abs(sig)).astype(complex)
    root[sig > 0] *= 1j
    lam = np.concatenate([root, -root])
    order = np.argsort(-lam.real, kind="stable")
    V = np.concatenate([X, X], axis=1)[:, order] if vectors else None
    return lam[order], V


def unstable_threshold(triple):
    return UNSTABLE_REL * triple.scale


def unstable_set(triple, lam):
    return lam[lam.real > unstable_threshold(triple)]


def euler_poisson_spectrum(triple):
    """Unstable rates of the undamped problem: lambda = sqrt(-sigma) for each
    negative eigenvalue sigma of the symmetric pencil (K, M)."""
    sig = sla.eigh(triple.Kmat, triple.Mmat, eigvals_only=True)
    neg = np.sort(sig[sig < 0])
    return np.sqrt(-neg)


def quadratic_negative_count(triple, lam, tau=1.0):
    """n^-(lam^2 M + lam tau D + K) for real lam.  For lam > 0 this equals the
    number of real eigenvalues of the quadratic problem larger than lam."""
    return negative_count(triple.combine(lam * lam, lam * tau, 1.0), band=True)


def real_unstable_roots(triple, tau=1.0, rtol=1e-13):
    """Real positive eigenvalues of the quadratic problem located by bisection
    on the inertia of Q(lam) (eigenvalues of Q increase with lam > 0)."""
    total = quadratic_negative_count(triple, 0.0, tau)
    if total == 0:
        return np.array([])
    hi = max(triple.scale, 1.0)
    for _ in range(200):
        if quadratic_negative_count(triple, hi, tau) == 0:
            break
        hi *= 2.0
    else:
        raise NumericalError("could not bracket the real unstable roots")
    roots = []

    def locate(lo, hi, c_lo, c_hi):
        # c(lam) counts roots above lam
        if c_lo == c_hi:
            return
        if hi - lo <= rtol * hi:
            roots.extend([0.5 * (lo + hi)] * (c_lo - c_hi))
            return
        mid = 0.5 * (lo + hi)
        c_mid = quadratic_negative_count(triple, mid, tau)
        locate(mid, hi, c_mid, c_hi)
        locate(lo, mid, c_lo, c_mid)

    locate(0.0, hi, total, 0)
    return np.sort(np.array(roots))[::-1]


def qep_vector(triple, lam, tau=1.0, iterations=8):
    """Eigenvector of the quadratic problem for a real eigenvalue by inverse
    iteration on the tridiagonal Q(lam)."""
    ab = triple.combine(lam * lam, lam * tau, 1.0)
    ab[1] += 1e-14 * _band_norm(ab)
    x = np.ones(triple.n)
    for _ in range(iterations):
        x = _solve_band(ab, x)
        x /= np.max(np.abs(x))
    return x


def verify_ktc(profile, nu1, nu2, n_cells, tau_grid=DEFAULT_TAU_GRID, triple=None):
    """Compare the unstable count of the damped problem along the homotopy
    tau in ``tau_grid`` with n^-(K) and with the undamped count."""
    if triple is None:
        triple = assemble_eulerian(profile, nu1, nu2, n_cells)
    n_minus, ker_margin = inertia_nminus(triple)
    report = SpectrumReport(mu=profile.mu, n_cells=n_cells, nu1=float(nu1), nu2=float(nu2),
                            n_minus=n_minus, ker_margin=ker_margin, unstable_eigenvalues=[])
    if ker_margin < kernel_threshold(triple):
        report.degenerate = True
        report.ktc_verified = "indeterminate"
        return report
    ep = euler_poisson_spectrum(triple)
    report.ep_unstable_eigenvalues = list(ep)
    counts = []
    worst_imag = 0.0
    unstable_at_one = None
    for tau in tau_grid:
        lam, _ = solve_qep(triple, tau, vectors=False)
        uns = unstable_set(triple, lam)
        counts.append((float(tau), int(len(uns))))
        for z in uns:
            worst_imag = max(worst_imag, abs(z.imag) / abs(z))
        if tau == 1.0:
            unstable_at_one = uns
    if unstable_at_one is None:
        lam, _ = solve_qep(triple, 1.0, vectors=False)
        unstable_at_one = unstable_set(triple, lam)
    report.homotopy_counts = counts
    report.unstable_eigenvalues = list(unstable_at_one)
    report.unstable_vectors = [qep_vector(triple, float(z.real)) for z in unstable_at_one]
    report.max_imag_ratio = worst_imag
    same = all(c == n_minus for _, c in counts) and len(unstable_at_one) == n_minus == len(ep)
    report.ktc_verified = bool(same and worst_imag < REAL_REL)
    return report


# --------------------------------------------------------- linear dynamics

@dataclass
class LinearSeries:
    t: np.ndarray
    energy: np.ndarray  # v.Mv + u.Ku
    dissipation: np.ndarray  # int_0^t 2 v.Dv ds (trapezoidal in time)
    weighted: np.ndarray  # v.Mv + u.Ku + u.Mu
    u: np.ndarray = field(repr=False, default=None)

    @property
    def residual(self):
        """Energy balance defect E(t) - E(0) + dissipation(t)."""
        return self.energy - self.energy[0] + self.dissipation


def evolve_linear(triple, u0, v0, tmax, dt, keep_states=False, every=1):
    """Trapezoidal rule for u' = v, M v' = -K u - D v."""
    if not dt > 0:
        raise DomainError("dt must be > 0")
    if not tmax >= 0:
        raise DomainError("tmax must be >= 0")
    Kb, Db, Mb = triple.Kb, triple.Db, triple.Mb
    u = np.array(u0, dtype=float)
    v = np.array(v0, dtype=float)
    steps = int(round(tmax / dt))
    lhs = triple.combine(1.0, 0.5 * dt, 0.25 * dt * dt)
    chol = _cholesky(lhs)

    def quad(ab, x):
        return float(x @ _band_matvec(ab, x))

    ts, es, ds, ws, us = [0.0], [quad(Mb, v) + quad(Kb, u)], [0.0], [], []
    ws.append(es[0] + quad(Mb, u))
    if keep_states:
        us.append(u.copy())
    diss = 0.0
    vdv = quad(Db, v)
    for k in range(1, steps + 1):
        rhs = _band_matvec(Mb, v) - 0.5 * dt * _band_matvec(Db, v) \
            - 0.25 * dt * dt * _band_matvec(Kb, v) - dt * _band_matvec(Kb, u)
        if chol is not None:
            v_new = sla.cho_solve_banded((chol, False), rhs)
        else:
            v_new = _solve_band(lhs, rhs)
        u = u + 0.5 * dt * (v + v_new)
        v = v_new
        vdv_new = quad(Db, v)
        diss += dt * (vdv + vdv_new)
        vdv = vdv_new
        if k % every == 0 or k == steps:
            ts.append(k * dt)
            e = quad(Mb, v) + quad(Kb, u)
            es.append(e)
            ds.append(diss)
            ws.append(e + quad(Mb, u))
            if keep_states:
                us.append(u.copy())
    return LinearSeries(np.array(ts), np.array(es), np.array(ds), np.array(ws),
                        np.array(us) if keep_states else None)


def _cholesky(ab):
    """Upper banded Cholesky factor, or None if the band is not SPD."""
    try:
        return sla.cholesky_banded(ab, lower=False)
    except sla.LinAlgError:
        return None


def check_degenerate(triple):
    n_minus, margin = inertia_nminus(triple)
    if margin < kernel_threshold(triple):
        raise DegenerateError("stiffness pencil is numerically singular (M'(mu) ~ 0)")
    return n_minus, margin
