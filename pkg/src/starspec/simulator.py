"""Nonlinear radial evolution of a viscous star in Lagrangian coordinates.

The particle label x in [0, R_mu] is the equilibrium radius of a mass shell
and r(x, t) its current radius.  On the uniform grid x_n = n h the momentum
balance is the semi-discrete system

    rho_n (x_n/r_n)^2 dv_n/dt = (G_{n+1} - G_n)/h + q_n (x_n^4/r_n^4 - 1)
        + [(P(rho_{n+1}) - P(f_n)) - (P(rho_n) - P(f_{n-1}))] / h,

    G_n = B_n + 4 nu1 v_{n-1}/r_{n-1}
        = nu [(v_n - v_{n-1})/(r_n - r_{n-1}) + 2 v_{n-1}/r_{n-1}],
    f_n = rho_{n+1} x_n^2 h / (r_n^2 (r_{n+1} - r_n)),

with v_0 = 0, the stress-free condition B_N = 0, and the outer radius r_N
slaved to r_{N-1} through the integrated boundary condition.  At the centre
0/0 quotients take their symmetric limits (v_0/r_0 -> v_1/r_1 and
x_0/r_0 -> x_1/r_1).  Since rho_N = 0 the pressure bracket vanishes in the
last cell, so r_N and v_N never feed back into the interior unknowns.

The rest state r = x, v = 0 is an exact fixed point: every pressure
difference cancels term by term in floating point.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg.lapack import dgtsv as _gtsv

from .equilibrium import profile_query
from .errors import DomainError, NumericalError, ShellCrossingError

FOUR_PI = 4.0 * np.pi
PERTURBATIONS = ("none", "displacement", "velocity", "eigenmode")
OUTPUT_RATE = 10.0  # rows per unit time
SMALL_STRAIN = 0.1  # smallness flag on |f/rho - 1|
SMALL_VELOCITY = 0.1  # smallness flag on sup |v|
LINEAR_AMPLITUDE = 1e-4  # sqrt(E0) below this counts as the linear regime


@dataclass(frozen=True)
class Perturbation:
    kind: str = "none"
    amp: float = 0.0
    mode: int = 1

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise DomainError(f"unknown perturbation {self.kind!r}; expected one of {PERTURBATIONS}")
        if not np.isfinite(self.amp):
            raise DomainError("perturbation amplitude must be finite")
        if self.mode < 1:
            raise DomainError("perturbation mode must be >= 1")

    @classmethod
    def parse(cls, text):
        """``kind:amp[:mode]``, e.g. ``displacement:1e-3:2``."""
        parts = text.split(":")
        try:
            kind = parts[0]
            amp = float(parts[1]) if len(parts) > 1 else 0.0
            mode = int(parts[2]) if len(parts) > 2 else 1
        except ValueError as exc:
            raise DomainError(f"malformed perturbation {text!r}") from exc
        if len(parts) > 3:
            raise DomainError(f"malformed perturbation {text!r}")
        return cls(kind, amp, mode)


@dataclass
class SimState:
    t: float
    N: int
    h: float
    x: np.ndarray
    rho_ref: np.ndarray
    q: np.ndarray
    r: np.ndarray
    v: np.ndarray
    r0: np.ndarray
    nu1: float
    nu2: float
    eos: object = field(repr=False, default=None)
    # per-shell data for the diagnostics
    P_ref: np.ndarray = field(repr=False, default=None)
    dm_node: np.ndarray = field(repr=False, default=None)
    dm_cell: np.ndarray = field(repr=False, default=None)
    P1_cell: np.ndarray = field(repr=False, default=None)

    @property
    def nu(self):
        return 4.0 * self.nu1 / 3.0 + self.nu2

    @property
    def beta(self):
        return (2.0 * self.nu2 - 4.0 * self.nu1 / 3.0) / self.nu

    @property
    def gamma1(self):
        return self.eos.gamma1

    def copy(self):
        return replace(self, r=self.r.copy(), v=self.v.copy())


@dataclass
class FitResult:
    kind: str
    value: float
    window: tuple
    residual: float
    intercept: float = float("nan")
    status: str = "ok"


@dataclass
class TimeSeries:
    t: list = field(default_factory=list)
    E_N: list = field(default_factory=list)
    sup_r_err: list = field(default_factory=list)
    sup_v: list = field(default_factory=list)
    E0_sigma: list = field(default_factory=list)
    E0_v: list = field(default_factory=list)
    r_N: list = field(default_factory=list)
    status: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    final_state: object = field(repr=False, default=None)
    closure_residual: float = 0.0

    COLUMNS = ("t", "E_N", "sup_r_err", "sup_v", "E0_sigma", "E0_v", "r_N", "status")

    def append(self, t, diag, status="ok"):
        self.t.append(float(t))
        for key in ("E_N", "sup_r_err", "sup_v", "E0_sigma", "E0_v", "r_N"):
            getattr(self, key).append(float(diag[key]))
        self.status.append(status)

    def array(self, key):
        return np.asarray(getattr(self, key), dtype=float)

    @property
    def E0(self):
        return self.array("E0_sigma") + self.array("E0_v")

    @property
    def terminal_status(self):
        return self.status[-1] if self.status else "empty"

    def rows(self):
        return [tuple(getattr(self, c)[i] for c in self.COLUMNS) for i in range(len(self.t))]


# --------------------------------------------------------------- set-up

def init_sim(profile, N, nu1, nu2, perturbation=None, eigenvector=None):
    """Initial state on the uniform label grid.

    ``eigenvector`` (optional) gives the eigenmode seed directly as
    (radii, values); otherwise it is computed from the Eulerian assembly at
    N cells."""
    if N < 32:
        raise DomainError("N must be >= 32")
    if not (nu1 > 0 and nu2 > 0):
        raise DomainError("viscosities nu1, nu2 must be > 0")
    pert = perturbation if perturbation is not None else Perturbation()
    if isinstance(pert, str):
        pert = Perturbation.parse(pert)
    R = profile.R_mu
    h = R / N
    x = np.arange(N + 1) * h
    x[-1] = R
    vals = profile_query(profile, x)
    rho = np.array(vals.rho, dtype=float)
    rho[-1] = 0.0
    m = np.array(vals.m, dtype=float)
    q = np.zeros(N + 1)
    q[1:] = -rho[1:] * m[1:] / x[1:] ** 2
    eos = profile.eos

    # shell masses from the profile, used only by diagnostics
    dm_node = FOUR_PI * x**2 * rho * h
    dm_cell = np.diff(m)
    vol = FOUR_PI * np.diff(x**3) / 3.0
    rho_cell = dm_cell / vol
    P1_cell = eos.dpressure(np.maximum(rho_cell, 1e-300))

    r0 = x.copy()
    v = np.zeros(N + 1)
    a = pert.amp
    if pert.kind == "displacement":
        r0 = x * (1.0 + a * np.sin(pert.mode * np.pi * x / R))
        r0[-1] = R * (1.0 + a * np.sin(pert.mode * np.pi))
    elif pert.kind == "velocity":
        v = a * x
    elif pert.kind == "eigenmode":
        if eigenvector is None:
            eigenvector = unstable_eigenvector(profile, N, nu1, nu2)
        rr, uu = eigenvector[:2]
        lam = eigenvector[2] if len(eigenvector) > 2 else 0.0
        shape = np.interp(x, rr, uu)
        scale = np.max(np.abs(shape))
        if scale == 0:
            raise NumericalError("eigenmode seed vanishes")
        # u(t) = exp(lam t) phi: displacement a phi, velocity lam a phi
        shape = a * shape / scale
        shape[0] = 0.0
        r0 = x + shape
        v = lam * shape
    if np.any(np.diff(r0) <= 0) or r0[0] != 0.0:
        raise DomainError(f"perturbation amplitude {a} breaks monotonicity of the initial radii")

    state = SimState(
        t=0.0, N=N, h=h, x=x, rho_ref=rho, q=q, r=r0.copy(), v=v.copy(), r0=r0,
        nu1=float(nu1), nu2=float(nu2), eos=eos, P_ref=eos.pressure(rho),
        dm_node=dm_node, dm_cell=dm_cell, P1_cell=P1_cell,
    )
    _apply_closure(state)
    return state


def unstable_eigenvector(profile, N, nu1, nu2):
    """Most unstable eigenvector of the damped problem on N Eulerian cells,
    returned as (radii, values, lambda) with the centre node included."""
    from . import spectral

    triple = spectral.assemble_eulerian(profile, nu1, nu2, N)
    roots = spectral.real_unstable_roots(triple)
    if len(roots) == 0:
        raise NumericalError("no unstable eigenvalue to seed from (n_minus = 0)")
    u = spectral.qep_vector(triple, float(roots[0]))
    u = u * np.sign(u[np.argmax(np.abs(u))])
    return triple.grid, np.concatenate([[0.0], u]), float(roots[0])


def _closure_radius(state, r_prev):
    c = state.r0[-1] - state.r0[-2]
    return r_prev + c * (state.r0[-2] / r_prev) ** state.beta


def _apply_closure(state):
    r = state.r
    r[-1] = _closure_radius(state, r[-2])
    state.v[-1] = state.v[-2] * (1.0 - state.beta * (r[-1] - r[-2]) / r[-2])


# ------------------------------------------------------------ operators

def _check_shells(r):
    dr = np.diff(r)
    if np.any(dr <= 0) or not np.all(np.isfinite(dr)):
        k = int(np.argmin(dr)) if np.all(np.isfinite(dr)) else -1
        raise ShellCrossingError(f"mass shells crossed near n={k + 1}")
    return dr


def _force(state, r):
    """Pressure and gravity part of the momentum balance, n = 1..N-1."""
    x, h, rho = state.x, state.h, state.rho_ref
    dr = _check_shells(r)
    dx = np.diff(x)
    w = np.empty(state.N)
    w[1:] = (x[1:-1] / r[1:-1]) ** 2
    w[0] = (x[1] / r[1]) ** 2
    f = rho[1:] * w * (dx / dr)
    jump = state.P_ref[1:] - state.eos.pressure(f)
    F = state.q[1:-1] * ((x[1:-1] / r[1:-1]) ** 4 - 1.0) + (jump[1:] - jump[:-1]) / h
    return F


def _inertia(state, r):
    return state.rho_ref[1:-1] * (state.x[1:-1] / r[1:-1]) ** 2


def _viscous_bands(state, r):
    """Tridiagonal V with (V v)_n = (G_{n+1} - G_n)/h on the interior."""
    N, h, nu = state.N, state.h, state.nu
    dr = np.diff(r)
    alpha = np.zeros(N + 1)  # G_n = alpha_n v_n + beta_n v_{n-1}
    beta = np.zeros(N + 1)
    alpha[1] = 3.0 * nu / r[1]
    alpha[2:N] = nu / dr[1:N - 1]
    beta[2:N] = nu * (2.0 / r[1:N - 1] - 1.0 / dr[1:N - 1])
    beta[N] = 4.0 * state.nu1 / r[N - 1]
    n = np.arange(1, N)
    diag = (beta[n + 1] - alpha[n]) / h
    upper = alpha[n[:-1] + 1] / h
    lower = -beta[n[1:]] / h
    return lower, diag, upper


def _band_matvec(lower, diag, upper, v):
    y = diag * v
    y[:-1] += upper * v[1:]
    y[1:] += lower * v[:-1]
    return y


def rhs(state):
    """Accelerations dv_n/dt for n = 1..N-1."""
    r = state.r
    F = _force(state, r)
    lo, di, up = _viscous_bands(state, r)
    visc = _band_matvec(lo, di, up, state.v[1:-1])
    return (visc + F) / _inertia(state, r)


def step(state, dt):
    """One IMEX step: drift half a step, trapezoidal viscous update with the
    pressure and gravity force at the midpoint, drift again."""
    if not dt > 0:
        raise DomainError("dt must be > 0")
    v = state.v[1:-1]
    r_mid = state.r.copy()
    r_mid[1:-1] += 0.5 * dt * v
    r_mid[-1] = _closure_radius(state, r_mid[-2])
    F = _force(state, r_mid)
    m = _inertia(state, r_mid)
    lo, di, up = _viscous_bands(state, r_mid)
    rhs_vec = m * v + 0.5 * dt * _band_matvec(lo, di, up, v) + dt * F
    *_, v_new, info = _gtsv(-0.5 * dt * lo, m - 0.5 * dt * di, -0.5 * dt * up, rhs_vec)
    if info != 0 or not np.all(np.isfinite(v_new)):
        raise ShellCrossingError(f"implicit viscous solve failed at t={state.t:.6g} (info={info})")
    out = state.copy()
    out.v[1:-1] = v_new
    out.r[1:-1] = r_mid[1:-1] + 0.5 * dt * v_new
    out.t = state.t + dt
    _apply_closure(out)
    _check_shells(out.r)
    return out


# ---------------------------------------------------------- diagnostics

def discrete_energy(state, state_prev=None, dt=None):
    """E_N(t).  dv/dt comes from ``rhs``; when a previous state and dt are
    given the time difference (v - v_prev)/dt is used instead."""
    x, r, v, h = state.x, state.r, state.v, state.h
    rho = state.rho_ref
    if state_prev is not None and dt:
        acc = (v[1:-1] - state_prev.v[1:-1]) / dt
    else:
        acc = rhs(state)
    jumps = (np.diff(r) / h - 1.0) ** 2 + (np.diff(v) / h) ** 2
    weight = rho[1:-1] ** (2.0 * state.gamma1 - 1.0)
    d2r = (r[2:] - 2.0 * r[1:-1] + r[:-2]) / h**2
    ratio = np.empty(state.N + 1)
    ratio[1:] = r[1:] / x[1:]
    ratio[0] = ratio[1]  # symmetric limit of r/x at the centre
    dratio = (ratio[1:-1] - ratio[:-2]) / h
    return float(
        np.max(jumps)
        + h * np.sum(rho[1:-1] * acc**2)
        + h * np.sum(weight * (d2r**2 + dratio**2))
    )


def density_ratio(state):
    """f/rho_mu per cell from exact shell volumes (mass conservation)."""
    return np.diff(state.x**3) / np.diff(state.r**3)


def diagnostics(state, energy=True):
    s = density_ratio(state)
    E0_sigma = 0.5 * np.sum(state.P1_cell * (s - 1.0) ** 2 / s * state.dm_cell)
    E0_v = 0.5 * np.sum(state.v**2 * state.dm_node)
    return {
        "E_N": discrete_energy(state) if energy else float("nan"),
        "sup_r_err": float(np.max(np.abs(state.r - state.x))),
        "sup_v": float(np.max(np.abs(state.v))),
        "E0_sigma": float(E0_sigma),
        "E0_v": float(E0_v),
        "r_N": float(state.r[-1]),
        "strain": float(np.max(np.abs(s - 1.0))),
    }


# ------------------------------------------------------------------ runs

@dataclass(frozen=True)
class SimConfig:
    N: int = 200
    nu1: float = 0.1
    nu2: float = 0.1
    perturbation: Perturbation = Perturbation()
    tmax: float = 10.0
    dt: float = 1e-3
    output_rate: float = OUTPUT_RATE
    stop_amplitude: float = float("inf")  # stop once sqrt(E0) exceeds this


def run(profile, config, state=None):
    """Integrate to ``config.tmax``, recording diagnostics at the output rate.
    Failures end the series with a terminal status instead of raising."""
    if not config.dt > 0 or not config.tmax >= 0:
        raise DomainError("dt must be > 0 and tmax >= 0")
    if state is None:
        state = init_sim(profile, config.N, config.nu1, config.nu2, config.perturbation)
    dt = config.dt
    steps = int(round(config.tmax / dt))
    every = max(1, int(round(1.0 / (config.output_rate * dt))))
    ts = TimeSeries()
    ts.append(state.t, diagnostics(state), _flag(state))
    closure = 0.0
    t_start = state.t
    for k in range(1, steps + 1):
        try:
            state = step(state, dt)
            state.t = t_start + k * dt  # no accumulated rounding in the time stamps
        except ShellCrossingError as exc:
            ts.append(state.t, diagnostics(state, energy=False), "shell-crossing")
            ts.final_state = state
            ts.fits.append(FitResult("abort", float("nan"), (state.t, state.t), float("nan"),
                                     status=str(exc)))
            return ts
        closure = max(closure, abs(state.r[-1] - _closure_radius(state, state.r[-2])))
        last = k == steps
        if k % every == 0 or last:
            diag = diagnostics(state)
            if not all(np.isfinite(list(diag.values()))):
                ts.append(state.t, diag, "non-finite")
                ts.final_state = state
                return ts
            ts.append(state.t, diag, _flag(state, diag))
            if np.sqrt(diag["E0_sigma"] + diag["E0_v"]) >= config.stop_amplitude:
                break
    ts.final_state = state
    ts.closure_residual = closure
    return ts


def _flag(state, diag=None):
    diag = diag if diag is not None else diagnostics(state, energy=False)
    if diag["strain"] > SMALL_STRAIN or diag["sup_v"] > SMALL_VELOCITY:
        return "large"
    return "ok"


# ------------------------------------------------------------------ fits

def _window(ts, window, values):
    t = ts.array("t")
    lo, hi = window
    sel = (t >= lo) & (t <= hi) & np.isfinite(values)
    return t[sel], values[sel]


def fit_decay(ts, window):
    """Exponent p in sup|r - x| ~ C (1 + t)^(-p) by least squares."""
    y = ts.array("sup_r_err")
    with np.errstate(divide="ignore"):
        logs = np.where(y > 0, np.log(np.where(y > 0, y, 1.0)), np.nan)
    t, ly = _window(ts, window, logs)
    if len(t) < 3:
        return FitResult("decay", float("nan"), tuple(window), float("nan"), status="fit-failed")
    lx = np.log1p(t)
    slope, icpt, res = _linfit(lx, ly)
    status = "ok"
    half = len(t) // 2
    if half >= 3:
        s1 = _linfit(lx[:half], ly[:half])[0]
        s2 = _linfit(lx[half:], ly[half:])[0]
        # an exponential keeps steepening on log-log axes
        if s2 < 1.5 * s1 and s2 < 0:
            status = "super-polynomial"
    if np.any(np.diff(ly) > 0):
        status = status if status != "ok" else "non-monotone"
    return FitResult("decay", float(-slope), tuple(window), res, float(icpt), status)


def fit_growth(ts, window):
    """Rate lambda in sqrt(E0) ~ c exp(lambda t) by least squares."""
    E0 = ts.E0
    with np.errstate(divide="ignore"):
        half_log = np.where(E0 > 0, 0.5 * np.log(np.where(E0 > 0, E0, 1.0)), np.nan)
    t, ly = _window(ts, window, half_log)
    if len(t) < 3:
        return FitResult("growth", float("nan"), tuple(window), float("nan"), status="fit-failed")
    slope, icpt, res = _linfit(t, ly)
    return FitResult("growth", float(slope), tuple(window), res, float(icpt))


def growth_window(ts, amplitude=LINEAR_AMPLITUDE, start=0.25):
    """Default growth-fit window: from ``start`` times the first time sqrt(E0)
    reaches ``amplitude`` up to that time."""
    tc = first_crossing(ts, amplitude)
    if not np.isfinite(tc):
        t = ts.array("t")
        tc = float(t[-1])
    return (start * tc, tc)


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), float(coef[1]), resid


def predicted_time(fit, amplitude):
    """Time at which sqrt(E0) = ``amplitude`` on the fitted exponential."""
    return (np.log(amplitude) - fit.intercept) / fit.value


def first_crossing(ts, amplitude):
    """First recorded time with sqrt(E0) >= amplitude (log-interpolated)."""
    t = ts.array("t")
    a = np.sqrt(ts.E0)
    idx = np.flatnonzero(a >= amplitude)
    if len(idx) == 0:
        return float("nan")
    k = idx[0]
    if k == 0:
        return float(t[0])
    la, lb = np.log(a[k - 1]), np.log(a[k])
    w = (np.log(amplitude) - la) / (lb - la)
    return float(t[k - 1] + w * (t[k] - t[k - 1]))
