"""Mass-radius curves and the turning point rule for the unstable count.

Along the family of equilibria parametrised by the centre density mu the
number of unstable modes can only change where M'(mu) = 0, by +1 when the
oriented (R, M) curve bends counterclockwise (M'R' goes from - to +) and by
-1 when it bends clockwise.  At small mu the count is fixed by gamma1: one
unstable mode for gamma1 in (6/5, 4/3), none above 4/3.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .eos import GAMMA1_MIN
from .equilibrium import DEFAULT_TOL, solve_profile
from .errors import DegenerateError, DomainError, NumericalError, StarSpecError

CRITICAL_GAMMA = 4.0 / 3.0
BRACKET_REL = 1e-3
FLAT_REL = 1e-6


@dataclass(frozen=True)
class Extremum:
    mu_star: float
    kind: str  # "mass-max" or "mass-min"
    bend: str  # "counterclockwise", "clockwise" or "degenerate"
    bracket: tuple = (float("nan"), float("nan"))


@dataclass
class MassRadiusCurve:
    mus: np.ndarray
    M: np.ndarray
    R: np.ndarray
    dM: np.ndarray
    dR: np.ndarray
    extrema: list = field(default_factory=list)
    counts: list = field(default_factory=list)  # [((mu_lo, mu_hi), n), ...]

    def count_at(self, mu):
        """Unstable count of the segment containing ``mu``."""
        if not self.counts:
            raise NumericalError("counts not assigned; call turning_point_counts first")
        for (lo, hi), n in self.counts:
            if lo <= mu <= hi:
                return n
        raise DomainError(f"mu={mu} outside the swept range")

    def sample_counts(self):
        return np.array([self.count_at(m) for m in self.mus], dtype=int)


def _workers():
    try:
        return max(1, int(os.environ.get("STARSPEC_THREADS", "1")))
    except ValueError:
        return 1


def _solve_many(eos, mus, tol):
    def one(mu):
        try:
            p = solve_profile(eos, mu, tol=tol)
        except StarSpecError as exc:
            raise type(exc)(f"{exc} [while sweeping mu={mu:.17g}]") from exc
        return p.M, p.R_mu

    n = _workers()
    if n == 1 or len(mus) < 4:
        out = [one(m) for m in mus]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            out = list(pool.map(one, mus))
    arr = np.array(out, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def log_derivative(mus, f, order=4):
    """df/dmu on a (possibly nonuniform) increasing grid.

    Interpolating polynomial of degree ``order`` in s = log mu through the
    nearest ``order + 1`` samples (centred where possible, one-sided at the
    ends), differentiated at each node; df/dmu = (df/ds)/mu."""
    mus = np.asarray(mus, dtype=float)
    f = np.asarray(f, dtype=float)
    s = np.log(mus)
    n = len(s)
    k = min(order + 1, n)
    out = np.empty(n)
    for i in range(n):
        lo = min(max(i - k // 2, 0), n - k)
        ss = s[lo:lo + k] - s[i]
        scale = np.max(np.abs(ss)) or 1.0
        c = np.polynomial.polynomial.polyfit(ss / scale, f[lo:lo + k], k - 1)
        out[i] = c[1] / scale
    return out / mus


def _local_derivative(eos, mu, tol, step=1e-3):
    # five-point central difference in log mu at a single abscissa
    e = np.exp(step * np.array([-2.0, -1.0, 1.0, 2.0]))
    Ms, Rs = _solve_many(eos, mu * e, tol)
    w = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * step)
    return float(w @ Ms) / mu, float(w @ Rs) / mu


def _classify(dm_before, dm_after, dr_before, dr_after):
    kind = "mass-max" if dm_before > 0 > dm_after else "mass-min"
    p_before = dm_before * dr_before
    p_after = dm_after * dr_after
    if dr_before == 0 or dr_after == 0 or np.sign(dr_before) != np.sign(dr_after):
        # R' vanishing (or flipping) together with M' is not covered by the rule
        bend = "degenerate"
    elif p_before < 0 < p_after:
        bend = "counterclockwise"
    elif p_before > 0 > p_after:
        bend = "clockwise"
    else:
        bend = "degenerate"
    return kind, bend


def sweep_curve(eos, mu_min, mu_max, n_points=32, tol=DEFAULT_TOL):
    """Sample (M, R) on a log grid and bracket every mass extremum."""
    if not (0 < mu_min < mu_max):
        raise DomainError("need 0 < mu_min < mu_max")
    if n_points < 8:
        raise DomainError("n_points must be >= 8")
    mus = np.geomspace(mu_min, mu_max, int(n_points))
    M, R = _solve_many(eos, mus, tol)
    dM = log_derivative(mus, M)
    dR = log_derivative(mus, R)
    flat = FLAT_REL * np.max(np.abs(M)) * np.log(mus[1] / mus[0])

    extras_mu, extras_M, extras_R = [], [], []
    extrema = []
    for i in range(len(mus) - 1):
        a, b = dM[i], dM[i + 1]
        if np.sign(a) == np.sign(b) and min(abs(a * mus[i]), abs(b * mus[i + 1])) > flat:
            continue
        if a * b > 0:
            # near-flat but no sign change: probe the midpoint once
            mid = np.sqrt(mus[i] * mus[i + 1])
            dm_mid, _ = _local_derivative(eos, mid, tol)
            if np.sign(dm_mid) == np.sign(a):
                continue
        ext, pts = _refine_extremum(eos, mus[i], mus[i + 1], tol)
        extrema.append(ext)
        for mu_p, M_p, R_p in pts:
            extras_mu.append(mu_p)
            extras_M.append(M_p)
            extras_R.append(R_p)

    if extras_mu:
        mus = np.concatenate([mus, extras_mu])
        M = np.concatenate([M, extras_M])
        R = np.concatenate([R, extras_R])
        order = np.argsort(mus)
        mus, M, R = mus[order], M[order], R[order]
        keep = np.concatenate([[True], np.diff(mus) > 0])
        mus, M, R = mus[keep], M[keep], R[keep]
        dM = log_derivative(mus, M)
        dR = log_derivative(mus, R)
    return MassRadiusCurve(mus=mus, M=M, R=R, dM=dM, dR=dR, extrema=extrema)


def _refine_extremum(eos, lo, hi, tol):
    """Bisect the sign change of M'(mu) on [lo, hi] to BRACKET_REL."""
    dm_lo, dr_lo = _local_derivative(eos, lo, tol)
    dm_hi, dr_hi = _local_derivative(eos, hi, tol)
    if dm_lo * dm_hi > 0:
        raise DegenerateError(f"M' does not change sign on [{lo:.6g}, {hi:.6g}]")
    pts = []
    while hi / lo - 1.0 > BRACKET_REL:
        mid = np.sqrt(lo * hi)
        dm_mid, dr_mid = _local_derivative(eos, mid, tol)
        Mm, Rm = _solve_many(eos, [mid], tol)
        pts.append((mid, float(Mm[0]), float(Rm[0])))
        if dm_mid == 0:
            lo = hi = mid
            break
        if np.sign(dm_mid) == np.sign(dm_lo):
            lo, dm_lo, dr_lo = mid, dm_mid, dr_mid
        else:
            hi, dm_hi, dr_hi = mid, dm_mid, dr_mid
    kind, bend = _classify(dm_lo, dm_hi, dr_lo, dr_hi)
    return Extremum(float(np.sqrt(lo * hi)), kind, bend, (float(lo), float(hi))), pts


def find_extrema(mus, dM, dR, M=None, R=None):
    """Extrema of a sampled curve from sign changes of dM (no refinement).

    Log-derivatives mu dM below FLAT_REL max|M| (same for R) count as zero;
    such samples are skipped and the bracket spans them."""
    mus = np.asarray(mus, dtype=float)
    dM = _zero_small(mus, dM, M)
    dR = _zero_small(mus, dR, R)
    out = []
    nz = np.flatnonzero(np.sign(dM))
    for i, j in zip(nz[:-1], nz[1:]):
        if dM[i] * dM[j] < 0:
            kind, bend = _classify(dM[i], dM[j], dR[i], dR[j])
            if j - i > 1:
                # exact zeros in between: take the middle of the flat run
                mu_star = np.sqrt(mus[i + 1] * mus[j - 1])
            else:
                # linear interpolation of the root of M' in log mu
                w = dM[i] / (dM[i] - dM[j])
                mu_star = mus[i] * (mus[j] / mus[i]) ** w
            out.append(Extremum(float(mu_star), kind, bend, (float(mus[i]), float(mus[j]))))
    return out


def _zero_small(mus, d, f):
    d = np.array(d, dtype=float)
    if f is None:
        return d
    d[np.abs(d * mus) < FLAT_REL * np.max(np.abs(f))] = 0.0
    return d


def curve_from_samples(mus, M, R, dM=None, dR=None):
    """Build a curve from given samples (synthetic curves, external data)."""
    mus = np.asarray(mus, dtype=float)
    if np.any(np.diff(mus) <= 0):
        raise DomainError("mus must be strictly increasing")
    M = np.asarray(M, dtype=float)
    R = np.asarray(R, dtype=float)
    dM = log_derivative(mus, M) if dM is None else np.asarray(dM, dtype=float)
    dR = log_derivative(mus, R) if dR is None else np.asarray(dR, dtype=float)
    return MassRadiusCurve(mus, M, R, dM, dR, find_extrema(mus, dM, dR, M, R))


def initial_count(gamma1):
    """Unstable count on the small-mu end of the family."""
    if not (GAMMA1_MIN < gamma1 < 2.0):
        raise DomainError(f"gamma1={gamma1} outside (6/5, 2)")
    if abs(gamma1 - CRITICAL_GAMMA) < 1e-12:
        raise DomainError("gamma1 = 4/3 is the mass-critical exponent; the count is undetermined")
    return 1 if gamma1 < CRITICAL_GAMMA else 0


def turning_point_counts(curve, gamma1):
    """Fill ``curve.counts`` segment by segment between the extrema."""
    n = initial_count(gamma1)
    extrema = sorted(curve.extrema, key=lambda e: e.mu_star)
    edges = [curve.mus[0]] + [e.mu_star for e in extrema] + [curve.mus[-1]]
    scale = np.max(np.abs(curve.M))
    counts = []
    for k in range(len(edges) - 1):
        lo, hi = edges[k], edges[k + 1]
        inside = (curve.mus > lo) & (curve.mus < hi)
        if k == 0:
            inside |= curve.mus == lo
        if k == len(edges) - 2:
            inside |= curve.mus == hi
        dm = np.abs(curve.dM[inside] * curve.mus[inside])
        if dm.size and np.all(dm < FLAT_REL * scale):
            raise DegenerateError(f"M'(mu) ~ 0 over the whole segment [{lo:.6g}, {hi:.6g}]")
        counts.append(((float(lo), float(hi)), n))
        if k < len(extrema):
            e = extrema[k]
            if e.bend == "counterclockwise":
                n += 1
            elif e.bend == "clockwise":
                n -= 1
            else:
                raise DegenerateError(f"bend at mu={e.mu_star:.6g} is degenerate (R' = 0)")
            if n < 0:
                raise NumericalError(f"negative unstable count after mu={e.mu_star:.6g}")
    curve.counts = counts
    return curve
