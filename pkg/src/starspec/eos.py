"""Barotropic equations of state P(rho) for self-gravitating gas.

Two models are bundled: the polytrope ``P = K rho**gamma`` and the zero
temperature white dwarf law ``P = A f(x)`` with ``rho = B x**3`` and
``f(x) = x sqrt(x^2 + 1) (2 x^2 - 3) + 3 asinh(x)``.

Besides the pressure and its derivatives every model provides the specific
enthalpy ``h(rho) = int_0^rho P'(s)/s ds`` and its inverse; the equilibrium
integrator works in ``h`` because ``h`` is smooth across the vacuum boundary
while ``rho(h)`` is only Hoelder continuous there.

All functions accept scalars or numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DomainError

GAMMA1_MIN = 6.0 / 5.0
GAMMA1_MAX = 2.0

# white dwarf: below this x the closed form loses digits to cancellation
_WD_SERIES_X = 0.3
_WD_SERIES_TERMS = 24


def _binom_half(k):
    # coefficient of u^(2k) in (1 + u^2)^(-1/2)
    return (-1) ** k * comb(2 * k, k) / 4.0**k


_WD_COEFFS = np.array([8.0 * _binom_half(k) / (5 + 2 * k) for k in range(_WD_SERIES_TERMS)])


def _as_array(x):
    return np.asarray(x, dtype=float)


def _check_nonneg(rho, name="rho"):
    rho = _as_array(rho)
    if np.any(rho < 0) or np.any(~np.isfinite(rho)):
        raise DomainError(f"{name} must be finite and >= 0")
    return rho


def _check_pos(rho, name="rho"):
    rho = _as_array(rho)
    if np.any(rho <= 0) or np.any(~np.isfinite(rho)):
        raise DomainError(f"{name} must be finite and > 0")
    return rho


def _out(value, like):
    return float(value) if np.ndim(like) == 0 else value


class EquationOfState:
    """Common interface. Subclasses implement the ``_raw`` hooks on arrays."""

    gamma1: float
    name: str = "eos"

    def pressure(self, rho):
        rho = _check_nonneg(rho)
        return _out(self._pressure(rho), rho)

    def dpressure(self, rho):
        rho = _check_pos(rho)
        return _out(self._dpressure(rho), rho)

    def d2pressure(self, rho):
        rho = _check_pos(rho)
        return _out(self._d2pressure(rho), rho)

    def enthalpy(self, rho):
        rho = _check_nonneg(rho)
        return _out(self._enthalpy(rho), rho)

    def rho_from_enthalpy(self, h):
        h = _check_nonneg(h, "h")
        return _out(self._rho_from_enthalpy(h), h)

    def phi2(self, rho):
        """Enthalpy curvature P'(rho)/rho."""
        rho = _check_pos(rho)
        return _out(self._dpressure(rho) / rho, rho)

    def drho_dh(self, rho):
        """rho / P'(rho) = 1/phi2, continuously extended to rho = 0."""
        rho = _check_nonneg(rho)
        out = np.zeros_like(rho)
        pos = rho > 0
        out[pos] = rho[pos] / self._dpressure(rho[pos])
        out[~pos] = self._drho_dh_vacuum()
        return _out(out, rho)

    def pressure_rho(self, rho):
        """P'(rho) * rho, continuously extended to rho = 0."""
        rho = _check_nonneg(rho)
        out = np.zeros_like(rho)
        pos = rho > 0
        out[pos] = rho[pos] * self._dpressure(rho[pos])
        return _out(out, rho)

    def to_dict(self):
        raise NotImplementedError

    def _drho_dh_vacuum(self):
        # rho/P' ~ rho^(2-gamma1)/(K gamma1) -> 0 unless gamma1 == 2
        return 0.0


@dataclass(frozen=True)
class Polytrope(EquationOfState):
    K: float = 1.0
    gamma: float = 5.0 / 3.0
    name = "polytrope"

    def __post_init__(self):
        if not (self.K > 0 and np.isfinite(self.K)):
            raise DomainError("polytrope K must be > 0")
        if not (GAMMA1_MIN < self.gamma <= GAMMA1_MAX):
            raise DomainError(
                f"polytrope gamma={self.gamma} outside ({GAMMA1_MIN}, {GAMMA1_MAX}]"
            )

    @property
    def gamma1(self):
        return self.gamma

    def _pressure(self, rho):
        return self.K * rho**self.gamma

    def _dpressure(self, rho):
        return self.K * self.gamma * rho ** (self.gamma - 1.0)

    def _d2pressure(self, rho):
        g = self.gamma
        return self.K * g * (g - 1.0) * rho ** (g - 2.0)

    def _enthalpy(self, rho):
        g = self.gamma
        return self.K * g / (g - 1.0) * rho ** (g - 1.0)

    def _rho_from_enthalpy(self, h):
        g = self.gamma
        return ((g - 1.0) * h / (self.K * g)) ** (1.0 / (g - 1.0))

    def _drho_dh_vacuum(self):
        return 1.0 / (self.K * self.gamma) if self.gamma == 2.0 else 0.0

    def to_dict(self):
        return {"eos": "polytrope", "K": self.K, "gamma": self.gamma}


@dataclass(frozen=True)
class WhiteDwarf(EquationOfState):
    A: float = 1.0
    B: float = 1.0
    name = "whitedwarf"

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0):
            raise DomainError("white dwarf A and B must be > 0")

    # small-x expansion f ~ (8/5) x^5
    gamma1 = 5.0 / 3.0

    def _x(self, rho):
        return np.cbrt(rho / self.B)

    @staticmethod
    def f(x):
        """Pressure shape function, accurate for all x >= 0."""
        x = _as_array(x)
        out = np.empty_like(x)
        small = x < _WD_SERIES_X
        xs = x[small]
        x2 = xs * xs
        acc = np.zeros_like(xs)
        for c in _WD_COEFFS[::-1]:
            acc = acc * x2 + c
        out[small] = acc * xs**5
        xl = x[~small]
        out[~small] = xl * np.sqrt(xl * xl + 1.0) * (2.0 * xl * xl - 3.0) + 3.0 * np.arcsinh(xl)
        return _out(out, x)

    def _pressure(self, rho):
        return self.A * self.f(self._x(rho))

    def _dpressure(self, rho):
        x = self._x(rho)
        return 8.0 * self.A / (3.0 * self.B) * x * x / np.sqrt(1.0 + x * x)

    def _d2pressure(self, rho):
        x = self._x(rho)
        return 8.0 * self.A / (9.0 * self.B**2) * (2.0 + x * x) / (x * (1.0 + x * x) ** 1.5)

    def _enthalpy(self, rho):
        x2 = self._x(rho) ** 2
        return 8.0 * self.A / self.B * x2 / (np.sqrt(1.0 + x2) + 1.0)

    def _rho_from_enthalpy(self, h):
        s = self.B * h / (8.0 * self.A)
        return self.B * (s * (2.0 + s)) ** 1.5

    def to_dict(self):
        return {"eos": "whitedwarf", "A": self.A, "B": self.B}


def near_vacuum_ratio(eos, s=(1e-6, 1e-8)):
    """Ratio of s^(1-gamma1) P'(s) at two small densities; close to 1 when the
    near-vacuum exponent gamma1 is the true one."""
    a, b = (eos.dpressure(si) * si ** (1.0 - eos.gamma1) for si in s)
    return a / b


def second_derivative_ratio(eos, s=(1e-6, 1e-8)):
    """Same check for s^(2-gamma1) P''(s), the C^2 near-vacuum assumption."""
    a, b = (eos.d2pressure(si) * si ** (2.0 - eos.gamma1) for si in s)
    return a / b


def check_assumptions(eos, rel=0.05):
    """Return a dict of the structural checks on the pressure law."""
    grid = np.logspace(-8, 3, 200)
    dp = eos.dpressure(grid)
    r1 = near_vacuum_ratio(eos)
    r2 = second_derivative_ratio(eos)
    return {
        "gamma1": eos.gamma1,
        "gamma1_in_range": bool(GAMMA1_MIN < eos.gamma1 < GAMMA1_MAX),
        "monotone": bool(np.all(dp > 0)),
        "near_vacuum_ratio": r1,
        "near_vacuum_ok": bool(abs(r1 - 1.0) <= rel),
        "second_derivative_ratio": r2,
        "second_derivative_ok": bool(abs(r2 - 1.0) <= rel),
    }


def make_eos(kind, **params):
    kind = kind.lower().replace("-", "").replace("_", "")
    if kind == "polytrope":
        return Polytrope(K=float(params.get("K", 1.0)), gamma=float(params["gamma"]))
    if kind in ("whitedwarf", "wd"):
        return WhiteDwarf(A=float(params.get("A", 1.0)), B=float(params.get("B", 1.0)))
    raise DomainError(f"unknown equation of state {kind!r}")


def pressure(eos, rho):
    return eos.pressure(rho)


def dpressure(eos, rho):
    return eos.dpressure(rho)


def enthalpy(eos, rho):
    return eos.enthalpy(rho)


def rho_from_enthalpy(eos, h):
    return eos.rho_from_enthalpy(h)


def phi2(eos, rho):
    return eos.phi2(rho)
