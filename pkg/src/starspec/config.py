"""Run configuration: defaults, ``key = value`` files and flag overrides."""
from __future__ import annotations

import ast
import configparser
import logging
import math
from dataclasses import dataclass, field, fields, replace

from .errors import ValidationError

log = logging.getLogger(__name__)

_FLOAT_KEYS = {
    "gamma", "K", "A", "B", "rho", "mu_min", "mu_max", "tol", "nu1", "nu2",
    "tmax", "dt", "output_rate", "stop_amplitude",
}
_INT_KEYS = {"cells", "N", "points", "nodes"}
_POSITIVE = {"K", "A", "B", "tol", "nu1", "nu2", "dt", "output_rate", "mu_min", "mu_max"}


@dataclass
class RunConfig:
    eos: str = "polytrope"
    gamma: float | None = None
    K: float | None = None
    A: float | None = None
    B: float | None = None
    rho: float | None = None
    mu: str | None = None  # one value, or a comma list for batch verify
    mu_min: float | None = None
    mu_max: float | None = None
    points: int = 32
    tol: float = 1e-10
    nodes: int = 800
    cells: int = 400
    N: int = 200
    nu1: float = 0.1
    nu2: float = 0.1
    tau_grid: str = "0,0.25,0.5,0.75,1"
    perturb: str = "none"
    init: str = "sin"
    amp: float = 1e-2
    tmax: float = 10.0
    dt: float = 1e-3
    output_rate: float = 10.0
    stop_amplitude: float = math.inf
    fit: list = field(default_factory=list)
    out: str | None = None
    svg: str | None = None
    format: str | None = None  # csv for tables, json for reports

    @property
    def mus(self):
        if self.mu is None:
            return []
        return [_to_float("mu", s) for s in str(self.mu).split(",") if s.strip()]

    @property
    def taus(self):
        return tuple(_to_float("tau_grid", s) for s in str(self.tau_grid).split(",") if s.strip())

    def eos_params(self):
        if self.eos == "polytrope":
            return {"K": 1.0 if self.K is None else self.K, "gamma": self.gamma}
        return {"A": 1.0 if self.A is None else self.A, "B": 1.0 if self.B is None else self.B}


KEYS = {f.name for f in fields(RunConfig)}


def _to_float(key, value):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{key}: expected a number, got {value!r}") from None


def _coerce(key, value):
    if value is None:
        return None
    if key in _FLOAT_KEYS:
        return _to_float(key, value)
    if key in _INT_KEYS:
        try:
            return int(str(value))
        except ValueError:
            raise ValidationError(f"{key}: expected an integer, got {value!r}") from None
    if key == "fit":
        return [s.strip() for s in str(value).split(";") if s.strip()] if isinstance(value, str) else list(value)
    return str(value)


def load_config(path):
    """Read a ``key = value`` file (``[sections]`` optional, all merged).

    Returns a dict of recognised keys; unknown keys are logged and dropped."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (K vs k)
    try:
        # a leading header lets sectionless files parse; line numbers shift by one
        parser.read_string("[__top__]\n" + text, source=str(path))
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        try:
            line = ast.literal_eval(line)  # configparser stores repr(line)
        except (ValueError, SyntaxError):
            pass
        raise ValidationError(f"{path}, line {lineno - 1}: cannot parse {line.strip()!r}") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f", line {lineno - 1}" if lineno else ""
        raise ValidationError(f"{path}{where}: {exc.message.splitlines()[0]}") from None
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = key.replace("-", "_")
            if name not in KEYS:
                log.warning("%s: unknown key %r ignored", path, key)
                continue
            out[name] = _coerce(name, value)
    return out


def build_config(file_values=None, flag_values=None):
    """Defaults, then file values, then explicit flags; then validate."""
    cfg = RunConfig()
    for source in (file_values or {}, flag_values or {}):
        updates = {k: _coerce(k, v) for k, v in source.items() if v is not None and k in KEYS}
        cfg = replace(cfg, **updates)
    return cfg


def validate(cfg, command):
    """Checks that need no computation.  Raises ValidationError."""
    eos = cfg.eos.lower().replace("-", "").replace("_", "")
    if eos in ("wd", "whitedwarf"):
        cfg.eos = "whitedwarf"
    elif eos == "polytrope":
        cfg.eos = "polytrope"
    else:
        raise ValidationError(f"unknown --eos {cfg.eos!r} (polytrope or whitedwarf)")
    if cfg.eos == "polytrope":
        if cfg.gamma is None:
            raise ValidationError("--eos polytrope requires --gamma")
        if cfg.A is not None or cfg.B is not None:
            raise ValidationError("--A/--B apply to the white dwarf law, not to a polytrope")
    elif cfg.gamma is not None or cfg.K is not None:
        raise ValidationError("--gamma/--K apply to a polytrope, not to the white dwarf law")
    for key in _POSITIVE:
        value = getattr(cfg, key)
        if value is not None and not (value > 0 and math.isfinite(value)):
            raise ValidationError(f"--{key.replace('_', '-')} must be a finite number > 0")
    if cfg.format is None:
        cfg.format = "json" if command in ("eos show", "spectrum", "verify") else "csv"
    if cfg.format not in ("csv", "json"):
        raise ValidationError("--format must be csv or json")
    if command == "eos show" and cfg.rho is None:
        raise ValidationError("eos show requires --rho")
    if command in ("profile", "spectrum", "evolve-linear", "simulate", "verify"):
        if not cfg.mus:
            raise ValidationError(f"{command} requires --mu")
        if any(not (m > 0 and math.isfinite(m)) for m in cfg.mus):
            raise ValidationError("--mu must be > 0")
        if len(cfg.mus) > 1 and command != "verify":
            raise ValidationError(f"{command} takes a single --mu")
    if command == "curve":
        if cfg.mu_min is None or cfg.mu_max is None:
            raise ValidationError("curve requires --mu-min and --mu-max")
        if not cfg.mu_min < cfg.mu_max:
            raise ValidationError("--mu-min must be below --mu-max")
    if command == "profile" and cfg.nodes < 2:
        raise ValidationError("--nodes must be >= 2")
    if command == "curve" and cfg.points < 8:
        raise ValidationError("--points must be >= 8")
    if command in ("spectrum", "evolve-linear", "verify") and cfg.cells < 16:
        raise ValidationError("--cells must be >= 16")
    if command == "simulate" and cfg.N < 32:
        raise ValidationError("--N must be >= 32")
    if command in ("evolve-linear", "simulate") and not cfg.tmax >= 0:
        raise ValidationError("--tmax must be >= 0")
    if command == "spectrum" or command == "verify":
        taus = cfg.taus
        if not taus or any(not 0.0 <= t <= 1.0 for t in taus):
            raise ValidationError("--tau-grid values must lie in [0, 1]")
    if cfg.svg is not None and command in ("eos show", "spectrum", "verify"):
        raise ValidationError(f"--svg is not available for {command}")
    return cfg
