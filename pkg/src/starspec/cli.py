"""Command line front end.

    starspec eos show --eos polytrope --gamma 1.5 --rho 0.3
    starspec profile --eos polytrope --gamma 2 --mu 1
    starspec curve --eos whitedwarf --mu-min 1e-3 --mu-max 1e3 --svg curve.svg
    starspec spectrum --eos polytrope --gamma 1.25 --mu 1 --cells 400
    starspec evolve-linear --eos polytrope --gamma 1.5 --mu 1 --tmax 50 --dt 1e-2
    starspec simulate --eos polytrope --gamma 1.5 --mu 1 --perturb velocity:1e-3
    starspec verify --eos polytrope --gamma 1.25 --mu 1 --cells 400

Exit status: 0 on success, 1 on invalid input, 2 on numerical failure.
Errors are written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as cfgmod
from . import mrcurve, simulator, spectral
from .eos import make_eos
from .equilibrium import solve_profile
from .errors import NumericalError, StarSpecError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    def __init__(self, message, usage=""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage().strip())


# ------------------------------------------------------------- formatting

def fmt(x):
    """Round-trip float formatting with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def to_json(obj, indent=0):
    """JSON text with every float printed as %.17g (non-finite -> null)."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{to_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return "%.17g" % obj if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


def table_text(columns, rows, comments=(), form="csv", meta=None):
    if form == "json":
        doc = dict(meta or {})
        doc["columns"] = list(columns)
        doc["rows"] = [list(r) for r in rows]
        if comments:
            doc["notes"] = list(comments)
        return to_json(doc) + "\n"
    lines = [",".join(columns)]
    lines += [",".join(fmt(v) for v in r) for r in rows]
    lines += [f"# {c}" for c in comments]
    return "\n".join(lines) + "\n"


def flat_pairs(obj, prefix=""):
    """Flatten nested dicts/lists into (key, value) pairs for CSV output."""
    out = []
    if isinstance(obj, dict):
        for k, v in obj.items():
            out += flat_pairs(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append((prefix, ""))
        for i, v in enumerate(obj):
            out += flat_pairs(v, f"{prefix}[{i}]")
    else:
        out.append((prefix, obj))
    return out


def dict_text(doc, form):
    if form == "json":
        return to_json(doc) + "\n"
    lines = ["key,value"] + [f"{k},{fmt(v)}" for k, v in flat_pairs(doc)]
    return "\n".join(lines) + "\n"


def write_output(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    # atomic replace so a failed run never leaves a half-written file
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".starspec-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------- parsing

def _add_eos(p):
    g = p.add_argument_group("equation of state")
    g.add_argument("--eos", help="polytrope or whitedwarf")
    g.add_argument("--gamma", type=float, help="polytrope exponent in (6/5, 2]")
    g.add_argument("--K", type=float, help="polytrope constant (default 1)")
    g.add_argument("--A", type=float, help="white dwarf pressure scale (default 1)")
    g.add_argument("--B", type=float, help="white dwarf density scale (default 1)")


def _add_common(p, svg=True):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out", help="output path (default stdout)")
    if svg:
        p.add_argument("--svg", help="also write an SVG chart")


def _add_visc(p):
    p.add_argument("--nu1", type=float, help="shear viscosity (default 0.1)")
    p.add_argument("--nu2", type=float, help="bulk viscosity (default 0.1)")


def build_parser():
    parser = _Parser(prog="starspec", description="Equilibria, spectra and dynamics of viscous gaseous stars.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    eos = sub.add_parser("eos", help="equation of state queries")
    eos_sub = eos.add_subparsers(dest="eos_command", metavar="show")
    eos_sub.required = True
    show = eos_sub.add_parser("show", help="P, P', enthalpy and its curvature at a density")
    _add_eos(show)
    show.add_argument("--rho", type=float)
    _add_common(show, svg=False)

    prof = sub.add_parser("profile", help="equilibrium profile on a graded grid")
    _add_eos(prof)
    prof.add_argument("--mu", help="centre density")
    prof.add_argument("--tol", type=float)
    prof.add_argument("--nodes", type=int)
    _add_common(prof)

    curve = sub.add_parser("curve", help="mass-radius sweep and turning point counts")
    _add_eos(curve)
    curve.add_argument("--mu-min", type=float)
    curve.add_argument("--mu-max", type=float)
    curve.add_argument("--points", type=int)
    curve.add_argument("--tol", type=float)
    _add_common(curve)

    spec = sub.add_parser("spectrum", help="inertia, quadratic spectrum and homotopy counts")
    _add_eos(spec)
    spec.add_argument("--mu")
    spec.add_argument("--cells", type=int)
    _add_visc(spec)
    spec.add_argument("--tau-grid", help="comma list in [0, 1]")
    _add_common(spec, svg=False)

    lin = sub.add_parser("evolve-linear", help="trapezoidal integration of the linearised system")
    _add_eos(lin)
    lin.add_argument("--mu")
    lin.add_argument("--cells", type=int)
    _add_visc(lin)
    lin.add_argument("--init", choices=("sin", "r", "r2"), help="initial displacement shape")
    lin.add_argument("--amp", type=float, help="initial displacement amplitude")
    lin.add_argument("--tmax", type=float)
    lin.add_argument("--dt", type=float)
    lin.add_argument("--output-rate", type=float, help="rows per unit time")
    _add_common(lin)

    sim = sub.add_parser("simulate", help="nonlinear Lagrangian finite-difference run")
    _add_eos(sim)
    sim.add_argument("--mu")
    sim.add_argument("--N", type=int)
    _add_visc(sim)
    sim.add_argument("--perturb", help="kind:amp[:mode], kind in none|displacement|velocity|eigenmode")
    sim.add_argument("--tmax", type=float)
    sim.add_argument("--dt", type=float)
    sim.add_argument("--output-rate", type=float, help="rows per unit time")
    sim.add_argument("--stop-amplitude", type=float, help="stop once sqrt(E0) reaches this")
    sim.add_argument("--fit", action="append",
                     help="decay:T0:T1 or growth:T0:T1 (repeatable; default chosen from --perturb)")
    _add_common(sim)

    ver = sub.add_parser("verify", help="full consistency battery at one or more centre densities")
    _add_eos(ver)
    ver.add_argument("--mu", help="centre density, or a comma list")
    ver.add_argument("--cells", type=int)
    _add_visc(ver)
    ver.add_argument("--tau-grid")
    _add_common(ver, svg=False)
    parser.usages = {"eos show": show.format_usage().strip()}
    for name, p in (("profile", prof), ("curve", curve), ("spectrum", spec),
                    ("evolve-linear", lin), ("simulate", sim), ("verify", ver)):
        parser.usages[name] = p.format_usage().strip()
    return parser


def resolve(argv):
    """Parse argv into (command, RunConfig)."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    command = "eos show" if ns.command == "eos" else ns.command
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "eos_command", "config")}
    try:
        file_values = cfgmod.load_config(ns.config) if ns.config else {}
        cfg = cfgmod.build_config(file_values, flags)
        return command, cfgmod.validate(cfg, command)
    except ValidationError as exc:
        raise UsageError(str(exc), parser.usages[command]) from None


# -------------------------------------------------------------- commands

def _eos(cfg):
    return make_eos(cfg.eos, **cfg.eos_params())


def cmd_eos_show(cfg):
    eos = _eos(cfg)
    rho = cfg.rho
    doc = {
        "eos": eos.to_dict(),
        "rho": rho,
        "P": eos.pressure(rho),
        "dP": eos.dpressure(rho),
        "enthalpy": eos.enthalpy(rho),
        "phi2": eos.phi2(rho),
    }
    return dict_text(doc, cfg.format)


def cmd_profile(cfg):
    p = solve_profile(_eos(cfg), cfg.mus[0], tol=cfg.tol, n_nodes=cfg.nodes)
    rows = zip(p.grid, p.rho, p.drho, p.m, p.h, p.P)
    if cfg.svg:
        from .plots import plot_profile
        plot_profile(p, cfg.svg)
    meta = {"mu": p.mu, "R": p.R_mu, "M": p.M}
    notes = [f"R={fmt(p.R_mu)} M={fmt(p.M)}"]
    return table_text(("r", "rho", "drho", "m", "h", "P"), rows, notes, form=cfg.format, meta=meta)


def cmd_curve(cfg):
    eos = _eos(cfg)
    curve = mrcurve.sweep_curve(eos, cfg.mu_min, cfg.mu_max, n_points=cfg.points, tol=cfg.tol)
    counts_note = []
    try:
        mrcurve.turning_point_counts(curve, eos.gamma1)
        counts = curve.sample_counts()
    except StarSpecError as exc:
        # the samples are still useful; the count column is left empty
        counts = [""] * len(curve.mus)
        counts_note = [f"counts unavailable: {exc}"]
    rows = zip(curve.mus, curve.M, curve.R, curve.dM, curve.dR, counts)
    notes = [f"extremum mu={fmt(e.mu_star)} kind={e.kind} bend={e.bend}" for e in curve.extrema]
    if cfg.svg:
        from .plots import plot_curve
        plot_curve(curve, cfg.svg)
    return table_text(("mu", "M", "R", "dM", "dR", "n_unstable"), rows, notes + counts_note,
                      form=cfg.format)


def cmd_spectrum(cfg):
    p = solve_profile(_eos(cfg), cfg.mus[0], tol=cfg.tol)
    rep = spectral.verify_ktc(p, cfg.nu1, cfg.nu2, cfg.cells, cfg.taus)
    return dict_text(rep.to_dict(), cfg.format)


def _linear_initial(triple, kind, amp, R):
    r = triple.radii[1:]
    shape = {"sin": r * np.sin(np.pi * r / R), "r": r, "r2": r * r / R}[kind]
    return amp * shape / np.max(np.abs(shape))


def cmd_evolve_linear(cfg):
    p = solve_profile(_eos(cfg), cfg.mus[0], tol=cfg.tol)
    triple = spectral.assemble_eulerian(p, cfg.nu1, cfg.nu2, cfg.cells)
    u0 = _linear_initial(triple, cfg.init, cfg.amp, p.R_mu)
    every = max(1, int(round(1.0 / (cfg.output_rate * cfg.dt))))
    s = spectral.evolve_linear(triple, u0, np.zeros_like(u0), cfg.tmax, cfg.dt, every=every)
    rows = zip(s.t, s.energy, s.dissipation, s.residual, s.weighted)
    if cfg.svg:
        from .plots import plot_series
        plot_series(s.t, {"E": s.energy, "(1+t) W": (1 + s.t) * s.weighted}, cfg.svg, "energy")
    return table_text(("t", "energy", "dissipation", "residual", "weighted"), rows, form=cfg.format)


def _parse_fit(text):
    parts = text.split(":")
    if len(parts) != 3 or parts[0] not in ("decay", "growth"):
        raise ValidationError(f"malformed --fit {text!r}; expected decay:T0:T1 or growth:T0:T1")
    try:
        lo, hi = float(parts[1]), float(parts[2])
    except ValueError:
        raise ValidationError(f"malformed --fit {text!r}") from None
    if not lo < hi:
        raise ValidationError(f"--fit window must have T0 < T1, got {text!r}")
    return parts[0], (lo, hi)


def cmd_simulate(cfg):
    fits = [_parse_fit(f) for f in cfg.fit]
    pert = simulator.Perturbation.parse(cfg.perturb)
    p = solve_profile(_eos(cfg), cfg.mus[0], tol=cfg.tol)
    sc = simulator.SimConfig(N=cfg.N, nu1=cfg.nu1, nu2=cfg.nu2, perturbation=pert, tmax=cfg.tmax,
                             dt=cfg.dt, output_rate=cfg.output_rate,
                             stop_amplitude=cfg.stop_amplitude)
    ts = simulator.run(p, sc)
    if not fits and len(ts.t) > 3:
        if pert.kind == "eigenmode":
            fits = [("growth", simulator.growth_window(ts))]
        elif pert.kind != "none":
            fits = [("decay", (0.1 * ts.t[-1], ts.t[-1]))]
    for kind, window in fits:
        fn = simulator.fit_growth if kind == "growth" else simulator.fit_decay
        ts.fits.append(fn(ts, window))
    notes = [f"fit kind={f.kind} window={fmt(f.window[0])}:{fmt(f.window[1])} value={fmt(f.value)} "
             f"residual={fmt(f.residual)} status={f.status}" for f in ts.fits]
    if cfg.svg:
        from .plots import plot_series
        plot_series(ts.t, {"sqrt(E0)": np.sqrt(ts.E0), "sup|r-x|": ts.sup_r_err, "E_N": ts.E_N},
                    cfg.svg)
    meta = {"terminal_status": ts.terminal_status}
    return table_text(simulator.TimeSeries.COLUMNS, ts.rows(), notes, form=cfg.format, meta=meta)


def verify_one(cfg, mu):
    """Spectral count, homotopy, mass-coordinate count and turning point count."""
    eos = _eos(cfg)
    p = solve_profile(eos, mu, tol=cfg.tol)
    triple = spectral.assemble_eulerian(p, cfg.nu1, cfg.nu2, cfg.cells)
    rep = spectral.verify_ktc(p, cfg.nu1, cfg.nu2, cfg.cells, cfg.taus, triple=triple)
    doc = rep.to_dict()
    tm = spectral.assemble_mass_coord(p, cfg.nu1, cfg.nu2, cfg.cells)
    doc["mass_coord_n_minus"] = spectral.inertia_nminus(tm)[0]
    try:
        curve = mrcurve.sweep_curve(eos, 1e-3 * mu, mu, n_points=32, tol=cfg.tol)
        mrcurve.turning_point_counts(curve, eos.gamma1)
        doc["turning_point_count"] = curve.count_at(mu)
    except StarSpecError as exc:
        doc["turning_point_count"] = None
        doc["turning_point_note"] = str(exc)
    doc["consistent"] = bool(
        rep.ktc_verified is True
        and doc["mass_coord_n_minus"] == rep.n_minus
        and doc["turning_point_count"] == rep.n_minus
    )
    return doc


def cmd_verify(cfg):
    mus = cfg.mus
    n = mrcurve._workers()
    if n > 1 and len(mus) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            docs = list(pool.map(lambda m: verify_one(cfg, m), mus))
    else:
        docs = [verify_one(cfg, m) for m in mus]
    doc = docs[0] if len(docs) == 1 else {"reports": docs, "consistent": all(d["consistent"] for d in docs)}
    return dict_text(doc, cfg.format)


HANDLERS = {
    "eos show": cmd_eos_show,
    "profile": cmd_profile,
    "curve": cmd_curve,
    "spectrum": cmd_spectrum,
    "evolve-linear": cmd_evolve_linear,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def _fail(code, kind, message, **extra):
    doc = {"error": kind, "message": message, "exit": code}
    doc.update(extra)
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def dispatch(argv=None):
    """Run one command; returns the exit status."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, cfg = resolve(argv)
        text = HANDLERS[command](cfg)
        write_output(text, cfg.out)
    except UsageError as exc:
        return _fail(EXIT_INVALID, "usage", str(exc), usage=exc.usage)
    except ValueError as exc:  # DomainError, ValidationError
        return _fail(EXIT_INVALID, type(exc).__name__, str(exc))
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except StarSpecError as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail(EXIT_INVALID, "io", str(exc))
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    return EXIT_OK


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
