"""Command-line front end: ``sl2lab {lyapunov,spectrum,llt,fourier}``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import fourier as fk
from .grid import (
    NonConvergenceError,
    ProjGrid,
    contraction_probe,
    eigen_expansion,
    leading_eigen,
    stationary_measure,
)
from .llt import (
    ProductTestFunction,
    smooth_bump,
    verify_admissible_llt,
    verify_clt,
    verify_coeff_llt,
    verify_norm_llt,
)
from .measures import ModelMeasure, reference_measure, screen_elementarity
from .mobius import GroupElement, ProjPoint
from .walk import NumericalAbort, WalkConfig, furstenberg_crosscheck, run_walk

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_NONCONV = 0, 2, 3, 4
SCHEMA_VERSION = 1

_complex = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_vec = {"type": "array", "items": _complex, "minItems": 2, "maxItems": 2}
_matrix = {"type": "array", "items": _vec, "minItems": 2, "maxItems": 2}
_window = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "measure"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_path": {"type": "string"},
        "output_format": {"enum": ["json", "csv"]},
        "measure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["reference"]},
                "atoms": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["weight", "matrix"],
                        "properties": {"weight": {"type": "number", "minimum": 0}, "matrix": _matrix},
                    },
                },
                "override_elementarity": {"type": "boolean"},
            },
            "oneOf": [{"required": ["preset"]}, {"required": ["atoms"]}],
        },
        "walk": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_steps": {"type": "integer", "minimum": 1},
                "n_samples": {"type": "integer", "minimum": 1},
                "start_point": _vec,
                "renorm_every": {"type": "integer", "minimum": 1},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "resolution": {"type": "integer", "minimum": 4},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "xi": {"type": "array", "items": {"type": "number"}},
                "h": {"type": "number", "minimum": 1e-3, "maximum": 1e-1},
                "probe_steps": {"type": "integer", "minimum": 20},
                "stationary_refine": {"type": "integer", "minimum": 1},
            },
        },
        "llt": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": {"type": "number"},
                "a": {"type": "number", "exclusiveMinimum": 0},
                "clt": {"type": "boolean"},
                "norm": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_values": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                        "t_values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        "bump_center": _vec,
                        "bump_width": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "coeff": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["window"],
                    "properties": {"v": _vec, "w": _vec, "window": _window},
                },
                "admissible": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["window"],
                    "properties": {"y": _vec, "window": _window},
                },
            },
        },
        "fourier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "deltas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                           "minItems": 1},
                "test_function": {"enum": ["triangle"]},
                "grid_half_width": {"type": "number", "minimum": 20},
                "grid_points": {"type": "integer", "minimum": 4096},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# serialization


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def dumps(obj, indent: int = 0) -> str:
    """JSON with floats at 17 significant digits and non-finite floats as ``null``."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, complex):
        return dumps([obj.real, obj.imag], indent)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _complex_vec(pairs) -> np.ndarray:
    return np.array([complex(re, im) for re, im in pairs])


def _matrix_from(pairs) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in pairs])


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from exc
    return cfg


def build_measure(block: dict) -> ModelMeasure:
    try:
        if "preset" in block:
            mu = reference_measure()
        else:
            mu = ModelMeasure([(GroupElement(_matrix_from(a["matrix"])), a["weight"]) for a in block["atoms"]])
    except ValueError as exc:
        raise ConfigError(f"invalid measure: {exc}") from exc
    if not block.get("override_elementarity", False):
        rep = screen_elementarity(mu)
        if not rep.non_elementary:
            raise ConfigError("measure failed the non-elementarity screen (" + "; ".join(rep.evidence)
                              + "); set measure.override_elementarity to run anyway")
    return mu


def _walk_config(cfg: dict, mu: ModelMeasure, seed: int, defaults: dict | None = None) -> WalkConfig:
    blk = {**(defaults or {}), **cfg.get("walk", {})}
    start = ProjPoint(_complex_vec(blk["start_point"])) if "start_point" in blk else ProjPoint([1, 0])
    try:
        return WalkConfig(mu, blk.get("n_steps", 1000), blk.get("n_samples", 10_000), start, seed,
                          blk.get("renorm_every", 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([_fmt_float(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def cmd_lyapunov(cfg: dict, seed: int, fmt: str, output, threads: int) -> None:
    mu = build_measure(cfg["measure"])
    wc = _walk_config(cfg, mu, seed)
    stats = run_walk(wc, threads=threads)
    if fmt == "csv":
        ep = stats.samples_endpoint
        rows = []
        for i in range(stats.n_samples):
            v = ep[i]
            if v[1] != 0:
                z = v[0] / v[1]
                zr, zi = float(z.real), float(z.imag)
            else:
                zr, zi = math.inf, 0.0
            rows.append([i, float(stats.samples_sigma[i]), "inf" if math.isinf(zr) else zr, zi, ""])
        _write(_csv_text(["sample_index", "sigma_centered", "endpoint_re", "endpoint_im", "lognorm"], rows), output)
    else:
        out = {"command": "lyapunov", "seed": seed, **stats.summary()}
        _write(dumps(out) + "\n", output)


def cmd_spectrum(cfg: dict, seed: int, fmt: str, output, threads: int) -> None:
    mu = build_measure(cfg["measure"])
    gb = cfg.get("grid", {})
    grid = ProjGrid(gb.get("resolution", 256))
    tol = gb.get("tol", 1e-12)
    max_iter = gb.get("max_iter", 5000)
    nu = stationary_measure(mu, grid, tol, max_iter, refine=gb.get("stationary_refine", 1))
    if fmt == "csv":
        rows = []
        for i, m in enumerate(nu.masses):
            c, rem = divmod(i, grid.n_per_chart)
            iy, ix = divmod(rem, grid.side)
            rows.append([c, ix, iy, float(m)])
        _write(_csv_text(["chart", "ix", "iy", "mass"], rows), output)
        return
    out = {"command": "spectrum", "seed": seed, "resolution": grid.resolution}
    lam0 = leading_eigen(mu, 0.0, tol, max_iter, grid)
    out["lambda_0"] = lam0.leading_eigenvalue
    gamma, big_a, a2 = eigen_expansion(mu, gb.get("h", 0.02), grid)
    out["eigen_expansion"] = {"h": gb.get("h", 0.02), "gamma_spec": gamma, "A_spec": big_a, "a2_spec": a2}
    out["furstenberg_gamma"] = furstenberg_crosscheck(mu, nu, gamma)[1]
    probes = []
    for xi in gb.get("xi", [0.5, 1.0, 2.0]):
        rep = contraction_probe(mu, xi, gb.get("probe_steps", 60), grid, allow_zero=True)
        probes.append(rep.to_dict())
    out["contraction"] = probes
    _write(dumps(out) + "\n", output)


def cmd_llt(cfg: dict, seed: int, fmt: str, output, threads: int) -> None:
    mu = build_measure(cfg["measure"])
    lb = cfg.get("llt", {})
    for key in ("coeff", "admissible"):
        if key in lb:
            b1, b2 = lb[key]["window"]
            if not b1 < b2:
                raise ConfigError(f"llt.{key}.window must satisfy b1 < b2")
    wc = _walk_config(cfg, mu, seed)
    gamma, a = lb.get("gamma"), lb.get("a")
    out = {"command": "llt", "seed": seed}
    tables = []
    if lb.get("clt", True):
        stats = run_walk(wc, threads=threads)
        chk = verify_clt(stats)
        out["clt"] = {"ks_statistic": chk.ks_statistic, "pass": chk.passed, "degenerate": chk.degenerate,
                      "n_steps": stats.n_steps, "n_samples": stats.n_samples, "var_hat": stats.var_hat}
    if "norm" in lb:
        nb = lb["norm"]
        grid = ProjGrid(cfg.get("grid", {}).get("resolution", 256))
        nu = stationary_measure(mu, grid)
        u = np.linspace(-2, 2, 4001)
        phi = fk.SampledFunction(u, fk.triangle(u))
        center = ProjPoint(_complex_vec(nb["bump_center"])) if "bump_center" in nb else ProjPoint([1, 1])
        f = ProductTestFunction.build(phi, smooth_bump(grid, center, nb.get("bump_width", 0.5)), nu)
        rep = verify_norm_llt(wc, f, nb.get("t_values", [0.0]), a, gamma, nb.get("n_values"), threads=threads)
        out["norm"] = rep.to_dict()
        tables.extend(rep.table)
    v = _complex_vec(lb["coeff"]["v"]) if "coeff" in lb and "v" in lb["coeff"] else np.array([1, 0])
    if "coeff" in lb:
        w = _complex_vec(lb["coeff"]["w"]) if "w" in lb["coeff"] else np.array([1, 0])
        rep = verify_coeff_llt(wc, v, w, *lb["coeff"]["window"], a, gamma, threads=threads)
        rep.extra.pop("indicators")
        out["coeff"] = rep.to_dict()
        tables.extend(rep.table)
    if "admissible" in lb:
        y = ProjPoint(_complex_vec(lb["admissible"]["y"])) if "y" in lb["admissible"] else ProjPoint([0, 1])
        rep = verify_admissible_llt(wc, y, tuple(lb["admissible"]["window"]), a, gamma, threads=threads)
        rep.extra.pop("indicators")
        out["admissible"] = rep.to_dict()
        tables.extend(rep.table)
    if fmt == "csv":
        rows = [[int(r[0])] + [float(x) for x in r[1:]] for r in tables]
        _write(_csv_text(["n", "t", "statistic", "reference", "abs_error", "mc_se"], rows), output)
    else:
        _write(dumps(out) + "\n", output)


def cmd_fourier(cfg: dict, seed: int, fmt: str, output, threads: int) -> None:
    fb = cfg.get("fourier", {})
    kernel = fk.build_theta(fb.get("grid_half_width", 40.0), fb.get("grid_points", 8193))
    out = {"command": "fourier", "seed": seed, "theta_integral": kernel.integral(),
           "theta_min": float(kernel.values.min()), "sweep": []}
    rows = []
    for delta in fb.get("deltas", [0.4, 0.2, 0.1, 0.05]):
        sw = fk.make_sandwich(fk.triangle, delta)
        bp = fk.band_limit_ratio(sw.phi_plus, delta**-2)
        bm = fk.band_limit_ratio(sw.phi_minus, delta**-2)
        rec = {"delta": delta, "l1_gap": sw.l1_gap, "c": sw.c, "c_delta": sw.c_delta,
               "ordering_violation": sw.ordering_violation(), "band_limit_plus": bp, "band_limit_minus": bm}
        out["sweep"].append(rec)
        rows.append([float(delta), sw.l1_gap, sw.c_delta, sw.ordering_violation(), bp, bm])
    if fmt == "csv":
        _write(_csv_text(["delta", "l1_gap", "c_delta", "ordering_violation", "band_limit_plus",
                          "band_limit_minus"], rows), output)
    else:
        _write(dumps(out) + "\n", output)


COMMANDS = {"lyapunov": cmd_lyapunov, "spectrum": cmd_spectrum, "llt": cmd_llt, "fourier": cmd_fourier}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sl2lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--output")
        p.add_argument("--format", choices=["json", "csv"])
        p.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is None:
            raise ConfigError("an explicit seed is required (--seed or config 'seed')")
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        fmt = args.format or cfg.get("output_format", "json")
        output = args.output or cfg.get("output_path")
        COMMANDS[args.command](cfg, seed, fmt, output, args.threads)
    except ValueError as exc:  # ConfigError and invalid parameter values
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc} (last change {exc.last_change:.3e})", file=sys.stderr)
        return EXIT_NONCONV
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
