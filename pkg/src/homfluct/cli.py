"""Batch command line: subcommand dispatch, config handling, JSON-lines output.

Config precedence is flag > config-file > default.  The config file is INI
text with one section per subcommand (``[qtensor]`` etc.) holding flat
``key = value`` entries named like the long flags.  Records stream as JSON
lines; payloads are bit-for-bit reproducible for a fixed seed, so timing
information is only attached behind ``--timing``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 inconclusive witness search.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import fluctuation, gff, green, markov
from . import corrector as corr
from .errors import (
    ConfigError,
    DomainError,
    EllipticityError,
    FitError,
    InconclusiveWitnessError,
    QuadratureError,
    SolverError,
)
from .lattice import SiteField, TorusGrid
from .spd import SpdMatrix

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4


# ---------------------------------------------------------------------------
# option table

def _parse_floats(text):
    return [float(v) for v in str(text).split(",") if v != ""]


def _parse_ints(text):
    return [int(v) for v in str(text).split(",") if v != ""]


def _parse_matrix(text):
    """d x d matrix from 'diag:a,b,c', a scalar, or d*d row-major entries."""
    text = str(text).strip()
    if text.startswith("diag:"):
        return np.diag(_parse_floats(text[5:]))
    vals = _parse_floats(text)
    if len(vals) == 1:
        return vals[0] * np.eye(3)
    n = int(round(len(vals) ** 0.5))
    if n * n != len(vals):
        raise ConfigError(f"matrix needs a square number of entries, got {len(vals)}")
    return np.asarray(vals).reshape(n, n)


@dataclass(frozen=True)
class Opt:
    name: str
    typ: object
    default: object = None
    help: str = ""
    required: bool = False


_COMMON = [
    Opt("out", str, None, "output path for JSON lines (default stdout)"),
    Opt("threads", int, None, "worker count; execution order is fixed so "
        "records do not depend on it"),
    Opt("timing", bool, False, "attach wall-clock seconds to each record"),
]

OPTIONS: dict[str, list[Opt]] = {
    "green": [
        Opt("d", int, 3, "lattice dimension (>= 3 for lam = 0)"),
        Opt("lam", float, 0.0, "mass of (lam - Laplace)"),
        Opt("radius", int, 8, "cache radius of the Green table"),
        Opt("quad-order", int, 8, "Gauss-Legendre order per cell"),
        Opt("hessian-radius", int, 0, "radius for the Hessian L2 sums (0: skip)"),
        Opt("decay-lams", _parse_floats, None, "masses for the triple-gradient fit"),
        Opt("decay-radius", int, 12, "ray length for the decay fit"),
    ],
    "corrector": [
        Opt("L", int, 16, "torus side length (even, >= 4)"),
        Opt("d", int, 3, "lattice dimension"),
        Opt("tau", float, 0.1, "ellipticity contrast in [0, 1)"),
        Opt("profile", str, "tanh", "registered profile name"),
        Opt("lam", float, 0.0, "mass (0 solves in the mean-zero subspace)"),
        Opt("tol", float, 1e-10, "relative residual target"),
        Opt("seeds", _parse_ints, [0], "comma-separated environment seeds"),
        Opt("directions", _parse_ints, None, "1-based directions (default all)"),
    ],
    "qtensor": [
        Opt("L", int, 16, "torus side length"),
        Opt("d", int, 3, "lattice dimension"),
        Opt("tau", float, 0.05, "ellipticity contrast in [0, 1)"),
        Opt("xi", _parse_floats, [1.0, 0.0, 0.0], "direction of the corrector"),
        Opt("lam", float, None, "mass; default 4 / L^2"),
        Opt("samples", int, 100, "number of environments"),
        Opt("inner", int, 2, "resolvent resamples per node (antithetic pairs)"),
        Opt("t-nodes", int, 16, "quadrature nodes for the semigroup integral"),
        Opt("profile", str, "tanh", "registered profile name"),
        Opt("seed", int, 0, "base seed"),
    ],
    "expansion": [
        Opt("check", str, None, "one of c0 | c1 | c2", required=True),
        Opt("profile", str, "tanh", "registered profile name"),
        Opt("xi", _parse_floats, [1.0, 1.0, 0.0], "quadratic-form direction"),
        Opt("i", int, 1, "1-based row index"),
        Opt("j", int, 2, "1-based column index"),
        Opt("L", int, 12, "torus side for the Monte Carlo route"),
        Opt("taus", _parse_floats, [0.02, 0.04, 0.06, 0.08, 0.10, 0.12],
            "contrast grid for the fit"),
        Opt("lam", float, None, "mass; default 4 / L^2"),
        Opt("samples", int, 200, "environments for the Monte Carlo route"),
        Opt("inner", int, 2, "resolvent resamples per node"),
        Opt("t-nodes", int, 16, "semigroup quadrature nodes"),
        Opt("degree", int, 3, "fit degree in tau"),
        Opt("radius", int, 24, "Green-sum radius for the c2 closed form"),
        Opt("quad-order", int, 8, "Green quadrature order"),
        Opt("seed", int, 0, "base seed"),
    ],
    "gff-sample": [
        Opt("L", int, 16, "torus side length"),
        Opt("d", int, 3, "lattice dimension"),
        Opt("abar", _parse_matrix, np.eye(3), "effective matrix entries"),
        Opt("q", _parse_matrix, np.eye(3), "noise covariance entries"),
        Opt("samples", int, 1, "number of realisations"),
        Opt("seed", int, 0, "base seed"),
        Opt("mask", str, "none", "domain split: none | half | ball"),
        Opt("mask-param", float, 0.25, "ball radius as a fraction of L"),
        Opt("dump-fields", str, None, "path prefix for raw float64 dumps"),
    ],
    "markov-test": [
        Opt("abar", _parse_matrix, None, "effective matrix entries", required=True),
        Opt("q", _parse_matrix, None, "noise covariance entries", required=True),
        Opt("normal", _parse_floats, [0.0, 0.0, 1.0], "half-space normal"),
        Opt("offset", float, 0.0, "half-space offset"),
        Opt("tol", float, 1e-10, "proportionality tolerance"),
    ],
    "matrix-lemma": [
        Opt("a", _parse_matrix, None, "symmetric matrix entries", required=True),
        Opt("tol", float, 1e-10, "divisibility residual tolerance"),
    ],
}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    params: dict = field(default_factory=dict)

    def echo(self) -> dict:
        out = {}
        for k, v in sorted(self.params.items()):
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
            else:
                out[k] = v
        return out


def _coerce(opt: Opt, raw):
    if raw is None:
        return None
    try:
        if opt.typ is bool:
            if isinstance(raw, bool):
                return raw
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
        if callable(opt.typ) and opt.typ not in (int, float, str):
            return opt.typ(raw)
        return opt.typ(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"option --{opt.name}: cannot parse {raw!r}: {exc}")


def parse_config(argv, config_text: str | None = None) -> RunConfig:
    """Build a validated RunConfig from an argument vector and optional file text.

    Flags override file values; unknown keys in either source are rejected.
    """
    if not argv:
        raise ConfigError(f"missing subcommand; choose from {sorted(OPTIONS)}")
    sub = argv[0]
    if sub in ("-h", "--help"):
        _root_parser().parse_args(["--help"])
    if sub not in OPTIONS:
        raise ConfigError(f"unknown subcommand {sub!r}; choose from {sorted(OPTIONS)}")

    opts = OPTIONS[sub] + _COMMON
    by_name = {o.name: o for o in opts}

    parser = argparse.ArgumentParser(prog=f"homfluct {sub}", add_help=True)
    parser.add_argument("--config", default=None, help="INI config file")
    for o in opts:
        if o.typ is bool:
            parser.add_argument(f"--{o.name}", action="store_true", default=None,
                                help=o.help)
        else:
            parser.add_argument(f"--{o.name}", default=None, help=o.help)
    try:
        ns = parser.parse_args(argv[1:])
    except SystemExit as exc:
        if exc.code not in (0, None):
            raise ConfigError("invalid arguments") from None
        raise

    params = {o.name: o.default for o in opts}

    file_text = config_text
    if ns.config is not None:
        with open(ns.config, "r", encoding="utf-8") as fh:
            file_text = fh.read()
    if file_text is not None:
        ini = configparser.ConfigParser()
        ini.optionxform = str  # keys are case-sensitive flag names (e.g. L)
        ini.read_string(file_text)
        for section in ini.sections():
            if section not in (sub, "global"):
                continue
            for key, value in ini.items(section):
                key = key.replace("_", "-")
                if key not in by_name:
                    raise ConfigError(f"unknown key {key!r} in config section [{section}]")
                params[key] = _coerce(by_name[key], value)

    for o in opts:
        raw = getattr(ns, o.name.replace("-", "_"))
        if raw is not None:
            params[o.name] = _coerce(o, raw)

    for o in opts:
        if o.required and params.get(o.name) is None:
            raise ConfigError(f"option --{o.name} is required for {sub}")

    _validate(sub, params)
    return RunConfig(sub, params)


def _validate(sub: str, p: dict):
    def bad(msg):
        raise ConfigError(f"{sub}: {msg}")

    if "tau" in p and p["tau"] is not None and not 0.0 <= p["tau"] < 1.0:
        bad(f"tau = {p['tau']} violates the ellipticity constraint tau in [0, 1)")
    if "taus" in p and p["taus"] is not None:
        if any(not 0.0 < t < 1.0 for t in p["taus"]):
            bad("every tau in the grid must lie in (0, 1)")
    if "L" in p and p["L"] is not None and (p["L"] < 4 or p["L"] % 2):
        bad(f"L = {p['L']} must be an even integer >= 4")
    if "d" in p and p["d"] is not None and p["d"] < 1:
        bad("dimension must be >= 1")
    if sub == "green":
        if p["lam"] < 0:
            bad("mass lam must be >= 0")
        if p["lam"] == 0 and p["d"] <= 2:
            bad("lam = 0 requires d >= 3 (transient walk)")
        if p["radius"] < 1:
            bad("radius must be >= 1")
    if "samples" in p and p["samples"] is not None and p["samples"] < 1:
        bad("samples must be >= 1")
    if "inner" in p and p["inner"] is not None and p["inner"] < 2:
        bad("inner must be >= 2 (antithetic pairs)")
    if "lam" in p and p["lam"] is not None and p["lam"] < 0:
        bad("mass lam must be >= 0")
    if sub == "expansion":
        if p["check"] not in ("c0", "c1", "c2"):
            bad(f"check = {p['check']!r} must be one of c0 | c1 | c2")
        if not 1 <= p["i"] <= len(p["xi"]) or not 1 <= p["j"] <= len(p["xi"]):
            bad("indices i, j must be 1-based directions within xi's dimension")
        if p["check"] in ("c1", "c2") and p["i"] == p["j"]:
            bad(f"check {p['check']} is an off-diagonal statement; need i != j")
    if sub == "gff-sample":
        if p["mask"] not in ("none", "half", "ball"):
            bad("mask must be none | half | ball")
        a = np.asarray(p["abar"]); q = np.asarray(p["q"])
        for name, m in (("abar", a), ("q", q)):
            if m.shape != (p["d"], p["d"]):
                bad(f"{name} must be {p['d']}x{p['d']}")
            if np.linalg.eigvalsh(0.5 * (m + m.T)).min() <= 0:
                bad(f"{name} must be symmetric positive definite")
    if sub == "markov-test":
        for name in ("abar", "q"):
            m = np.asarray(p[name])
            if np.linalg.eigvalsh(0.5 * (m + m.T)).min() <= 0:
                bad(f"{name} must be symmetric positive definite")
        if not any(v != 0 for v in p["normal"]):
            bad("half-space normal must be nonzero")


# ---------------------------------------------------------------------------
# record plumbing

class _Emitter:
    def __init__(self, config: RunConfig, stream):
        self.config = config
        self.stream = stream
        blob = json.dumps([config.subcommand, config.echo()], sort_keys=True)
        self.run_id = hashlib.sha256(blob.encode()).hexdigest()[:12]
        self.t0 = time.monotonic()

    def emit(self, payload: dict):
        record = {
            "schema_version": SCHEMA_VERSION,
            "artifact_version": __version__,
            "run_id": self.run_id,
            "subcommand": self.config.subcommand,
            "config": self.config.echo(),
            "payload": payload,
        }
        if self.config.params.get("timing"):
            record["wall_clock_s"] = round(time.monotonic() - self.t0, 6)
        self.stream.write(json.dumps(record, sort_keys=True) + "\n")
        self.stream.flush()


# ---------------------------------------------------------------------------
# subcommand runners

def _run_green(p, emit):
    table = green.GreenTable(d=p["d"], lam=p["lam"], radius=p["radius"],
                             quad_order=p["quad-order"])
    origin = tuple([0] * p["d"])
    box_r = min(4, p["radius"] - 1)
    pts = np.stack(np.meshgrid(*([np.arange(-box_r, box_r + 1)] * p["d"]),
                               indexing="ij"), axis=-1).reshape(-1, p["d"])
    delta_resid = max(abs(table.delta_residual(x)) for x in pts)
    payload = {
        "green_at_origin": table(origin),
        "quad_error": table.quad_error,
        "delta_residual_max": delta_resid,
        "radius": p["radius"],
    }
    if p["hessian-radius"] >= 2:
        S, tail = green.hessian_l2_sum(0, 1 % p["d"], p["lam"], p["hessian-radius"],
                                       d=p["d"], table=table)
        payload["hessian_l2_sum_01"] = S
        payload["hessian_l2_tail"] = tail
        payload["row_sums"] = {
            str(R): green.hessian_row_sum(table, 0, 1 % p["d"], R)
            for R in (4, 8, 16) if R + 2 <= p["radius"]
        }
    emit.emit(payload)
    if p["decay-lams"]:
        fits = green.triple_grad_decay_check(p["decay-lams"], R=p["decay-radius"],
                                             d=p["d"], quad_order=p["quad-order"])
        for lam, fit in fits.items():
            emit.emit({"decay_fit": fit, "lam": lam})


def _run_corrector(p, emit):
    grid = TorusGrid(p["d"], p["L"])
    profile = corr.get_profile(p["profile"])
    dirs = p["directions"] or list(range(1, p["d"] + 1))
    if any(not 1 <= k <= p["d"] for k in dirs):
        raise ConfigError(f"directions must be 1-based in 1..{p['d']}")
    for seed in p["seeds"]:
        a = corr.sample_conductance(grid, profile, p["tau"], seed)
        sols = [corr.solve_corrector(a, np.eye(p["d"])[k - 1], lam=p["lam"],
                                     tol=p["tol"]) for k in dirs]
        payload = {
            "seed": seed,
            "residual": max(s.residual for s in sols),
            "iterations": [s.iterations for s in sols],
        }
        if len(dirs) == p["d"]:
            d = p["d"]
            m = np.empty((d, d))
            for jj, sol in enumerate(sols):
                flux = a.values * (np.asarray(sol.gradient.values)
                                   + np.eye(d)[jj].reshape((d,) + (1,) * d))
                m[:, jj] = flux.reshape(d, -1).mean(axis=1)
            payload["abar_sample"] = (0.5 * (m + m.T)).tolist()
        emit.emit(payload)


def _run_qtensor(p, emit):
    grid = TorusGrid(p["d"], p["L"])
    profile = corr.get_profile(p["profile"])
    xi = np.asarray(p["xi"], dtype=float)
    est = fluctuation.q_tensor_mc(
        grid, profile, p["tau"], xi, lam=p["lam"], n_env=p["samples"],
        t_nodes=p["t-nodes"], inner=p["inner"], seed=p["seed"],
    )
    emit.emit({
        "matrix": est.matrix.tolist(),
        "stderr": est.stderr.tolist(),
        "meta": est.meta,
    })


def _run_expansion(p, emit):
    profile = corr.get_profile(p["profile"])
    xi = np.asarray(p["xi"], dtype=float)
    i, j = p["i"] - 1, p["j"] - 1
    if p["check"] == "c0":
        mat = fluctuation.c0(profile, xi)
        emit.emit({"check": "c0", "matrix": mat.tolist(),
                   "b_second_moment": profile.second_moment()})
        return
    if p["check"] == "c2":
        value, report = fluctuation.c2_offdiag(profile, xi, i, j,
                                               R=p["radius"],
                                               quad_order=p["quad-order"])
        emit.emit({"check": "c2", "value": value, "report": report,
                   "i": p["i"], "j": p["j"]})
        return
    grid = TorusGrid(p["d"] if "d" in p else len(xi), p["L"])
    fit = fluctuation.c1_check(profile, xi, i, j, grid, taus=p["taus"],
                               lam=p["lam"], n_env=p["samples"],
                               t_nodes=p["t-nodes"], inner=p["inner"],
                               seed=p["seed"], degree=p["degree"])
    emit.emit({
        "check": "c1",
        "coefficients": fit.coeffs.tolist(),
        "stderr": fit.stderr.tolist(),
        "linear": fit.linear,
        "intercept": fit.intercept,
        "quadratic": fit.quadratic,
        "taus": list(map(float, fit.taus)),
        "meta": fit.meta,
    })


def _make_mask(grid: TorusGrid, kind: str, param: float) -> np.ndarray | None:
    if kind == "none":
        return None
    if kind == "half":
        mask = np.zeros(grid.site_shape, dtype=bool)
        sl = [slice(None)] * grid.d
        sl[0] = slice(0, grid.L // 2)
        mask[tuple(sl)] = True
        return mask
    coords = np.stack(np.meshgrid(*([np.arange(grid.L)] * grid.d), indexing="ij"),
                      axis=-1)
    dist = np.abs(coords - grid.L // 2)
    dist = np.minimum(dist, grid.L - dist)
    return (np.linalg.norm(dist, axis=-1) <= param * grid.L)


def _run_gff(p, emit):
    grid = TorusGrid(p["d"], p["L"])
    spec = gff.GffSpec(SpdMatrix(p["abar"]), SpdMatrix(p["q"]), grid, seed=p["seed"])
    mask = _make_mask(grid, p["mask"], p["mask-param"])
    for n in range(p["samples"]):
        if mask is None:
            s = gff.sample_gff(spec, extra_stream=(n,))
            payload = {
                "sample": n,
                "phi_l2": float(np.linalg.norm(s.phi.values)),
                "phi_mean": float(s.phi.values.mean()),
                "helmholtz_residual": gff.helmholtz_residual(s),
            }
            if p["dump-fields"]:
                path = f"{p['dump-fields']}.phi.{n}.f64"
                with open(path, "wb") as fh:
                    fh.write(s.phi.to_bytes())
                payload["dump"] = path
        else:
            sA, sAc = gff.sample_gff_restricted(spec, mask, extra_stream=(n,))
            full = gff.sample_gff(spec, extra_stream=(n,))
            payload = {
                "sample": n,
                "additivity_gap": float(np.abs(
                    sA.phi.values + sAc.phi.values - full.phi.values).max()),
                "harmonicity_residual": gff.harmonicity_check(
                    sA.phi, spec.abar, mask),
                "phi_A_l2": float(np.linalg.norm(sA.phi.values)),
                "phi_Ac_l2": float(np.linalg.norm(sAc.phi.values)),
            }
        emit.emit(payload)


def _run_markov(p, emit):
    abar = SpdMatrix(p["abar"])
    Q = SpdMatrix(p["q"])
    half = markov.HalfSpace(np.asarray(p["normal"], dtype=float), p["offset"])
    res = markov.nonlocality_witness(abar, Q, half, tol=p["tol"])
    if res.verdict == "proportional":
        emit.emit({"verdict": "proportional"})
        return
    emit.emit({
        "verdict": "witness",
        "f1": {"center": res.f1.center.tolist(), "radius": res.f1.radius},
        "f2": {"center": res.f2.center.tolist(), "radius": res.f2.radius},
        "value": res.value,
        "error": res.error,
    })


def _run_matrix_lemma(p, emit):
    v = markov.quartic_divisibility(np.asarray(p["a"], dtype=float), tol=p["tol"])
    payload = {
        "verdict": "multiple_of_identity" if v.divisible else "not_divisible",
        "residual": v.residual,
        "eigen_spread": v.eigen_spread,
    }
    if v.divisible:
        payload["c"] = v.c
        payload["B"] = v.B.tolist()
    emit.emit(payload)


_RUNNERS = {
    "green": _run_green,
    "corrector": _run_corrector,
    "qtensor": _run_qtensor,
    "expansion": _run_expansion,
    "gff-sample": _run_gff,
    "markov-test": _run_markov,
    "matrix-lemma": _run_matrix_lemma,
}


def _root_parser():
    parser = argparse.ArgumentParser(
        prog="homfluct",
        description="Lattice Green functions, correctors, fluctuation tensors, "
                    "generalized GFFs, and the locality dichotomy.",
    )
    parser.add_argument("subcommand", choices=sorted(OPTIONS),
                        help="run `homfluct <subcommand> --help` for options")
    return parser


def run(config: RunConfig, stream=None) -> int:
    """Dispatch a validated config; streams records, returns the exit code."""
    out_path = config.params.get("out")
    if out_path is None:
        out_dir = os.environ.get("HOMFLUCT_OUTDIR")
        stream_ = stream or sys.stdout
        close = False
        if out_dir and stream is None:
            os.makedirs(out_dir, exist_ok=True)
            out_path = os.path.join(out_dir, f"{config.subcommand}.jsonl")
    if out_path is not None and stream is None:
        stream_ = open(out_path, "w", encoding="utf-8")
        close = True
    elif stream is not None:
        stream_ = stream
        close = False
    emitter = _Emitter(config, stream_)
    try:
        _RUNNERS[config.subcommand](config.params, emitter)
        return EXIT_OK
    except InconclusiveWitnessError as exc:
        emitter.emit({"error": str(exc), "error_class": type(exc).__name__})
        return EXIT_INCONCLUSIVE
    except (SolverError, QuadratureError, FitError, DomainError,
            EllipticityError) as exc:
        emitter.emit({"error": str(exc), "error_class": type(exc).__name__})
        return EXIT_NUMERICAL
    finally:
        if close:
            stream_.close()


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "HOMFLUCT_THREADS" in os.environ and argv and argv[0] in OPTIONS:
        if not any(a.startswith("--threads") for a in argv):
            argv += ["--threads", os.environ["HOMFLUCT_THREADS"]]
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
