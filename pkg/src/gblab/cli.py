"""Command-line driver: configs in, reproducible report files out.

Configuration files are flat ``key = value`` text ('#' starts a comment).
Each experiment kind is a subcommand; the config is fully echoed into
every output file together with the artifact version and the sha256 of
the canonicalized config, and identical configs produce byte-identical
outputs.  Progress goes to stderr; stdout carries one machine-readable
JSON summary line.  Exit codes: 0 success, 2 validation failure, 3
numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import estimator as est
from . import exterior as ext
from . import geometry as geo
from . import stochastic as st
from .errors import (
    CalibrationRankError,
    ConfigError,
    GblabError,
    NumericalAbortError,
    SeriesConvergenceError,
)

EXPERIMENTS = ("estimate-chi", "local-limit", "calibrate", "cancellation-suite", "diagnostics")

OUTPUT_DIR_ENV = "GBLAB_OUTPUT_DIR"

# key -> (parser, experiments that accept it, required-for, default)
_ALL = EXPERIMENTS


def _parse_bool(s):
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_float_list(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _parse_int_list(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _parse_str_list(s):
    return [v.strip() for v in s.split(",") if v.strip()]


CONFIG_SCHEMA = {
    "experiment": (str, _ALL, (), None),
    "seed": (int, _ALL, _ALL, None),
    "output_dir": (str, _ALL, (), "out"),
    "formats": (_parse_str_list, _ALL, (), ["json"]),
    "workers": (int, _ALL, (), 0),
    "model": (str, ("estimate-chi", "local-limit", "diagnostics"), ("estimate-chi", "local-limit"), None),
    "model.dimension": (int, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "model.radius": (float, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "model.aperture": (float, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "model.sphere_dim": (int, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "model.ball_dim": (int, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "model.sphere_radius": (float, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "model.ball_radius": (float, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "model.length": (float, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "model.circumference": (float, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "t": (float, ("estimate-chi",), ("estimate-chi",), None),
    "t_sequence": (_parse_float_list, ("local-limit",), ("local-limit",), None),
    "base_points": (int, ("estimate-chi",), ("estimate-chi",), None),
    "bridges": (int, ("estimate-chi", "local-limit"), ("estimate-chi", "local-limit"), None),
    "steps": (int, ("estimate-chi", "local-limit", "diagnostics"), (), None),
    "stratify": (_parse_bool, ("estimate-chi",), (), True),
    "drift": (str, ("estimate-chi", "local-limit"), (), "reflected"),
    "lam_scale": (float, ("estimate-chi", "local-limit", "diagnostics"), (), st.DEFAULT_LAM_SCALE),
    "point": (str, ("local-limit",), (), "interior"),
    "depth_nodes": (int, ("local-limit",), (), 10),
    "dimension": (int, ("calibrate",), ("calibrate",), None),
    "dims": (_parse_int_list, ("cancellation-suite",), (), [2, 3, 4, 5, 6]),
    "instances": (int, ("cancellation-suite",), (), 100),
    "tolerance": (float, ("cancellation-suite",), (), 1e-10),
    "samples": (int, ("diagnostics",), (), 2000),
}

_MODEL_PARAM_KEYS = [k for k in CONFIG_SCHEMA if k.startswith("model.")]


def parse_config_text(text: str) -> dict:
    """Parse 'key = value' lines into raw string values."""
    raw = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {ln}: empty key or value")
        if key in raw:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve_config(raw: dict, experiment: str | None) -> dict:
    """Validate and type a raw config for the given experiment kind."""
    if experiment is None:
        experiment = raw.get("experiment")
    if experiment is None:
        raise ConfigError("missing required key: experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    if "experiment" in raw and raw["experiment"] != experiment:
        raise ConfigError(
            f"config sets experiment = {raw['experiment']!r} but the subcommand is {experiment!r}"
        )
    cfg = {"experiment": experiment}
    for key, value in raw.items():
        if key == "experiment":
            continue
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        parser, accepted, _, _ = CONFIG_SCHEMA[key]
        if experiment not in accepted:
            raise ConfigError(f"config key {key!r} does not apply to experiment {experiment!r}")
        try:
            cfg[key] = parser(value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    for key, (_, accepted, required_for, default) in CONFIG_SCHEMA.items():
        if key in cfg:
            continue
        if experiment in required_for:
            raise ConfigError(f"missing required key: {key}")
        if experiment in accepted and default is not None:
            cfg[key] = default
    return cfg


def build_model(cfg: dict) -> geo.ManifoldModel:
    params = {}
    for key in _MODEL_PARAM_KEYS:
        if key in cfg and cfg[key] is not None:
            params[key.split(".", 1)[1]] = cfg[key]
    return geo.model_catalog(cfg["model"], **params)


# ---------------------------------------------------------------------------
# canonical rendering
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    return format(x, ".17g")


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)) or isinstance(obj, np.ndarray):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(f"{json.dumps(k)}:{canonical_json(v)}" for k, v in items) + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def config_canonical_text(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(config_canonical_text(cfg).encode()).hexdigest()


CSV_COLUMNS = ("t", "value", "stderr", "analytic", "ratio")


def report_render(payload: dict, outdir: Path, stem: str, formats, cfg: dict) -> list:
    """Write the report files; identical payload and config give identical bytes.

    Timing fields are deliberately excluded from rendered files so reruns
    of the same seed and config are byte-identical.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    meta = {
        "artifact_version": __version__,
        "config_sha256": config_hash(cfg),
        "config": {k: v for k, v in cfg.items()},
    }
    body = dict(payload)
    body.pop("wall_time_seconds", None)
    body.update(meta)
    written = []
    if "json" in formats:
        path = outdir / f"{stem}.json"
        path.write_text(canonical_json(body) + "\n", encoding="utf-8")
        written.append(path)
    if "csv" in formats and "rows" in payload:
        path = outdir / f"{stem}.csv"
        lines = [f"# gblab {__version__} config_sha256={meta['config_sha256']}"]
        lines.append(",".join(CSV_COLUMNS))
        for row in payload["rows"]:
            lines.append(
                ",".join(
                    _fmt_float(float(row[c])) if row[c] is not None else "nan"
                    for c in CSV_COLUMNS
                )
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _run_estimate_chi(cfg):
    model = build_model(cfg)
    workers = cfg["workers"] if cfg["workers"] > 0 else (os.cpu_count() or 1)
    _progress(f"estimate-chi: {model!r} t={cfg['t']} base_points={cfg['base_points']} "
              f"bridges={cfg['bridges']} workers={workers}")
    report = est.estimate_chi(
        model, cfg["t"], cfg["base_points"], cfg["bridges"], cfg["seed"],
        steps=cfg.get("steps"), stratify=cfg["stratify"], workers=workers,
        drift=cfg["drift"], lam_scale=cfg["lam_scale"], config=cfg,
    )
    return report.to_dict()


def _run_local_limit(cfg):
    model = build_model(cfg)
    if cfg["point"] == "boundary":
        point = model.boundary_point()
    elif cfg["point"] == "interior":
        point = model.interior_point() if hasattr(model, "interior_point") else None
        if point is None:
            pts = model.sample_volume(st.RngStream(cfg["seed"], 9999).generator(), 256)
            point = pts[np.argmax(model.boundary_distance(pts))]
    else:
        raise ConfigError("config key 'point' must be 'interior' or 'boundary'")
    constants = est.calibrate_constants(model.dimension)
    _progress(f"local-limit: {model!r} at {cfg['point']} point, t in {cfg['t_sequence']}")
    table = est.local_limit_check(
        model, point, cfg["t_sequence"], cfg["bridges"], cfg["seed"],
        steps=cfg.get("steps") or 400, constants=constants,
        depth_nodes=cfg["depth_nodes"], drift=cfg["drift"], lam_scale=cfg["lam_scale"],
    )
    return table.to_dict()


def _run_calibrate(cfg):
    table = est.calibrate_constants(cfg["dimension"])
    payload = table.to_dict()
    payload["experiment"] = "calibrate"
    even = cfg["dimension"] if cfg["dimension"] % 2 == 0 else cfg["dimension"] + 1
    ratio, cv = est.pfaffian_ratio(even)
    payload["pfaffian_ratios"][str(even)] = ratio
    payload["pfaffian_ratio_cv"] = cv
    return payload


def _run_cancellation_suite(cfg):
    rng = np.random.default_rng(cfg["seed"])
    tol = cfg["tolerance"]
    cases = 0
    failures = 0
    worst = 0.0
    for n in cfg["dims"]:
        for algebra_dim, bound in ((n, n), (n - 1, n - 1)):
            if algebra_dim < 1:
                continue
            for i in range(0, algebra_dim // 2 + 1):
                for j in range(0, bound - 2 * i):
                    if i == 0 and j == 0:
                        continue
                    for _ in range(cfg["instances"]):
                        op = ext.GradedOperator.identity(algebra_dim)
                        for _k in range(i):
                            T = rng.standard_normal((algebra_dim, algebra_dim))
                            U = rng.standard_normal((algebra_dim, algebra_dim))
                            T /= np.linalg.norm(T)
                            U /= np.linalg.norm(U)
                            op = op @ ext.pair_extend([(T, U, 1.0)])
                        for _k in range(j):
                            B = rng.standard_normal((algebra_dim, algebra_dim))
                            B = (B - B.T) / np.linalg.norm(B)
                            op = op @ ext.derivation_extend(B)
                        val = abs(ext.supertrace(op))
                        cases += 1
                        worst = max(worst, val)
                        if val > tol:
                            failures += 1
    summary = f"{failures} failures"
    _progress(f"cancellation-suite: {cases} cases, {summary}, worst |Str| = {worst:.3e}")
    return {
        "experiment": "cancellation-suite",
        "dims": cfg["dims"],
        "instances": cfg["instances"],
        "tolerance": tol,
        "cases": cases,
        "failures": failures,
        "worst_abs_supertrace": worst,
        "summary": summary,
    }


def _run_diagnostics(cfg):
    seed = cfg["seed"]
    samples = cfg["samples"]
    checks = []

    disk = geo.model_catalog("ball", dimension=2)
    z = np.broadcast_to(np.array([1.0, 0.0]), (samples, 2)).copy()
    ts = np.array([1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1])
    total_steps = 2000
    marks = [int(round(total_steps * ti / ts[-1])) for ti in ts]
    _, lam_at, _ = st.simulate_free_walks(disk, z, ts[-1], total_steps,
                                          st.RngStream(seed, 1), checkpoints=set(marks))
    means = np.array([lam_at[m].mean() for m in marks])
    slope = float(np.polyfit(np.log(ts), np.log(means), 1)[0])
    checks.append({"name": "local_time_exponent", "value": slope,
                   "target": 0.5, "tolerance": 0.05, "passed": abs(slope - 0.5) < 0.05})

    hemi = geo.model_catalog("hemisphere", dimension=2)
    anchor = hemi.interior_point()
    hol_means = []
    hol_ts = [1e-3, 1e-2, 1e-1]
    for i, t in enumerate(hol_ts):
        anchors = np.broadcast_to(anchor, (samples, 3)).copy()
        batch = st.simulate_bridges(hemi, anchors, t, 150, st.RngStream(seed, 10 + i))
        O = batch.factor_O["cap"]
        hol_means.append(float(np.linalg.norm(O - np.eye(2), axis=(1, 2)).mean()))
    hslope = float(np.polyfit(np.log(hol_ts), np.log(hol_means), 1)[0])
    checks.append({"name": "holonomy_slope", "value": hslope,
                   "target": 1.0, "tolerance": 0.2, "passed": abs(hslope - 1.0) < 0.2})

    rho = 0.4
    x = np.array([0.3, 0.0])
    fracs = [
        st.confinement_fraction(disk, x, rho, tt, samples, st.RngStream(seed, 20 + i))
        for i, tt in enumerate([rho**2 / 6.0, rho**2 / 25.0, rho**2 / 100.0])
    ]
    margin = 2.0 * math.sqrt(0.25 / samples)
    conf_ok = fracs[1] >= fracs[0] - margin and fracs[2] >= fracs[1] - margin
    checks.append({"name": "confinement_monotone", "value": fracs,
                   "target": "nondecreasing as t decreases", "passed": bool(conf_ok)})

    gaps_ok = True
    gap_sets = []
    pseed = 0
    while len(gap_sets) < 3 and pseed < 30:
        path = st.simulate_path(disk, np.array([1.0, 0.0]), 0.04, 150,
                                st.RngStream(seed, 30 + pseed))
        pseed += 1
        if path.contact.sum() < 3:
            # the comparison needs boundary contacts with positive local time
            continue
        M_exact = st.evolve_functional(path, mode="exact-jump")
        gaps = []
        for eps_val in (1e-1, 1e-2, 1e-3):
            M_eps = st.evolve_functional(path, mode="epsilon", eps=eps_val)
            gaps.append(float(np.linalg.norm(M_eps.mat - M_exact.mat, 2)))
        gap_sets.append(gaps)
        gaps_ok = gaps_ok and gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-2
    checks.append({"name": "epsilon_jump_convergence", "value": gap_sets,
                   "target": "monotone gap, < 1e-2 at eps = 1e-3", "passed": bool(gaps_ok)})

    passed = all(c["passed"] for c in checks)
    _progress(f"diagnostics: {'all checks passed' if passed else 'CHECK FAILURES'}")
    return {"experiment": "diagnostics", "samples": samples, "checks": checks,
            "passed": bool(passed)}


_RUNNERS = {
    "estimate-chi": _run_estimate_chi,
    "local-limit": _run_local_limit,
    "calibrate": _run_calibrate,
    "cancellation-suite": _run_cancellation_suite,
    "diagnostics": _run_diagnostics,
}


def run(config_path, experiment: str | None = None, output_dir=None) -> int:
    """Execute one experiment from a config file; returns the exit code."""
    try:
        text = Path(config_path).read_text(encoding="utf-8")
    except OSError as exc:
        print(canonical_json({"error": {"kind": "config", "message": str(exc)}}))
        return 2
    try:
        cfg = resolve_config(parse_config_text(text), experiment)
        outdir = output_dir or os.environ.get(OUTPUT_DIR_ENV) or cfg["output_dir"]
        payload = _RUNNERS[cfg["experiment"]](cfg)
    except (ConfigError, CalibrationRankError) as exc:
        print(canonical_json({"error": {"kind": "validation", "message": str(exc)}}))
        return 2
    except (NumericalAbortError, SeriesConvergenceError) as exc:
        detail = {"kind": "numerical", "message": str(exc)}
        rate = getattr(exc, "rate", None)
        if rate is not None:
            detail["resample_rate"] = rate
        terms = getattr(exc, "required_terms", None)
        if terms is not None:
            detail["required_terms"] = terms
        print(canonical_json({"error": detail}))
        return 3
    except GblabError as exc:
        print(canonical_json({"error": {"kind": "validation", "message": str(exc)}}))
        return 2
    files = report_render(payload, Path(outdir), cfg["experiment"], cfg["formats"], cfg)
    summary = {
        "experiment": cfg["experiment"],
        "config_sha256": config_hash(cfg),
        "files": [str(f) for f in files],
    }
    for key in ("estimate", "stderr", "reference", "failures", "passed"):
        if key in payload:
            summary[key] = payload[key]
    print(canonical_json(summary))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gblab",
        description="Monte Carlo laboratory for Euler-characteristic curvature integrals",
    )
    parser.add_argument("--version", action="version", version=f"gblab {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("config", help="path to a key = value config file")
        p.add_argument("--output-dir", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    return run(args.config, args.experiment, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
