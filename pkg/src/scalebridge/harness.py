"""Declarative experiment runner.

Every capability of the library is exposed as a named experiment with a
typed parameter schema.  A config (INI-style sections or a JSON mirror)
selects the experiment and its parameters; ``run`` validates, dispatches,
shards replica work over a fixed-size worker pool, and persists CSV data
plus a manifest with content hashes.  Outputs are byte-identical for any
worker count because every random draw is keyed by (seed, stream) with
streams assigned from replica indices, never from the partitioning.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import platform
import re
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy

from . import __version__
from .averaging import (OBSERVABLES, averaging_order, clt_compare,
                        correlation_decay, fluctuation_ensemble,
                        residence_statistics, solve_averaged,
                        theoretical_variance, wf_distributional_distance)
from .dynamics import PRESET_NAMES, InitialLaw, make_preset, simulate_slow_path
from .errors import ValidationError
from .hydro import diffusive_experiment, heat_reference_solve
from .sde import (FAMILY_IDS, EquilibriumReport, JumpModel, LatticeGraph,
                  equilibrium_checks, equilibrium_sample, jump_equilibrium,
                  jump_mode_series, kappa_M_estimate, lattice_sde_run,
                  make_family, spectral_gap_probe)
from .transfer import build_profile, green_kubo_variance

__all__ = [
    "ParamSpec",
    "ExperimentSpec",
    "ExperimentConfig",
    "ResultSet",
    "WorkerPool",
    "EXPERIMENTS",
    "MANIFEST_SCHEMA",
    "CSV_SCHEMA",
    "load_config",
    "run",
    "catalog",
    "list_experiments",
]

MANIFEST_SCHEMA = 1
CSV_SCHEMA = 1  # bump on any breaking change to a data-file column layout

_SEED_MAX = 2 ** 64 - 1
_EXPERIMENT_KEYS = ("kind", "seed", "workers", "out")


# ---------------------------------------------------------------------------
# parameter schemas


@dataclass(frozen=True)
class ParamSpec:
    """One typed experiment parameter with bounds and a default."""

    name: str
    kind: str  # int | float | str | bool | ints | floats
    default: object
    help: str = ""
    choices: tuple | None = None
    lo: float | None = None
    hi: float | None = None
    positive: bool = False
    min_len: int = 1

    def describe(self) -> str:
        parts = [self.kind]
        if self.choices:
            parts.append("in {%s}" % ",".join(str(c) for c in self.choices))
        if self.positive:
            parts.append("> 0")
        if self.lo is not None:
            parts.append(f">= {self.lo:g}")
        if self.hi is not None:
            parts.append(f"<= {self.hi:g}")
        parts.append(f"(default {_fmt_default(self.default)})")
        return " ".join(parts)


def _fmt_default(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt_default(x) for x in v)
    return repr(v) if isinstance(v, str) else str(v)


def _coerce_scalar(spec: ParamSpec, kind: str, value):
    if kind == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
        raise ValidationError(f"{spec.name}: expected a boolean, got {value!r}")
    if kind == "int":
        if isinstance(value, bool):
            raise ValidationError(f"{spec.name}: expected an integer")
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value.strip(), 10)
            except ValueError:
                pass
        raise ValidationError(f"{spec.name}: expected an integer, got {value!r}")
    if kind == "float":
        if isinstance(value, bool):
            raise ValidationError(f"{spec.name}: expected a number")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value.strip())
            except ValueError:
                pass
        raise ValidationError(f"{spec.name}: expected a number, got {value!r}")
    if kind == "str":
        if isinstance(value, str):
            return value
        raise ValidationError(f"{spec.name}: expected a string, got {value!r}")
    raise AssertionError(kind)


def _check_bounds(spec: ParamSpec, v):
    if spec.kind in ("int", "float", "ints", "floats"):
        if spec.positive and not v > 0:
            raise ValidationError(f"{spec.name} must be > 0, got {v}")
        if spec.lo is not None and v < spec.lo:
            raise ValidationError(f"{spec.name} must be >= {spec.lo}, got {v}")
        if spec.hi is not None and v > spec.hi:
            raise ValidationError(f"{spec.name} must be <= {spec.hi}, got {v}")
    if not (isinstance(v, str) or np.isfinite(v)):
        raise ValidationError(f"{spec.name} must be finite, got {v}")


def coerce_param(spec: ParamSpec, value):
    """Parse and range-check one raw value (string or native)."""
    if spec.kind in ("ints", "floats"):
        elem = spec.kind[:-1]
        if isinstance(value, str):
            toks = [t for t in re.split(r"[,\s]+", value.strip()) if t]
        elif isinstance(value, (list, tuple)):
            toks = list(value)
        else:
            raise ValidationError(
                f"{spec.name}: expected a list of {elem}s, got {value!r}")
        out = [_coerce_scalar(spec, elem, t) for t in toks]
        if len(out) < spec.min_len:
            raise ValidationError(
                f"{spec.name} needs at least {spec.min_len} values")
        for v in out:
            _check_bounds(spec, v)
        return out
    v = _coerce_scalar(spec, spec.kind, value)
    if spec.choices is not None and v not in spec.choices:
        raise ValidationError(
            f"{spec.name} must be one of {list(spec.choices)}, got {v!r}")
    if spec.kind in ("int", "float"):
        _check_bounds(spec, v)
    return v


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    anchor: str  # stable capability id recorded in catalogs and manifests
    description: str
    params: tuple
    runner: object

    def resolve(self, raw: dict) -> dict:
        known = {p.name: p for p in self.params}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ValidationError(
                f"unknown parameter(s) for {self.kind}: {', '.join(unknown)}")
        out = {}
        for p in self.params:
            out[p.name] = coerce_param(p, raw[p.name]) if p.name in raw \
                else (list(p.default) if isinstance(p.default, (list, tuple))
                      else p.default)
        return out


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated experiment selection: kind, resolved parameters,
    seed, worker count and output directory."""

    kind: str
    params: dict
    seed: int = 0
    workers: int = 1
    out: str | None = None

    @classmethod
    def create(cls, kind: str, params: dict | None = None, seed: int = 0,
               workers: int = 1, out: str | None = None) -> "ExperimentConfig":
        if kind not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment kind {kind!r}; "
                                  f"known: {', '.join(sorted(EXPERIMENTS))}")
        seed = _coerce_scalar(_SEED_SPEC, "int", seed)
        if not 0 <= seed <= _SEED_MAX:
            raise ValidationError(f"seed must be a u64, got {seed}")
        workers = _coerce_scalar(_WORKERS_SPEC, "int", workers)
        if workers < 1:
            raise ValidationError(f"workers must be >= 1, got {workers}")
        resolved = EXPERIMENTS[kind].resolve(dict(params or {}))
        return cls(kind, resolved, seed, workers, out)


_SEED_SPEC = ParamSpec("seed", "int", 0)
_WORKERS_SPEC = ParamSpec("workers", "int", 1)


def _config_from_mapping(data: dict, source: str, kind=None, seed=None,
                         workers=None, out=None) -> ExperimentConfig:
    unknown = sorted(set(data) - set(_EXPERIMENT_KEYS) - {"params"})
    if unknown:
        raise ValidationError(f"{source}: unknown key(s) {', '.join(unknown)}")
    file_kind = data.get("kind")
    if kind is not None and file_kind is not None and kind != file_kind:
        raise ValidationError(
            f"{source}: config is for {file_kind!r}, not {kind!r}")
    kind = kind if kind is not None else file_kind
    if kind is None:
        raise ValidationError(f"{source}: no experiment kind given")
    params = data.get("params") or {}
    if not isinstance(params, dict):
        raise ValidationError(f"{source}: params must be a table")
    return ExperimentConfig.create(
        kind, params,
        seed=seed if seed is not None else data.get("seed", 0),
        workers=workers if workers is not None else data.get("workers", 1),
        out=out if out is not None else data.get("out"))


def load_config(path: str, kind=None, seed=None, workers=None, out=None
                ) -> ExperimentConfig:
    """Read an experiment config file.

    ``*.json`` holds the JSON mirror ({"kind", "seed", "workers", "out",
    "params": {...}}); anything else is parsed as INI with an
    [experiment] section (kind/seed/workers/out) and a [params] section.
    Explicit keyword arguments (CLI flags) override file values; a kind
    given both ways must agree.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    if path.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be an object")
        return _config_from_mapping(data, path, kind, seed, workers, out)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # parameter names are case-sensitive (L, T, K, ...)
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ValidationError(f"{path}: invalid config ({exc})") from None
    bad = [s for s in cp.sections() if s not in ("experiment", "params")]
    if bad:
        raise ValidationError(f"{path}: unknown section(s) {', '.join(bad)}")
    data: dict = {}
    if cp.has_section("experiment"):
        for key, val in cp.items("experiment"):
            if key not in _EXPERIMENT_KEYS:
                raise ValidationError(f"{path}: unknown key {key!r} "
                                      "in [experiment]")
            data[key] = val
    if cp.has_section("params"):
        data["params"] = dict(cp.items("params"))
    return _config_from_mapping(data, path, kind, seed, workers, out)


# ---------------------------------------------------------------------------
# worker pool


class WorkerPool:
    """Fixed-size thread pool for pure replica tasks.

    Threads rather than processes: the compiled kernels and numpy release
    the GIL, task arguments stay unpickled, and determinism is carried by
    the (seed, stream) keying of every draw, so the merged result is the
    same for any pool size.  Results always come back in task order.
    """

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))

    def starmap(self, fn, arg_tuples) -> list:
        arg_tuples = list(arg_tuples)
        if self.workers == 1 or len(arg_tuples) <= 1:
            return [fn(*a) for a in arg_tuples]
        with ThreadPoolExecutor(max_workers=self.workers) as ex:
            return list(ex.map(lambda t: fn(*t), arg_tuples))

    def ranges(self, n: int, min_size: int = 1) -> list:
        """Contiguous [lo, hi) index blocks covering range(n), at most one
        per worker and none smaller than ``min_size`` (except the whole)."""
        n = int(n)
        if n <= 0:
            return []
        parts = max(1, min(self.workers, n // max(1, min_size)))
        cuts = np.linspace(0, n, parts + 1).astype(int)
        return [(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


# ---------------------------------------------------------------------------
# output encoding


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip decimal
    if isinstance(v, str):
        return v
    raise ValidationError(f"unsupported CSV cell type {type(v).__name__}")


def encode_csv(columns, rows) -> bytes:
    """RFC-4180 text: CRLF records, minimal quoting, UTF-8, header row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(list(columns))
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue().encode("utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _atomic_write(directory: str, name: str, payload: bytes):
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, os.path.join(directory, name))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class ResultSet:
    """Persisted experiment outputs: data files plus their manifest."""

    out_dir: str
    manifest: dict
    files: tuple

    @property
    def summary(self) -> dict:
        return self.manifest["summary"]

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)


def run(config: ExperimentConfig) -> ResultSet:
    """Execute one experiment and persist its results.

    All computation happens before anything touches the filesystem; data
    files are written via temp + rename with the manifest strictly last,
    so an interrupted run never leaves a manifest pointing at missing or
    partial data.
    """
    spec = EXPERIMENTS[config.kind]
    pool = WorkerPool(config.workers)
    t0 = time.perf_counter()
    tables, summary, logs = spec.runner(dict(config.params), config.seed, pool)
    wall = time.perf_counter() - t0

    encoded = {f"{name}.csv": encode_csv(cols, rows)
               for name, (cols, rows) in tables.items()}
    entries = []
    for name in sorted(encoded):
        payload = encoded[name]
        cols, rows = tables[name[:-4]]
        entries.append({
            "name": name,
            "sha256": hashlib.sha256(payload).hexdigest(),
            "bytes": len(payload),
            "rows": len(rows),
            "columns": list(cols),
            "schema": CSV_SCHEMA,
        })

    manifest = {
        "manifest_schema": MANIFEST_SCHEMA,
        "experiment": config.kind,
        "anchor": spec.anchor,
        "config": {
            "kind": config.kind,
            "seed": config.seed,
            "workers": config.workers,
            "params": _jsonable(config.params),
        },
        "versions": {
            "scalebridge": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_clock_s": round(wall, 3),
        "summary": _jsonable(summary),
        "logs": _jsonable(logs),
        "files": entries,
    }

    out_dir = config.out or os.path.join("runs", config.kind)
    os.makedirs(out_dir, exist_ok=True)
    for name in sorted(encoded):
        _atomic_write(out_dir, name, encoded[name])
    payload = (json.dumps(manifest, indent=2, sort_keys=True) + "\n"
               ).encode("utf-8")
    _atomic_write(out_dir, "manifest.json", payload)
    return ResultSet(out_dir, manifest, tuple(sorted(encoded)))


# ---------------------------------------------------------------------------
# catalog


def catalog() -> list:
    """Machine-readable experiment registry."""
    out = []
    for kind in sorted(EXPERIMENTS):
        spec = EXPERIMENTS[kind]
        out.append({
            "kind": spec.kind,
            "anchor": spec.anchor,
            "description": spec.description,
            "params": [{
                "name": p.name,
                "type": p.kind,
                "default": _jsonable(p.default),
                "choices": list(p.choices) if p.choices else None,
                "help": p.help,
            } for p in spec.params],
        })
    return out


def list_experiments(as_json: bool = False) -> str:
    if as_json:
        return json.dumps(catalog(), indent=2)
    lines = []
    for kind in sorted(EXPERIMENTS):
        spec = EXPERIMENTS[kind]
        lines.append(f"{spec.kind}  [{spec.anchor}]")
        lines.append(f"  {spec.description}")
        for p in spec.params:
            help_txt = f"  {p.help}" if p.help else ""
            lines.append(f"    {p.name}: {p.describe()}{help_txt}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


# ---------------------------------------------------------------------------
# shared parameter fragments


def _preset_param(default: str) -> ParamSpec:
    return ParamSpec("preset", "str", default, "fast-slow map preset",
                     choices=PRESET_NAMES)


def _family_params() -> tuple:
    return (
        ParamSpec("family", "str", "geodesic", "bond coefficient family",
                  choices=tuple(FAMILY_IDS)),
        ParamSpec("A", "float", 1.0, "coefficient amplitude", positive=True),
        ParamSpec("n_star", "int", 3, "degrees of freedom per site", lo=2,
                  hi=64),
    )


def _profile_params() -> tuple:
    return (
        ParamSpec("n_cells", "int", 4096, "Ulam cells (power of two)",
                  lo=2 ** 6, hi=2 ** 16),
        ParamSpec("n_nodes", "int", 64, "slow-grid nodes", lo=16, hi=4096),
        ParamSpec("m_max", "int", 64, "autocorrelation lag cap", lo=1,
                  hi=100_000),
    )


def _u0_cosine(amplitude: float):
    return lambda y: 1.0 + amplitude * np.cos(2.0 * np.pi * np.asarray(y))


_DEFAULT_TIMES = [0.01, 0.02, 0.03, 0.04, 0.05]


# ---------------------------------------------------------------------------
# runners


def _run_simulate_map(p, seed, pool):
    system = make_preset(p["preset"], p["epsilon"])
    law = InitialLaw.uniform(p["theta0"])
    path = simulate_slow_path(system, law, p["horizon"], seed,
                              max_steps=p["max_steps"])
    idx = np.arange(0, path.times.size, p["record_every"])
    if idx[-1] != path.times.size - 1:
        idx = np.append(idx, path.times.size - 1)
    rows = [(int(i), float(path.times[i]), float(path.values[i]))
            for i in idx]
    tables = {"path": (("step", "time", "theta"), rows)}
    summary = {"n_steps": path.times.size - 1, "theta_final": path.final,
               "x_final": path.x_final}
    return tables, summary, {}


def _run_srb_profile(p, seed, pool):
    system = make_preset(p["preset"], p["epsilon"])
    profile = build_profile(system, n_cells=p["n_cells"],
                            n_nodes=p["n_nodes"], m_max=p["m_max"],
                            tail_tol=p["tail_tol"])
    rows = [(float(z), float(d), float(g), int(m), float(lt))
            for z, d, g, m, lt in zip(profile.z_grid, profile.drift_bar,
                                      profile.gk_variance,
                                      profile.truncation_m,
                                      profile.last_term)]
    tables = {"profile": (
        ("z", "drift", "gk_variance", "truncation_m", "last_term"), rows)}
    summary = {"n_nodes": int(profile.z_grid.size),
               "max_truncation_m": int(profile.truncation_m.max()),
               "max_last_term": float(np.abs(profile.last_term).max())}
    return tables, summary, {"profile": profile.metadata}


def _run_green_kubo(p, seed, pool):
    system = make_preset(p["preset"], p["epsilon"])
    gk = green_kubo_variance(system, p["z"], n_cells=p["n_cells"],
                             m_max=p["m_max"], tail_tol=p["tail_tol"])
    rows = [(int(m), float(t)) for m, t in enumerate(gk.terms)]
    tables = {"autocorrelation": (("lag", "term"), rows)}
    summary = {"value": gk.value, "drift": gk.drift,
               "truncation_m": gk.truncation_m, "last_term": gk.last_term,
               "converged": gk.converged}
    logs = {"truncation": {"m": gk.truncation_m, "last_term": gk.last_term,
                           "converged": gk.converged}}
    return tables, summary, logs


def _run_average(p, seed, pool):
    system0 = make_preset(p["preset"], p["eps"][0])
    law = InitialLaw.uniform(p["theta0"])
    profile = build_profile(system0, n_cells=p["n_cells"],
                            n_nodes=p["n_nodes"], m_max=p["m_max"])
    eps, medians, fit = averaging_order(
        lambda e: make_preset(p["preset"], e), law, profile, p["eps"],
        p["n_samples"], seed, T=p["T"])
    rows = [(float(e), float(m)) for e, m in zip(eps, medians)]
    tables = {"order": (("epsilon", "median_sup_error"), rows)}
    summary = {"exponent": fit.slope, "exponent_stderr": fit.slope_stderr,
               "r_squared": fit.r_squared, "n_samples": p["n_samples"]}
    return tables, summary, {}


def _run_fluctuations(p, seed, pool):
    system = make_preset(p["preset"], p["epsilon"])
    law = InitialLaw.uniform(p["theta0"])
    profile = build_profile(system, n_cells=p["n_cells"],
                            n_nodes=p["n_nodes"], m_max=p["m_max"])
    T, t, K = p["T"], p["t"], p["K"]
    if not 0 < t <= T:
        raise ValidationError("need 0 < t <= T")
    averaged = solve_averaged(profile, p["theta0"], T)
    eval_times = [t]
    # contiguous replica blocks; streams are block-position independent
    blocks = pool.ranges(K, min_size=100)
    parts = pool.starmap(
        lambda lo, hi: fluctuation_ensemble(
            system, law, profile, T, hi - lo, seed, eval_times,
            averaged=averaged, stream_offset=lo),
        blocks)
    samples = np.vstack([part.samples for part in parts])
    ens = parts[0].__class__(p["epsilon"], K, parts[0].times, samples,
                             p["theta0"], averaged)
    curve = theoretical_variance(profile, p["theta0"], [t], averaged=averaged)
    cmp_ = clt_compare(ens, curve, t)
    rows = [(int(k), float(z)) for k, z in enumerate(samples[:, 0])]
    tables = {"samples": (("replica", "zeta"), rows)}
    summary = {"t": t, "ks": cmp_.ks, "p_value": cmp_.p_value,
               "empirical_var": cmp_.empirical_var,
               "theoretical_var": cmp_.theoretical_var,
               "sample_count": cmp_.sample_count}
    return tables, summary, {}


def _run_wf_compare(p, seed, pool):
    system = make_preset(p["preset"], p["epsilon"])
    law = InitialLaw.uniform(p["theta0"])
    profile = build_profile(system, n_cells=p["n_cells"],
                            n_nodes=p["n_nodes"], m_max=p["m_max"])
    cmp_ = wf_distributional_distance(system, law, profile, p["t"], p["K"],
                                      seed, dt=p["dt"])
    row = (float(cmp_.t), float(cmp_.epsilon), int(cmp_.sample_count),
           float(cmp_.ks), float(cmp_.stderr), float(cmp_.p_value),
           float(cmp_.map_mean), float(cmp_.sde_mean))
    tables = {"comparison": (
        ("t", "epsilon", "K", "ks", "ks_stderr", "p_value", "map_mean",
         "sde_mean"), [row])}
    summary = {"ks": cmp_.ks, "ks_stderr": cmp_.stderr,
               "p_value": cmp_.p_value}
    return tables, summary, {}


def _run_decay(p, seed, pool):
    eps_list = sorted(p["eps"])
    # distinct base seeds decorrelate the per-epsilon estimates
    tasks = [(make_preset(p["preset"], e), p["observable_a"],
              p["observable_b"], p["lag_max"], p["sample_count"],
              p["burn_in"], seed + 7919 * i)
             for i, e in enumerate(eps_list)]
    estimates = pool.starmap(
        lambda sys_, a, b, lag, n, burn, sd: correlation_decay(
            sys_, a, b, lag, n, burn, sd,
            mu_trajectories=p["mu_trajectories"],
            tail_length=p["tail_length"]),
        tasks)
    rate_rows, corr_rows = [], []
    for e, est in zip(eps_list, estimates):
        rate_rows.append((float(e), float(est.rate), int(est.window[0]),
                          int(est.window[1]), bool(est.below_noise),
                          float(est.mu_b)))
        for lag, c, nf in zip(est.lags, est.correlations, est.noise_floor):
            corr_rows.append((float(e), int(lag), float(c), float(nf)))
    rates = [float(est.rate) for est in estimates]
    tables = {
        "rates": (("epsilon", "rate", "window_lo", "window_hi",
                   "below_noise", "mu_b"), rate_rows),
        "correlations": (("epsilon", "lag", "correlation", "noise_floor"),
                         corr_rows),
    }
    summary = {"epsilons": eps_list, "rates": rates,
               "strictly_increasing": bool(np.all(np.diff(rates) > 0))}
    return tables, summary, {}


def _run_metastability(p, seed, pool):
    eps_list = sorted(p["eps"], reverse=True)
    system0 = make_preset(p["preset"], eps_list[0])
    profile = build_profile(system0, n_cells=p["n_cells"],
                            n_nodes=p["n_nodes"], m_max=p["m_max"])
    tasks = [(make_preset(p["preset"], e), seed + 7919 * i)
             for i, e in enumerate(eps_list)]
    stats = pool.starmap(
        lambda sys_, sd: residence_statistics(
            sys_, profile, p["run_length"], sd, max_runs=p["max_runs"],
            band_fraction=p["band_fraction"]),
        tasks)
    rows = []
    for e, st in zip(eps_list, stats):
        for w, (z, visits, mean_res) in enumerate(
                zip(st.sinks, st.visit_counts, st.mean_residence)):
            rows.append((float(e), int(w), float(z), int(visits),
                         float(mean_res)))
    overall = [float(st.overall_mean_residence) for st in stats]
    tables = {"residence": (
        ("epsilon", "well", "sink_z", "visits", "mean_residence"), rows)}
    summary = {"epsilons": eps_list, "overall_mean_residence": overall,
               "increasing_as_eps_decreases":
                   bool(np.all(np.diff(overall) > 0)),
               "transitions": [int(st.transitions) for st in stats]}
    return tables, summary, {}


def _run_lattice_sde(p, seed, pool):
    graph = LatticeGraph.chain(p["L"])
    family = make_family(p["family"], A=p["A"], n_star=p["n_star"])
    if p["checks"]:
        report = equilibrium_checks(graph, family, p["beta"], p["T"],
                                    p["n_replicas"], seed, dt=p["dt"],
                                    lag_times=p["lag_times"], bins=p["bins"])
        return _equilibrium_tables(report)
    E0 = equilibrium_sample(graph, family, p["beta"], seed, stream=7,
                            n_replicas=p["n_replicas"])
    blocks = pool.ranges(p["n_replicas"])
    parts = pool.starmap(
        lambda lo, hi: lattice_sde_run(
            graph, E0[lo:hi], family, p["beta"], p["dt"], p["n_steps"],
            seed, stream_offset=10_000 + lo, record_every=p["record_every"]),
        blocks)
    energies = np.vstack([part.energies for part in parts])
    halvings = sum(part.halvings for part in parts)
    floored = sum(part.floored_steps for part in parts)
    rows = [(int(r), int(s), float(energies[r, s]))
            for r in range(energies.shape[0])
            for s in range(energies.shape[1])]
    tables = {"final_energies": (("replica", "site", "energy"), rows)}
    if parts[0].snapshots is not None:
        snaps = np.concatenate([part.snapshots for part in parts], axis=1)
        times = parts[0].snapshot_times
        mean = snaps.mean(axis=1)
        se = snaps.std(axis=1, ddof=1) / math.sqrt(snaps.shape[1])
        srows = [(float(times[i]), int(s), float(mean[i, s]), float(se[i, s]))
                 for i in range(times.size) for s in range(mean.shape[1])]
        tables["snapshot_means"] = (
            ("time", "site", "mean_energy", "stderr"), srows)
    drift = abs(energies.sum(axis=1) - E0.sum(axis=1)) / E0.sum(axis=1)
    summary = {"halvings": halvings, "floored_steps": floored,
               "max_energy_drift": float(drift.max()),
               "mean_site_energy": float(energies.mean())}
    logs = {"positivity": {"halvings": halvings, "floored_steps": floored}}
    return tables, summary, logs


def _equilibrium_tables(report: EquilibriumReport):
    chi2 = report.chi2
    mrows = [(int(i), float(o), float(e))
             for i, (o, e) in enumerate(zip(chi2.observed, chi2.expected))]
    brows = [(c.pair[0], c.pair[1], float(c.lag), float(c.asymmetry),
              float(c.stderr), float(c.z)) for c in report.balance]
    tables = {
        "marginal": (("bin", "observed", "expected"), mrows),
        "balance": (("obs_a", "obs_b", "lag", "asymmetry", "stderr", "z"),
                    brows),
    }
    summary = {"family": report.family_id, "beta": report.beta,
               "chi2_statistic": chi2.statistic, "chi2_dof": chi2.dof,
               "chi2_p_value": chi2.p_value,
               "max_balance_z": report.max_balance_z,
               "energy_drift": report.energy_drift,
               "n_samples": report.n_samples}
    logs = {"positivity": {"halvings": report.halvings}}
    return tables, summary, logs


def _run_jump(p, seed, pool):
    graph = LatticeGraph.chain(p["L"])
    total = p["mean_energy"] * p["L"]
    cfg0 = jump_equilibrium(graph, total, seed, stream=0)
    times, series, final = jump_mode_series(graph, JumpModel(), cfg0,
                                            p["T"], p["sample_dt"], seed,
                                            stream=1)
    rows = [(float(t), float(m)) for t, m in zip(times, series)]
    tables = {"mode_series": (("time", "amplitude"), rows)}
    drift = abs(final.total - cfg0.total) / cfg0.total
    summary = {"n_samples": int(times.size),
               "mode_variance": float(np.var(series)),
               "energy_drift": float(drift)}
    return tables, summary, {"conservation": {"relative_drift": float(drift)}}


def _run_gap_probe(p, seed, pool):
    probe = spectral_gap_probe(p["sizes"], JumpModel(), seed,
                               total_T_relax=p["total_T_relax"],
                               samples_per_relax=p["samples_per_relax"],
                               fit_floor=p["fit_floor"])
    rows = [(int(L), float(tau), float(se))
            for L, tau, se in zip(probe.sizes, probe.taus, probe.tau_stderr)]
    tables = {"taus": (("L", "tau", "tau_stderr"), rows)}
    summary = {"exponent": probe.exponent,
               "exponent_stderr": probe.exponent_stderr,
               "r_squared": probe.fit.r_squared}
    return tables, summary, {"fit": probe.diagnostics}


def _run_kappa_m(p, seed, pool):
    graph = LatticeGraph.chain(p["L"])
    family = make_family(p["family"], A=p["A"], n_star=p["n_star"])
    res = kappa_M_estimate(graph, family, p["beta"], p["T"], p["n_replicas"],
                           seed, dt=p["dt"], corr_stride=p["corr_stride"],
                           n_static=p["n_static"])
    row = (float(res.value), float(res.static_term),
           float(res.static_stderr), float(res.temporal_term),
           float(res.truncation_time), bool(res.tail_converged))
    tables = {"kappa": (
        ("value", "static_term", "static_stderr", "temporal_term",
         "truncation_time", "tail_converged"), [row])}
    summary = {"value": res.value, "static_term": res.static_term,
               "temporal_term": res.temporal_term,
               "tail_converged": res.tail_converged}
    logs = {"truncation": {"time": res.truncation_time,
                           "converged": res.tail_converged}}
    return tables, summary, logs


def _run_hydro(p, seed, pool):
    u0 = _u0_cosine(p["amplitude"])
    result = diffusive_experiment(
        p["L"], u0, p["times"], p["replicas"], seed, dt=p["dt"],
        n_bins=p["n_bins"], n_comp=p["n_comp"],
        map_tasks=(pool.starmap if pool.workers > 1 else None))
    prows = [(float(result.times_macro[i]), float(c), float(m), float(se))
             for i in range(result.times_macro.size)
             for c, m, se in zip(result.bin_centers, result.profiles[i],
                                 result.stderr[i])]
    mrows = [(float(t), float(a), float(se))
             for t, a, se in zip(result.times_macro, result.mode_amplitudes,
                                 result.diagnostics["amp_stderr"])]
    tables = {
        "profiles": (("time", "bin_center", "mean_energy", "stderr"), prows),
        "modes": (("time", "amplitude", "amp_stderr"), mrows),
    }
    rel = None
    if result.kappa == result.kappa:  # skip when the mode fit degenerates
        ref = heat_reference_solve(u0, result.kappa, result.times_macro)
        rel = [float(result.rel_l2_error(ref, i))
               for i in range(result.times_macro.size)]
    summary = {"kappa": result.kappa,
               "kappa_stderr": (result.kappa_fit.slope_stderr
                                / (4.0 * math.pi ** 2)
                                if result.kappa_fit else None),
               "rel_l2": rel, "replicas": result.replicas}
    return tables, summary, {"fit": {
        "sample_steps": result.diagnostics["sample_steps"]}}


def _run_heat_ref(p, seed, pool):
    u0 = _u0_cosine(p["amplitude"])
    ref = heat_reference_solve(u0, p["kappa"], p["times"],
                               grid_n=p["grid_n"])
    ys = np.arange(p["n_out"]) / p["n_out"]
    rows = [(float(ref.times[i]), float(y), float(u))
            for i in range(ref.times.size)
            for y, u in zip(ys, ref.sample_at(i, ys))]
    tables = {"reference": (("time", "y", "u"), rows)}
    summary = {"kappa": p["kappa"], "n_times": int(ref.times.size),
               "u_min": float(ref.values.min()),
               "u_max": float(ref.values.max())}
    return tables, summary, {}


# ---------------------------------------------------------------------------
# registry


EXPERIMENTS = {}


def _register(kind, anchor, description, params, runner):
    EXPERIMENTS[kind] = ExperimentSpec(kind, anchor, description,
                                       tuple(params), runner)


_register(
    "simulate-map", "fast-slow-orbit",
    "One skew-product trajectory, recording the unwrapped slow coordinate.",
    [
        _preset_param("single-sink"),
        ParamSpec("epsilon", "float", 0.01, "time-scale separation",
                  positive=True, hi=0.5),
        ParamSpec("horizon", "float", 1.0, "slow-time horizon",
                  positive=True),
        ParamSpec("theta0", "float", 0.0, "initial slow coordinate"),
        ParamSpec("record_every", "int", 1, "record thinning stride", lo=1),
        ParamSpec("max_steps", "int", 100_000_000, "step budget", lo=1),
    ],
    _run_simulate_map)

_register(
    "srb-profile", "frozen-equilibrium-tabulation",
    "Averaged drift and variance of the slow field over a slow-value grid.",
    [
        _preset_param("single-sink"),
        ParamSpec("epsilon", "float", 0.01, "time-scale separation",
                  positive=True, hi=0.5),
        *_profile_params(),
        ParamSpec("tail_tol", "float", 1e-9, "lag-sum tail cutoff",
                  positive=True),
    ],
    _run_srb_profile)

_register(
    "green-kubo", "autocorrelation-variance-sum",
    "Lag-sum variance of the slow field under one frozen fast map.",
    [
        _preset_param("doubling-pure"),
        ParamSpec("epsilon", "float", 0.01, "time-scale separation",
                  positive=True, hi=0.5),
        ParamSpec("z", "float", 0.0, "frozen slow value"),
        ParamSpec("n_cells", "int", 4096, "Ulam cells (power of two)",
                  lo=2 ** 6, hi=2 ** 16),
        ParamSpec("m_max", "int", 20, "autocorrelation lag cap", lo=1,
                  hi=100_000),
        ParamSpec("tail_tol", "float", 1e-9, "lag-sum tail cutoff",
                  positive=True),
    ],
    _run_green_kubo)

_register(
    "average", "averaging-convergence-order",
    "Median sup-deviation from the averaged path, fitted across epsilon.",
    [
        _preset_param("single-sink"),
        ParamSpec("eps", "floats", [2.0 ** -k for k in range(6, 13)],
                  "epsilon values (>= 3)", positive=True, hi=0.5, min_len=3),
        ParamSpec("n_samples", "int", 200, "trajectories per epsilon",
                  lo=8),
        ParamSpec("T", "float", 1.0, "slow-time horizon", positive=True),
        ParamSpec("theta0", "float", 0.0, "initial slow coordinate"),
        *_profile_params(),
    ],
    _run_average)

_register(
    "fluctuations", "rescaled-deviation-clt",
    "Rescaled deviations from the averaged path against the Gaussian limit.",
    [
        _preset_param("single-sink"),
        ParamSpec("epsilon", "float", 1e-4, "time-scale separation",
                  positive=True, hi=0.5),
        ParamSpec("K", "int", 10_000, "ensemble size", lo=100),
        ParamSpec("T", "float", 1.0, "slow-time horizon", positive=True),
        ParamSpec("t", "float", 1.0, "comparison time", positive=True),
        ParamSpec("theta0", "float", 0.0, "initial slow coordinate"),
        *_profile_params(),
    ],
    _run_fluctuations)

_register(
    "wf-compare", "diffusion-approximation-proximity",
    "Two-sample KS between slow-map endpoints and the noisy averaged flow.",
    [
        _preset_param("single-sink"),
        ParamSpec("epsilon", "float", 1e-3, "time-scale separation",
                  positive=True, hi=0.5),
        ParamSpec("t", "float", 2.0, "comparison time", positive=True),
        ParamSpec("K", "int", 10_000, "ensemble size", lo=100),
        ParamSpec("dt", "float", 5e-4, "SDE integrator step", positive=True,
                  hi=0.1),
        ParamSpec("theta0", "float", 0.0, "initial slow coordinate"),
        *_profile_params(),
    ],
    _run_wf_compare)

_register(
    "decay", "correlation-decay-rates",
    "Fitted correlation decay rates of skew-product observables vs epsilon.",
    [
        _preset_param("single-sink"),
        ParamSpec("eps", "floats", [0.02, 0.04, 0.08], "epsilon values",
                  positive=True, hi=0.5),
        ParamSpec("observable_a", "str", "sin-theta", "left observable",
                  choices=tuple(OBSERVABLES)),
        ParamSpec("observable_b", "str", "sin-theta", "right observable",
                  choices=tuple(OBSERVABLES)),
        ParamSpec("lag_max", "int", 2000, "largest lag", lo=8),
        ParamSpec("sample_count", "int", 400_000, "correlation samples",
                  lo=1000),
        ParamSpec("burn_in", "int", 5000, "discarded initial steps", lo=0),
        ParamSpec("mu_trajectories", "int", 256,
                  "trajectories for the invariant mean", lo=8),
        ParamSpec("tail_length", "int", 200_000,
                  "per-trajectory tail for the invariant mean", lo=1000),
    ],
    _run_decay)

_register(
    "metastability", "well-residence-scaling",
    "Committed residence times in drift wells across epsilon.",
    [
        _preset_param("double-sink"),
        ParamSpec("eps", "floats", [0.05, 0.025, 0.0125], "epsilon values",
                  positive=True, hi=0.5),
        ParamSpec("run_length", "int", 2_000_000, "steps per trajectory",
                  lo=10_000),
        ParamSpec("band_fraction", "float", 0.5,
                  "commitment band half-width fraction", positive=True,
                  hi=0.95),
        ParamSpec("max_runs", "int", 1_000_000, "visit cap", lo=1),
        *_profile_params(),
    ],
    _run_metastability)

_register(
    "lattice-sde", "energy-sde-equilibrium",
    "Conservative lattice energy SDE: equilibrium run with diagnostics.",
    [
        *_family_params(),
        ParamSpec("L", "int", 8, "chain length", lo=2, hi=4096),
        ParamSpec("beta", "float", 1.0, "inverse temperature",
                  positive=True),
        ParamSpec("T", "float", 1.0, "integration time", positive=True),
        ParamSpec("n_replicas", "int", 200, "independent copies", lo=2),
        ParamSpec("dt", "float", 2e-3, "integrator step", positive=True,
                  hi=0.1),
        ParamSpec("checks", "bool", True,
                  "run invariance/reversibility diagnostics"),
        ParamSpec("lag_times", "floats", [0.1, 1.0],
                  "correlation lags (checks mode)", positive=True),
        ParamSpec("bins", "int", 32, "marginal test bins (checks mode)",
                  lo=8, hi=512),
        ParamSpec("n_steps", "int", 500, "steps (raw mode)", lo=1),
        ParamSpec("record_every", "int", 0,
                  "snapshot stride in steps (raw mode), 0 = none", lo=0),
    ],
    _run_lattice_sde)

_register(
    "jump", "conservative-jump-chain",
    "Bond-exchange jump chain: slowest-mode time series at equilibrium.",
    [
        ParamSpec("L", "int", 8, "chain length", lo=2, hi=65_536),
        ParamSpec("mean_energy", "float", 1.0, "mean energy per site",
                  positive=True),
        ParamSpec("T", "float", 200.0, "chain time horizon", positive=True),
        ParamSpec("sample_dt", "float", 0.5, "sampling interval",
                  positive=True),
    ],
    _run_jump)

_register(
    "gap-probe", "relaxation-time-scaling",
    "Relaxation time of the slowest energy mode across lattice sizes.",
    [
        ParamSpec("sizes", "ints", [4, 8, 16, 32], "chain lengths (>= 3)",
                  lo=2, hi=65_536, min_len=3),
        ParamSpec("total_T_relax", "float", 3000.0,
                  "run length in relaxation units", positive=True),
        ParamSpec("samples_per_relax", "int", 20,
                  "samples per relaxation time", lo=4),
        ParamSpec("fit_floor", "float", 0.2,
                  "autocorrelation fit floor", positive=True, hi=0.9),
    ],
    _run_gap_probe)

_register(
    "kappa-m", "bulk-diffusivity-estimate",
    "Static plus time-integrated correlation estimate of the diffusivity.",
    [
        *_family_params(),
        ParamSpec("L", "int", 8, "chain length", lo=2, hi=4096),
        ParamSpec("beta", "float", 1.0, "inverse temperature",
                  positive=True),
        ParamSpec("T", "float", 2.0, "correlation window", positive=True),
        ParamSpec("n_replicas", "int", 256, "independent copies", lo=2),
        ParamSpec("dt", "float", 1e-3, "integrator step", positive=True,
                  hi=0.1),
        ParamSpec("corr_stride", "int", 50, "correlation sampling stride",
                  lo=1),
        ParamSpec("n_static", "int", 1_000_000, "static-term draws",
                  lo=1000),
    ],
    _run_kappa_m)

_register(
    "hydro", "diffusive-profile-limit",
    "Rescaled energy profiles of the exchange dynamics vs the heat flow.",
    [
        ParamSpec("L", "int", 128, "chain length", lo=2, hi=65_536),
        ParamSpec("amplitude", "float", 0.5,
                  "cosine amplitude of the initial profile", lo=0.0, hi=1.0),
        ParamSpec("times", "floats", list(_DEFAULT_TIMES),
                  "macroscopic sample times", lo=0.0),
        ParamSpec("replicas", "int", 200, "independent copies", lo=2),
        ParamSpec("dt", "float", 0.01, "microscopic step", positive=True,
                  hi=0.1),
        ParamSpec("n_bins", "int", 32, "profile bins", lo=2),
        ParamSpec("n_comp", "int", 3, "velocity components per site", lo=2,
                  hi=64),
    ],
    _run_hydro)

_register(
    "heat-ref", "spectral-heat-baseline",
    "Spectral heat-equation reference profiles on the periodic interval.",
    [
        ParamSpec("kappa", "float", 1.0, "diffusivity", positive=True),
        ParamSpec("amplitude", "float", 0.5,
                  "cosine amplitude of the initial profile", lo=0.0, hi=1.0),
        ParamSpec("times", "floats", list(_DEFAULT_TIMES), "sample times",
                  lo=0.0),
        ParamSpec("grid_n", "int", 512, "spectral grid size", lo=256,
                  hi=65_536),
        ParamSpec("n_out", "int", 128, "output sample points", lo=8,
                  hi=65_536),
    ],
    _run_heat_ref)
