"""Experiment configuration, seed derivation, worker pool and output records.

Config files are flat ``key = value`` documents with dotted sections::

    experiment = cauchy
    domain.dimension = 1
    kernel.kind = mollifier
    scheme.beta = 1.0
    measure.atoms = [[1.0, 0.0]]
    run.n_paths = 10000

Values are Python literals (numbers, strings, lists); bare words are strings.
"""

from __future__ import annotations

import ast
import csv
import hashlib
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .domain import DomainSpec, KernelSpec
from .errors import ConfigError, SchemaVersionError, UnsupportedWhiteNoise
from .solver import MeasureSpec, SchemeParams, default_dt

SCHEMA_VERSION = "1.0"

EXPERIMENTS = (
    "prop15", "cauchy", "qv", "weak-probe", "stationarity",
    "attenuated-2d", "frac-moment", "mixed-sign-explore",
)

STREAM_TAGS = {"U": 0, "V": 1, "bridge": 2, "null-calibration": 3}

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# ---------------------------------------------------------------- seeds


@dataclass(frozen=True)
class SeedDerivation:
    base_seed: int
    path_index: int
    stream_tag: str


def _mix64(z: int) -> int:
    """splitmix64 finaliser; a bijection of 64-bit words."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def derive_seed(d: SeedDerivation | int, path_index: int | None = None, stream_tag: str | None = None) -> int:
    """64-bit seed for one (path, stream) pair.

    ``(path_index, tag)`` is packed into a 50-bit counter, offset from the
    base seed by an odd multiplier and passed through a bijective mixer, so
    distinct pairs never collide for ``path_index < 2**48``.
    """
    if not isinstance(d, SeedDerivation):
        d = SeedDerivation(int(d), int(path_index), stream_tag)
    if not 0 <= d.path_index < 2**48:
        raise ValueError("path_index must lie in [0, 2**48)")
    counter = (d.path_index << 2) | STREAM_TAGS[d.stream_tag]
    z = (int(d.base_seed) + _GOLDEN * (counter + 1)) & _MASK64
    return _mix64(z)


def path_rng(base_seed: int, path_index: int, stream_tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base_seed, path_index, stream_tag)))


def path_rngs(base_seed: int, indices, stream_tag: str) -> list:
    return [path_rng(base_seed, int(i), stream_tag) for i in indices]


# Ensembles within one experiment use disjoint blocks of path indices.
ENSEMBLE_STRIDE = 2**40


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    experiment: str
    domain: DomainSpec
    kernel: KernelSpec
    scheme: SchemeParams
    measure: MeasureSpec
    n_paths: int
    T_max: float
    base_seed: int
    output: str | None = None
    run: dict = field(default_factory=dict)

    def materialized(self) -> dict:
        """Fully expanded config; the digest covers exactly this document."""
        return {
            "experiment": self.experiment,
            "domain": self.domain.to_dict(),
            "kernel": self.kernel.to_dict(),
            "scheme": self.scheme.to_dict(),
            "measure": self.measure.to_dict(),
            "run": {"n_paths": int(self.n_paths), "T_max": float(self.T_max),
                    "base_seed": int(self.base_seed), **_jsonable(self.run)},
        }

    @property
    def digest(self) -> str:
        text = json.dumps(self.materialized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def get(self, key, default=None):
        return self.run.get(key, default)


# Experiment-specific defaults; anything not listed falls back to the generic ones.
EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "prop15": {"run.n_paths": 100_000, "run.a_list": [1.0], "run.oracle_dt": 1e-4,
               "run.ks_tol": 0.01, "run.iqr_tol": 0.03, "run.ecf_tol": 0.05},
    "cauchy": {"kernel.kind": "white", "run.T_max": 20.0, "run.n_paths": 10_000,
               "run.threshold": 1e-3, "run.min_converged": 0.8, "run.ks_tol": 0.05,
               "run.required_converged": 0.95, "run.second_measure": [[0.3, 0.0], [0.7, 0.25]],
               "scheme.alpha": 1.0},
    "qv": {"run.T_max": 0.5, "run.n_paths": 1000, "scheme.alpha": 2.0, "run.refine": True,
           "run.ratio_tol": 0.05, "run.cross_tol": 0.05, "run.formula_tol": 0.05,
           "run.q_edges": [0.0, 0.05, 0.1, 0.15, 0.2], "run.bin_var_tol": 0.10, "run.corr_tol": 0.05},
    "weak-probe": {"domain.dimension": 3, "domain.geometry": "line", "domain.points": 16,
                   "domain.length": 4.0, "kernel.half_width": 0.75, "scheme.beta": 0.1,
                   "scheme.alpha": 1.0, "run.T_max": 2.0, "run.n_paths": 400,
                   "run.mass_floor": 0.5, "run.frac_above": 0.9, "run.tail_slope": -1.2,
                   "run.stab_tol": 0.05, "run.contrast_beta": 10.0, "run.contrast_dt": 2.5e-4,
                   "run.contrast_T_max": 1.0},
    "stationarity": {"scheme.alpha": 1.0, "run.n_paths": 10_000, "run.T_pair": [10.0, 12.0],
                     "run.T_ladder": [2.0, 4.0, 8.0, 16.0], "run.n_ladder": 1000,
                     "run.shift": 0.5, "run.xi": 1.0, "run.null_reps": 500, "run.null_q": 0.99},
    "attenuated-2d": {"domain.dimension": 2, "domain.points": 512, "kernel.half_width": 0.25,
                      "scheme.beta": math.sqrt(2 * math.pi), "scheme.alpha": 1.0,
                      "scheme.multiplier": "exponential", "run.eps_list": [2**-3, 2**-4, 2**-5],
                      "run.t": 0.0025, "run.dt_scale": 0.25, "run.n_paths": 128, "run.stride": 16,
                      "run.moment_tol": 0.10, "run.trim": 1e-3},
    "frac-moment": {"scheme.alpha": 0.0, "run.T_ladder": [1.0, 2.0, 4.0, 8.0, 16.0],
                    "run.thetas": [0.5], "run.n_paths": 10_000, "run.sep_se": 4.0},
    "mixed-sign-explore": {"scheme.alpha": 1.0, "run.T_max": 20.0, "run.n_paths": 2000,
                           "measure.atoms": [[1.0, 0.0], [-0.5, 0.25]], "measure.signed": True},
}

GENERIC_DEFAULTS: dict[str, Any] = {
    "domain.dimension": 1, "domain.points": 64, "domain.geometry": "torus", "domain.length": 1.0,
    "kernel.kind": "mollifier", "kernel.shape": "bump", "kernel.epsilon": None,
    "scheme.alpha": 1.0, "scheme.beta": 1.0, "scheme.multiplier": "linear",
    "measure.atoms": [[1.0, 0.0]], "measure.signed": False,
    "run.n_paths": 10_000, "run.T_max": 20.0, "run.base_seed": 20240601,
    "run.record_every": 100, "run.chunk_size": 500, "run.block": 64, "run.threshold": 1e-3,
}

KNOWN_SECTIONS = ("domain", "kernel", "scheme", "measure", "run")
KNOWN_KEYS = {
    "domain": {"dimension", "points", "geometry", "length", "max_cells"},
    "kernel": {"kind", "half_width", "shape", "epsilon"},
    "scheme": {"dt", "alpha", "beta", "heat_step", "multiplier"},
    "measure": {"atoms", "signed"},
}


def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("none", "null"):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip("\"'")


def parse_kv(text: str) -> dict:
    """Parse a flat dotted key-value document; duplicate keys are errors."""
    out, lines = {}, {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=n)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=n)
        if key in out:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})",
                              fields=(key,), line=n)
        out[key] = _parse_value(value)
        lines[key] = n
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def build_config(values: dict, experiment: str | None = None) -> ExperimentConfig:
    """Validate a flat key-value mapping and materialise every default."""
    values = dict(values)
    named = values.pop("experiment", None)
    if experiment and named and named != experiment:
        raise ConfigError(f"config is for {named!r}, not {experiment!r}", fields=("experiment",))
    name = experiment or named
    if name is None:
        raise ConfigError("missing experiment name", fields=("experiment",))
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}", fields=("experiment",))
    for key in values:
        section, _, leaf = key.partition(".")
        if section not in KNOWN_SECTIONS or not leaf:
            raise ConfigError(f"unknown key {key!r}", fields=(key,))
        if section in KNOWN_KEYS and leaf not in KNOWN_KEYS[section]:
            raise ConfigError(f"unknown key {key!r}", fields=(key,))
    merged = {**GENERIC_DEFAULTS, **EXPERIMENT_DEFAULTS.get(name, {}), **values}

    def sec(prefix):
        return {k.split(".", 1)[1]: v for k, v in merged.items() if k.startswith(prefix + ".")}

    try:
        domain = DomainSpec(**sec("domain"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), fields=("domain",)) from exc
    kvals = sec("kernel")
    if kvals.get("kind") == "white" and domain.dimension != 1:
        raise UnsupportedWhiteNoise("white-in-space noise requires d=1",
                                    fields=("kernel.kind", "domain.dimension"))
    if "half_width" not in kvals:
        kvals["half_width"] = domain.length / 8
    try:
        kernel = KernelSpec(**kvals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), fields=("kernel",)) from exc
    svals = sec("scheme")
    if svals.get("dt") is None:
        svals["dt"] = default_dt(domain, kernel)
    try:
        scheme = SchemeParams(**svals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), fields=("scheme",)) from exc
    mvals = sec("measure")
    atoms = [(float(g), x) for g, x in mvals["atoms"]]
    try:
        measure = MeasureSpec(atoms, signed=bool(mvals.get("signed", False)))
    except ValueError as exc:
        raise ConfigError(str(exc), fields=("measure.atoms",)) from exc
    run = sec("run")
    n_paths = int(run.pop("n_paths"))
    T_max = float(run.pop("T_max"))
    seed = int(run.pop("base_seed"))
    output = run.pop("output", None)
    cfg = ExperimentConfig(name, domain, kernel, scheme, measure, n_paths, T_max, seed, output, run)
    _check_experiment(cfg)
    return cfg


def _check_experiment(cfg: ExperimentConfig):
    d = cfg.domain.dimension
    if cfg.experiment == "attenuated-2d":
        if d != 2:
            raise ConfigError("attenuated-2d requires d=2", fields=("domain.dimension",))
        eps = list(cfg.run["eps_list"])
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be strictly decreasing", fields=("run.eps_list",))
    if cfg.experiment in ("cauchy", "stationarity", "frac-moment", "qv") and cfg.measure.signed:
        raise ConfigError("this experiment needs an unsigned measure", fields=("measure.signed",))
    if cfg.n_paths < 1:
        raise ConfigError("n_paths must be positive", fields=("run.n_paths",))


def parse_config(text: str, experiment: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_kv(text)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(values, experiment)


def load_config(path, experiment=None, overrides=None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), experiment, overrides)


# ---------------------------------------------------------------- worker pool

def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("AMSHE_WORKERS", "1"))
    return max(1, int(workers))


def map_tasks(fn, tasks, workers: int | None = None) -> list:
    """Apply ``fn`` to each task, in order, on a bounded process pool."""
    tasks = list(tasks)
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def chunk_ranges(n: int, size: int) -> list:
    return [(i, min(n, i + size)) for i in range(0, n, size)]


# ---------------------------------------------------------------- records

@dataclass
class OutputRecord:
    kind: str
    payload: dict
    digest: str
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "kind": self.kind,
                "config_digest": self.digest, **_jsonable(self.payload)}


def _atomic_write(path, text: str):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)


def write_records(reports, paths, sink) -> dict:
    """Write ``summary.json``, ``paths.ndjson`` and CSV tables into directory ``sink``.

    Every file is written to a temporary name and renamed into place.
    Returns the mapping of artefact name to file path.
    """
    reports = list(reports)
    written = {}
    try:
        summary = {
            "schema_version": SCHEMA_VERSION,
            "kind": "summary",
            "reports": [r.to_summary() for r in reports],
        }
        p = os.path.join(sink, "summary.json")
        _atomic_write(p, dumps(summary) + "\n")
        written["summary"] = p

        lines = [json.dumps(rec.to_dict() if isinstance(rec, OutputRecord) else _jsonable(rec),
                            sort_keys=True, allow_nan=False) for rec in paths]
        if lines:
            p = os.path.join(sink, "paths.ndjson")
            _atomic_write(p, "\n".join(lines) + "\n")
            written["paths"] = p

        for rep in reports:
            for name, (header, rows) in getattr(rep, "tables", {}).items():
                buf = io.StringIO()
                w = csv.writer(buf, lineterminator="\n")
                w.writerow(["schema_version", "config_digest", *header])
                for row in rows:
                    w.writerow([SCHEMA_VERSION, rep.config_digest, *(_jsonable(v) for v in row)])
                p = os.path.join(sink, f"{rep.experiment}_{name}.csv")
                _atomic_write(p, buf.getvalue())
                written[name] = p

        timing = {"schema_version": SCHEMA_VERSION, "kind": "timing",
                  "runtime_s": {r.experiment: r.runtime for r in reports}}
        p = os.path.join(sink, "timing.json")
        _atomic_write(p, dumps(timing) + "\n")
        written["timing"] = p
    except OSError as exc:
        raise OSError(f"failed writing records to {sink}: {exc}") from exc
    return written


def _check_version(version, where):
    major = str(version).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionError(f"{where}: unsupported schema version {version}")


def read_summary(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    _check_version(doc.get("schema_version"), path)
    return doc


def read_paths(path) -> list:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            _check_version(rec.get("schema_version"), f"{path}:{n}")
            out.append(rec)
    return out
