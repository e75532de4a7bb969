"""CSV ingestion/export, run configuration files and model persistence."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crisk import CriskFit, CriskFitM1, CriskFitM2
from .discrete import Cohort, CompetingRisksRecord, TimeGrid
from .probit import ProbitFit
from .sampler import ForestDraws, McmcConfig
from .trees import DartPrior, Tree

FORMAT_NAME = "crbart-model"
FORMAT_VERSION = 1
COHORT_COLUMNS = ("time", "status", "cause")


class InputError(ValueError):
    """Malformed user input (CSV or config)."""


class ModelFormatError(ValueError):
    """A model file that cannot be loaded."""


# -- cohort CSV ----------------------------------------------------------------


def parse_cohort_csv(path) -> list[CompetingRisksRecord]:
    """Read ``time,status,cause,<covariates...>``; covariate order follows the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("no records") from None
        for col in COHORT_COLUMNS:
            if col not in header:
                raise InputError(f"missing column {col!r}")
        pos = [header.index(c) for c in COHORT_COLUMNS]
        cov = [k for k, h in enumerate(header) if h not in COHORT_COLUMNS]
        records = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            try:
                t, s, c = (float(row[k]) for k in pos)
                x = tuple(float(row[k]) for k in cov)
            except ValueError:
                raise InputError(f"row {row_no}: non-numeric cell") from None
            if not (s.is_integer() and c.is_integer()):
                raise InputError(f"row {row_no}: status and cause must be integers")
            if not all(math.isfinite(v) for v in (t, *x)):
                raise InputError(f"row {row_no}: non-finite value")
            try:
                records.append(CompetingRisksRecord(t, int(s), int(c), x))
            except ValueError as err:
                raise InputError(f"row {row_no}: {err}") from None
    if not records:
        raise InputError("no records")
    return records


def covariate_names(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    return [h.strip() for h in header if h.strip() not in COHORT_COLUMNS]


def read_cohort(path) -> Cohort:
    return Cohort.from_records(parse_cohort_csv(path))


def write_cohort_csv(cohort: Cohort, path, names=None) -> None:
    names = names or [f"x{k + 1}" for k in range(cohort.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*COHORT_COLUMNS, *names])
        for t, d, c, x in zip(cohort.time, cohort.delta, cohort.cause, cohort.X):
            w.writerow([repr(float(t)), int(d), int(c), *(repr(float(v)) for v in x)])


def read_covariates_csv(path) -> tuple[list[str], np.ndarray]:
    """Plain numeric covariate table with a header; extra cohort columns are ignored."""
    cols = read_columns(path)
    names = [k for k in cols if k not in COHORT_COLUMNS]
    if not names:
        raise InputError("no covariate columns")
    try:
        X = np.column_stack([np.asarray(cols[k], dtype=np.float64) for k in names])
    except ValueError:
        raise InputError("covariate columns must be numeric") from None
    return names, X


# -- generic column CSVs -------------------------------------------------------


def write_columns(path, columns: dict) -> None:
    """Write equal-length columns; floats use round-trip repr."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    n = {c.shape[0] for c in cols}
    if len(n) > 1:
        raise ValueError("columns differ in length")

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (np.integer,)):
            return int(v)
        return v

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])


def read_columns(path) -> dict[str, np.ndarray]:
    """Inverse of ``write_columns``: numeric columns become float arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            names = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    out = {}
    for k, name in enumerate(names):
        raw = [r[k] for r in rows]
        try:
            out[name] = np.array([float(v) for v in raw])
        except ValueError:
            out[name] = np.array(raw, dtype=object)
    return out


# -- run configuration -----------------------------------------------------------

_MCMC_KEYS = {f.name for f in dataclasses.fields(McmcConfig)} - {"dart"}
_DART_KEYS = {f.name for f in dataclasses.fields(DartPrior)}


@dataclass(frozen=True)
class RunConfig:
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    method: str = "m1"
    level: float = 0.95
    coarsen_unit: float | None = None
    grid_points: int | None = None
    drop_event_factor: bool = False

    def __post_init__(self):
        if self.method not in ("m1", "m2"):
            raise InputError(f"method must be m1 or m2, got {self.method!r}")
        if not 0 < self.level < 1:
            raise InputError("level must lie in (0, 1)")
        if self.coarsen_unit is not None and self.grid_points is not None:
            raise InputError("set at most one of coarsen_unit and grid_points")
        if self.coarsen_unit is not None and not self.coarsen_unit > 0:
            raise InputError("coarsen_unit must be positive")
        if self.grid_points is not None and self.grid_points < 1:
            raise InputError("grid_points must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_ini(self) -> str:
        """Every setting, defaults included."""
        cp = configparser.ConfigParser()
        d = self.to_dict()
        mc = d.pop("mcmc")
        dart = mc.pop("dart")
        cp["run"] = {k: _ini_value(v) for k, v in d.items()}
        cp["mcmc"] = {k: _ini_value(v) for k, v in mc.items()}
        cp["dart"] = {k: _ini_value(v) for k, v in dart.items()}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
            lines.append("")
        return "\n".join(lines)


def _ini_value(v) -> str:
    return "none" if v is None else str(v).lower() if isinstance(v, bool) else str(v)


def _coerce(value: str, template, key: str):
    v = value.strip()
    if v.lower() == "none":
        return None
    kind = type(template)
    try:
        if kind is bool:
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return v.lower() in ("true", "1", "yes")
        if kind is int:
            return int(v)
        return float(v)
    except ValueError:
        raise InputError(f"{key}: cannot parse {value!r}") from None


_RUN_TYPES = {"method": "", "level": 0.0, "coarsen_unit": 0.0, "grid_points": 0, "drop_event_factor": False}
_DART_TYPES = {"theta": 0.0, "rho": 0.0, "a": 0.0, "b": 0.0, "theta_random": False}


def parse_run_config(text: str, **overrides) -> RunConfig:
    """Parse ``[run]``, ``[mcmc]`` and ``[dart]`` sections; unknown keys are errors.

    ``overrides`` (e.g. seed, threads, method from the command line) win.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise InputError(f"config: {err}") from None
    for sec in cp.sections():
        if sec not in ("run", "mcmc", "dart"):
            raise InputError(f"unknown config section [{sec}]")
    base = McmcConfig()
    run, mcmc, dart = {}, {}, {}
    for sec, allowed, out, types in (
        ("run", set(_RUN_TYPES), run, _RUN_TYPES),
        ("mcmc", _MCMC_KEYS, mcmc, {k: getattr(base, k) for k in _MCMC_KEYS}),
        ("dart", _DART_KEYS, dart, _DART_TYPES),
    ):
        if sec not in cp:
            continue
        for key, value in cp[sec].items():
            if key not in allowed:
                raise InputError(f"unknown key {key!r} in [{sec}]")
            out[key] = value.strip() if key == "method" else _coerce(value, types[key], key)
    for key in ("seed", "threads"):
        if overrides.get(key) is not None:
            mcmc[key] = int(overrides[key])
    if overrides.get("method") is not None:
        run["method"] = overrides["method"]
    try:
        mc = McmcConfig(dart=DartPrior(**dart), **mcmc)
    except (TypeError, ValueError) as err:
        raise InputError(f"config: {err}") from None
    return RunConfig(mcmc=mc, **run)


def load_run_config(path=None, **overrides) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return parse_run_config(text, **overrides)


def mcmc_from_dict(d: dict) -> McmcConfig:
    d = dict(d)
    return McmcConfig(dart=DartPrior(**d.pop("dart")), **d)


# -- model persistence --------------------------------------------------------------


def cohort_checksum(cohort: Cohort) -> str:
    h = hashlib.sha256()
    for arr in (cohort.time, cohort.delta.astype(np.int64), cohort.cause.astype(np.int64), cohort.X):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _encode_subfit(fit: ProbitFit) -> dict:
    f = fit.forest
    return {
        "seed": int(fit.cfg.seed),
        "mu0": float(fit.mu0),
        "n_vars": int(fit.n_vars),
        "accept_rate": _num(fit.accept_rate),
        "counts": np.asarray(fit.counts).astype(int).tolist(),
        "split_probs": None if fit.split_probs is None else np.asarray(fit.split_probs).tolist(),
        "draws": [[f.tree(d, t).to_dict() for t in range(f.m)] for d in range(f.n_draws)],
    }


def _decode_subfit(doc: dict, cfg: McmcConfig) -> ProbitFit:
    draws = [[Tree.from_dict(t) for t in d] for d in doc["draws"]]
    if not draws:
        raise ModelFormatError("sub-fit holds no draws")
    sp = doc["split_probs"]
    return ProbitFit(
        forest=ForestDraws.from_trees(draws),
        mu0=float(doc["mu0"]),
        cfg=dataclasses.replace(cfg, seed=int(doc["seed"])),
        counts=np.asarray(doc["counts"], dtype=np.int64),
        split_probs=None if sp is None else np.asarray(sp, dtype=np.float64),
        n_vars=int(doc["n_vars"]),
        accept_rate=float("nan") if doc["accept_rate"] is None else doc["accept_rate"],
    )


def _canonical(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def model_document(fit: CriskFit, cohort: Cohort | None = None, run: RunConfig | None = None, names=None) -> dict:
    body = {
        "covariates": list(names) if names is not None else None,
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "method": fit.method,
        "drop_event_factor": bool(getattr(fit, "drop_event_factor", False)),
        "grid": fit.grid.times.tolist(),
        "config": dataclasses.asdict(fit.cfg if fit.cfg is not None else next(iter(fit.subfits.values())).cfg),
        "run": run.to_dict() if run is not None else None,
        "data_checksum": cohort_checksum(cohort) if cohort is not None else None,
        "subfits": {k: _encode_subfit(v) for k, v in fit.subfits.items()},
    }
    body["checksum"] = hashlib.sha256(_canonical(body)).hexdigest()
    return body


def save_model(fit: CriskFit, path, cohort: Cohort | None = None, run: RunConfig | None = None, names=None) -> str:
    """Write a versioned JSON artifact atomically; returns its checksum."""
    doc = model_document(fit, cohort, run, names)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_canonical(doc))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return doc["checksum"]


@dataclass
class ModelArtifact:
    fit: CriskFit
    version: int
    config: McmcConfig
    run: dict | None
    data_checksum: str | None
    checksum: str
    names: list[str] | None = None


def load_model(path) -> ModelArtifact:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise ModelFormatError(f"{path}: not a complete model file (truncated or corrupt)") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: format version {doc.get('version')} is not supported (expected {FORMAT_VERSION})"
        )
    stored = doc.pop("checksum", None)
    if stored != hashlib.sha256(_canonical(doc)).hexdigest():
        raise ModelFormatError(f"{path}: checksum mismatch")
    try:
        cfg = mcmc_from_dict(doc["config"])
        grid = TimeGrid(doc["grid"])
        subs = {k: _decode_subfit(v, cfg) for k, v in doc["subfits"].items()}
        if doc["method"] == "m1":
            fit = CriskFitM1(subs["any_event"], subs["cause1_given_event"], grid, doc["drop_event_factor"], cfg)
        elif doc["method"] == "m2":
            fit = CriskFitM2(subs["cause1"], subs["cause2_given_no_cause1"], grid, cfg)
        else:
            raise ModelFormatError(f"unknown method {doc['method']!r}")
    except (KeyError, TypeError, IndexError) as err:
        raise ModelFormatError(f"{path}: malformed model ({err})") from None
    return ModelArtifact(fit, doc["version"], cfg, doc.get("run"), doc.get("data_checksum"), stored, doc.get("covariates"))
