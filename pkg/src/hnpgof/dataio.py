"""CSV ingestion, bundled case-study data and scenario config files."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .envelope import PENALTIES, SCALINGS, PenaltyHyper
from .fitting import Dataset
from .simulation import S2StudyConfig, ScenarioConfig

TRANSFORMS = {
    "none": lambda x: x,
    "log1p": np.log1p,
}

#: Environment variable naming a local copy of the walleye data.
WALLEYE_ENV = "HNPGOF_WALLEYE_CSV"


class DataError(ValueError):
    """Malformed input data, with the offending position when known."""


class ConfigError(ValueError):
    """Malformed scenario configuration file."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{':'.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class BundledDataset:
    name: str
    response: str
    covariates: tuple[str, ...]
    description: str


BUNDLED = {
    "spider": BundledDataset(
        "spider",
        "Alopacce",
        ("soil.dry",),
        "Alopecosa accentuata counts at 28 sites; soil.dry is already on the log(x+1) scale",
    ),
    "walleye": BundledDataset(
        "walleye",
        "count",
        ("age",),
        f"not redistributable; point {WALLEYE_ENV} at a local CSV",
    ),
}


def resolve_path(name_or_path: str | os.PathLike) -> Path:
    """Map a bundled dataset name to its file; other values are taken as paths."""
    key = str(name_or_path)
    if key == "spider":
        return Path(str(resources.files("hnpgof") / "data" / "spider.csv"))
    if key == "walleye":
        env = os.environ.get(WALLEYE_ENV)
        if not env:
            raise DataError(f"walleye data is not bundled; set {WALLEYE_ENV} to a local CSV file")
        return Path(env)
    return Path(key)


def walleye_available() -> bool:
    env = os.environ.get(WALLEYE_ENV)
    return bool(env) and Path(env).is_file()


def _parse_count(text: str, where: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse {text!r} as an integer count") from None
    if not math.isfinite(value) or value != math.floor(value):
        raise DataError(f"{where}: {text!r} is not an integer count")
    if value < 0:
        raise DataError(f"{where}: negative count {text!r}")
    return int(value)


def _parse_real(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"{where}: non-finite value {text!r}")
    return value


def load_csv(
    path: str | os.PathLike,
    response_column: str | None = None,
    covariate_columns: Sequence[str] | None = None,
    transforms: Mapping[str, str] | None = None,
) -> Dataset:
    """Read a header-row CSV into a :class:`Dataset` (intercept prepended).

    ``path`` may also be a bundled dataset name, in which case the response
    and covariates default to that dataset's columns. ``transforms`` maps
    covariate names to ``"none"`` or ``"log1p"``.
    """
    bundled = BUNDLED.get(str(path))
    if bundled is not None:
        response_column = response_column or bundled.response
        if covariate_columns is None:
            covariate_columns = bundled.covariates
    if response_column is None:
        raise DataError("no response column given")
    covariate_columns = list(covariate_columns or [])
    transforms = dict(transforms or {})
    for col, tag in transforms.items():
        if tag not in TRANSFORMS:
            raise DataError(f"unknown transform {tag!r} for column {col!r}")
        if col not in covariate_columns:
            raise DataError(f"transform given for {col!r}, which is not a covariate")

    file = resolve_path(path)
    try:
        handle = open(file, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{file}: {exc.strerror or exc}") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{file}: no data rows")
        header = [h.strip() for h in header]
        index = {}
        for col in [response_column, *covariate_columns]:
            if col not in header:
                raise DataError(f"{file}: missing column {col!r}")
            index[col] = header.index(col)
        ys: list[int] = []
        xs: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{file}: row {line_no}: expected {len(header)} fields, got {len(row)}")
            cell = lambda c: row[index[c]].strip()  # noqa: E731
            ys.append(_parse_count(cell(response_column),
                                   f"{file}: row {line_no}, column {response_column!r}"))
            xs.append([_parse_real(cell(c), f"{file}: row {line_no}, column {c!r}")
                       for c in covariate_columns])
    if not ys:
        raise DataError(f"{file}: no data rows")

    cov = np.asarray(xs, dtype=float).reshape(len(ys), len(covariate_columns))
    for j, col in enumerate(covariate_columns):
        tag = transforms.get(col, "none")
        if tag == "log1p" and np.any(cov[:, j] <= -1):
            raise DataError(f"{file}: column {col!r} has values <= -1; log1p undefined")
        cov[:, j] = TRANSFORMS[tag](cov[:, j])
    names = [f"{transforms[c]}({c})" if transforms.get(c, "none") != "none" else c
             for c in covariate_columns]
    return Dataset.from_covariates(np.asarray(ys), *cov.T, names=names)


# --------------------------------------------------------------------------- #
# Scenario configuration files
# --------------------------------------------------------------------------- #
#
# Plain ``key = value`` lines; ``#`` starts a comment. Keys before the first
# ``[section]`` are defaults for every section. Each ``[scenario]`` section
# describes one scenario; a comma list for ``n`` expands into one scenario per
# sample size. Study files use a single ``[study]`` section (or none).

_SCENARIO_KEYS = {
    "name", "parent", "n", "phi", "nu", "beta", "beta0", "beta1", "reps", "families", "p", "seed",
    "underdispersed", "sims", "alpha", "zero_model", "phi_is_size",
}
_STUDY_KEYS = {
    "parents", "n", "reps", "families", "penalties", "scalings", "p", "seed", "beta",
    "sims", "alpha", "alpha_pen", "gamma", "gamma1", "gamma2", "delta", "eta", "phi_is_size",
}


@dataclass
class _Section:
    name: str
    line: int
    values: dict[str, tuple[str, int]]


def _read_sections(text: str, path: str | None) -> tuple[dict[str, tuple[str, int]], list[_Section]]:
    defaults: dict[str, tuple[str, int]] = {}
    sections: list[_Section] = []
    current = defaults
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", line_no, path)
            sections.append(_Section(line[1:-1].strip().lower(), line_no, {}))
            current = sections[-1].values
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", line_no, path)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower().replace("-", "_")
        if not key:
            raise ConfigError("empty key", line_no, path)
        if key in current:
            raise ConfigError(f"duplicate key {key!r}", line_no, path)
        current[key] = (value, line_no)
    return defaults, sections


def _list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


class _Converter:
    def __init__(self, values: dict[str, tuple[str, int]], path: str | None):
        self.values = values
        self.path = path

    def has(self, key):
        return key in self.values

    def line(self, key):
        return self.values[key][1] if key in self.values else None

    def get(self, key, conv, default=None):
        if key not in self.values:
            return default
        text, line = self.values[key]
        try:
            return conv(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", line, self.path) from None

    def fail(self, key, message):
        raise ConfigError(message, self.line(key), self.path)


def _int(text):
    return int(text)


def _ints(text):
    out = [int(v) for v in _list(text)]
    if not out:
        raise ValueError("empty list")
    return out


def _floats(text):
    return [float(v) for v in _list(text)]


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _families(text):
    from .distributions import FamilyTag

    return tuple(FamilyTag.parse(v) for v in _list(text))


def _check_keys(values, allowed, path):
    for key, (_, line) in values.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", line, path)


def parse_scenario_config(text: str, path: str | None = None, seed: int | None = None,
                          reps: int | None = None) -> list[ScenarioConfig]:
    """Scenarios described by a config file; ``seed``/``reps`` override file values."""
    defaults, sections = _read_sections(text, path)
    for sec in sections:
        if sec.name != "scenario":
            raise ConfigError(f"unknown section [{sec.name}]", sec.line, path)
    if not sections:
        sections = [_Section("scenario", 1, {})]
    out: list[ScenarioConfig] = []
    for sec in sections:
        merged = {**defaults, **sec.values}
        _check_keys(merged, _SCENARIO_KEYS, path)
        c = _Converter(merged, path)
        if not c.has("parent"):
            raise ConfigError("missing required key 'parent'", sec.line, path)
        kwargs = {}
        kwargs["parent"] = c.get("parent", lambda t: _families(t)[0])
        fams = c.get("families", _families)
        if fams:
            kwargs["candidate_families"] = fams
        for key, conv in (("phi", float), ("nu", float), ("alpha", float)):
            if c.has(key):
                kwargs[key] = c.get(key, conv)
        if c.has("beta"):
            if c.has("beta0") or c.has("beta1"):
                c.fail("beta", "give either beta or beta0/beta1, not both")
            kwargs["beta"] = tuple(c.get("beta", _floats))
        elif c.has("beta0") or c.has("beta1"):
            from .simulation import DEFAULT_BETA

            kwargs["beta"] = (c.get("beta0", float, DEFAULT_BETA[0]),
                              c.get("beta1", float, DEFAULT_BETA[1]))
        if c.has("p"):
            kwargs["p_values"] = tuple(c.get("p", _ints))
        if c.has("sims"):
            kwargs["n_sim"] = c.get("sims", _int)
        if c.has("underdispersed"):
            kwargs["underdispersed"] = c.get("underdispersed", _bool)
        if c.has("zero_model"):
            kwargs["zero_model"] = c.get("zero_model", str)
        if c.has("phi_is_size"):
            kwargs["phi_is_size"] = c.get("phi_is_size", _bool)
        kwargs["reps"] = reps if reps is not None else c.get("reps", _int, 200)
        kwargs["seed"] = seed if seed is not None else c.get("seed", _int, 0)
        if kwargs["reps"] < 1:
            c.fail("reps", "reps must be >= 1")
        sizes = c.get("n", _ints, [100])
        name = c.get("name", str, "")
        for n in sizes:
            label = f"{name} n={n}" if name and len(sizes) > 1 else name
            try:
                out.append(ScenarioConfig(n=n, name=label, **kwargs))
            except ValueError as exc:
                raise ConfigError(str(exc), sec.line, path) from None
    return out


def _parents(text):
    from .distributions import FamilyTag

    out = []
    for item in _list(text):
        fam, _, phi = item.partition(":")
        out.append((FamilyTag.parse(fam), float(phi) if phi else 1.0))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _choices(allowed):
    def conv(text):
        vals = tuple(_list(text))
        for v in vals:
            if v not in allowed:
                raise ValueError(f"{v!r} is not one of {', '.join(allowed)}")
        return vals

    return conv


def parse_study_config(text: str, path: str | None = None, seed: int | None = None) -> S2StudyConfig:
    """Penalty/scaling study grid; ``parents`` is a list of ``family:phi`` items."""
    defaults, sections = _read_sections(text, path)
    if len(sections) > 1:
        raise ConfigError("study files take at most one section", sections[1].line, path)
    values = dict(defaults)
    if sections:
        if sections[0].name != "study":
            raise ConfigError(f"unknown section [{sections[0].name}]", sections[0].line, path)
        values.update(sections[0].values)
    _check_keys(values, _STUDY_KEYS, path)
    c = _Converter(values, path)
    kwargs = {}
    if c.has("parents"):
        kwargs["parents"] = c.get("parents", _parents)
    if c.has("n"):
        kwargs["sample_sizes"] = tuple(c.get("n", _ints))
    if c.has("families"):
        kwargs["families"] = c.get("families", _families)
    if c.has("penalties"):
        kwargs["penalties"] = c.get("penalties", _choices(PENALTIES))
    if c.has("scalings"):
        kwargs["scalings"] = c.get("scalings", _choices(SCALINGS))
    if c.has("p"):
        kwargs["p_values"] = tuple(c.get("p", _ints))
    if c.has("beta"):
        kwargs["beta"] = tuple(c.get("beta", _floats))
    if c.has("sims"):
        kwargs["n_sim"] = c.get("sims", _int)
    if c.has("alpha"):
        kwargs["alpha"] = c.get("alpha", float)
    if c.has("phi_is_size"):
        kwargs["phi_is_size"] = c.get("phi_is_size", _bool)
    kwargs["reps"] = c.get("reps", _int, 100)
    if kwargs["reps"] < 1:
        c.fail("reps", "reps must be >= 1")
    kwargs["seed"] = seed if seed is not None else c.get("seed", _int, 0)
    hyper = {k: c.get(k, float) for k in ("alpha_pen", "gamma", "gamma1", "gamma2", "delta", "eta")
             if c.has(k)}
    if hyper:
        kwargs["hyper"] = PenaltyHyper(**hyper)
    try:
        return S2StudyConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc), None, path) from None
