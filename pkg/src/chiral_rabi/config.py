"""
Run configuration: an INI file with sections, overridable by command-line flags.

Example::

    [run]
    model = lattice
    action = quench
    output_dir = out/quench
    workers = 1

    [params]
    g = 1.0
    J = 0.2
    L = 20

    [grids]
    time = 0:30:0.05
    time_unit = gt

    [truncation]
    n_max = 2

Grids are written ``start:stop:step`` (stop included) or as a comma list.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .hilbert import ModelParams

OUTPUT_DIR_ENV = "CHIRAL_RABI_OUTPUT_DIR"

ACTIONS = {
    "single": ("eig", "dynamics", "sweep"),
    "vlevel": ("eig",),
    "lattice": ("ground", "quench"),
    "rwa": ("bound", "oracle"),
    "selftest": ("run",),
}
TIME_UNITS = ("gt", "gt_2pi", "omega0_t")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line in the file when known."""

    def __init__(self, msg: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line is not None else ""
        super().__init__(where + msg)


@dataclass(frozen=True)
class Grid:
    """A strictly increasing grid given as ``start:stop:step`` or ``a,b,c``."""

    spec: str

    def __post_init__(self):
        vals = self.values
        if len(vals) == 0:
            raise ValueError(f"grid {self.spec!r} is empty")
        if np.any(np.diff(vals) <= 0):
            raise ValueError(f"grid {self.spec!r} is not strictly increasing")

    @property
    def values(self) -> np.ndarray:
        s = self.spec.strip()
        if ":" in s:
            parts = s.split(":")
            if len(parts) != 3:
                raise ValueError(f"range grid needs start:stop:step, got {s!r}")
            start, stop, step = (float(p) for p in parts)
            if step <= 0:
                raise ValueError(f"grid step must be > 0 in {s!r}")
            if stop < start:
                raise ValueError(f"grid stop below start in {s!r}")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return np.round(start + step * np.arange(n), 12)
        return np.array([float(x) for x in s.split(",") if x.strip()])

    @classmethod
    def single(cls, value: float) -> "Grid":
        return cls(repr(float(value)))

    def __str__(self):
        return self.spec


@dataclass(frozen=True)
class RunConfig:
    model: str
    action: str
    params: ModelParams = field(default_factory=ModelParams)
    sectors: tuple = (0, 1)
    n_max: Optional[int] = None
    photon_cap: Optional[int] = None
    levels: int = 6
    g_grid: Optional[Grid] = None
    time_grid: Optional[Grid] = None
    time_unit: str = "gt"
    eig_tol: float = 1e-10
    krylov_tol: float = 1e-10
    lanczos_tol: Optional[float] = None
    output_dir: str = ""
    workers: int = 1

    def __post_init__(self):
        if self.model not in ACTIONS:
            raise ValueError(f"unknown model {self.model!r}; choose from {sorted(ACTIONS)}")
        if self.action not in ACTIONS[self.model]:
            raise ValueError(f"model {self.model!r} has no action {self.action!r}; choose from {ACTIONS[self.model]}")
        if self.time_unit not in TIME_UNITS:
            raise ValueError(f"time_unit must be one of {TIME_UNITS}")
        for name in ("eig_tol", "krylov_tol", "lanczos_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.n_max is not None and self.n_max < 0:
            raise ValueError("n_max must be >= 0")

    @property
    def output_path(self) -> Path:
        base = self.output_dir or os.environ.get(OUTPUT_DIR_ENV, "") or "chiral_rabi_output"
        return Path(base)

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        d["g_grid"] = None if self.g_grid is None else self.g_grid.spec
        d["time_grid"] = None if self.time_grid is None else self.time_grid.spec
        d["sectors"] = list(self.sectors)
        return d

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = {"model": self.model, "action": self.action, "output_dir": self.output_dir,
                     "workers": str(self.workers)}
        cp["params"] = {k: repr(v) for k, v in asdict(self.params).items()}
        cp["grids"] = {"g": "" if self.g_grid is None else self.g_grid.spec,
                       "time": "" if self.time_grid is None else self.time_grid.spec,
                       "time_unit": self.time_unit}
        cp["truncation"] = {"sectors": ",".join(str(s) for s in self.sectors),
                            "n_max": _opt(self.n_max), "photon_cap": _opt(self.photon_cap),
                            "levels": str(self.levels)}
        cp["solver"] = {"eig_tol": repr(self.eig_tol), "krylov_tol": repr(self.krylov_tol),
                        "lanczos_tol": _opt(self.lanczos_tol)}
        buf = []
        for sec in cp.sections():
            buf.append(f"[{sec}]")
            buf.extend(f"{k} = {v}" for k, v in cp[sec].items())
            buf.append("")
        return "\n".join(buf)


def _opt(v) -> str:
    return "" if v is None else repr(v)


# key -> (section, converter, RunConfig field or "params.<name>")
_SCHEMA = {
    ("run", "model"): (str, "model"),
    ("run", "action"): (str, "action"),
    ("run", "output_dir"): (str, "output_dir"),
    ("run", "workers"): (int, "workers"),
    ("params", "omega0"): (float, "params.omega0"),
    ("params", "omega_c"): (float, "params.omega_c"),
    ("params", "g"): (float, "params.g"),
    ("params", "J"): (float, "params.J"),
    ("params", "delta"): (float, "params.delta"),
    ("params", "L"): (int, "params.L"),
    ("grids", "g"): (Grid, "g_grid"),
    ("grids", "time"): (Grid, "time_grid"),
    ("grids", "time_unit"): (str, "time_unit"),
    ("truncation", "sectors"): (lambda s: tuple(int(x) for x in s.split(",") if x.strip()), "sectors"),
    ("truncation", "n_max"): (int, "n_max"),
    ("truncation", "photon_cap"): (int, "photon_cap"),
    ("truncation", "levels"): (int, "levels"),
    ("solver", "eig_tol"): (float, "eig_tol"),
    ("solver", "krylov_tol"): (float, "krylov_tol"),
    ("solver", "lanczos_tol"): (float, "lanczos_tol"),
}


def _line_index(text: str) -> dict:
    """Map (section, key) to its 1-based line number."""
    out = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = i
            continue
        m = re.match(r"^([^=:#;]+?)\s*[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip())] = i
    return out


def parse_config_text(text: str, source: Optional[str] = None, base: Optional[dict] = None) -> dict:
    """Parse INI text into a dict of RunConfig overrides.

    Unknown sections or keys and unparsable values raise ``ConfigError``
    with the offending line.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(str(exc).splitlines()[0], line, source) from exc
    lines = _line_index(text)
    sections = {s for s, _ in _SCHEMA}
    out = dict(base or {})
    for sec in cp.sections():
        if sec not in sections:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)), source)
        for key, raw in cp[sec].items():
            if (sec, key) not in _SCHEMA:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lines.get((sec, key)), source)
            conv, target = _SCHEMA[(sec, key)]
            raw = raw.strip()
            if raw == "":
                out[target] = None
                continue
            try:
                out[target] = conv(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", lines.get((sec, key)), source) from exc
    return out


def build_config(overrides: dict, source: Optional[str] = None, lines: Optional[dict] = None) -> RunConfig:
    """Assemble a RunConfig from flat overrides (``params.<name>`` keys go to ModelParams)."""
    p_kw = {k.split(".", 1)[1]: v for k, v in overrides.items() if k.startswith("params.") and v is not None}
    kw = {k: v for k, v in overrides.items() if not k.startswith("params.")}
    kw = {k: v for k, v in kw.items() if v is not None or k in ("n_max", "photon_cap", "lanczos_tol", "g_grid", "time_grid")}
    if "sectors" in kw and kw["sectors"] is None:
        kw.pop("sectors")
    try:
        params = ModelParams(**p_kw)
        return RunConfig(params=params, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), None, source) from exc


def load_config(path, base: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    return build_config(parse_config_text(path.read_text(encoding="utf-8"), str(path), base), str(path))
