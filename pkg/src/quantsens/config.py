"""Run configuration (JSON) for the command-line pipeline."""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapSpec
from .errors import ConfigError
from .qr import TAU_MAX, TAU_MIN
from .system import COND_THRESHOLD, LEVEL_ATOL, PipelineConfig

DEFAULT_GRID = {"start": 0.01, "stop": 0.99, "step": 0.01}
DEFAULT_IMPULSE_TAUS = (0.10, 0.25, 0.50, 0.75, 0.90)


@dataclass(frozen=True)
class SeriesSpec:
    name: str
    path: Path
    role: str = "response"
    is_rate: bool = False
    date_column: str = None
    value_column: str = None


@dataclass(frozen=True)
class RunConfig:
    series: tuple
    p: int = 12
    h: int = 12
    grid: tuple = ()
    impulse_taus: tuple = DEFAULT_IMPULSE_TAUS
    bootstrap: BootstrapSpec = BootstrapSpec()
    seed: int = 0
    output_dir: Path = Path("out")
    breakpoints: tuple = ()
    rearrange: bool = True
    cond_threshold: float = COND_THRESHOLD
    dgp: dict = field(default_factory=dict)
    simulate_T: int = 2000
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def impulse(self):
        return next(s.name for s in self.series if s.role == "impulse")

    @property
    def responses(self):
        return tuple(s.name for s in self.series if s.role == "response")

    def pipeline(self):
        return PipelineConfig(p=self.p, h=self.h, taus=self.grid, rearrange=self.rearrange,
                              cond_threshold=self.cond_threshold)

    def digest(self):
        return config_digest(self.raw)


def config_digest(raw):
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def make_grid(spec):
    """Level grid from an explicit list or a ``{start, stop, step}`` range."""
    if isinstance(spec, dict):
        try:
            start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("grid range needs numeric start, stop and step") from None
        if step <= 0 or stop < start:
            raise ConfigError("grid range must have step > 0 and stop >= start")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        taus = np.round(start + step * np.arange(count), 10)
    else:
        taus = np.asarray(spec, dtype=float)
    if taus.ndim != 1 or taus.size < 2 or np.any(np.diff(taus) <= 0):
        raise ConfigError("grid must hold at least two strictly increasing levels")
    if taus[0] < TAU_MIN - 1e-12 or taus[-1] > TAU_MAX + 1e-12:
        raise ConfigError(f"grid levels must lie within [{TAU_MIN}, {TAU_MAX}]")
    return tuple(float(t) for t in taus)


def load_config(source, overrides=None):
    """Parse a config file (path) or mapping; relative paths resolve
    against the file's directory."""
    if isinstance(source, dict):
        raw, base = dict(source), Path.cwd()
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        base = path.resolve().parent
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return parse_config(raw, base)


def parse_config(raw, base):
    try:
        series = tuple(
            SeriesSpec(s["name"], base / s["path"], s.get("role", "response"),
                       bool(s.get("is_rate", False)), s.get("date_column"), s.get("value_column"))
            for s in raw.get("series", [])
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"series entries need name and path ({exc})") from None
    if series:
        roles = [s.role for s in series]
        if roles.count("impulse") != 1 or any(r not in ("impulse", "response") for r in roles):
            raise ConfigError("exactly one series must have role 'impulse', the rest 'response'")
        if len(series) < 2:
            raise ConfigError("at least two series are required")

    try:
        p, h = int(raw.get("p", 12)), int(raw.get("h", 12))
        seed = int(raw.get("seed", 0))
        cond = float(raw.get("cond_threshold", COND_THRESHOLD))
    except (TypeError, ValueError):
        raise ConfigError("p, h, seed and cond_threshold must be numeric") from None
    if p < 1 or h < 1:
        raise ConfigError("p and h must be at least 1")

    grid = make_grid(raw.get("grid", DEFAULT_GRID))
    impulse_taus = tuple(float(t) for t in raw.get("impulse_taus", DEFAULT_IMPULSE_TAUS))
    for t in impulse_taus:
        if not np.any(np.abs(np.asarray(grid) - t) <= LEVEL_ATOL):
            raise ConfigError(f"impulse level {t:g} is not a member of the fitted grid")

    b = raw.get("bootstrap", {})
    try:
        boot = BootstrapSpec(int(b.get("replicates", 1000)), b.get("block_length"), seed,
                             float(b.get("coverage", 0.68)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid bootstrap settings: {exc}") from None

    return RunConfig(
        series=series, p=p, h=h, grid=grid, impulse_taus=impulse_taus, bootstrap=boot,
        seed=seed, output_dir=base / raw.get("output_dir", "out"),
        breakpoints=tuple(raw.get("breakpoints", ())), rearrange=bool(raw.get("rearrange", True)),
        cond_threshold=cond, dgp=dict(raw.get("dgp", {})),
        simulate_T=int(raw.get("simulate_T", 2000)), raw=raw,
    )
