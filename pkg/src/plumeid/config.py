"""Run configuration: flat key-value file with sections, strictly validated.

Unknown sections or keys are errors; a numerics pipeline must fail loudly on
misconfiguration. The grammar is documented in the README; `default_config`
mirrors the 2D experiment parameters.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .synth import Circle, InclusionGeometry, Rectangle


class ConfigError(ValueError):
    """Invalid or unknown configuration content (CLI exit code 2)."""


@dataclass(frozen=True)
class GridConfig:
    lx: float = 3.0
    ly: float = 1.0
    nx: int = 30
    ny: int = 10
    relax_level: int = 0
    shape_level: int = 2


@dataclass(frozen=True)
class ModelConfig:
    c: float = 0.01
    bx: float = 1.0
    by: float = 0.0


@dataclass(frozen=True)
class RelaxConfig:
    mu: float = 5e-2
    gamma: float = 2e1
    eps_newton: float = 1e-12
    max_newton: int = 50


@dataclass(frozen=True)
class ShapeConfig:
    alpha: float = 3e-1
    eps_psi: float = 1e-4
    max_iters: int = 600
    halve_dt_on_increase: bool = False


@dataclass(frozen=True)
class TransportConfig:
    dt: float = 0.3
    eps_factor: float = 1e-2


@dataclass(frozen=True)
class DataConfig:
    geometry: str = "rect 0.4 0.9 0.25 0.55; circle 1.6 0.65 0.2"
    noise_seed: int = 7
    noise_level: float = 0.05
    sensors: str = "full"  # or "grid k=6 coverage=0.264"
    measurements_file: str = ""  # empty: generate inline


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    snapshot_stride: int = 0  # 0 disables per-iteration snapshots
    threads: int = 1
    write_vtk: bool = True


@dataclass(frozen=True)
class ProblemConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    relax: RelaxConfig = field(default_factory=RelaxConfig)
    shape: ShapeConfig = field(default_factory=ShapeConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "ProblemConfig":
        g = self.grid
        if g.lx <= 0 or g.ly <= 0 or g.nx < 1 or g.ny < 1:
            raise ConfigError(f"invalid grid: {g}")
        if g.relax_level < 0 or g.shape_level < g.relax_level:
            raise ConfigError("grid levels must satisfy 0 <= relax_level <= shape_level")
        if self.model.c <= 0:
            raise ConfigError(f"diffusivity must be positive, got {self.model.c}")
        for name, value in (
            ("relax.mu", self.relax.mu),
            ("relax.gamma", self.relax.gamma),
            ("relax.eps_newton", self.relax.eps_newton),
            ("shape.eps_psi", self.shape.eps_psi),
            ("transport.dt", self.transport.dt),
        ):
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0 < self.shape.alpha < 1:
            raise ConfigError(f"shape.alpha must be in (0, 1), got {self.shape.alpha}")
        if self.transport.eps_factor < 0:
            raise ConfigError(f"transport.eps_factor must be >= 0, got {self.transport.eps_factor}")
        if self.data.noise_level < 0:
            raise ConfigError(f"data.noise_level must be >= 0, got {self.data.noise_level}")
        if self.output.threads < 1:
            raise ConfigError(f"output.threads must be >= 1, got {self.output.threads}")
        if self.output.snapshot_stride < 0:
            raise ConfigError("output.snapshot_stride must be >= 0")
        parse_geometry(self.data.geometry)
        parse_sensors(self.data.sensors)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def default_config() -> ProblemConfig:
    return ProblemConfig().validate()


_SECTION_TYPES = {
    "grid": GridConfig,
    "model": ModelConfig,
    "relax": RelaxConfig,
    "shape": ShapeConfig,
    "transport": TransportConfig,
    "data": DataConfig,
    "output": OutputConfig,
}


def _convert(raw: str, target_type: type, where: str):
    try:
        if target_type is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(sections: dict[str, dict[str, str]]) -> ProblemConfig:
    kwargs = {}
    for section, values in sections.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTION_TYPES[section]
        known = set(cls.__dataclass_fields__)
        section_kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            target = type(getattr(cls(), key))
            section_kwargs[key] = _convert(str(raw), target, f"[{section}] {key}")
        kwargs[section] = cls(**section_kwargs)
    return ProblemConfig(**kwargs).validate()


def load_config(path) -> ProblemConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict({s: dict(parser.items(s)) for s in parser.sections()})


def write_config(config: ProblemConfig, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in config.to_dict().items():
        parser[section] = {k: str(v) for k, v in values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def with_overrides(config: ProblemConfig, *, seed=None, output_dir=None, threads=None,
                   snapshot_stride=None) -> ProblemConfig:
    if seed is not None:
        config = replace(config, data=replace(config.data, noise_seed=int(seed)))
    if output_dir is not None:
        config = replace(config, output=replace(config.output, dir=str(output_dir)))
    if threads is not None:
        config = replace(config, output=replace(config.output, threads=int(threads)))
    if snapshot_stride is not None:
        config = replace(config, output=replace(config.output, snapshot_stride=int(snapshot_stride)))
    return config.validate()


def parse_geometry(spec: str) -> InclusionGeometry:
    """Parse 'rect x0 x1 y0 y1; circle cx cy r; ...' into a geometry."""
    primitives = []
    for chunk in spec.split(";"):
        tokens = chunk.split()
        if not tokens:
            continue
        kind, args = tokens[0].lower(), tokens[1:]
        try:
            values = [float(t) for t in args]
        except ValueError as exc:
            raise ConfigError(f"bad geometry numbers in {chunk!r}") from exc
        if kind == "rect" and len(values) == 4:
            x0, x1, y0, y1 = values
            if x1 <= x0 or y1 <= y0:
                raise ConfigError(f"empty rectangle in {chunk!r}")
            primitives.append(Rectangle(*values))
        elif kind == "circle" and len(values) == 3:
            if values[2] <= 0:
                raise ConfigError(f"non-positive radius in {chunk!r}")
            primitives.append(Circle(*values))
        else:
            raise ConfigError(f"bad geometry primitive {chunk!r} (want 'rect x0 x1 y0 y1' or 'circle cx cy r')")
    if not primitives:
        raise ConfigError(f"geometry {spec!r} contains no primitives")
    return InclusionGeometry(tuple(primitives))


def parse_sensors(spec: str) -> dict | None:
    """Parse the sensor layout: 'full' or 'grid k=6 coverage=0.264'."""
    tokens = spec.split()
    if tokens == ["full"]:
        return None
    if tokens and tokens[0] == "grid":
        out = {}
        for token in tokens[1:]:
            if "=" not in token:
                raise ConfigError(f"bad sensor token {token!r}")
            key, _, val = token.partition("=")
            if key == "k":
                out["k"] = int(val)
            elif key == "coverage":
                out["coverage"] = float(val)
            else:
                raise ConfigError(f"unknown sensor key {key!r}")
        if set(out) != {"k", "coverage"}:
            raise ConfigError(f"sensor grid needs k= and coverage=, got {spec!r}")
        return out
    raise ConfigError(f"bad sensors spec {spec!r} (want 'full' or 'grid k=.. coverage=..')")
