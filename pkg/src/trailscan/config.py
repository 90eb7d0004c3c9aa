"""Run configuration: one INI file driving every module's tunables.

Defaults mirror the operating point used throughout the package (SNR range
2-30, split 0.8, min_length_ratio 0.12, learning rate 0.01, batch 2), so a
fully-defaulted config reproduces the desk-scale runs.  Unknown sections or
keys raise, catching typos instead of silently ignoring them.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .evalkit import MatchCriteria
from .linedet import LsdParams
from .segnet import NetConfig, TrainConfig
from .simulator import NoiseModel, PsfModel


@dataclass(frozen=True)
class SimulateParams:
    width: int = 256
    height: int = 256
    count: int = 375
    snr_low: float = 2.0
    snr_high: float = 30.0
    snr_weights: tuple[float, ...] = (3.0, 2.0, 1.0, 1.0)
    split_ratio: float = 0.8
    n_backgrounds: int = 8
    n_stars: int = 12
    trails_per_entry: int = 1
    fwhm: float = 4.712

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not (0.0 < self.snr_low < self.snr_high):
            raise ValueError("need 0 < snr_low < snr_high")
        if not (0.0 < self.split_ratio < 1.0):
            raise ValueError("split_ratio must be in (0, 1)")


@dataclass(frozen=True)
class GridParams:
    rows: int = 4
    cols: int = 5
    overlap: float = 0.1
    mask_halfwidth: float = 5.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have >= 1 row and column")
        if not (0.0 <= self.overlap < 1.0):
            raise ValueError("overlap must be in [0, 1)")


@dataclass(frozen=True)
class SweepParams:
    snr_values: tuple[float, ...] = (0.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0, 20.0, 30.0)
    trials_per_snr: int = 100
    ratios: tuple[float, ...] = (0.0, 0.12, 0.14, 0.20, 0.39, 0.78)

    def __post_init__(self):
        if self.trials_per_snr < 1:
            raise ValueError("trials_per_snr must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 2024
    out_dir: Path = Path("runs")
    binarize_threshold: float = 0.5
    simulate: SimulateParams = SimulateParams()
    network: NetConfig = NetConfig()
    training: TrainConfig = TrainConfig()
    lsd: LsdParams = LsdParams()
    noise: NoiseModel = NoiseModel()
    grid: GridParams = GridParams()
    criteria: MatchCriteria = MatchCriteria()
    sweep: SweepParams = SweepParams()

    @property
    def psf(self) -> PsfModel:
        return PsfModel(fwhm_x=self.simulate.fwhm, fwhm_y=self.simulate.fwhm)


_SECTION_TYPES = {
    "simulate": SimulateParams,
    "network": NetConfig,
    "training": TrainConfig,
    "lsd": LsdParams,
    "noise": NoiseModel,
    "grid": GridParams,
    "criteria": MatchCriteria,
    "sweep": SweepParams,
}

_GLOBAL_KEYS = {"seed", "out_dir", "binarize_threshold"}


def _convert(raw: str, target_type):
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if target_type is str:
        return raw.strip()
    raise ValueError(f"unsupported config value type {target_type}")


def _type_name(f: dataclasses.Field) -> str:
    return f.type if isinstance(f.type, str) else str(f.type)


def _build_section(name: str, cls, items: dict[str, str]):
    by_name = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in by_name:
            raise ValueError(f"unknown key {key!r} for section [{name}]")
        tname = _type_name(by_name[key]).replace("<class '", "").replace("'>", "")
        if tname == "int":
            kwargs[key] = _convert(raw, int)
        elif tname == "float":
            kwargs[key] = _convert(raw, float)
        elif tname == "bool":
            kwargs[key] = _convert(raw, bool)
        elif tname == "str":
            kwargs[key] = _convert(raw, str)
        elif "tuple[float, ...]" in tname:
            kwargs[key] = tuple(float(part) for part in raw.split(",") if part.strip())
        elif "frozenset" in tname:
            kwargs[key] = frozenset(part.strip() for part in raw.split(",") if part.strip())
        elif "None" in tname and "float" in tname:
            kwargs[key] = None if raw.strip().lower() in ("", "none") else float(raw)
        else:
            raise ValueError(f"cannot parse key {key!r} of type {tname} in [{name}]")
    return cls(**kwargs)


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """RunConfig from an INI file (all sections optional) plus CLI overrides.

    overrides maps section -> {key: raw string}; the special section
    "global" feeds the top-level seed / out_dir / binarize_threshold.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        parser.read(path)

    merged: dict[str, dict[str, str]] = {
        section: dict(parser.items(section)) for section in parser.sections()
    }
    for section, items in (overrides or {}).items():
        merged.setdefault(section, {}).update(
            {k: v for k, v in items.items() if v is not None}
        )

    top: dict[str, object] = {}
    global_items = merged.pop("global", {})
    for key, raw in global_items.items():
        if key not in _GLOBAL_KEYS:
            raise ValueError(f"unknown key {key!r} for section [global]")
        if key == "seed":
            top["seed"] = int(raw)
        elif key == "out_dir":
            top["out_dir"] = Path(raw)
        elif key == "binarize_threshold":
            top["binarize_threshold"] = float(raw)

    kwargs = dict(top)
    for name, items in merged.items():
        if name not in _SECTION_TYPES:
            raise ValueError(f"unknown config section [{name}]")
        kwargs[name] = _build_section(name, _SECTION_TYPES[name], items)
    return RunConfig(**kwargs)


def default_config_text() -> str:
    """INI template listing every tunable at its default value."""
    cfg = RunConfig()
    lines = [
        "[global]",
        f"seed = {cfg.seed}",
        f"out_dir = {cfg.out_dir}",
        f"binarize_threshold = {cfg.binarize_threshold}",
        "",
    ]
    for name, cls in _SECTION_TYPES.items():
        lines.append(f"[{name}]")
        instance = getattr(cfg, "lsd" if name == "lsd" else name)
        for f in dataclasses.fields(cls):
            value = getattr(instance, f.name)
            if isinstance(value, tuple):
                value = ", ".join(f"{v:g}" for v in value)
            elif isinstance(value, frozenset):
                value = ", ".join(sorted(value))
            elif isinstance(value, float) and f.name == "angle_tolerance":
                value = f"{value:.17g}"
            elif value is None:
                value = "none"
            lines.append(f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)
