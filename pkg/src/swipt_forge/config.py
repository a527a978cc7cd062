"""Experiment configuration: one JSON section per module, all fields defaulted."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .allocation import LinkBudget
from .channel import ChannelConfig
from .pa import PaModel
from .pipeline import Scenario
from .rectifier import DiodeParams
from .tone_reservation import TrParams
from .waveform import MimoConfig

__all__ = [
    "ConfigError",
    "PartitionConfig",
    "ScaConfig",
    "SweepConfig",
    "ExperimentConfig",
    "config_from_dict",
    "load_config",
    "dump_config",
    "config_hash",
]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class PartitionConfig:
    """Allocation of the proposed scheme and the link-level operating point."""

    k_tr: int = 128
    k_im: int = 128
    rho: float = 0.5
    evm_max: float = 0.125
    im_phase: float = 0.0


@dataclass(frozen=True)
class ScaConfig:
    eps: float = 0.5
    max_outer: int = 50
    calib_step: float = 16.0
    calib_trials: int = 20
    k_init: tuple[float, float] | None = None
    surrogate_path: str | None = None


@dataclass(frozen=True)
class SweepConfig:
    """Grids used by the experiment subcommands."""

    ccdf_k_tr: tuple[int, ...] = (0, 128, 256)
    ccdf_trials: int = 1000
    ccdf_thresholds_db: tuple[float, float, float] = (4.0, 13.0, 0.25)
    tr_steps: tuple[float, ...] = (0.5, 1.0, 2.0)
    rf_dbm: tuple[float, ...] = (-20.0, -17.5, -15.0, -12.5, -10.0, -7.5, -5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0)
    e2e_points: tuple[tuple[int, int], ...] = ((0, 0), (128, 0), (0, 128), (128, 128), (128, 256), (256, 128))
    rho_grid: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(21))
    re_grid: tuple[int, ...] = (0, 64, 128, 192, 256)


@dataclass(frozen=True)
class ExperimentConfig:
    mimo: MimoConfig = field(default_factory=MimoConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    diode: DiodeParams = field(default_factory=DiodeParams)
    pa: PaModel = field(default_factory=PaModel)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    budget: LinkBudget = field(default_factory=LinkBudget)
    tr: TrParams = field(default_factory=TrParams)
    sca: ScaConfig = field(default_factory=ScaConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    master_seed: int = 0
    trials: int = 200
    output_dir: str = "out"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        k = self.mimo.n_subcarriers
        if self.partition.k_tr + self.partition.k_im > k:
            raise ConfigError("partition exceeds the number of subcarriers")

    def scenario(self, quick: bool = False) -> Scenario:
        sc = Scenario(mimo=self.mimo, diode=self.diode, pa=self.pa, channel=self.channel,
                      tr=dataclasses.replace(self.tr, oversampling=self.mimo.oversampling),
                      rho=self.partition.rho, evm_max=self.partition.evm_max,
                      im_phase=self.partition.im_phase)
        return sc.quick() if quick else sc

    def quick(self) -> "ExperimentConfig":
        """Configuration with the frame shrunk to K=256, oversampling 2.

        Allocations and grids scale with ``K`` so they stay inside the box.
        """
        f = 256 / self.mimo.n_subcarriers
        mimo = dataclasses.replace(self.mimo, n_subcarriers=256, oversampling=2)

        def sc(v):
            return int(2 * round(v * f / 2))

        part = dataclasses.replace(self.partition, k_tr=sc(self.partition.k_tr), k_im=sc(self.partition.k_im))
        sweep = dataclasses.replace(
            self.sweep,
            ccdf_k_tr=tuple(sc(v) for v in self.sweep.ccdf_k_tr),
            e2e_points=tuple((sc(a), sc(b)) for a, b in self.sweep.e2e_points),
            re_grid=tuple(sorted({sc(v) for v in self.sweep.re_grid})),
        )
        sca = dataclasses.replace(self.sca, calib_step=max(2.0, self.sca.calib_step * f),
                                  k_init=None if self.sca.k_init is None else tuple(v * f for v in self.sca.k_init))
        return dataclasses.replace(self, mimo=mimo, partition=part, sweep=sweep, sca=sca,
                                   tr=dataclasses.replace(self.tr, oversampling=2))


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(tp, value, where):
    """Convert parsed JSON ``value`` to the annotated type ``tp``."""
    if value is None:
        return None
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp) if f.init}
        unknown = set(value) - names
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        kwargs = {k: _build(hints[k], v, f"{where}.{k}") for k, v in value.items()}
        try:
            return tp(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if origin is typing.Union or origin is types.UnionType:
        inner = [a for a in args if a is not type(None)]
        return _build(inner[0], value, where)
    if origin is tuple or tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if not args:
            return tuple(_build(type(v), v, where) if not isinstance(v, list) else tuple(v) for v in value)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_build(args[0], v, where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} entries")
        return tuple(_build(a, v, where) for a, v in zip(args, value))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer")
        return int(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; missing sections and keys take their defaults."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig, path=None) -> str:
    text = json.dumps(_to_plain(cfg), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of every result-affecting setting (``output_dir`` excluded)."""
    plain = _to_plain(cfg)
    plain.pop("output_dir")
    canon = json.dumps(plain, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
