"""Accelerator configuration with the shipped chip's defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

KB = 1024

DEFAULT_ENERGY = {"mac": 1.0, "local_buffer": 2.0, "gb": 6.0, "off_chip": 200.0}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HardwareConfig:
    lanes: int = 128
    macs_per_lane: int = 8
    act_gb_bytes: int = 512 * KB
    act_gb_count: int = 2
    act_banks: int = 4
    word_activations: int = 16
    weight_buffer_bytes: int = 64 * KB
    weight_buffer_count: int = 2
    weight_gb_bytes: int = 512 * KB
    index_sram_bytes: int = 20 * KB
    instr_sram_bytes: int = 4 * KB
    freq_hz: float = 370e6
    precision_bits: int = 8
    # act GB -> lane FIFO rate, in row segments (one FIFO fill) per cycle
    act_gb_read_rows_per_cycle: float = 8.0
    rows_per_fetch: int = 16
    input_buffer: bool = True
    depthwise_reuse: bool = True
    weight_gb_bytes_per_cycle: float = 64.0
    act_gb_write_words_per_cycle: float = 8.0
    util_threshold: float = 0.8
    partial_bw_boost: float = 0.10
    link_bytes_per_cycle: float = 0.0
    link_latency_cycles: int = 0
    energy: dict = field(default_factory=lambda: dict(DEFAULT_ENERGY))

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("energy", "input_buffer", "depthwise_reuse"):
                continue
            if f.name in ("link_bytes_per_cycle", "link_latency_cycles", "partial_bw_boost"):
                if v < 0:
                    raise ConfigError(f"{f.name} must be >= 0")
            elif not v > 0:
                raise ConfigError(f"{f.name} must be positive")
        if not 0 < self.util_threshold <= 1:
            raise ConfigError("util_threshold must be in (0, 1]")
        missing = set(DEFAULT_ENERGY) - set(self.energy)
        if missing:
            raise ConfigError(f"energy coefficients missing {sorted(missing)}")

    @property
    def total_macs(self) -> int:
        return self.lanes * self.macs_per_lane

    @property
    def peak_macs_per_second(self) -> float:
        return self.total_macs * self.freq_hz

    @property
    def act_storage_bytes(self) -> int:
        return self.act_gb_bytes * self.act_gb_count

    @property
    def read_port_rows(self) -> int:
        """Rows the lanes can read in one round from the two interleaved groups."""
        return 2 * self.rows_per_fetch

    def with_(self, **kw) -> "HardwareConfig":
        return replace(self, **kw)


def default_config() -> HardwareConfig:
    return HardwareConfig()


def config_to_dict(cfg: HardwareConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> HardwareConfig:
    known = {f.name for f in fields(HardwareConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config field /{sorted(unknown)[0]}")
    try:
        return HardwareConfig(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> HardwareConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(d)
