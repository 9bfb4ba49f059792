"""Experiment configuration and scenario files.

A scenario file is a plain ``key = value`` text file (``#`` starts a comment).
Every key matches an :class:`ExperimentConfig` field; unknown keys are
rejected. Values left out fall back to the defaults below, which describe the
reference deployment: a 700 m square served by 25 four-antenna APs on a
jittered grid, 10 single-antenna UEs, 20 MHz at 2 GHz carrier.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

__all__ = ["ExperimentConfig", "load_scenario", "save_scenario", "config_hash"]


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one simulation scenario.

    Powers are watts, distances meters, gains linear unless a field name says
    dB/dBm. Conversions to/from dB happen only at I/O boundaries.
    """

    area_side_m: float = 700.0
    num_aps: int = 25
    num_ues: int = 10
    antennas_per_ap: int = 4
    carrier_ghz: float = 2.0
    bandwidth_hz: float = 20e6
    coherence_symbols: int = 200       # symbols per coherence block
    pilot_symbols: int = 10            # orthogonal pilots per block
    shadow_std_db: float = 4.0
    shadow_corr_m: float = 9.0         # correlation length of shadow fading
    height_diff_m: float = 10.0        # AP height above UE plane
    noise_dbm: float = -94.0           # same for uplink and downlink
    ue_power_w: float = 0.1            # per-UE uplink pilot power
    max_ap_power_w: float = 0.2        # per-AP downlink power budget
    grid_jitter_frac: float = 0.5      # AP displacement, fraction of grid spacing
    train_drops: int = 1000
    test_drops: int = 200
    seed: int = 1

    def __post_init__(self):
        if self.num_aps < 1 or self.num_ues < 1 or self.antennas_per_ap < 1:
            raise ConfigError("num_aps, num_ues and antennas_per_ap must be >= 1")
        if not (1 <= self.pilot_symbols <= self.coherence_symbols):
            raise ConfigError(
                f"pilot_symbols must lie in [1, coherence_symbols]; "
                f"got {self.pilot_symbols} with coherence_symbols={self.coherence_symbols}"
            )
        for name in ("ue_power_w", "max_ap_power_w", "bandwidth_hz", "area_side_m"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.grid_jitter_frac <= 1.0:
            raise ConfigError("grid_jitter_frac must lie in [0, 1]")
        if self.shadow_corr_m <= 0:
            raise ConfigError("shadow_corr_m must be positive")
        if self.train_drops < 0 or self.test_drops < 0:
            raise ConfigError("drop counts must be non-negative")

    @property
    def noise_w(self) -> float:
        """Receiver noise power in watts (uplink = downlink)."""
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)

    @property
    def data_symbols(self) -> int:
        """Downlink data symbols per block; no uplink data phase."""
        return self.coherence_symbols - self.pilot_symbols

    @property
    def prelog(self) -> float:
        """Fraction of each coherence block carrying downlink data."""
        return self.data_symbols / self.coherence_symbols

    @property
    def grid_side(self) -> int:
        side = math.isqrt(self.num_aps)
        if side * side != self.num_aps:
            raise ConfigError(
                f"num_aps must be a perfect square for the grid layout; got {self.num_aps}"
            )
        return side

    def replace(self, **kwargs) -> "ExperimentConfig":
        return dataclasses.replace(self, **kwargs)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    field = _FIELDS[name]
    try:
        if field.type in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {name} = {raw!r}") from exc


def load_scenario(path) -> ExperimentConfig:
    """Parse a key = value scenario file into an ExperimentConfig."""
    values = {}
    unknown = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            unknown.append(key)
            continue
        values[key] = _parse_value(key, raw)
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {', '.join(sorted(unknown))}")
    return ExperimentConfig(**values)


def save_scenario(cfg: ExperimentConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(ExperimentConfig)]
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable short hash identifying a configuration; embedded in artifacts."""
    canon = "\n".join(
        f"{f.name}={getattr(cfg, f.name)!r}" for f in dataclasses.fields(ExperimentConfig)
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
