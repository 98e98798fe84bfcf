"""Core value types: block configurations, scenarios, statistics, reward and
training settings, plus the JSON document formats for configs and scenarios.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np


class Backoff(str, enum.Enum):
    NONE = "None"
    BEB = "BEB"
    EIED = "EIED"


class Ack(str, enum.Enum):
    NO_ACK = "NoAck"
    IMMEDIATE = "ImmediateAck"


BACKOFF_VALUES = (Backoff.NONE, Backoff.BEB, Backoff.EIED)
ACK_VALUES = (Ack.NO_ACK, Ack.IMMEDIATE)
FRAGMENT_VALUES = (None, 200, 500, 1000)
AGGREGATE_VALUES = (None, 2000)
BOOL_VALUES = (False, True)
CW_VALUES = (15, 31, 63, 127, 255, 511, 1023)
RATE_VALUES = (6, 9, 12, 24, 36, 48, 54)

CW_MAX = 1023
DEFAULT_PAYLOAD_BYTES = 1500
MAX_RATE_MBPS = 54

# (load label -> aggregate Poisson packets/s)
LOAD_LEVELS = {"Low": 8.0, "Average": 100.0, "High": 470.0, "Saturated": 470.0}
DEFAULT_BER = 1e-4


class ConfigError(ValueError):
    """Raised for malformed configuration or scenario documents."""


@dataclass(frozen=True)
class BlockConfig:
    """One point of the protocol design space.

    ``fragmentation`` and ``aggregation`` hold the byte size when the block
    is active and ``None`` when it is off.
    """

    backoff: Backoff = Backoff.BEB
    ack: Ack = Ack.IMMEDIATE
    fragmentation: Optional[int] = None
    aggregation: Optional[int] = None
    rts_cts: bool = False
    cw_min: int = 15
    carrier_sense: bool = True
    data_rate_mbps: int = 54

    def __post_init__(self):
        object.__setattr__(self, "backoff", Backoff(self.backoff))
        object.__setattr__(self, "ack", Ack(self.ack))
        if self.fragmentation not in FRAGMENT_VALUES:
            raise ConfigError(f"fragmentation must be one of {FRAGMENT_VALUES}, got {self.fragmentation!r}")
        if self.aggregation not in AGGREGATE_VALUES:
            raise ConfigError(f"aggregation must be one of {AGGREGATE_VALUES}, got {self.aggregation!r}")
        if self.cw_min not in CW_VALUES:
            raise ConfigError(f"cw_min must be one of {CW_VALUES}, got {self.cw_min!r}")
        if self.data_rate_mbps not in RATE_VALUES:
            raise ConfigError(f"data_rate_mbps must be one of {RATE_VALUES}, got {self.data_rate_mbps!r}")
        if not isinstance(self.rts_cts, bool) or not isinstance(self.carrier_sense, bool):
            raise ConfigError("rts_cts and carrier_sense must be booleans")

    def label(self) -> str:
        parts = [
            f"bo={self.backoff.value}",
            f"ack={self.ack.value}",
            f"frag={self.fragmentation or 'Off'}",
            f"agg={self.aggregation or 'Off'}",
            f"rts={'on' if self.rts_cts else 'off'}",
            f"cw={self.cw_min}",
            f"cs={'on' if self.carrier_sense else 'off'}",
            f"dr={self.data_rate_mbps}",
        ]
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {
            "backoff": self.backoff.value,
            "ack": self.ack.value,
            "fragmentation": self.fragmentation if self.fragmentation is not None else "Off",
            "aggregation": self.aggregation if self.aggregation is not None else "Off",
            "rtsCts": self.rts_cts,
            "cwMin": self.cw_min,
            "carrierSense": self.carrier_sense,
            "dataRateMbps": self.data_rate_mbps,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BlockConfig":
        unknown = set(doc) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, attr in _CONFIG_KEYS.items():
            if key not in doc:
                continue
            value = doc[key]
            if attr in ("fragmentation", "aggregation") and value in ("Off", None):
                value = None
            kwargs[attr] = value
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_CONFIG_KEYS = {
    "backoff": "backoff",
    "ack": "ack",
    "fragmentation": "fragmentation",
    "aggregation": "aggregation",
    "rtsCts": "rts_cts",
    "cwMin": "cw_min",
    "carrierSense": "carrier_sense",
    "dataRateMbps": "data_rate_mbps",
}


def default_csma_ca_config() -> BlockConfig:
    """Plain 802.11 DCF: BEB backoff, immediate ACK, CWmin 15, 54 Mbps."""
    return BlockConfig(
        backoff=Backoff.BEB,
        ack=Ack.IMMEDIATE,
        fragmentation=None,
        aggregation=None,
        rts_cts=False,
        cw_min=15,
        carrier_sense=True,
        data_rate_mbps=54,
    )


# One-hot groups, in encoding order.
ENCODING_GROUPS = (
    ("backoff", BACKOFF_VALUES),
    ("ack", ACK_VALUES),
    ("fragmentation", FRAGMENT_VALUES),
    ("aggregation", AGGREGATE_VALUES),
    ("rts_cts", BOOL_VALUES),
    ("cw_min", CW_VALUES),
    ("carrier_sense", BOOL_VALUES),
    ("data_rate_mbps", RATE_VALUES),
)
ENCODING_DIM = sum(len(values) for _, values in ENCODING_GROUPS)


def encode_config(config: BlockConfig, rules=None) -> np.ndarray:
    """One-hot encode ``config`` into a vector of length 29.

    Raises ``logic.InvalidConfigError`` when the config breaks a rule.
    """
    from .logic import require_valid

    require_valid(config, rules)
    return _one_hot(config)


def _one_hot(config: BlockConfig) -> np.ndarray:
    vec = np.zeros(ENCODING_DIM)
    offset = 0
    for name, values in ENCODING_GROUPS:
        vec[offset + values.index(getattr(config, name))] = 1.0
        offset += len(values)
    return vec


def decode_config(vec) -> BlockConfig:
    """Inverse of :func:`encode_config` (argmax within each group)."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (ENCODING_DIM,):
        raise ValueError(f"expected vector of length {ENCODING_DIM}, got shape {vec.shape}")
    kwargs = {}
    offset = 0
    for name, values in ENCODING_GROUPS:
        group = vec[offset:offset + len(values)]
        kwargs[name] = values[int(np.argmax(group))]
        offset += len(values)
    return BlockConfig(**kwargs)


@dataclass(frozen=True)
class Scenario:
    """A network environment: who contends, how much traffic, how noisy.

    ``offered_load_pkt_per_sec`` is the aggregate Poisson rate of the whole
    network once every node (including scheduled joiners) is present; each
    node generates ``offered_load / total_nodes`` packets per second.
    ``join_schedule`` lists ``(time_sec, nodes_added)`` pairs.
    """

    node_count: int
    offered_load_pkt_per_sec: float
    noise: bool = False
    ber: float = 0.0
    area_meters: tuple = (200.0, 200.0)
    radio_range_meters: float = 250.0
    duration_sec: float = 10.0
    seed: int = 0
    join_schedule: tuple = ()
    traffic: str = "poisson"
    packet_bytes: int = DEFAULT_PAYLOAD_BYTES
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "area_meters", tuple(float(v) for v in self.area_meters))
        object.__setattr__(
            self, "join_schedule", tuple((float(t), int(n)) for t, n in self.join_schedule)
        )
        check_scenario(self)

    @property
    def total_nodes(self) -> int:
        return self.node_count + sum(n for _, n in self.join_schedule)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "nodeCount": self.node_count,
            "offeredLoadPktPerSec": self.offered_load_pkt_per_sec,
            "noise": self.noise,
            "ber": self.ber,
            "areaMeters": list(self.area_meters),
            "radioRangeMeters": self.radio_range_meters,
            "durationSec": self.duration_sec,
            "seed": self.seed,
            "joinSchedule": [list(x) for x in self.join_schedule],
            "traffic": self.traffic,
            "packetBytes": self.packet_bytes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        unknown = set(doc) - set(_SCENARIO_KEYS)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        kwargs = {_SCENARIO_KEYS[k]: v for k, v in doc.items()}
        load = kwargs.get("offered_load_pkt_per_sec")
        if isinstance(load, str):
            if load not in LOAD_LEVELS:
                raise ConfigError(f"unknown load label {load!r}; expected one of {list(LOAD_LEVELS)}")
            kwargs["offered_load_pkt_per_sec"] = LOAD_LEVELS[load]
        if kwargs.get("noise") and "ber" not in kwargs:
            kwargs["ber"] = DEFAULT_BER
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


_SCENARIO_KEYS = {
    "name": "name",
    "nodeCount": "node_count",
    "offeredLoadPktPerSec": "offered_load_pkt_per_sec",
    "noise": "noise",
    "ber": "ber",
    "areaMeters": "area_meters",
    "radioRangeMeters": "radio_range_meters",
    "durationSec": "duration_sec",
    "seed": "seed",
    "joinSchedule": "join_schedule",
    "traffic": "traffic",
    "packetBytes": "packet_bytes",
}


def check_scenario(scenario: Scenario) -> Scenario:
    """Validate scenario invariants; return it unchanged or raise ConfigError."""
    s = scenario
    if not isinstance(s.node_count, (int, np.integer)) or s.node_count < 0:
        raise ConfigError(f"node_count must be a non-negative integer, got {s.node_count!r}")
    if not (s.offered_load_pkt_per_sec >= 0 and math.isfinite(s.offered_load_pkt_per_sec)):
        raise ConfigError(f"offered load must be finite and >= 0, got {s.offered_load_pkt_per_sec!r}")
    if not 0.0 <= s.ber < 1.0:
        raise ConfigError(f"ber must lie in [0, 1), got {s.ber!r}")
    if s.noise and s.ber <= 0:
        raise ConfigError("noise=True requires ber > 0")
    if not s.noise and s.ber != 0:
        raise ConfigError("noise=False requires ber = 0")
    if len(s.area_meters) != 2 or min(s.area_meters) <= 0:
        raise ConfigError(f"area_meters must be (width, height) > 0, got {s.area_meters!r}")
    if s.radio_range_meters <= 0:
        raise ConfigError("radio_range_meters must be > 0")
    if not s.duration_sec > 0:
        raise ConfigError(f"duration_sec must be > 0, got {s.duration_sec!r}")
    if s.seed < 0:
        raise ConfigError("seed must be unsigned")
    if s.traffic not in ("poisson", "saturated"):
        raise ConfigError(f"traffic must be 'poisson' or 'saturated', got {s.traffic!r}")
    if s.packet_bytes <= 0:
        raise ConfigError("packet_bytes must be > 0")
    for t, n in s.join_schedule:
        if t < 0 or n < 0:
            raise ConfigError(f"bad join schedule entry {(t, n)!r}")
    return s


@dataclass
class SimStats:
    duration_sec: float = 0.0
    avg_throughput_mbps: float = 0.0
    delivered_bits: int = 0
    generated_bits: int = 0
    collisions: int = 0
    retransmissions: int = 0
    drops: int = 0
    control_airtime_sec: float = 0.0
    data_airtime_sec: float = 0.0
    idle_sec: float = 0.0
    energy_joules: float = 0.0
    frames_sent: int = 0
    frame_errors: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RewardSpec:
    """``reward = w0 * throughput_mbps - w1 * energy_per_bit_uJ``."""

    w0: float = 1.0
    w1: float = 0.0

    def __post_init__(self):
        if self.w0 < 0 or self.w1 < 0:
            raise ConfigError("reward weights must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "RewardSpec":
        try:
            w0, w1 = (float(p) for p in text.split(","))
        except ValueError as exc:
            raise ConfigError(f"reward must look like 'w0,w1', got {text!r}") from exc
        return cls(w0, w1)


@dataclass(frozen=True)
class TrainingConfig:
    gamma: float = 0.8
    history_len: int = 15
    # Q-update rate: the regression target is q + rate * (td_target - q); 1 means td_target.
    q_learning_rate: float = 1.0
    sgd_step_size: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 2000
    replay_capacity: int = 10_000
    batch_size: int = 32
    target_sync_interval: int = 100
    steps_per_episode: int = 50
    episodes: int = 60
    sim_epoch_sec: float = 0.5
    hidden_sizes: tuple = (64, 64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.history_len < 1:
            raise ConfigError("history_len must be >= 1")
        if self.sgd_step_size <= 0:
            raise ConfigError("sgd_step_size must be > 0")
        if not (0 <= self.epsilon_end <= 1 and 0 <= self.epsilon_start <= 1):
            raise ConfigError("epsilon values must lie in [0, 1]")
        if min(self.batch_size, self.replay_capacity, self.target_sync_interval,
               self.steps_per_episode) < 1 or self.episodes < 0:
            raise ConfigError("batch/replay/sync/steps must be positive")
        if self.sim_epoch_sec <= 0:
            raise ConfigError("sim_epoch_sec must be > 0")

    def epsilon(self, step: int) -> float:
        if self.epsilon_decay_steps <= 0 or step >= self.epsilon_decay_steps:
            return self.epsilon_end
        frac = step / self.epsilon_decay_steps
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden_sizes"] = list(self.hidden_sizes)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**doc)


def load_json(path) -> Any:
    path = Path(path)
    try:
        with path.open() as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_config(path) -> BlockConfig:
    return BlockConfig.from_dict(load_json(path))


def load_scenario(path) -> Scenario:
    return Scenario.from_dict(load_json(path))
