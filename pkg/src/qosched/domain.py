"""Core vocabulary: QCI flow classes, packets, UEs, RBG maps and scenario config."""
from __future__ import annotations

import dataclasses
import enum
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .channel import ChannelParams


class ConfigError(ValueError):
    pass


class ResourceType(str, enum.Enum):
    GBR = "GBR"
    NON_GBR = "NonGBR"


class Service(str, enum.Enum):
    VOICE = "Voice"
    IMS = "IMS"
    VIDEO = "Video"
    V2X = "V2X"


@dataclass(frozen=True)
class FlowClass:
    qci: int
    resource_type: ResourceType
    priority: float
    delay_budget: int  # ms
    label: Service

    def __post_init__(self):
        if self.delay_budget <= 0:
            raise ValueError(f"delay budget must be positive, got {self.delay_budget}")

    def to_dict(self) -> dict:
        return {
            "qci": self.qci,
            "resource_type": self.resource_type.value,
            "priority": self.priority,
            "delay_budget": self.delay_budget,
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FlowClass":
        return cls(
            qci=int(d["qci"]),
            resource_type=ResourceType(d["resource_type"]),
            priority=float(d["priority"]),
            delay_budget=int(d["delay_budget"]),
            label=Service(d["label"]),
        )


VOICE = FlowClass(1, ResourceType.GBR, 2.0, 100, Service.VOICE)
IMS = FlowClass(5, ResourceType.NON_GBR, 1.0, 100, Service.IMS)
VIDEO = FlowClass(6, ResourceType.NON_GBR, 6.0, 300, Service.VIDEO)
V2X = FlowClass(75, ResourceType.GBR, 2.5, 20, Service.V2X)

FLOW_CLASSES: dict[int, FlowClass] = {f.qci: f for f in (VOICE, IMS, VIDEO, V2X)}
BY_LABEL: dict[Service, FlowClass] = {f.label: f for f in FLOW_CLASSES.values()}
# fixed index of each service in one-hot encodings and KPI arrays
LABEL_INDEX: dict[Service, int] = {s: i for i, s in enumerate(Service)}

# bits per packet; the V2X size follows the usual 300-byte CAM-style message
DEFAULT_PACKET_BITS: dict[Service, int] = {
    Service.VOICE: 800,
    Service.IMS: 800,
    Service.VIDEO: 8000,
    Service.V2X: 2400,
}


class Packet:
    """A MAC-level downlink data unit.

    Latency components are integer milliseconds.  ``t_hol`` tracks the wait in
    the buffer and is frozen once the first transmission attempt of the packet
    completes; ``remaining`` holds the bits not yet granted to the current
    attempt.
    """

    __slots__ = (
        "id", "flow", "ue_id", "size", "arrival_tti",
        "t_hol", "t_tx", "t_harq", "retx_count", "remaining", "attempted",
    )

    def __init__(self, id: int, flow: FlowClass, ue_id: int, size: int, arrival_tti: int):
        self.id = id
        self.flow = flow
        self.ue_id = ue_id
        self.size = size
        self.arrival_tti = arrival_tti
        self.t_hol = 0
        self.t_tx = 0
        self.t_harq = 0
        self.retx_count = 0
        self.remaining = size
        self.attempted = False

    def __repr__(self):
        return (f"Packet(id={self.id}, qci={self.flow.qci}, ue={self.ue_id}, "
                f"arrival={self.arrival_tti}, hol={self.t_hol}, tx={self.t_tx}, "
                f"harq={self.t_harq})")


def packet_latency(p: Packet) -> int:
    return p.t_hol + p.t_tx + p.t_harq


def is_satisfied(p: Packet, dropped: bool = False) -> bool:
    """A completed packet is satisfied when it waited strictly less than its budget."""
    if dropped:
        return False
    return p.t_hol < p.flow.delay_budget


@dataclass
class UeState:
    ue_id: int
    position: np.ndarray
    velocity: np.ndarray
    serving_bs: int = 0
    cqi: int = 0
    queues: dict[int, deque] = field(default_factory=dict)

    @property
    def mobile(self) -> bool:
        return bool(np.any(self.velocity != 0.0))

    def backlog_bits(self) -> int:
        return sum(p.remaining if i == 0 else p.size
                   for q in self.queues.values() for i, p in enumerate(q))


class RbgMap:
    """Per-TTI assignment of resource block groups to (ue_id, qci) queues."""

    __slots__ = ("tti", "n_rbg", "assignments")

    def __init__(self, tti: int, n_rbg: int):
        self.tti = tti
        self.n_rbg = n_rbg
        self.assignments: list[Optional[tuple[int, int]]] = [None] * n_rbg

    def assign(self, rbg: int, ue_id: int, qci: int) -> None:
        if self.assignments[rbg] is not None:
            raise ValueError(f"RBG {rbg} already assigned in TTI {self.tti}")
        self.assignments[rbg] = (ue_id, qci)

    def grants(self) -> dict[tuple[int, int], int]:
        """Number of RBGs per assigned queue."""
        out: dict[tuple[int, int], int] = {}
        for a in self.assignments:
            if a is not None:
                out[a] = out.get(a, 0) + 1
        return out

    def n_assigned(self) -> int:
        return sum(a is not None for a in self.assignments)


SCHEDULERS = ("PF", "CQA", "DA2C", "CDPAA2C")
LEARNING_SCHEDULERS = ("DA2C", "CDPAA2C")
REWARD_PRESETS = {"DA2C": (0.0, 5.0), "CDPAA2C": (5.0, 5.0)}


@dataclass
class ScenarioConfig:
    n_bs: int = 3
    n_ue: int = 30
    mobile_fraction: float = 0.0
    n_rb: int = 25
    rbg_size: int = 2
    tti_ms: int = 1
    max_load_per_ue: float = 256000.0  # bit/s
    sim_ttis: int = 5000
    seed: int = 0
    scheduler: str = "CDPAA2C"
    # (tau, lambda); None picks the preset of the learning scheduler
    reward_weights: Optional[tuple[float, float]] = None
    gamma: float = 0.9
    lr_actor: float = 0.01
    lr_critic: float = 0.05
    eps_start: float = 1.0
    eps_min: float = 0.0
    explore_ttis: int = 3700

    # network layout and learning details
    hidden_layers: tuple[int, ...] = (256, 256, 256)
    candidates: int = 50
    urllc_budget_ms: int = 20
    grad_clip: float = 100.0
    backlog_norm_bits: float = 16000.0
    learn: bool = True

    # traffic
    packet_bits: dict[str, int] = field(
        default_factory=lambda: {s.value: b for s, b in DEFAULT_PACKET_BITS.items()})
    arrival_cap_per_bs: Optional[int] = 50

    # geometry and mobility
    bs_spacing: float = 500.0
    area_margin: float = 250.0
    vehicle_speed: float = 14.0
    handover_period: int = 100

    # link layer
    harq_rtt: int = 8
    max_harq_retx: int = 3
    drop_factor: float = 2.0
    channel: ChannelParams = field(default_factory=ChannelParams)

    # baselines
    pf_window: int = 100
    cqa_grouping_ms: int = 10

    # reporting
    reward_window: int = 100

    @property
    def n_rbg(self) -> int:
        return self.n_rb // self.rbg_size

    @property
    def tau(self) -> float:
        return self.reward_weights[0] if self.reward_weights else 0.0

    @property
    def lam(self) -> float:
        return self.reward_weights[1] if self.reward_weights else 0.0

    def replace(self, **changes) -> "ScenarioConfig":
        return validate_config(dataclasses.replace(self, **changes))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        if self.reward_weights is not None:
            d["reward_weights"] = list(self.reward_weights)
        return d


_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig)}


def validate_config(c: ScenarioConfig | Mapping[str, Any]) -> ScenarioConfig:
    """Normalize a parsed config (mapping or dataclass), fill defaults, check ranges."""
    if isinstance(c, ScenarioConfig):
        raw = dataclasses.asdict(c)
    else:
        raw = dict(c)
    unknown = set(raw) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    ch = raw.pop("channel", None)
    if ch is None:
        channel = ChannelParams()
    elif isinstance(ch, ChannelParams):
        channel = ch
    else:
        try:
            channel = ChannelParams(**ch)
        except TypeError as e:
            raise ConfigError(f"bad channel section: {e}") from None
    channel.validate()

    cfg = ScenarioConfig(channel=channel, **raw)
    cfg.scheduler = str(cfg.scheduler).upper().replace("-", "")
    if cfg.scheduler not in SCHEDULERS:
        raise ConfigError(f"unknown scheduler {cfg.scheduler!r}; choose from {SCHEDULERS}")

    for name in ("n_bs", "n_rb", "rbg_size", "tti_ms", "candidates", "pf_window",
                 "cqa_grouping_ms", "harq_rtt", "reward_window", "handover_period"):
        if int(getattr(cfg, name)) <= 0:
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}")
    if cfg.n_rb // cfg.rbg_size < 1:
        raise ConfigError(f"n_rb={cfg.n_rb} does not fill one RBG of size {cfg.rbg_size}")
    for name in ("n_ue", "sim_ttis", "explore_ttis", "max_harq_retx"):
        if int(getattr(cfg, name)) < 0:
            raise ConfigError(f"{name} must be non-negative, got {getattr(cfg, name)}")
    if not 0.0 <= cfg.mobile_fraction <= 1.0:
        raise ConfigError(f"mobile_fraction must lie in [0, 1], got {cfg.mobile_fraction}")
    if cfg.lr_actor <= 0 or cfg.lr_critic <= 0:
        raise ConfigError("learning rates must be positive")
    if not 0.0 <= cfg.gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {cfg.gamma}")
    if not 0.0 <= cfg.eps_min <= cfg.eps_start <= 1.0:
        raise ConfigError("epsilon schedule needs 0 <= eps_min <= eps_start <= 1")
    if cfg.max_load_per_ue < 0:
        raise ConfigError("max_load_per_ue must be non-negative")
    if cfg.drop_factor <= 1.0:
        raise ConfigError("drop_factor must exceed 1")
    if cfg.tti_ms != 1:
        raise ConfigError("only the 1 ms numerology-0 TTI is supported")

    cfg.hidden_layers = tuple(int(h) for h in cfg.hidden_layers)
    if not cfg.hidden_layers or min(cfg.hidden_layers) <= 0:
        raise ConfigError("hidden_layers must list positive widths")

    bits = {}
    for k, v in dict(cfg.packet_bits).items():
        label = _service_key(k)
        if int(v) <= 0:
            raise ConfigError(f"packet size for {label} must be positive")
        bits[label.value] = int(v)
    cfg.packet_bits = {s.value: bits.get(s.value, DEFAULT_PACKET_BITS[s]) for s in Service}

    if cfg.reward_weights is None:
        cfg.reward_weights = REWARD_PRESETS.get(cfg.scheduler)
    else:
        tau, lam = cfg.reward_weights
        cfg.reward_weights = (float(tau), float(lam))
    if cfg.arrival_cap_per_bs is not None and cfg.arrival_cap_per_bs <= 0:
        cfg.arrival_cap_per_bs = None
    cfg.seed = int(cfg.seed) & 0xFFFFFFFFFFFFFFFF
    return cfg


def _service_key(k) -> Service:
    if isinstance(k, Service):
        return k
    if isinstance(k, int) or (isinstance(k, str) and k.isdigit()):
        try:
            return FLOW_CLASSES[int(k)].label
        except KeyError:
            raise ConfigError(f"unknown QCI {k}") from None
    for s in Service:
        if s.value.lower() == str(k).lower():
            return s
    raise ConfigError(f"unknown service {k!r}")


def load_config(path: str | Path, **overrides) -> ScenarioConfig:
    """Read a YAML (or JSON) scenario file and validate it."""
    path = Path(path)
    with path.open() as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate_config(raw)
