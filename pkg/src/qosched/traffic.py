"""Poisson downlink traffic per UE and flow."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import BY_LABEL, DEFAULT_PACKET_BITS, FlowClass, Service

FIXED_SERVICES = (Service.VOICE, Service.VIDEO, Service.IMS)


@dataclass(frozen=True)
class FlowSpec:
    flow: FlowClass
    packet_size: int  # bits
    arrival_rate: float  # packets per TTI

    def offered_bps(self, tti_ms: int = 1) -> float:
        return self.arrival_rate * self.packet_size * 1000.0 / tti_ms


def arrival_rate(load_bps: float, packet_bits: int, tti_ms: int = 1) -> float:
    """Packets per TTI that carry ``load_bps`` with fixed-size packets."""
    return load_bps / packet_bits * tti_ms / 1000.0


def assign_flows(ue_ids: Sequence[int], mobile_ids: Sequence[int], rng: np.random.Generator,
                 max_load_per_ue: float = 256000.0,
                 packet_bits: Mapping[str, int] | None = None,
                 tti_ms: int = 1) -> dict[int, list[FlowSpec]]:
    """Draw each UE's service uniformly from Voice/Video/IMS; mobile UEs also carry V2X.

    A UE's offered load is the per-UE maximum, split evenly over its flows.
    """
    mobile = set(mobile_ids)
    if mobile - set(ue_ids):
        raise ValueError("mobile ids must be a subset of ue ids")
    sizes = {s: DEFAULT_PACKET_BITS[s] for s in Service}
    if packet_bits:
        sizes.update({Service(k): int(v) for k, v in packet_bits.items()})

    picks = rng.integers(0, len(FIXED_SERVICES), size=len(ue_ids))
    out: dict[int, list[FlowSpec]] = {}
    for ue_id, pick in zip(ue_ids, picks):
        services = [FIXED_SERVICES[pick]]
        if ue_id in mobile:
            services.append(Service.V2X)
        share = max_load_per_ue / len(services)
        out[ue_id] = [
            FlowSpec(BY_LABEL[s], sizes[s], arrival_rate(share, sizes[s], tti_ms))
            for s in services
        ]
    return out


def sample_arrivals(spec: FlowSpec, rng: np.random.Generator) -> int:
    if spec.arrival_rate < 0:
        raise ValueError("arrival rate must be non-negative")
    if spec.arrival_rate == 0:
        return 0
    return int(rng.poisson(spec.arrival_rate))


def cap_arrivals(counts: np.ndarray, groups: np.ndarray, cap: int | None,
                 rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Trim per-flow arrival counts so each group (BS) receives at most ``cap``.

    Flows of an over-cap group are visited in random order and filled until the
    cap is reached.  Returns the trimmed counts and the number of arrivals removed.
    """
    if cap is None:
        return counts, 0
    removed = 0
    totals = np.bincount(groups, weights=counts, minlength=groups.max(initial=-1) + 1)
    for g in np.flatnonzero(totals > cap):
        idx = np.flatnonzero(groups == g)
        idx = idx[rng.permutation(idx.size)]
        budget = cap
        for i in idx:
            keep = min(int(counts[i]), budget)
            removed += int(counts[i]) - keep
            counts[i] = keep
            budget -= keep
    return counts, removed
