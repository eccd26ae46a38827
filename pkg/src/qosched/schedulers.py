"""Scheduler contract and the two classical baselines (PF and CQA)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import FlowClass, RbgMap


@dataclass
class QueueInfo:
    ue_id: int
    flow: FlowClass
    hol: int  # ms waited by the head packet
    backlog: int  # bits
    cqi: int
    oldest: int = 0  # arrival TTI of the head packet, FIFO tie-break

    @property
    def key(self) -> tuple[int, int]:
        return (self.ue_id, self.flow.qci)

    @property
    def urgency(self) -> float:
        return self.hol / self.flow.delay_budget


@dataclass
class SchedulerInput:
    tti: int
    n_rbg: int
    queues: list[QueueInfo]
    ue_cqi: dict[int, int]  # every UE attached to the BS, idle or not
    rbg_bits: np.ndarray  # bits carried by one RBG, indexed by CQI
    bs: int = 0

    def rate(self, cqi: int) -> int:
        return int(self.rbg_bits[cqi])

    @property
    def mean_cqi(self) -> float:
        return float(np.mean(list(self.ue_cqi.values()))) if self.ue_cqi else 0.0


class Scheduler:
    """Fills one BS's RBG map per TTI.

    ``allocate`` may only assign RBGs to queues listed in the input and never
    assigns an RBG twice.  ``end_tti`` reports the bits actually granted so
    stateful schedulers can update their averages.
    """

    name = "base"
    last_reward = 0.0

    def allocate(self, inp: SchedulerInput) -> RbgMap:
        raise NotImplementedError

    def end_tti(self, served_bits: dict[int, int]) -> None:
        pass


@dataclass
class PfState:
    window: int = 100
    floor: float = 1.0
    r_avg: dict[int, float] = field(default_factory=dict)

    def get(self, ue_id: int) -> float:
        return max(self.r_avg.get(ue_id, self.floor), self.floor)

    def update(self, served_bits: dict[int, int], ue_ids) -> None:
        """EWMA over the window for every known UE; unserved UEs count zero bits."""
        a = 1.0 / self.window
        for u in set(ue_ids) | set(self.r_avg) | set(served_bits):
            prev = self.r_avg.get(u, self.floor)
            self.r_avg[u] = max((1.0 - a) * prev + a * served_bits.get(u, 0), self.floor)


def pf_metric(rate: float, r_avg: float, floor: float = 1.0) -> float:
    return rate / max(r_avg, floor)


def _pick_queue(qs: list[QueueInfo], remaining: dict) -> QueueInfo | None:
    """A UE's oldest-head queue that still has uncovered backlog."""
    best = None
    for q in qs:
        if remaining[q.key] <= 0:
            continue
        if best is None or (q.oldest, q.flow.qci) < (best.oldest, best.flow.qci):
            best = q
    return best


def pf_schedule(inp: SchedulerInput, state: PfState) -> RbgMap:
    """Per RBG, serve the backlogged UE with the largest rate / average-rate ratio."""
    rmap = RbgMap(inp.tti, inp.n_rbg)
    by_ue: dict[int, list[QueueInfo]] = {}
    for q in inp.queues:
        by_ue.setdefault(q.ue_id, []).append(q)
    remaining = {q.key: q.backlog for q in inp.queues}
    ue_left = {u: sum(q.backlog for q in qs) for u, qs in by_ue.items()}
    rate = {u: inp.rate(qs[0].cqi) for u, qs in by_ue.items()}
    order = sorted(by_ue)
    for rbg in range(inp.n_rbg):
        best_u, best_m = None, -1.0
        for u in order:
            if ue_left[u] <= 0 or rate[u] <= 0:
                continue
            m = pf_metric(rate[u], state.get(u), state.floor)
            if m > best_m:
                best_u, best_m = u, m
        if best_u is None:
            break
        q = _pick_queue(by_ue[best_u], remaining)
        rmap.assign(rbg, q.ue_id, q.flow.qci)
        remaining[q.key] -= rate[best_u]
        ue_left[best_u] -= rate[best_u]
    return rmap


class ProportionalFair(Scheduler):
    name = "PF"

    def __init__(self, window: int = 100):
        self.state = PfState(window=window)
        self._ues: list[int] = []

    def allocate(self, inp: SchedulerInput) -> RbgMap:
        self._ues = list(inp.ue_cqi)
        return pf_schedule(inp, self.state)

    def end_tti(self, served_bits: dict[int, int]) -> None:
        self.state.update(served_bits, self._ues)


def cqa_rank_key(q: QueueInfo, rate: int, grouping_ms: int):
    """Sort key: larger HOL group first, then larger metric, then QCI priority, then UE id."""
    group = q.hol // grouping_ms
    metric = (1.0 / q.flow.priority) * q.urgency * rate
    return (-group, -metric, q.flow.priority, q.ue_id, q.flow.qci)


def cqa_schedule(inp: SchedulerInput, grouping_ms: int = 10) -> RbgMap:
    """Greedy fill in HOL-group then QoS/channel-metric order."""
    rmap = RbgMap(inp.tti, inp.n_rbg)
    ranked = sorted(
        (q for q in inp.queues if inp.rate(q.cqi) > 0),
        key=lambda q: cqa_rank_key(q, inp.rate(q.cqi), grouping_ms),
    )
    rbg = 0
    for q in ranked:
        if rbg >= inp.n_rbg:
            break
        need = math.ceil(q.backlog / inp.rate(q.cqi))
        for _ in range(min(need, inp.n_rbg - rbg)):
            rmap.assign(rbg, q.ue_id, q.flow.qci)
            rbg += 1
    return rmap


class ChannelQosAware(Scheduler):
    name = "CQA"

    def __init__(self, grouping_ms: int = 10):
        self.grouping_ms = grouping_ms

    def allocate(self, inp: SchedulerInput) -> RbgMap:
        return cqa_schedule(inp, self.grouping_ms)


def check_allocation(inp: SchedulerInput, rmap: RbgMap) -> None:
    """Raise if ``rmap`` breaks the allocate contract for ``inp``."""
    if len(rmap.assignments) != inp.n_rbg or rmap.n_rbg != inp.n_rbg:
        raise AssertionError("RBG map size differs from n_rbg")
    keys = {q.key for q in inp.queues}
    for a in rmap.assignments:
        if a is not None and a not in keys:
            raise AssertionError(f"assignment {a} does not reference an input queue")
