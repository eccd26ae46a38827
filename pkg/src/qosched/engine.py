"""TTI-driven downlink simulation loop."""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import channel as ch
from .a2c import A2CScheduler, A2CShared, build_a2c
from .domain import (
    LEARNING_SCHEDULERS, Packet, ScenarioConfig, Service, UeState, is_satisfied,
    packet_latency, validate_config,
)
from .metrics import KpiRecord, summarize
from .nn import load_checkpoint, restore, save_checkpoint
from .schedulers import ChannelQosAware, ProportionalFair, QueueInfo, Scheduler, SchedulerInput
from .traffic import assign_flows, cap_arrivals

log = logging.getLogger(__name__)


class FlowQueue:
    """FIFO of packets for one (UE, flow) plus its backlog in bits."""

    __slots__ = ("packets", "bits")

    def __init__(self):
        self.packets: deque[Packet] = deque()
        self.bits = 0

    def __len__(self):
        return len(self.packets)

    def push(self, p: Packet) -> None:
        self.packets.append(p)
        self.bits += p.remaining

    def push_front(self, p: Packet) -> None:
        self.packets.appendleft(p)
        self.bits += p.remaining

    def pop(self) -> Packet:
        p = self.packets.popleft()
        self.bits -= p.remaining
        return p


@dataclass
class RunResult:
    config: ScenarioConfig
    kpi: KpiRecord
    summary: dict[str, Any]
    sim: "Simulation" = field(repr=False, default=None)


class Simulation:
    """State of one run.  ``step`` advances a single TTI."""

    def __init__(self, cfg: ScenarioConfig, check_invariants: bool = False):
        cfg = validate_config(cfg)
        self.cfg = cfg
        self.check_invariants = check_invariants
        seeds = np.random.SeedSequence(cfg.seed).spawn(5)
        self.rng_place, self.rng_traffic, self.rng_link, rng_explore, rng_init = (
            np.random.default_rng(s) for s in seeds)

        self.params = cfg.channel
        self.table = ch.default_table()
        self.rbg_bits = self.table.rbg_bits(cfg.rbg_size)
        # bits per CQI for k RBGs: floor(eff * 168 * rbg_size * k)
        self._re_per_rbg = ch.RE_PER_RB * cfg.rbg_size
        self.n_rbg = cfg.n_rbg
        self.tti = 0

        self._place_nodes()
        self._setup_traffic()
        self._setup_schedulers(rng_init, rng_explore)

        self.harq: dict[int, list[Packet]] = {}
        self.n_created = 0
        self.n_delivered = 0
        self.n_dropped = 0
        self.n_capped = 0
        self.delivered_latency = np.zeros(len(Service), dtype=np.int64)
        self.kpi = KpiRecord(self.classes, cfg.sim_ttis, cfg.n_bs)
        self.last_maps: list = []

    # ------------------------------------------------------------------ setup

    def _place_nodes(self):
        cfg, rng = self.cfg, self.rng_place
        self.bs_pos = ch.bs_layout(cfg.n_bs, cfg.bs_spacing)
        self.bounds = ch.area_bounds(self.bs_pos, cfg.area_margin)
        # equal numbers of UEs dropped uniformly in a disk around each site
        site = np.arange(cfg.n_ue) % cfg.n_bs
        radius = cfg.bs_spacing / math.sqrt(3) * np.sqrt(rng.uniform(0.0, 1.0, cfg.n_ue))
        angle = rng.uniform(0.0, 2 * math.pi, cfg.n_ue)
        pos = self.bs_pos[site] + np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        n_mobile = int(round(cfg.mobile_fraction * cfg.n_ue))
        mobile = np.sort(rng.choice(cfg.n_ue, size=n_mobile, replace=False)) if n_mobile else np.array([], int)
        heading = rng.uniform(0, 2 * math.pi, size=cfg.n_ue)
        if self.params.shadowing_sigma > 0:
            self.shadowing = rng.normal(0.0, self.params.shadowing_sigma, size=(cfg.n_ue, cfg.n_bs))
        else:
            self.shadowing = None
        self.positions = pos
        self.mobile_ids = [int(i) for i in mobile]
        rx = ch.rx_power_dbm(pos, self.bs_pos, self.params, cfg.n_rb, self.shadowing)
        serving = np.argmax(rx, axis=1)
        self.ues: list[UeState] = []
        mobile_set = set(self.mobile_ids)
        for i in range(cfg.n_ue):
            v = np.zeros(2)
            if i in mobile_set:
                v = cfg.vehicle_speed * np.array([math.cos(heading[i]), math.sin(heading[i])])
            self.ues.append(UeState(ue_id=i, position=pos[i].copy(), velocity=v, serving_bs=int(serving[i])))
        self._refresh_cqi()

    def _refresh_cqi(self):
        pos = np.array([u.position for u in self.ues]).reshape(-1, 2)
        if not self.ues:
            return
        serving = np.array([u.serving_bs for u in self.ues])
        s = ch.sinr_db(pos, serving, self.bs_pos, self.params, self.cfg.n_rb, self.shadowing)
        cqi = ch.cqi_from_sinr(s, self.table)
        for u, c in zip(self.ues, np.atleast_1d(cqi)):
            u.cqi = int(c)

    def _setup_traffic(self):
        cfg = self.cfg
        flows = assign_flows(list(range(cfg.n_ue)), self.mobile_ids, self.rng_traffic,
                             cfg.max_load_per_ue, cfg.packet_bits, cfg.tti_ms)
        self.flows = flows
        self.flow_ue = []
        self.flow_spec = []
        present = set()
        for ue_id, specs in flows.items():
            for s in specs:
                self.flow_ue.append(ue_id)
                self.flow_spec.append(s)
                self.ues[ue_id].queues[s.flow.qci] = FlowQueue()
                present.add(s.flow.label)
        self.flow_ue = np.array(self.flow_ue, dtype=np.int64)
        self.rates = np.array([s.arrival_rate for s in self.flow_spec])
        self.classes = [s.value for s in Service if s in present] or [Service.VOICE.value]

    def _setup_schedulers(self, rng_init, rng_explore):
        cfg = self.cfg
        self.a2c_shared: Optional[A2CShared] = None
        if cfg.scheduler == "PF":
            self.schedulers: list[Scheduler] = [ProportionalFair(cfg.pf_window) for _ in range(cfg.n_bs)]
        elif cfg.scheduler == "CQA":
            self.schedulers = [ChannelQosAware(cfg.cqa_grouping_ms) for _ in range(cfg.n_bs)]
        else:
            self.schedulers, self.a2c_shared = build_a2c(cfg, rng_init, rng_explore)
            for s in self.schedulers:
                s.check_invariants = self.check_invariants

    # ------------------------------------------------------------ checkpoints

    def networks(self) -> dict:
        if self.a2c_shared is None:
            return {}
        nets = {"critic": self.a2c_shared.critic}
        for s in self.schedulers:
            nets[f"actor{s.bs}"] = s.actor
        return nets

    def save_networks(self, path) -> None:
        if self.a2c_shared is None:
            raise ValueError(f"scheduler {self.cfg.scheduler} has no networks")
        save_checkpoint(path, self.networks())

    def load_networks(self, path) -> None:
        nets = self.networks()
        if not nets:
            raise ValueError(f"scheduler {self.cfg.scheduler} has no networks")
        stored = load_checkpoint(path)
        missing = set(nets) - set(stored)
        if missing:
            from .nn import CheckpointError
            raise CheckpointError(f"checkpoint lacks networks {sorted(missing)}")
        for name, net in nets.items():
            restore(net, *stored[name])

    # ------------------------------------------------------------------ loop

    def tb_bits(self, cqi: int, n_rbg: int) -> int:
        if cqi <= 0 or n_rbg <= 0:
            return 0
        return int(math.floor(self.table.efficiencies[cqi - 1] * self._re_per_rbg * n_rbg))

    def step(self) -> None:
        cfg = self.cfg
        tti = self.tti
        if tti >= self.kpi.counts.shape[0]:
            raise RuntimeError("simulation already ran its configured number of TTIs")

        # (1) mobility and CQI
        if self.mobile_ids:
            reselect = tti > 0 and tti % cfg.handover_period == 0
            for i in self.mobile_ids:
                ch.advance_mobility(self.ues[i], cfg.tti_ms, self.bounds, self.bs_pos, self.params,
                                    cfg.n_rb, reselect,
                                    None if self.shadowing is None else self.shadowing[i])
            self._refresh_cqi()

        # (2) arrivals
        if self.rates.size:
            counts = self.rng_traffic.poisson(self.rates)
            if cfg.arrival_cap_per_bs is not None and counts.sum() > cfg.arrival_cap_per_bs:
                groups = np.array([self.ues[u].serving_bs for u in self.flow_ue])
                counts, removed = cap_arrivals(counts, groups, cfg.arrival_cap_per_bs, self.rng_traffic)
                if removed:
                    self.n_capped += removed
                    log.debug("TTI %d: arrival cap trimmed %d packets", tti, removed)
            for f in np.flatnonzero(counts):
                spec = self.flow_spec[f]
                ue_id = int(self.flow_ue[f])
                q = self.ues[ue_id].queues[spec.flow.qci]
                for _ in range(int(counts[f])):
                    q.push(Packet(self.n_created, spec.flow, ue_id, spec.packet_size, tti))
                    self.n_created += 1

        # (3) HARQ retransmissions go back to the head of their queue
        for p in sorted(self.harq.pop(tti, ()), key=lambda p: p.arrival_tti, reverse=True):
            self.ues[p.ue_id].queues[p.flow.qci].push_front(p)

        # stale packets leave the queue as drops
        for u in self.ues:
            for q in u.queues.values():
                while q.packets:
                    head = q.packets[0]
                    if tti - head.arrival_tti < cfg.drop_factor * head.flow.delay_budget:
                        break
                    q.pop()
                    if not head.attempted:
                        head.t_hol = tti - head.arrival_tti
                    self._complete(head, delivered=False)

        # (4) scheduling
        inputs = self._scheduler_inputs()
        maps = []
        for b, sched in enumerate(self.schedulers):
            rmap = sched.allocate(inputs[b])
            if self.check_invariants:
                self._check_map(inputs[b], rmap)
            maps.append(rmap)
        self.last_maps = maps

        # (5) transmissions
        for b, rmap in enumerate(maps):
            served: dict[int, int] = {}
            for (ue_id, qci), n in rmap.grants().items():
                ue = self.ues[ue_id]
                grant = self.tb_bits(ue.cqi, n)
                used = self._drain(ue, ue.queues[qci], grant)
                served[ue_id] = served.get(ue_id, 0) + used
            self.schedulers[b].end_tti(served)

        # (6) KPIs
        self.kpi.close_tti(tti, [s.last_reward for s in self.schedulers])
        if self.check_invariants:
            self.check_conservation()
        # (7)
        self.tti += 1

    def _scheduler_inputs(self) -> list[SchedulerInput]:
        tti = self.tti
        per_bs_q: list[list[QueueInfo]] = [[] for _ in range(self.cfg.n_bs)]
        per_bs_cqi: list[dict[int, int]] = [{} for _ in range(self.cfg.n_bs)]
        for u in self.ues:
            b = u.serving_bs
            per_bs_cqi[b][u.ue_id] = u.cqi
            for q in u.queues.values():
                if q.bits > 0:
                    head = q.packets[0]
                    per_bs_q[b].append(QueueInfo(u.ue_id, head.flow, tti - head.arrival_tti,
                                                 q.bits, u.cqi, head.arrival_tti))
        return [SchedulerInput(tti, self.n_rbg, per_bs_q[b], per_bs_cqi[b], self.rbg_bits, b)
                for b in range(self.cfg.n_bs)]

    def _drain(self, ue: UeState, q: FlowQueue, grant: int) -> int:
        """FIFO drain of ``grant`` bits; returns bits used."""
        used = 0
        while grant > 0 and q.packets:
            p = q.packets[0]
            if p.remaining <= grant:
                grant -= p.remaining
                used += p.remaining
                q.pop()
                p.remaining = 0
                self._attempt(ue, p)
            else:
                p.remaining -= grant
                q.bits -= grant
                used += grant
                grant = 0
        return used

    def _attempt(self, ue: UeState, p: Packet) -> None:
        cfg = self.cfg
        if not p.attempted:
            p.t_hol = self.tti - p.arrival_tti
            p.attempted = True
        p.t_tx += cfg.tti_ms
        outcome = ch.transmission_outcome(ue.cqi, self.rng_link, self.params)
        if outcome is ch.Outcome.DELIVERED:
            self._complete(p, delivered=True)
        elif p.retx_count < cfg.max_harq_retx:
            p.retx_count += 1
            p.t_harq += cfg.harq_rtt
            p.remaining = p.size
            self.harq.setdefault(self.tti + cfg.harq_rtt, []).append(p)
        else:
            self._complete(p, delivered=False)

    def _complete(self, p: Packet, delivered: bool) -> None:
        sat = is_satisfied(p, dropped=not delivered)
        self.kpi.add_completion(self.tti, p.flow.label.value, p.t_hol, delivered, sat)
        if delivered:
            self.n_delivered += 1
            lat = packet_latency(p)
            self.delivered_latency[list(Service).index(p.flow.label)] += lat
            if self.check_invariants:
                if lat != p.t_hol + p.t_tx + p.t_harq or p.t_hol < 0 or p.t_harq < 0:
                    raise AssertionError(f"latency accounting broken for {p!r}")
                if p.t_tx != (p.retx_count + 1) * self.cfg.tti_ms:
                    raise AssertionError(f"t_tx does not count attempts for {p!r}")
                if p.t_harq != p.retx_count * self.cfg.harq_rtt:
                    raise AssertionError(f"t_harq does not count retransmissions for {p!r}")
        else:
            self.n_dropped += 1

    # ------------------------------------------------------------- invariants

    def queued_packets(self) -> int:
        return sum(len(q) for u in self.ues for q in u.queues.values())

    def in_flight(self) -> int:
        return sum(len(v) for v in self.harq.values())

    def check_conservation(self) -> None:
        total = self.n_delivered + self.n_dropped + self.in_flight() + self.queued_packets()
        if total != self.n_created:
            raise AssertionError(f"packet conservation broken at TTI {self.tti}: "
                                 f"created {self.n_created}, accounted {total}")
        for u in self.ues:
            for q in u.queues.values():
                bits = sum(p.remaining for p in q.packets)
                if bits != q.bits:
                    raise AssertionError(f"queue backlog out of sync for UE {u.ue_id}")
                for p in q.packets:
                    if p.retx_count > self.cfg.max_harq_retx:
                        raise AssertionError("retransmission cap exceeded")

    def _check_map(self, inp: SchedulerInput, rmap) -> None:
        from .schedulers import check_allocation
        check_allocation(inp, rmap)

    # ------------------------------------------------------------------- run

    def run(self) -> RunResult:
        while self.tti < self.cfg.sim_ttis:
            self.step()
        return RunResult(self.cfg, self.kpi.trimmed(), self.summary(), self)

    def summary(self) -> dict[str, Any]:
        s = summarize(self.kpi.trimmed())
        lat = {}
        for i, svc in enumerate(Service):
            c = s["classes"].get(svc.value)
            if c and c["delivered"]:
                lat[svc.value] = int(self.delivered_latency[i]) / c["delivered"]
        s.update({
            "scheduler": self.cfg.scheduler,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "packets": {
                "created": self.n_created,
                "delivered": self.n_delivered,
                "dropped": self.n_dropped,
                "in_flight": self.in_flight(),
                "queued": self.queued_packets(),
                "arrivals_capped": self.n_capped,
            },
            "mean_latency": lat,
        })
        if self.a2c_shared is not None:
            sh = self.a2c_shared
            s["learning"] = {
                "updates": sh.n_updates,
                "mean_td_sq": sh.td_sq / sh.n_updates if sh.n_updates else 0.0,
                "final_epsilon": sh.epsilon(max(self.tti - 1, 0)),
            }
        return s


def run(cfg: ScenarioConfig, check_invariants: bool = False, checkpoint=None) -> RunResult:
    """Run ``cfg.sim_ttis`` TTIs; learning schedulers may start from a checkpoint."""
    sim = Simulation(cfg, check_invariants=check_invariants)
    if checkpoint is not None:
        sim.load_networks(checkpoint)
    return sim.run()


def train_and_evaluate(cfg: ScenarioConfig, eval_ttis: Optional[int] = None,
                       check_invariants: bool = False) -> tuple[RunResult, RunResult]:
    """Online training run, then a frozen greedy run of the trained networks on the same scenario."""
    cfg = validate_config(cfg)
    if cfg.scheduler not in LEARNING_SCHEDULERS:
        raise ValueError(f"{cfg.scheduler} does not learn")
    train = Simulation(cfg.replace(learn=True), check_invariants=check_invariants)
    train_res = train.run()
    ev = Simulation(cfg.replace(learn=False, sim_ttis=eval_ttis or cfg.sim_ttis),
                    check_invariants=check_invariants)
    for (name, dst), src in zip(ev.networks().items(), train.networks().values()):
        dst.copy_from(src)
    return train_res, ev.run()
