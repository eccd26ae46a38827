"""Advantage actor-critic RBG scheduler (D-A2C and CDPA-A2C presets).

Each BS owns an actor; a single critic is shared by all actors.  Every TTI
the actor walks the RBGs in order and, for each one, picks a candidate queue
or leaves the RBG idle.  After each decision the critic scores the
post-assignment observation, the TD error drives one critic step and one
policy-gradient step.  The RBG sweep of one TTI is an episode: the state
after the last RBG, or after the last feasible candidate is covered, is
terminal with value zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import LABEL_INDEX, RbgMap, Service
from .nn import PolicyNetwork, ValueNetwork, masked_softmax
from .schedulers import QueueInfo, Scheduler, SchedulerInput

ROW_FEATURES = 4 + len(Service)
GLOBAL_FEATURES = 2


def obs_size(m: int) -> int:
    return m * ROW_FEATURES + GLOBAL_FEATURES


@dataclass(frozen=True)
class RewardWeights:
    tau: float
    lam: float

    @classmethod
    def preset(cls, scheduler: str) -> "RewardWeights":
        return {"DA2C": cls(0.0, 5.0), "CDPAA2C": cls(5.0, 5.0)}[scheduler]


def sinc(x: float) -> float:
    """Unnormalized sinc, sin(x)/x with sinc(0) = 1."""
    return 1.0 if x == 0.0 else math.sin(x) / x


def reward_terms(cqi_k, mean_cqi, is_urllc, packet_delay, packet_budget):
    """(phi, R1, R2, R3) for one scheduling decision."""
    if packet_budget <= 0:
        raise ValueError("packet budget must be positive")
    phi = 1.0 - packet_delay / packet_budget
    r1 = max(float(np.sign(cqi_k - mean_cqi)), 0.0)
    r2 = 1.0 if is_urllc else 0.0
    n = math.floor(packet_delay / packet_budget)
    # sinc(pi * n) is exactly 1 at n == 0 and 0 at every other integer; avoid
    # the ~1e-17 residue of evaluating sin(pi * n) in floating point
    r3 = 1.0 if n == 0 else round(sinc(math.pi * n), 12) + 0.0
    return phi, r1, r2, r3


def reward(cqi_k, mean_cqi, is_urllc, packet_delay, packet_budget, weights: RewardWeights) -> float:
    phi, r1, r2, r3 = reward_terms(cqi_k, mean_cqi, is_urllc, packet_delay, packet_budget)
    return phi * r1 + weights.tau * r2 + weights.lam * r3


def actor_forward(net: PolicyNetwork, obs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return net.probs(obs, mask)


def select_action(probs: np.ndarray, epsilon: float, rng: np.random.Generator,
                  mask: np.ndarray | None = None) -> int:
    """Epsilon-greedy: uniform over feasible actions w.p. epsilon, else argmax (lowest index on ties)."""
    feasible = np.flatnonzero(probs > 0.0 if mask is None else mask)
    if feasible.size == 1:
        return int(feasible[0])
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(feasible[rng.integers(feasible.size)])
    return int(np.argmax(probs))


def epsilon_at(tti: int, eps_start: float = 1.0, eps_min: float = 0.0, explore_ttis: int = 3700) -> float:
    """Linear decay from eps_start at TTI 0 to eps_min at ``explore_ttis``, flat afterwards."""
    if tti < 0:
        raise ValueError("tti must be non-negative")
    if explore_ttis <= 0 or tti >= explore_ttis:
        return eps_min
    return eps_start + (eps_min - eps_start) * (tti / explore_ttis)


def td_error(r: float, gamma: float, v_next: float, v_curr: float) -> float:
    return r + gamma * v_next - v_curr


def critic_update(net: ValueNetwork, obs, delta: float, lr: float, max_norm: float = 0.0) -> float:
    return net.update(obs, delta, lr, max_norm)


def actor_update(net: PolicyNetwork, obs, mask, action: int, delta: float, lr: float,
                 max_norm: float = 0.0) -> float:
    return net.update(obs, mask, action, delta, lr, max_norm)


class ObservationBuilder:
    """Fixed-size per-BS observation over the top-M candidate queues.

    Row layout per candidate: cqi/15, hol/budget, min(backlog/norm, 1),
    URLLC flag, one-hot service label.  Two global features close the
    vector: fraction of RBGs assigned so far this TTI and mean CQI/15 of the
    BS's UEs.  Empty candidate slots are zero rows and are masked.
    """

    def __init__(self, m: int, urllc_budget_ms: int = 20, backlog_norm: float = 16000.0):
        self.m = m
        self.urllc_budget_ms = urllc_budget_ms
        self.backlog_norm = backlog_norm
        self.size = obs_size(m)

    def candidates(self, inp: SchedulerInput) -> list[QueueInfo]:
        qs = [q for q in inp.queues if q.backlog > 0 and inp.rate(q.cqi) > 0]
        qs.sort(key=lambda q: (-q.urgency, q.ue_id, q.flow.qci))
        return qs[: self.m]

    def is_urllc(self, q: QueueInfo) -> bool:
        return q.flow.delay_budget <= self.urllc_budget_ms

    def build(self, inp: SchedulerInput, cands: list[QueueInfo], remaining=None, n_assigned: int = 0):
        """Observation vector and feasibility mask (length M + 1, idle last)."""
        obs = np.zeros(self.size)
        mask = np.zeros(self.m + 1, dtype=bool)
        mask[self.m] = True
        for j, q in enumerate(cands):
            left = q.backlog if remaining is None else remaining[j]
            base = j * ROW_FEATURES
            obs[base] = q.cqi / 15.0
            obs[base + 1] = q.urgency
            obs[base + 2] = min(left / self.backlog_norm, 1.0)
            obs[base + 3] = 1.0 if self.is_urllc(q) else 0.0
            obs[base + 4 + LABEL_INDEX[q.flow.label]] = 1.0
            mask[j] = left > 0
        obs[-2] = n_assigned / inp.n_rbg if inp.n_rbg else 0.0
        obs[-1] = inp.mean_cqi / 15.0
        return obs, mask

    def apply(self, obs, mask, j: int, left: int, n_assigned: int, n_rbg: int) -> None:
        """Update ``obs``/``mask`` in place after an RBG went to candidate ``j``."""
        if j < self.m:
            obs[j * ROW_FEATURES + 2] = min(max(left, 0) / self.backlog_norm, 1.0)
            mask[j] = left > 0
        obs[-2] = n_assigned / n_rbg


class A2CScheduler(Scheduler):
    """One BS actor.  Critic and training switches are shared through ``A2CShared``."""

    def __init__(self, actor: PolicyNetwork, shared: "A2CShared", bs: int = 0):
        self.actor = actor
        self.shared = shared
        self.bs = bs
        self.name = shared.name
        self.last_reward = 0.0
        self.last_decisions = 0
        self.check_invariants = False

    def allocate(self, inp: SchedulerInput) -> RbgMap:
        sh = self.shared
        ob = sh.obs_builder
        rmap = RbgMap(inp.tti, inp.n_rbg)
        cands = ob.candidates(inp)
        remaining = [q.backlog for q in cands]
        obs, mask = ob.build(inp, cands, remaining, 0)
        mean_cqi = inp.mean_cqi
        eps = sh.epsilon(inp.tti)
        total = 0.0
        n_assigned = 0
        for rbg in range(inp.n_rbg):
            if not mask[: ob.m].any():
                # nothing left to serve: remaining decisions are forced idles with zero reward
                break
            probs = self.actor.probs(obs, mask)
            if not np.isfinite(probs).all():
                raise FloatingPointError(f"BS {self.bs}: policy output is not finite (training diverged)")
            if self.check_invariants:
                s = probs.sum()
                if abs(s - 1.0) > 1e-9 or np.any(probs[~mask] != 0.0):
                    raise AssertionError(f"policy output not a masked distribution (sum={s})")
            a = select_action(probs, eps, sh.rng, mask)
            if a < ob.m:
                q = cands[a]
                rmap.assign(rbg, q.ue_id, q.flow.qci)
                n_assigned += 1
                remaining[a] -= inp.rate(q.cqi)
                r = reward(q.cqi, mean_cqi, ob.is_urllc(q), q.hol, q.flow.delay_budget, sh.weights)
                left = remaining[a]
            else:
                r = 0.0
                left = 0
            total += r
            if sh.learn:
                obs_prev = obs.copy()
                mask_prev = mask.copy()
                ob.apply(obs, mask, a, left, n_assigned, inp.n_rbg)
                v_curr = sh.critic.value(obs_prev)
                terminal = rbg == inp.n_rbg - 1 or not mask[: ob.m].any()
                v_next = 0.0 if terminal else sh.critic.value(obs)
                delta = td_error(r, sh.gamma, v_next, v_curr)
                critic_update(sh.critic, obs_prev, delta, sh.lr_critic, sh.max_norm)
                actor_update(self.actor, obs_prev, mask_prev, a, delta, sh.lr_actor, sh.max_norm)
                sh.td_sq += delta * delta
                sh.n_updates += 1
            else:
                ob.apply(obs, mask, a, left, n_assigned, inp.n_rbg)
        self.last_reward = total
        return rmap


class A2CShared:
    """Critic, hyper-parameters and exploration state shared by every BS actor."""

    def __init__(self, name: str, obs_builder: ObservationBuilder, critic: ValueNetwork,
                 weights: RewardWeights, rng: np.random.Generator, gamma=0.9,
                 lr_actor=0.01, lr_critic=0.05, eps_schedule=(1.0, 0.0, 3700),
                 max_norm=1.0, learn=True):
        self.name = name
        self.obs_builder = obs_builder
        self.critic = critic
        self.weights = weights
        self.rng = rng
        self.gamma = gamma
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.eps_schedule = eps_schedule
        self.max_norm = max_norm
        self.learn = learn
        self.td_sq = 0.0
        self.n_updates = 0

    def epsilon(self, tti: int) -> float:
        if not self.learn:
            return 0.0
        return epsilon_at(tti, *self.eps_schedule)


def build_a2c(cfg, rng_init: np.random.Generator, rng_explore: np.random.Generator):
    """Actors (one per BS) and the shared state for a validated ScenarioConfig."""
    ob = ObservationBuilder(cfg.candidates, cfg.urllc_budget_ms, cfg.backlog_norm_bits)
    hidden = list(cfg.hidden_layers)
    critic = ValueNetwork([ob.size, *hidden, 1], rng_init)
    actors = [PolicyNetwork([ob.size, *hidden, cfg.candidates + 1], rng_init) for _ in range(cfg.n_bs)]
    tau, lam = cfg.reward_weights
    shared = A2CShared(cfg.scheduler, ob, critic, RewardWeights(tau, lam), rng_explore,
                       gamma=cfg.gamma, lr_actor=cfg.lr_actor, lr_critic=cfg.lr_critic,
                       eps_schedule=(cfg.eps_start, cfg.eps_min, cfg.explore_ttis),
                       max_norm=cfg.grad_clip, learn=cfg.learn)
    return [A2CScheduler(a, shared, bs=i) for i, a in enumerate(actors)], shared


__all__ = [
    "A2CScheduler", "A2CShared", "ObservationBuilder", "RewardWeights", "actor_forward",
    "actor_update", "build_a2c", "critic_update", "epsilon_at", "masked_softmax", "obs_size",
    "reward", "reward_terms", "select_action", "sinc", "td_error",
]
