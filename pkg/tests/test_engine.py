import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qosched.channel import ChannelParams
from qosched.domain import Packet, packet_latency
from qosched.engine import Simulation, run, train_and_evaluate
from qosched.metrics import csv_text, summary_text
from conftest import small_config


def quiet_sim(**kw):
    """One static UE, no generated traffic, error-free link unless overridden."""
    base = dict(n_bs=1, n_ue=1, max_load_per_ue=0, sim_ttis=60,
                channel=kw.pop("channel", ChannelParams(bler_target=0.0)))
    base.update(kw)
    sim = Simulation(small_config(**base))
    ue = sim.ues[0]
    ue.cqi = 15
    qci = next(iter(ue.queues))
    return sim, ue, qci


def inject(sim, ue, qci, size=800, arrival=None):
    flow = next(s.flow for s in sim.flow_spec if s.flow.qci == qci)
    p = Packet(sim.n_created, flow, ue.ue_id, size, sim.tti if arrival is None else arrival)
    sim.n_created += 1
    ue.queues[qci].push(p)
    return p


def test_no_traffic_means_idle_maps():
    sim, ue, qci = quiet_sim()
    for _ in range(5):
        sim.step()
        assert all(m.n_assigned() == 0 for m in sim.last_maps)
    assert sim.kpi.counts[:5].sum() == 0


def test_single_packet_hand_trace():
    sim, ue, qci = quiet_sim()
    for _ in range(3):
        sim.step()
    p = inject(sim, ue, qci, size=800)  # one RBG at CQI 15 carries 1866 bits
    sim.step()
    assert sim.n_delivered == 1
    assert (p.t_hol, p.t_tx, p.t_harq, packet_latency(p)) == (0, 1, 0, 1)
    assert sim.last_maps[0].n_assigned() == 1


def test_hol_counts_waiting_time():
    sim, ue, qci = quiet_sim()
    for _ in range(17):
        sim.step()
    p = inject(sim, ue, qci, arrival=10)
    sim.step()
    assert p.t_hol == 7 and sim.n_delivered == 1


def test_forced_harq_failure_drops_after_max_retx():
    sim, ue, qci = quiet_sim(channel=ChannelParams(bler_target=0.999999999))
    sim.step()
    p = inject(sim, ue, qci)
    for _ in range(40):
        sim.step()
    assert sim.n_dropped == 1 and sim.n_delivered == 0
    assert p.retx_count == 3 and p.t_harq == 3 * sim.cfg.harq_rtt and p.t_tx == 4
    sim.check_conservation()


def test_harq_retransmission_has_priority():
    # a single RBG carries 1866 bits at CQI 15: one 1800-bit packet per TTI
    sim, ue, qci = quiet_sim(channel=ChannelParams(bler_target=0.999999999), n_rb=2, rbg_size=2)
    first = inject(sim, ue, qci, size=1800)
    sim.step()
    assert first.t_tx == 1 and first.retx_count == 1
    for _ in range(sim.cfg.harq_rtt - 1):
        sim.step()
    later = inject(sim, ue, qci, size=1800)
    sim.step()
    assert first.t_tx == 2 and later.t_tx == 0


def test_stale_drop_threshold():
    sim, ue, qci = quiet_sim(sim_ttis=700)
    ue.cqi = 0
    p = inject(sim, ue, qci)
    budget = p.flow.delay_budget
    while sim.tti < 2 * budget:
        sim.step()
        assert sim.n_dropped == 0
    sim.step()
    assert sim.n_dropped == 1 and p.t_hol == 2 * budget
    sim.check_conservation()


def test_expected_harq_delay_is_geometric():
    cfg = small_config(n_bs=1, n_ue=10, sim_ttis=3200, packet_bits={"Voice": 80, "IMS": 80, "Video": 80},
                       n_rb=50, channel=ChannelParams(d0=10.0))
    sim = Simulation(cfg)
    for u in sim.ues:
        u.cqi = 15
    harq, n = 0, 0
    orig = sim._complete

    def spy(p, delivered):
        nonlocal harq, n
        if delivered:
            harq += p.t_harq
            n += 1
        orig(p, delivered)

    sim._complete = spy
    sim.run()
    assert n >= 100_000
    bler = cfg.channel.bler_target
    assert harq / n == pytest.approx(cfg.harq_rtt * bler / (1 - bler), rel=0.05)


def test_zero_ttis_gives_empty_trace():
    res = run(small_config(sim_ttis=0))
    assert res.kpi.n == 0 and csv_text(res.kpi).count("\n") == 1


def test_default_length_trace():
    res = run(small_config(sim_ttis=5000, n_ue=3))
    assert res.kpi.n == 5000
    assert csv_text(res.kpi).count("\n") == 1 + 5000 * len(res.kpi.classes)


@pytest.mark.parametrize("sched", ["PF", "CQA", "DA2C", "CDPAA2C"])
def test_determinism(sched):
    cfg = small_config(scheduler=sched, mobile_fraction=0.25, sim_ttis=150)
    a, b = run(cfg), run(cfg)
    assert csv_text(a.kpi) == csv_text(b.kpi)
    assert summary_text(a.summary) == summary_text(b.summary)


@settings(max_examples=8, deadline=None)
@given(st.sampled_from(["PF", "CQA", "DA2C", "CDPAA2C"]), st.integers(1, 20), st.floats(0, 1),
       st.integers(0, 2**32))
def test_invariants_hold_on_random_scenarios(sched, n_ue, mobile, seed):
    cfg = small_config(scheduler=sched, n_ue=n_ue, mobile_fraction=mobile, seed=seed, sim_ttis=120,
                       channel=ChannelParams(shadowing_sigma=6.0))
    res = run(cfg, check_invariants=True)
    p = res.summary["packets"]
    assert p["created"] == p["delivered"] + p["dropped"] + p["in_flight"] + p["queued"]


def test_train_and_evaluate_freezes_networks():
    cfg = small_config(scheduler="DA2C", sim_ttis=120)
    tr, ev = train_and_evaluate(cfg, eval_ttis=60)
    assert ev.kpi.n == 60 and ev.summary["learning"]["updates"] == 0
    assert all(a.equal(b) for a, b in zip(tr.sim.networks().values(), ev.sim.networks().values()))
    with pytest.raises(ValueError):
        train_and_evaluate(small_config(scheduler="PF"))


def test_checkpoint_round_trip_through_simulation(tmp_path):
    cfg = small_config(scheduler="CDPAA2C", sim_ttis=50)
    res = run(cfg)
    path = tmp_path / "c.ckpt"
    res.sim.save_networks(path)
    other = Simulation(cfg.replace(learn=False))
    other.load_networks(path)
    assert all(a.equal(b) for a, b in zip(res.sim.networks().values(), other.networks().values()))
