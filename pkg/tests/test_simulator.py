import math

import numpy as np
import pytest

from codednet import simulator as sim
from codednet.netmodel import Hypernet, LossModel, aloha_relay, reception_rates


def test_tandem_below_capacity_decodes_exactly():
    net, z, lm = sim.tandem([0.9, 0.7], loss_p=[0.9, 0.8])
    cfg = sim.SimConfig(K=24, m=8, payload_len=3, duration=math.inf)
    st = sim.run_session(net, lm, z, sim.Connection(1, [3], 0.5), cfg, seed=1)
    assert st.all_decoded() and st.payload_ok[3]
    sinks, rows = st.rank_rows()
    ranks = [r[1] for r in rows]
    assert sinks == [3] and ranks == sorted(ranks) and ranks[-1] == 24


def test_multicast_with_broadcast_arc():
    text_net = Hypernet([1, 2, 3, 4], [(1, {2, 3}), (2, {4}), (3, {4})])
    z = {a: 0.9 for a in text_net.arcs}
    cfg = sim.SimConfig(K=16, m=8, payload_len=2, duration=math.inf)
    st = sim.run_session(text_net, LossModel(), z, sim.Connection(1, [3, 4], 0.5), cfg, seed=2)
    assert st.all_decoded() and all(st.payload_ok.values())


def test_periodic_traffic_counts():
    net, z, lm = sim.tandem([0.37, 0.9])
    cfg = sim.SimConfig(K=8, traffic="periodic", duration=500)
    st = sim.run_session(net, lm, z, sim.Connection(1, [3], 0.1), cfg, seed=0)
    for a in net.arcs:
        assert abs(st.transmissions[a] - 500 * z[a]) <= 1


def test_slotted_aloha_delivery_matches_reception_rates():
    net, lm = aloha_relay(9 / 16, 1 / 16, 3 / 16, 3 / 4)
    top, rel = net.arcs
    z = {top: 0.4, rel: 0.5}
    T = 20_000
    cfg = sim.SimConfig(K=4, m=8, payload_len=1, duration=T)
    st = sim.run_session(net, lm, z, sim.Connection(1, [3], 0.01), cfg, seed=4)
    zK = reception_rates(net, lm, z)
    want3 = sum(v for (a, K), v in zK.items() if 3 in K)
    assert abs(st.received[3] / T - want3) < 4 * math.sqrt(want3 / T)


def test_bad_configurations():
    net, z, lm = sim.tandem([0.5])
    with pytest.raises(ValueError):
        sim.run_session(net, lm, z, sim.Connection(1, [2]), sim.SimConfig(traffic="bursty"))
    with pytest.raises(ValueError):
        sim.run_session(net, lm, {net.arcs[0]: 1.5}, sim.Connection(1, [2]), sim.SimConfig())
    st = sim.run_session(net, lm, z, sim.Connection(1, [2], 0.5), sim.SimConfig(K=4))
    with pytest.raises(ValueError):
        sim.track_innovation(st, 0.5, 0.5, 1)


def test_fluid_backlog_grows_at_rate_difference():
    net, z, lm = sim.tandem([0.8, 0.4])
    cfg = sim.SimConfig(K=400, duration=400, mu=1, m=8, payload_len=1)
    st = sim.run_session(net, lm, z, sim.Connection(1, [3], 0.4), cfg, seed=3)
    rep = sim.track_innovation(st, 0.8, 0.4, 1)
    assert rep.predicted == pytest.approx(0.4 + 0.4 / 256)
    assert rep.rel_error < 0.2


def test_exponent_formula_and_wilson():
    # C - R - R log(C/R) at C = 1, R = 1/2
    assert sim.exponent_prediction(1.0, 0.5) == pytest.approx(0.5 - 0.5 * math.log(2))
    with pytest.raises(ValueError):
        sim.exponent_prediction(1.0, 1.5)
    lo, hi = sim.wilson(5, 100)
    assert lo < 0.05 < hi
    assert sim.wilson(0, 0) == (0.0, 1.0)


def test_compiled_line_kernel_agrees_with_reference_engine():
    # decoding probability at a short session, both engines, Poisson traffic
    net, z, lm = sim.tandem([1.0, 1.0])
    K, delta, n = 6, 12.0, 400
    ref = fast = 0
    cfg = sim.SimConfig(K=K, m=8, payload_len=1, traffic="poisson", duration=delta,
                        stop_on_decode=True)
    for s in range(n):
        ref += sim.run_session(net, lm, z, sim.Connection(1, [3], 0.5), cfg, seed=s).decoded[3]
        fast += sim.line_session_fast([1.0, 1.0], K, delta, seed=10_000 + s)[0]
    p = (ref + fast) / (2 * n)
    assert abs(ref - fast) / n < 4 * math.sqrt(2 * p * (1 - p) / n)


def test_error_exponent_fit_on_small_grid():
    net, z, lm = sim.tandem([1.0, 1.0])
    fit = sim.estimate_error_exponent(net, lm, z, 1, 3, 1.0, 0.5, [6, 12, 18], 3000, seed=1)
    assert len(fit.points) == 3 and fit.slope > 0
    assert fit.points[0][3] > fit.points[-1][3]
