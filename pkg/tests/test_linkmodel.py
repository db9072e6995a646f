import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aanet.flightdata import SynthConfig, snapshot, synth_scenario
from aanet.geo import GeoPos, distance
from aanet.linkmodel import (
    LinkError,
    QueueModel,
    RadioParams,
    link_capacity,
    link_delay,
    link_delay_from_distance,
    link_lifetime,
    lifetime_matrix,
)

KU = RadioParams.preset("paper-ku-band")


def test_preset_frozen_values():
    # independent 30-digit evaluation of kTWF, free-space Shannon capacity and per-hop delay
    assert KU.noise_power_w == pytest.approx(4.37211416609263e-14, rel=1e-12)
    for d, cap, delay_ms in [
        (100, 56277336.3507352, 10.4788981473634),
        (300, 37361132.1729356, 11.2192653039014),
        (700, 23191416.9980722, 12.6865674630409),
    ]:
        assert link_capacity(d, KU) == pytest.approx(cap, rel=1e-10)
        assert link_delay_from_distance(d, 0.010, KU) * 1e3 == pytest.approx(delay_ms, rel=1e-10)


def test_unknown_preset():
    with pytest.raises(KeyError):
        RadioParams.preset("x-band")


def test_nonpositive_params_rejected():
    with pytest.raises(ValueError):
        RadioParams(6e6, 14e9, 1.0, 1.0, 1.0, 0.0)


def test_monotone_in_distance():
    d = np.linspace(1, 800, 500)
    c = link_capacity(d, KU)
    assert np.all(np.diff(c) < 0)
    tx = KU.packet_bits / c
    prop = d * 1000 / KU.light_speed_mps
    assert np.all(np.diff(tx) > 0) and np.all(np.diff(prop) > 0)


@given(st.floats(0.5, 700), st.floats(0.001, 0.1))
def test_delay_decomposition(d, q):
    want = q + KU.packet_bits / link_capacity(d, KU) + d * 1000 / 3e8
    assert link_delay_from_distance(d, q, KU) == pytest.approx(want, rel=1e-12)


def test_link_delay_symmetry_and_errors():
    a, b = GeoPos(50, -20, 10), GeoPos(51, -22, 10)
    assert link_delay(a, b, 0.0, KU) == pytest.approx(link_delay(b, a, 0.0, KU), rel=1e-12)
    with pytest.raises(LinkError):
        link_delay(a, GeoPos(50, 20, 10), 0.0, KU)
    with pytest.raises(LinkError):
        link_delay(a, a, 0.0, KU)
    with pytest.raises(LinkError):
        link_capacity(0.0, KU)


def test_queue_models():
    assert np.all(QueueModel.training().sample(5) == 0.010)
    q = QueueModel.testing().sample(200_000, np.random.default_rng(0))
    assert q.min() >= 0.001
    # mean of N(10, 5^2) truncated below at 1 ms (closed form)
    from math import erf, exp, pi, sqrt

    a = (1 - 10) / 5
    phi = exp(-a * a / 2) / sqrt(2 * pi)
    Z = 1 - 0.5 * (1 + erf(a / sqrt(2)))
    assert q.mean() * 1e3 == pytest.approx(10 + 5 * phi / Z, abs=0.05)
    assert np.array_equal(QueueModel.testing().sample(7, np.random.default_rng(3)),
                          QueueModel.testing().sample(7, np.random.default_rng(3)))


def test_lifetime_static_and_departing():
    a, b = GeoPos(50, -20, 10), GeoPos(50, -21, 10)
    assert link_lifetime(a, b, 0.0) == 3600.0
    with pytest.raises(LinkError):
        link_lifetime(a, GeoPos(50, 20, 10), 0.0)


def test_lifetime_matrix_agrees_with_pairwise():
    sc = synth_scenario(SynthConfig(n_flights=12, duration_s=7200.0), 4)
    snap = snapshot(sc, 600.0)
    ids = snap.ids
    pos = {n.id: n.pos for n in snap.nodes}
    adj = np.array([[i != j and distance(pos[a], pos[b]) <= 700 for j, b in enumerate(ids)] for i, a in enumerate(ids)])
    from aanet.geo import visible

    adj &= np.array([[visible(pos[a], pos[b]) for b in ids] for a in ids])
    m = lifetime_matrix(sc, ids, 600.0, adj)
    for i, j in zip(*np.nonzero(adj)):
        assert m[i, j] == pytest.approx(link_lifetime((sc, ids[i]), (sc, ids[j]), 600.0), abs=1.0)
    assert np.allclose(m, m.T)
