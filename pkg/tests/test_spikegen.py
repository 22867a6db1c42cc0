import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pulsecomm.analysis import cv_isi, network_activity
from pulsecomm.errors import DomainError, ParseError, ValidationError
from pulsecomm.spikegen import (
    SpikeTrain,
    SurrogateParams,
    gen_beg,
    gen_poisson,
    gen_regular,
    gen_updown_surrogate,
    load_spike_file,
    save_spike_file,
    updown_epochs,
)


def test_spike_train_invariants():
    with pytest.raises(ValidationError):
        SpikeTrain(0, [1.0, 1.0])
    with pytest.raises(ValidationError):
        SpikeTrain(0, [-1.0, 2.0])
    assert len(SpikeTrain(0, [])) == 0


def test_gen_regular_examples():
    t = gen_regular(1000, 10)
    assert t.times_bio_ms.tolist() == pytest.approx(list(range(10)))
    isi = 1000 / 417
    t = gen_regular(417, 10_000 * isi)
    assert len(t) == 10_000
    assert np.allclose(t.isis, 2.398, atol=5e-4)
    assert cv_isi(t) == pytest.approx(0.0, abs=1e-9)
    assert gen_regular(100, 50, phase_ms=3).times_bio_ms.tolist() == pytest.approx([3, 13, 23, 33, 43])
    with pytest.raises(DomainError):
        gen_regular(0, 10)


def test_gen_poisson_rate_and_cv():
    t = gen_poisson(1000, 100_000, seed=3)
    n = len(t)
    # 99.9% interval of a Poisson count with mean 1e5 is about +-1040
    assert abs(n - 100_000) < 1100
    assert 0.98 <= cv_isi(t) <= 1.02
    isi = t.isis
    # exponential moments: mean 1, variance 1 (3 sigma bounds)
    assert abs(isi.mean() - 1.0) < 3 / math.sqrt(n)
    assert abs(isi.var() - 1.0) < 3 * math.sqrt(8 / n)


def test_gen_poisson_deterministic_and_independent():
    a = gen_poisson(500, 1000, seed=7, source_id=1)
    b = gen_poisson(500, 1000, seed=7, source_id=1)
    c = gen_poisson(500, 1000, seed=7, source_id=2)
    assert np.array_equal(a.times_bio_ms, b.times_bio_ms)
    assert not np.array_equal(a.times_bio_ms[:5], c.times_bio_ms[:5])
    with pytest.raises(DomainError):
        gen_poisson(-1, 10, seed=0)


def test_gen_beg_modes():
    t = gen_beg(2500, "regular", 10)
    assert np.allclose(t.isis, 0.4)
    p = gen_beg(1000, "pseudorandom", 100_000, seed=1)
    assert abs(len(p) / 100_000 - 1.0) < 0.02
    ticks = p.times_bio_ms / 0.04
    assert np.allclose(ticks, np.round(ticks))
    assert p.isis.min() >= 0.04 - 1e-9
    with pytest.raises(DomainError):
        gen_beg(1000, "burst", 10)


@settings(max_examples=30, deadline=None)
@given(st.floats(1, 5000), st.floats(1, 500), st.integers(0, 2**32), st.integers(0, 100))
def test_generators_produce_valid_trains(rate, dur, seed, sid):
    for t in (gen_regular(rate, dur), gen_poisson(rate, dur, seed, sid),
              gen_beg(rate, "pseudorandom", dur, seed, sid)):
        assert np.all(np.diff(t.times_bio_ms) > 0)
        assert t.times_bio_ms.size == 0 or (t.times_bio_ms[0] >= 0 and t.times_bio_ms[-1] < dur)


def test_surrogate_degenerate_case_is_poisson():
    p = SurrogateParams(n_neurons=3, up_rate_hz=50, down_rate_hz=0, mean_down_ms=math.inf,
                        initial_ai_ms=0, up_rate_cv=0, target_total_rate_hz=None,
                        duration_ms=20_000)
    assert updown_epochs(p) == [(0.0, 20_000, 50)]
    trains = gen_updown_surrogate(p)
    for t in trains:
        assert abs(len(t) / 1000 - 1.0) < 0.1
        assert 0.9 < cv_isi(t) < 1.1


def test_surrogate_defaults():
    p = SurrogateParams()
    trains = gen_updown_surrogate(p)
    assert len(trains) == 500
    total = sum(len(t) for t in trains) / (p.duration_ms / 1000)
    assert abs(total - 19_900) / 19_900 < 0.10
    cvs = [c for c in (cv_isi(t) for t in trains) if c is not None]
    assert np.median(cvs) > 1
    # bimodal activity: many near-silent bins and many high-activity bins
    act, _ = network_activity(trains, 10.0, p.duration_ms)
    lo = np.mean(act < 0.2 * act.mean())
    hi = np.mean(act > 1.5 * act.mean())
    assert lo > 0.2 and hi > 0.2
    again = gen_updown_surrogate(SurrogateParams())
    assert all(np.array_equal(a.times_bio_ms, b.times_bio_ms) for a, b in zip(trains, again))


def test_surrogate_validation():
    with pytest.raises(DomainError):
        SurrogateParams(frac_excitatory=1.5).validate()
    with pytest.raises(DomainError):
        SurrogateParams(up_rate_hz=-1).validate()


def test_load_spike_file(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("0,1.0\n0,2.0\n")
    (t,) = load_spike_file(f)
    assert t.source_id == 0 and t.times_bio_ms.tolist() == [1.0, 2.0]
    f.write_text("neuron_id,time_ms\n1,5.0\n0,3.0\n1,2.0\n")
    a, b = load_spike_file(f)
    assert b.times_bio_ms.tolist() == [2.0, 5.0]
    f.write_text("0,1.0\n0,1.0\n")
    with pytest.raises(ValidationError):
        load_spike_file(f)
    f.write_text("0,1.0\n0,abc\n")
    with pytest.raises(ParseError) as e:
        load_spike_file(f)
    assert e.value.line == 2


def test_spike_file_round_trip(tmp_path):
    trains = [gen_poisson(100, 1000, seed=1, source_id=i) for i in range(3)]
    f = tmp_path / "s.csv"
    save_spike_file(f, trains)
    back = load_spike_file(f)
    assert all(np.array_equal(a.times_bio_ms, b.times_bio_ms) for a, b in zip(trains, back))
