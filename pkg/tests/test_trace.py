import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pulsecomm.errors import FormatError
from pulsecomm.events import MAX_PULSES_PER_DIRECTION
from pulsecomm.playback import PackingConfig, pack
from pulsecomm.simcore import Engine, ExperimentPlan, GroundTruthLog, Priority, run
from pulsecomm.spikegen import gen_poisson, gen_regular
from pulsecomm.trace import TraceMemory, TraceModule, check_capacity, to_spike_trains


def _module(duration_ns=None, **kw):
    eng = Engine()
    truth = GroundTruthLog()
    return eng, truth, TraceModule(eng, truth, duration_ns=duration_ns, **kw)


@pytest.mark.parametrize("duration, markers", [(300_000, 2), (100_000, 0), (131_072, 1)])
def test_overflow_marker_count(duration, markers):
    eng, _, tm = _module(duration)
    tm.start()
    eng.run(until=duration)
    assert tm.memory.overflow_markers == markers == tm.epoch


def test_marker_off_grid_rejected():
    _, _, tm = _module()
    with pytest.raises(FormatError):
        tm.insert_overflow_marker(1000)


def test_record_to_bio_time():
    mem = TraceMemory()
    mem.append(0, 1, 25, 0)
    ((h, l9, train),) = to_spike_trains(mem)
    # 25 ticks of 4 ns = 100 ns technical = 1 ms biological
    assert (h, l9) == (0, 1)
    assert train.times_bio_ms.tolist() == pytest.approx([1.0])
    assert to_spike_trains(TraceMemory()) == []


def test_decreasing_epoch_is_corruption():
    mem = TraceMemory()
    mem.append(0, 0, 10, 2)
    mem.append(0, 0, 20, 1)
    with pytest.raises(FormatError):
        mem.absolute_ns()


def _inject(per_cycle_arrivals, cycles, n_channels=8):
    eng, truth, tm = _module()
    n = per_cycle_arrivals * cycles
    truth.extend(n, hicann=np.arange(n) % n_channels)
    for k in range(n):
        t = (k // per_cycle_arrivals) * 8
        truth.stamp_ns[k] = t
        eng.schedule(t, Priority.CHANNEL, tm.receive, k)
    eng.run()
    return truth, tm


def test_two_per_cycle_is_lossless():
    truth, tm = _inject(2, 5000)
    assert tm.memory.drops() == 0
    assert len(tm.memory) == 10_000


def test_three_per_cycle_drops():
    truth, tm = _inject(3, 5000)
    assert tm.memory.drops() > 0
    assert truth.counts()["trace_drop"] == tm.memory.drops()
    assert truth.conserved()


def test_capacity_refuses_beyond_limit():
    truth, tm = _inject(2, 10)
    assert len(tm.memory) == 20
    eng, truth, tm = _module(capacity=7)
    truth.extend(10)
    for k in range(10):
        eng.schedule(k * 8, Priority.CHANNEL, tm.receive, k)
    eng.run()
    assert len(tm.memory) == 7 and tm.memory.full and tm.memory.refused == 3
    assert truth.counts()["trace_full"] == 3
    assert TraceMemory().capacity == MAX_PULSES_PER_DIRECTION == 125_000_000


def test_trace_disabled_marks_untraced():
    image, _ = pack([(0, 0, gen_regular(100, 50))], PackingConfig(delay_compensation_ns=0))
    res = run(ExperimentPlan(10_000, image=image, trace_enabled=False))
    assert res.truth.counts()["untraced"] == 5 and len(res.trace) == 0


def test_loopback_reproduces_low_rate_train():
    train = gen_regular(100, 5000, phase_ms=0.37)
    image, _ = pack([(1, 9, train)], PackingConfig(delay_compensation_ns=0))
    res = run(ExperimentPlan(int(5000 * 100) + 2000, image=image))
    ((h, l9, back),) = to_spike_trains(res.trace)
    assert (h, l9) == (1, 9)
    d = back.times_bio_ms - train.times_bio_ms
    # constant 2.3 ms path delay up to the 8 ns release and 4 ns stamp grids
    assert np.all(np.abs(d - 2.3) <= 0.12)
    assert res.trace.overflow_markers == 500_000 // 131072


def test_records_follow_delivery_order_per_channel():
    trains = [(h, 0, gen_poisson(2000, 100, seed=h, source_id=h)) for h in range(3)]
    image, _ = pack(trains, PackingConfig(delay_compensation_ns=0))
    res = run(ExperimentPlan(20_000, image=image))
    pid = np.asarray(res.trace.pulse_id)
    for h in range(3):
        mine = pid[np.asarray(res.trace.hicann) == h]
        assert np.all(np.diff(res.truth.delivered_ns[mine]) >= 0)
    assert np.array_equal(res.trace.absolute_ns(), res.truth.stamp_ns[pid])


traces = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 511), st.integers(0, 32767),
                            st.integers(0, 3)), max_size=60)


@settings(max_examples=100, deadline=None)
@given(traces)
def test_export_round_trip(rows):
    rows = sorted(rows, key=lambda r: r[3])
    mem = TraceMemory()
    for h, l9, ts, ep in rows:
        mem.append(h, l9, ts, ep)
    back = TraceMemory.from_words(mem.to_words())
    assert (back.hicann, back.label9, back.ts15, back.epoch) == (mem.hicann, mem.label9, mem.ts15, mem.epoch)


def test_file_round_trip_and_csv(tmp_path):
    mem = TraceMemory()
    mem.append(0, 1, 5, 0)
    mem.append(0, 1, 3, 1)
    mem.save(tmp_path / "t.bin")
    back = TraceMemory.load(tmp_path / "t.bin")
    assert back.absolute_ns().tolist() == [20, 131072 + 12]
    mem.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "record_order,hicann,label9,ts15,epoch,abs_ns,bio_ms"
    assert lines[2].startswith("1,0,1,3,1,131084,")
    with pytest.raises(FormatError):
        TraceMemory.from_words([0b111 << 29])
    check_capacity(mem)
