import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pulsecomm.errors import DomainError, SimulationError
from pulsecomm.playback import PackingConfig, pack
from pulsecomm.simcore import Engine, ExperimentPlan, Fate, GroundTruthLog, HardwareConfig, Priority, run
from pulsecomm.spikegen import gen_poisson, gen_regular


def test_engine_orders_by_time_priority_seq():
    seen = []
    eng = Engine(observer=lambda ev: seen.append(ev[:3]))
    log = []
    eng.schedule(10, Priority.TRACE, lambda t: log.append("trace"))
    eng.schedule(10, Priority.PLAYBACK, lambda t: log.append("play-a"))
    eng.schedule(5, Priority.TRACE, lambda t: log.append("early"))
    eng.schedule(10, Priority.PLAYBACK, lambda t: log.append("play-b"))
    eng.schedule(10, Priority.CLOCK, lambda t: log.append("clock"))
    eng.run()
    assert log == ["early", "clock", "play-a", "play-b", "trace"]
    assert seen == sorted(seen)


def test_engine_rejects_past_and_honours_until():
    eng = Engine()
    hits = []

    def step(t):
        hits.append(t)
        eng.schedule(t + 10, 0, step)

    eng.schedule(0, 0, step)
    eng.run(until=45)
    assert hits == [0, 10, 20, 30, 40]
    assert eng.now == 45
    with pytest.raises(SimulationError):
        eng.schedule(44, 0, step)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 4)), max_size=200))
def test_engine_global_order_property(items):
    seen = []
    eng = Engine(observer=lambda ev: seen.append((ev.time, ev.priority, ev.seq)))
    for t, p in items:
        eng.schedule(t, p, lambda t: None)
    eng.run()
    assert seen == sorted(seen)
    assert len(seen) == len(items)


def test_engine_million_events():
    eng = Engine()
    n = 1_000_000
    last = [-1]

    def tick(t):
        assert t >= last[0]
        last[0] = t
        if t < n - 1:
            eng.schedule(t + 1, Priority.CHANNEL, tick)

    eng.schedule(0, Priority.CHANNEL, tick)
    eng.run()
    assert eng.executed == n


def _plan(trains, duration_ns, **hw):
    image, _ = pack(trains, PackingConfig(delay_compensation_ns=0))
    return ExperimentPlan(duration_ns, image=image, hardware=HardwareConfig(**hw))


def test_single_pulse_baseline_delay():
    res = run(_plan([(0, 3, gen_regular(1, 1))], 10_000))
    t = res.truth
    assert t.fate.tolist() == [Fate.TRACED]
    assert t.released_ns[0] == 0
    assert t.hicann_ns[0] == 56 + 174
    assert res.trace.absolute_ns().tolist() == [228]  # 230 floored to the 4 ns grid
    assert res.trace.label9 == [3]


def test_empty_plan_and_validation():
    res = run(ExperimentPlan(1000))
    assert res.truth.n == 0 and len(res.trace) == 0
    with pytest.raises(DomainError):
        run(ExperimentPlan(0))
    with pytest.raises(DomainError):
        run(ExperimentPlan(100, hardware=HardwareConfig(merger_depth=0)))


@pytest.mark.parametrize("rate", [500, 1780, 2500, 5000])
def test_conservation_and_determinism(rate):
    trains = [(h, 0, gen_poisson(rate, 200, seed=1, source_id=h)) for h in range(2)]
    a = run(_plan(trains, 2_100_000))
    b = run(_plan(trains, 2_100_000))
    assert a.truth.conserved()
    assert a.truth.digest() == b.truth.digest()
    counts = a.truth.counts()
    stats = a.channel_stats()
    assert counts["channel_drop"] == sum(s.dropped for s in stats["downstream"].values())
    assert counts["traced"] == len(a.trace)


def test_short_run_leaves_unfinished_pulses():
    res = run(_plan([(0, 0, gen_regular(1000, 10))], 3_00))
    c = res.truth.counts()
    assert c["unfinished"] > 0 and res.truth.conserved()


def test_ground_truth_export(tmp_path):
    res = run(_plan([(0, 0, gen_regular(1000, 3))], 10_000))
    path = tmp_path / "gt.csv"
    res.truth.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "pulse_id,stage,time_ns,dropped"
    assert sum(1 for ln in lines if ",traced," in ln) == 3
    log = GroundTruthLog(2)
    assert log.counts()["unfinished"] == 2
    assert np.all(log.released_ns == -1)
