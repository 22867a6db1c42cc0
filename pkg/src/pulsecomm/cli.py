"""Command-line front end.

Every command writes one run directory under the output root holding the
effective config (``config.json``), CSV tables and ``summary.json``. The
directory name is derived from the command and a digest of the config, so
re-running the same config overwrites the same directory with identical
content.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import analysis, benchmark, characterize
from .config import (
    config_digest,
    hardware_from,
    load_file,
    packing_from,
    resolve,
    surrogate_from,
)
from .errors import ConfigError, PulseCommError
from .playback import pack
from .simcore import ExperimentPlan, run
from .spikegen import SpikeTrain, gen_poisson, gen_regular, gen_updown_surrogate, load_spike_file
from .timebase import NS_PER_BIO_MS
from .trace import to_spike_trains

ENV_OUT_DIR = "PULSECOMM_OUT_DIR"
ISI_BIN_MS = 0.04


def _out_root(cfg: dict) -> Path:
    return Path(cfg.get("out_dir") or os.environ.get(ENV_OUT_DIR) or "runs")


def _run_dir(command: str, cfg: dict) -> Path:
    d = _out_root(cfg) / f"{command}-{config_digest(cfg)}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")
    return d


def _parallel_map(fn: Callable, tasks: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# characterization sweeps ---------------------------------------------------

def _char_task(task):
    direction, mode, rate, n_pulses, seed, n_hicanns, hw_kwargs = task
    from .simcore import HardwareConfig

    hw = HardwareConfig(**hw_kwargs)
    fn = characterize.downstream_run if direction == "downstream" else characterize.upstream_run
    res, trains = fn(rate, mode, n_pulses, seed, n_hicanns, hw)
    pt = characterize.summarize(direction, mode, rate, n_hicanns, seed, res, trains)
    hist = None
    if direction == "downstream" and seed == 0:
        traced = to_spike_trains(res.trace)
        counts_s, _ = analysis.isi_histogram(trains[0][2], ISI_BIN_MS)
        counts_t, _ = analysis.isi_histogram(traced[0][2], ISI_BIN_MS) if traced else (np.zeros(0), None)
        hist = (counts_s.tolist(), np.asarray(counts_t).tolist())
    pt.extra = {}
    return pt, hist


def _aggregate(points: list[characterize.CharPoint]) -> list[dict]:
    groups: dict[tuple[str, float], list[characterize.CharPoint]] = {}
    for p in points:
        groups.setdefault((p.mode, p.rate_bio_hz), []).append(p)
    rows = []
    for (mode, rate), ps in sorted(groups.items()):
        def avg(attr):
            vals = [getattr(p, attr) for p in ps if getattr(p, attr) is not None]
            return float(np.mean(vals)) if vals else None
        rows.append({"mode": mode, "rate_bio_hz": rate, "n_seeds": len(ps),
                     "loss_fraction": avg("loss_fraction"),
                     "received_rate_bio_hz": avg("received_rate_bio_hz"),
                     "throughput_mbit_s": avg("throughput_mbit_s"),
                     "mean_delay_ms": avg("mean_delay_ms"), "jitter_ms": avg("jitter_ms"),
                     "cv_sent": avg("cv_sent"), "cv_traced": avg("cv_traced"),
                     "trace_drops": avg("trace_drops")})
    return rows


def _write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        raise PulseCommError(f"nothing to write to {path}")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def _cmd_char(direction: str, cfg: dict) -> Path:
    valid = {"downstream": {"regular", "poisson"}, "upstream": {"regular", "pseudorandom"}}[direction]
    bad = [m for m in cfg["modes"] if m not in valid]
    if bad:
        raise ConfigError(f"mode {bad[0]!r} not available for {direction} sweeps", "modes")
    out = _run_dir(f"char-{direction}", cfg)
    tasks = [(direction, mode, float(rate), cfg["n_pulses"], cfg["seed"] + k, cfg["hicanns"],
              cfg["hardware"])
             for mode in cfg["modes"] for rate in cfg["rates_hz"] for k in range(cfg["n_seeds"])]
    results = _parallel_map(_char_task, tasks, cfg["jobs"])
    points = [p for p, _ in results]
    characterize.write_points_csv(out / "points.csv", points)
    agg = _aggregate(points)
    _write_rows(out / "sweep.csv", agg)

    if direction == "downstream":
        rows = []
        for (p, hist) in results:
            if hist is None:
                continue
            n = max(len(hist[0]), len(hist[1]))
            for b in range(n):
                rows.append({"mode": p.mode, "rate_bio_hz": p.rate_bio_hz,
                             "bin_left_ms": round(b * ISI_BIN_MS, 6),
                             "count_sent": hist[0][b] if b < len(hist[0]) else 0,
                             "count_traced": hist[1][b] if b < len(hist[1]) else 0})
        if rows:
            _write_rows(out / "isi_histograms.csv", rows)

    summary = {"command": f"char-{direction}", "hicanns": cfg["hicanns"], "modes": {}}
    for mode in cfg["modes"]:
        mrows = [r for r in agg if r["mode"] == mode]
        onset = characterize.loss_onset([r["rate_bio_hz"] for r in mrows],
                                        [r["loss_fraction"] for r in mrows])
        top = max(r["received_rate_bio_hz"] for r in mrows)
        summary["modes"][mode] = {
            "loss_onset_bio_hz": onset,
            "max_received_rate_bio_hz": top,
            "max_throughput_mbit_s": analysis.rate_to_mbit_s(top),
        }
    analysis.write_summary_json(out / "summary.json", summary)
    return out


# single loopback -----------------------------------------------------------

def _cmd_loopback(cfg: dict) -> Path:
    out = _run_dir("loopback", cfg)
    lb = cfg["loopback"]
    n_h = cfg["hicanns"]
    if lb["spike_file"]:
        file_trains = load_spike_file(lb["spike_file"])
        trains = [(i % n_h, (i // n_h) % 512, t) for i, t in enumerate(file_trains)]
    else:
        dur = cfg["n_pulses"] / lb["rate_hz"] * 1000.0
        gen = (lambda h: gen_poisson(lb["rate_hz"], dur, seed=cfg["seed"], source_id=h)) \
            if lb["mode"] == "poisson" else (lambda h: gen_regular(lb["rate_hz"], dur, source_id=h))
        trains = [(h, 0, gen(h)) for h in range(n_h)]
    image, report = pack(trains, packing_from(cfg))
    span = int(image.requested_ns.max()) if image.n_pulses else 0
    res = run(ExperimentPlan(duration_ns=span + characterize.END_MARGIN_NS, image=image,
                             hardware=hardware_from(cfg)))
    image.save(out / "playback.pbm.bin")
    res.trace.save(out / "trace.bin")
    res.trace.write_csv(out / "trace.csv")
    res.truth.write_csv(out / "ground_truth.csv")
    report.write_csv(out / "packing.csv")
    m = analysis.match(None, mode="oracle", truth=res.truth, trace=res.trace)
    m.write_csv(out / "matches.csv")
    isi, delay = analysis.delay_vs_isi(m)
    analysis.write_columns_csv(out / "delay_vs_isi.csv", {"preceding_isi_ms": isi.tolist(),
                                                          "delay_ms": delay.tolist()})
    q = analysis.qos(m, res.duration_ns / NS_PER_BIO_MS)
    stats = res.channel_stats()
    summary = {
        "command": "loopback",
        "qos": q.as_dict(),
        "fates": res.truth.counts(),
        "received_rate_bio_hz": analysis.received_rate_bio_hz(m.traced_ms),
        "packing": {"n_pulses": image.n_pulses, "n_groups": image.n_groups,
                    "n_shifted": report.n_shifted, "max_shift_ns": report.max_shift_ns},
        "channels": {k: {str(h): s.as_dict() for h, s in v.items()} for k, v in stats.items()},
        "trace": {"records": len(res.trace), "overflow_markers": res.trace.overflow_markers,
                  "fifo_drops": res.trace.drops(), "full": res.trace.full},
        "ground_truth_digest": res.truth.digest(),
    }
    analysis.write_summary_json(out / "summary.json", summary)
    return out


# benchmark -----------------------------------------------------------------

def _bench_trains(cfg: dict) -> tuple[list[SpikeTrain], float | None]:
    b = cfg["bench"]
    if b["spike_file"]:
        loaded = {t.source_id: t for t in load_spike_file(b["spike_file"])}
        n = max(loaded, default=-1) + 1
        if not n:
            raise PulseCommError(f"{b['spike_file']}: no spikes")
        # neuron ids index the mapping; silent neurons get empty trains
        return [loaded.get(i, SpikeTrain(i, [])) for i in range(n)], b["duration_ms"]
    params = surrogate_from(cfg)
    return gen_updown_surrogate(params), b["duration_ms"] or params.duration_ms


def _cmd_bench(cfg: dict) -> Path:
    out = _run_dir("bench", cfg)
    trains, duration = _bench_trains(cfg)
    hw, pk = hardware_from(cfg), packing_from(cfg)
    nphs = cfg["bench"]["nph"]
    tasks = [(trains, n, hw, pk, duration) for n in nphs]
    points = _parallel_map(_bench_point, tasks, cfg["jobs"])
    benchmark.write_sweep_csv(out / "sweep.csv", [p for p, _ in points])
    sent_act, edges = analysis.network_activity(trains, benchmark.ACTIVITY_BIN_MS, duration)
    for p, act in points:
        d = out / f"nph-{p.neurons_per_hicann:03d}"
        d.mkdir(exist_ok=True)
        analysis.write_columns_csv(d / "activity.csv", {
            "bin_left_ms": edges[:-1].tolist(), "sent_hz": sent_act.tolist(), "traced_hz": act})
        analysis.write_summary_json(d / "summary.json", p.row())
    total = sum(t.times_bio_ms.size for t in trains)
    summary = {
        "command": "bench",
        "n_neurons": len(trains),
        "total_rate_bio_hz": total / (duration / 1000.0) if duration else None,
        "points": [p.row() for p, _ in points],
    }
    analysis.write_summary_json(out / "summary.json", summary)
    return out


def _bench_point(task):
    trains, nph, hw, pk, duration = task
    traced, point = benchmark.run_benchmark(trains, benchmark.build_mapping(len(trains), nph),
                                            hw, pk, duration)
    act, _ = analysis.network_activity(traced, benchmark.ACTIVITY_BIN_MS, duration)
    return point, act.tolist()


# report --------------------------------------------------------------------

def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise FileNotFoundError(f"missing run output {path}")
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (csv.Error, UnicodeDecodeError) as exc:
        raise PulseCommError(f"{path}: unreadable CSV ({exc})") from exc
    if not rows:
        raise PulseCommError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows, start=2):
        if len(r) != width or None in r or None in r.values():
            raise PulseCommError(f"{path}: malformed row at line {i}")
    return rows


def _floats(rows: list[dict], key: str, path: Path) -> list[float | None]:
    out = []
    for i, r in enumerate(rows, start=2):
        v = r[key]
        try:
            out.append(float(v) if v != "" else None)
        except ValueError as exc:
            raise PulseCommError(f"{path}: bad value {v!r} in column {key} at line {i}") from exc
    return out


def _cmd_report(run_dir: Path) -> Path:
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"missing run output {cfg_path}")
    cfg = json.loads(cfg_path.read_text())
    command = cfg.get("command")
    plot = run_dir / "plot"
    plot.mkdir(exist_ok=True)
    report: dict = {"command": command, "run_dir": str(run_dir)}
    if command in ("char-downstream", "char-upstream"):
        path = run_dir / "sweep.csv"
        rows = _read_csv(path)
        cols = {k: _floats(rows, k, path) for k in ("rate_bio_hz", "loss_fraction",
                                                     "received_rate_bio_hz", "throughput_mbit_s",
                                                     "mean_delay_ms", "jitter_ms", "cv_sent",
                                                     "cv_traced")}
        modes = [r["mode"] for r in rows]
        report["modes"] = {}
        for mode in sorted(set(modes)):
            idx = [i for i, m in enumerate(modes) if m == mode]
            sel = {k: [v[i] for i in idx] for k, v in cols.items()}
            analysis.write_columns_csv(plot / f"throughput_{mode}.csv", {
                "rate_bio_hz": sel["rate_bio_hz"], "received_rate_bio_hz": sel["received_rate_bio_hz"],
                "throughput_mbit_s": sel["throughput_mbit_s"]})
            analysis.write_columns_csv(plot / f"loss_{mode}.csv", {
                "rate_bio_hz": sel["rate_bio_hz"], "loss_fraction": sel["loss_fraction"]})
            if command == "char-downstream":
                analysis.write_columns_csv(plot / f"delay_{mode}.csv", {
                    "rate_bio_hz": sel["rate_bio_hz"], "mean_delay_ms": sel["mean_delay_ms"],
                    "jitter_ms": sel["jitter_ms"]})
                analysis.write_columns_csv(plot / f"cv_{mode}.csv", {
                    "rate_bio_hz": sel["rate_bio_hz"], "cv_sent": sel["cv_sent"],
                    "cv_traced": sel["cv_traced"]})
            report["modes"][mode] = {
                "loss_onset_bio_hz": characterize.loss_onset(sel["rate_bio_hz"], sel["loss_fraction"]),
                "max_received_rate_bio_hz": max(x for x in sel["received_rate_bio_hz"] if x is not None),
                "max_loss_fraction": max(sel["loss_fraction"]),
            }
    elif command == "loopback":
        path = run_dir / "matches.csv"
        rows = _read_csv(path)
        lost = _floats(rows, "lost", path)
        delays = np.array([d for d, l in zip(_floats(rows, "delay_ms", path), lost) if not l])
        counts, edges = (np.bincount(np.floor(delays / ISI_BIN_MS + 1e-9).astype(int)), None) \
            if delays.size else (np.zeros(0, int), None)
        analysis.write_columns_csv(plot / "delay_histogram.csv", {
            "bin_left_ms": [round(i * ISI_BIN_MS, 6) for i in range(counts.size)],
            "count": counts.tolist()})
        report["sent"] = len(rows)
        report["traced"] = int(delays.size)
        report["loss_fraction"] = 1 - delays.size / len(rows)
        report["mean_delay_ms"] = float(delays.mean()) if delays.size else None
        report["jitter_ms"] = float(delays.std()) if delays.size else None
    elif command == "bench":
        path = run_dir / "sweep.csv"
        rows = _read_csv(path)
        cols = {k: _floats(rows, k, path) for k in ("nph", "loss", "cv_sent", "cv_traced",
                                                     "activity_correlation")}
        analysis.write_columns_csv(plot / "loss_vs_nph.csv", {"nph": cols["nph"], "loss": cols["loss"]})
        analysis.write_columns_csv(plot / "cv_vs_nph.csv", {
            "nph": cols["nph"], "cv_sent": cols["cv_sent"], "cv_traced": cols["cv_traced"]})
        report["points"] = [dict(zip(cols, vals)) for vals in zip(*cols.values())]
    else:
        raise PulseCommError(f"{cfg_path}: unknown command {command!r}")
    analysis.write_summary_json(run_dir / "report.json", report)
    return run_dir


# argument parsing ----------------------------------------------------------

def _parse_rates(text: str) -> list[float]:
    try:
        rates = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid rate list {text!r}") from exc
    if not rates:
        raise argparse.ArgumentTypeError("rate list is empty")
    return rates


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulsecomm",
                                     description="Simulate FPGA-HICANN pulse communication.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("char-downstream", "loopback sweep over stimulus rates"),
                            ("char-upstream", "background-generator sweep over rates"),
                            ("loopback", "single loopback experiment"),
                            ("bench", "network benchmark sweep over neurons per HICANN")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", type=str, help=f"output root (default ${ENV_OUT_DIR} or ./runs)")
        p.add_argument("--hicanns", type=int, choices=(1, 8))
        p.add_argument("--rates", type=_parse_rates, help="comma-separated biological rates in Hz")
        p.add_argument("--jobs", type=int, help="worker processes for sweep points")
    p = sub.add_parser("report", help="consolidate a run directory into report.json and plot data")
    p.add_argument("run_dir", type=Path)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.out_dir is not None:
        o["out_dir"] = args.out_dir
    if args.hicanns is not None:
        o["hicanns"] = args.hicanns
    if args.rates is not None:
        o["rates_hz"] = args.rates
    if args.jobs is not None:
        o["jobs"] = args.jobs
    return o


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            out = _cmd_report(args.run_dir)
        else:
            file_cfg = load_file(args.config) if args.config else {}
            cfg = resolve(args.command, file_cfg, _overrides(args))
            if args.command == "bench" and args.seed is not None:
                # --seed drives the surrogate network for benchmark runs
                cfg["bench"]["surrogate"]["seed"] = args.seed
            if args.command == "loopback" and args.rates:
                cfg["loopback"]["rate_hz"] = args.rates[0]
            runner = {"char-downstream": lambda c: _cmd_char("downstream", c),
                      "char-upstream": lambda c: _cmd_char("upstream", c),
                      "loopback": _cmd_loopback, "bench": _cmd_bench}[args.command]
            out = runner(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PulseCommError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
