"""Scenario-runner command line: run, bench, replay.

Exit codes: 0 all good, 1 audit violations, 2 invalid input.
`QUAKEMESH_LOG` selects log verbosity (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import statistics
import sys
from pathlib import Path

from quakemesh.bench import run_bench
from quakemesh.canonical import canonical_text
from quakemesh.core import AccelSample
from quakemesh.detection import ALGORITHMS, DetectorParams, RingBuffer, make_detector
from quakemesh.scenario import InvalidScenario, load_scenario
from quakemesh.sim.runner import run_scenario

log = logging.getLogger(__name__)


def _setup_logging() -> None:
    level_name = os.environ.get("QUAKEMESH_LOG", "warning").lower()
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING, "error": logging.ERROR}.get(
        level_name, logging.WARNING
    )
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except InvalidScenario as exc:
        print(f"invalid scenario {args.scenario}:", file=sys.stderr)
        for err in exc.errors:
            print(f"  {err}", file=sys.stderr)
        return 2
    seeds = [args.seed] if args.seed is not None else list(scenario.seeds)
    out_root = Path(args.out) / scenario.name
    header = f"{'seed':>6}  {'coverage':>9}  {'median_ms':>9}  {'p95_ms':>7}  {'dup_relays':>10}  {'violations':>10}"
    print(header)
    all_clean = True
    from quakemesh.plots import save_alert_timeline, save_latency_histogram

    for seed in seeds:
        report = run_scenario(scenario, seed)
        seed_dir = out_root / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        report.write(seed_dir / "report.json")
        report.write_alerts_csv(seed_dir / "alerts.csv")
        report.write_transmissions_csv(seed_dir / "transmissions.csv")
        latencies = [a.raised_at_ms - a.message.timestamp_ms for a in report.alerts if a.kind == "remote_gossip"]
        save_latency_histogram(latencies, seed_dir / "latency_hist.png")
        save_alert_timeline(report, seed_dir / "alert_timeline.png")
        m = report.metrics
        violations = len(report.audit_result.violations)
        all_clean = all_clean and report.audit_result.passed
        print(
            f"{seed:>6}  {m['alerted_detectors']:>4}/{m['detector_count']:<4}  "
            f"{str(m['latency_median_ms']):>9}  {str(m['latency_p95_ms']):>7}  "
            f"{m['duplicate_relays']:>10}  {violations:>10}"
        )
        for violation in report.audit_result.violations:
            print(f"    audit: {violation}", file=sys.stderr)
    print(f"reports under {out_root}")
    return 0 if all_clean else 1


def _cmd_bench(args) -> int:
    params = DetectorParams(algorithm=args.algo)
    result = run_bench(params, args.reps, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump = out_dir / f"bench_{args.algo}_timings.csv"
    with dump.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rep", "elapsed_ms"])
        for i, t in enumerate(result.timings_ms, start=1):
            writer.writerow([i, f"{t:.6f}"])
    summary = {
        "algorithm": result.algorithm,
        "repetitions": result.repetitions,
        "mean_ms": result.mean_ms,
        "std_ms": result.std_ms,
        "p90_ms": result.p90_ms,
    }
    (out_dir / f"bench_{args.algo}_summary.json").write_text(canonical_text(summary) + "\n", encoding="utf-8")
    from quakemesh.plots import save_bench_series

    save_bench_series(result.timings_ms, out_dir / f"bench_{args.algo}_latency.png", f"{args.algo} latency")
    print(f"{'algorithm':>9}  {'reps':>5}  {'mean_ms':>9}  {'std_ms':>9}  {'p90_ms':>9}")
    print(
        f"{result.algorithm:>9}  {result.repetitions:>5}  "
        f"{result.mean_ms:>9.4f}  {result.std_ms:>9.4f}  {result.p90_ms:>9.4f}"
    )
    print(f"raw timings: {dump}")
    return 0


def _parse_sample_file(path: Path) -> list[AccelSample]:
    samples: list[AccelSample] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected timestamp_ms,x,y,z got {len(parts)} fields")
            try:
                samples.append(
                    AccelSample(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]))
                )
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
    return samples


def _cmd_replay(args) -> int:
    path = Path(args.sample_file)
    try:
        samples = _parse_sample_file(path)
    except (OSError, ValueError) as exc:
        print(f"replay: {exc}", file=sys.stderr)
        return 2
    if not samples:
        print("0 windows (empty input)")
        return 0
    deltas = [b.timestamp_ms - a.timestamp_ms for a, b in zip(samples, samples[1:]) if b.timestamp_ms > a.timestamp_ms]
    if not deltas:
        print("replay: cannot infer sample rate (no increasing timestamps)", file=sys.stderr)
        return 2
    rate = round(1000.0 / statistics.median(deltas))
    overrides = {}
    if args.threshold is not None:
        overrides["threshold_z" if args.algo == "zscore" else "threshold_ratio"] = args.threshold
    try:
        params = DetectorParams(algorithm=args.algo, sample_rate_hz=float(rate), **overrides)
    except ValueError as exc:
        print(f"replay: {exc}", file=sys.stderr)
        return 2
    buffer = RingBuffer("replay", params.buffer_capacity)
    detector = make_detector(params)
    windows = 0
    triggers = 0
    cursor = 0
    tick = samples[0].timestamp_ms + params.window_ms
    last = samples[-1].timestamp_ms
    while tick <= last + params.slide_ms:
        while cursor < len(samples) and samples[cursor].timestamp_ms <= tick:
            buffer.push([samples[cursor]])
            cursor += 1
        window = buffer.extract_window(params, tick)
        if window is not None:
            result = detector.evaluate(window)
            if result is not None:
                windows += 1
                triggers += int(result.triggered)
                print(
                    f"t={tick} window=[{result.window.window_start_ms},{result.window.window_end_ms}) "
                    f"score={result.score:.4f} triggered={result.triggered}"
                )
        tick += params.slide_ms
    print(f"{windows} windows, {triggers} triggered")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quakemesh", description="Warning-mesh scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario file, one report per seed")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario's seed list")
    p_run.add_argument("--out", default="out", help="output directory (default: out)")
    p_run.set_defaults(fn=_cmd_run)

    p_bench = sub.add_parser("bench", help="time the detector on pre-generated windows")
    p_bench.add_argument("--algo", choices=ALGORITHMS, default="zscore")
    p_bench.add_argument("--reps", type=int, default=300)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default="out/bench")
    p_bench.set_defaults(fn=_cmd_bench)

    p_replay = sub.add_parser("replay", help="stream a sample file through one detector")
    p_replay.add_argument("sample_file")
    p_replay.add_argument("--algo", choices=ALGORITHMS, default="zscore")
    p_replay.add_argument("--threshold", type=float, default=None)
    p_replay.set_defaults(fn=_cmd_replay)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
