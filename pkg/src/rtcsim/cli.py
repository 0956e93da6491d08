"""Command-line entry point: gen-traces, train, eval, report.

Exit codes: 0 success, 1 user error (bad arguments, config or input files,
refusing to overwrite, missing checkpoints), 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import plots
from .codec import ProfileError
from .controllers import SafeguardConfig
from .experiments import (ConfigError, ExperimentConfig, ProfileSource, TraceSource, aggregate,
                          check_checkpoints, load_config, make_jobs, resolve_output, run_matrix)
from .metrics import read_results, write_results
from .rl.train import (ACTION_BINS, TrainConfig, Trainer, convergence_step, read_curve_csv,
                       trainer_from_state, write_curve_csv, write_episode_csv)
from .traces import TraceError, TraceGenParams, generate_traces, save_trace

log = logging.getLogger("rtcsim")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
QOE_PLOT_METRICS = ("mean_quality_db", "p98_frame_delay_ms", "stalls_per_sec", "stall_time_ratio",
                    "tput_mbps", "p98_packet_delay_ms", "loss_pct")


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


def _prepare_dir(path: Path, force: bool, markers: tuple[str, ...]) -> None:
    existing = [m for m in markers if (path / m).exists()]
    if existing and not force:
        raise UserError(f"{path} already holds {existing[0]}; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)


# -- gen-traces --------------------------------------------------------------

def cmd_gen_traces(args) -> int:
    defaults = TraceGenParams()
    params = TraceGenParams(
        bandwidth_mbps=args.bandwidth or defaults.bandwidth_mbps,
        min_rtt_ms=args.min_rtt or defaults.min_rtt_ms,
        change_interval_s=args.change_interval or defaults.change_interval_s,
        loss=args.loss or defaults.loss,
        queue_packets=tuple(int(v) for v in args.queue) if args.queue else defaults.queue_packets,
        duration_s=args.duration,
    )
    params.validate()
    if args.count < 1:
        raise UserError("--count must be positive")
    out = resolve_output(args.out)
    if out.exists() and any(out.glob("*.txt")) and not args.force:
        raise UserError(f"{out} already contains traces; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("trace-*"):
        old.unlink()
    for tr in generate_traces(params, args.count, args.seed):
        save_trace(tr, out / f"{tr.label}.txt")
    print(f"wrote {args.count} traces to {out}")
    return EXIT_OK


# -- train -------------------------------------------------------------------

TRAIN_MARKERS = ("checkpoint.json", "curve.csv")


def _train_setup(args) -> tuple[TrainConfig, list, list | None, TraceGenParams | None, list]:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig(name="train", traces=None, profiles=ProfileSource(), controllers=[],
                               seeds=[0], train=TrainConfig())
    tc = cfg.train or TrainConfig()
    if args.steps is not None:
        tc.total_steps = args.steps
    if args.seed is not None:
        tc.seed = args.seed
    if args.reward is not None:
        tc.reward_kind = args.reward
    if args.safeguard:
        tc.safeguard = tc.safeguard or SafeguardConfig()
    if tc.total_steps < 0:
        raise UserError("--steps must be non-negative")
    profiles = cfg.profiles.load()
    traces, params = None, None
    if cfg.train_traces is not None:
        if cfg.train_traces.directory is not None or cfg.train_traces.count:
            traces = cfg.train_traces.load()
        else:
            params = cfg.train_traces.params
    val_src = cfg.validation or TraceSource(params=TraceGenParams(duration_s=tc.episode_s), count=3, seed=9999)
    validation = [(t, p) for t in val_src.load() for p in profiles]
    return tc, profiles, traces, params, validation


def _write_train_outputs(trainer: Trainer, out: Path) -> None:
    trainer.save(out / "checkpoint.json")
    trainer.net.save(out / "policy.json")
    write_curve_csv(trainer.curve, out / "curve.csv")
    write_episode_csv(trainer.episode_log, out / "episodes.csv")
    with open(out / "actions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("bin_lo", "bin_hi", "count"))
        width = 2.0 / ACTION_BINS
        for i, n in enumerate(trainer.action_hist.tolist()):
            w.writerow((f"{-1 + i * width:.3f}", f"{-1 + (i + 1) * width:.3f}", n))


def cmd_train(args) -> int:
    out = resolve_output(args.out)
    if args.resume:
        ckpt = out / "checkpoint.json"
        if not ckpt.is_file():
            raise UserError(f"nothing to resume: {ckpt} not found")
        trainer = trainer_from_state(json.loads(ckpt.read_text()))
    else:
        _prepare_dir(out, args.force, TRAIN_MARKERS)
        trainer = Trainer(*_train_setup(args))
    trainer.on_eval = lambda t: _write_train_outputs(t, out)
    until = None if args.stop_after is None else trainer.steps + args.stop_after
    trainer.run(until_steps=until)
    _write_train_outputs(trainer, out)
    last = trainer.curve[-1].validation_reward if trainer.curve else float("nan")
    print(f"trained {trainer.steps} steps ({trainer.episodes} episodes); "
          f"last validation reward {last:.4f}; outputs in {out}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if cfg.traces is None:
        raise UserError("config has no 'traces' section to evaluate on")
    if not cfg.controllers:
        raise UserError("config lists no controllers")
    out = resolve_output(args.out or cfg.output)
    _prepare_dir(out, args.force, ("results.csv",))
    specs, missing = check_checkpoints(cfg.controllers)
    for m in missing:
        print(f"missing checkpoint, skipped: {m}", file=sys.stderr)
    traces, profiles = cfg.traces.load(), cfg.profiles.load()
    log_dir = out / "sessions" if cfg.write_logs and not args.no_logs else None
    jobs = make_jobs(specs, traces, profiles, cfg.seeds, cfg.duration_s, log_dir)
    rows = run_matrix(jobs, args.workers or cfg.workers)
    write_results(rows, out / "results.csv")
    (out / "summary.json").write_text(json.dumps(aggregate(rows), indent=2, sort_keys=True) + "\n")
    print(f"{len(rows)} sessions -> {out / 'results.csv'}")
    return EXIT_USER if missing else EXIT_OK


# -- report ------------------------------------------------------------------

def _read_actions(path: Path) -> list[tuple[float, float, int]]:
    with open(path, newline="") as fh:
        return [(float(r["bin_lo"]), float(r["bin_hi"]), int(r["count"])) for r in csv.DictReader(fh)]


def _hist_cdf(bins) -> list[tuple[float, float]]:
    total = sum(n for _, _, n in bins)
    if not total:
        return []
    pts, acc = [(bins[0][0], 0.0)], 0
    for _, hi, n in bins:
        acc += n
        pts.append((hi, acc / total))
    return pts


def cmd_report(args) -> int:
    out = resolve_output(args.out)
    _prepare_dir(out, args.force, ("summary.txt",))
    lines, written = [], []
    results = Path(args.results) if args.results else None
    if results is not None:
        if results.is_dir():
            results = results / "results.csv"
        if not results.is_file():
            raise UserError(f"results file {results} not found")
        try:
            rows = read_results(results)
        except (KeyError, ValueError) as e:
            raise UserError(f"malformed results CSV: {e}") from None
        lines.append(f"sessions: {len(rows)}")
        if rows:
            summary = aggregate(rows)["means"]
            lines.append("controller," + ",".join(QOE_PLOT_METRICS))
            for name, m in summary.items():
                lines.append(name + "," + ",".join(f"{m[c]:.4f}" for c in QOE_PLOT_METRICS))
            written.append(plots.write(plots.bar_panels(summary, QOE_PLOT_METRICS, "QoE"), out / "qoe_bars.svg"))

    runs = [Path(r) for r in args.runs or []]
    curves, actions, scatter = {}, {}, []
    for run in runs:
        curve_file = run / "curve.csv"
        if not curve_file.is_file():
            raise UserError(f"{run}: no curve.csv")
        curve = read_curve_csv(curve_file)
        name = run.name
        if curve:
            curves[name] = [(c.wall_seconds, c.validation_reward) for c in curve]
            step = convergence_step(curve)
            conv = next((c for c in curve if c.steps == step), None)
            lines.append(f"run {name}: final validation {curve[-1].validation_reward:.4f}, "
                         f"converged at step {step if step is not None else 'never'}")
            if conv is not None:
                before = [c.validation_reward for c in curve if c.steps <= conv.steps]
                scatter.append((conv.wall_seconds, sum(before) / len(before), name))
        if (run / "actions.csv").is_file():
            cdf = _hist_cdf(_read_actions(run / "actions.csv"))
            if cdf:
                actions[name] = cdf
                inc = 1.0 - next((p for x, p in cdf if x >= 0.0 - 1e-9), 0.0)
                lines.append(f"run {name}: rate-increase action share {inc:.3f}")
    if curves:
        written.append(plots.write(plots.line_plot(curves, "Learning curves", "wall time (s)",
                                                   "validation reward"), out / "learning_curves.svg"))
    if actions:
        written.append(plots.write(plots.line_plot(actions, "Sampled actions", "action", "CDF"),
                                   out / "action_cdf.svg"))
    if scatter:
        written.append(plots.write(plots.scatter_plot(scatter, "Reward vs convergence time",
                                                      "time to converge (s)", "mean reward before convergence"),
                                   out / "tradeoff_scatter.svg"))
    if not lines:
        lines.append("sessions: 0")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


# -- entry -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rtcsim", description="Trace-driven RTC congestion-control lab.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-traces", help="generate synthetic network traces")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="traces")
    g.add_argument("--bandwidth", type=_pair, help="Mbps range lo,hi")
    g.add_argument("--min-rtt", type=_pair, help="ms range lo,hi")
    g.add_argument("--change-interval", type=_pair, help="seconds range lo,hi")
    g.add_argument("--loss", type=_pair, help="random loss range lo,hi")
    g.add_argument("--queue", type=_pair, help="queue capacity range in packets lo,hi")
    g.add_argument("--duration", type=float, default=30.0)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_traces)

    t = sub.add_parser("train", help="train an RL rate controller")
    t.add_argument("--config")
    t.add_argument("--out", default="train")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--reward", choices=("nvc", "network"))
    t.add_argument("--safeguard", action="store_true")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--stop-after", type=int, help="stop after this many more steps (checkpoint kept)")
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run the evaluation matrix")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--workers", type=int)
    e.add_argument("--no-logs", action="store_true")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="summarize results and emit SVG plots")
    r.add_argument("--results")
    r.add_argument("--runs", nargs="*", help="training output directories")
    r.add_argument("--out", default="report")
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code if isinstance(e.code, int) else EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UserError, ConfigError, TraceError, ProfileError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
