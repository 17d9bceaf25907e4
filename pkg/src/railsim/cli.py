"""Command line interface.

Subcommands::

    railsim dream generate LOG --out SAMPLES.jsonl
    railsim dream eval [PRED.jsonl] SAMPLES.jsonl --out ROWS.csv
    railsim score RUNS.jsonl --out ROWS.csv
    railsim label LOG --out LABELS.jsonl
    railsim buckets build LOG --out INDEX.json
    railsim buckets sample INDEX.json --n N --out DRAWS.jsonl
    railsim synth --frames N --out LOG   (demo scene logs)

Every subcommand takes ``--config``, ``--seed``, ``--jobs`` and ``--out``.
Data goes to files or stdout; diagnostics go to stderr. The exit status is 0
on success, 1 on a data or validation error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import collections
import csv
import dataclasses
import json
import logging
import multiprocessing
import os
import sys
from contextlib import contextmanager

from . import __version__
from .buckets import build_buckets, sample_epoch
from .commentary import label_frame
from .config import Config, load_config
from .dreamer import DreamSample, generate_frame
from .exceptions import EmptySequence, MissingPrediction, RailsimError
from .metrics import (
    DREAM_CATEGORIES,
    REPORT_COLUMNS,
    RouteRun,
    dream_success,
    dream_success_table,
    mean_row,
    score_run,
)
from .scene import Trajectory, iter_scene_log, save_scene_log


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------


@contextmanager
def _atomic_writer(path):
    """Write to ``path`` via a temporary file so failed runs leave no partial output."""
    if path in (None, "-"):
        yield sys.stdout
        sys.stdout.flush()
        return
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _dumps(obj):
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def _emit_summary(summary, out="-"):
    """Print the run summary; it goes to stderr when the data itself is on stdout."""
    stream = sys.stderr if out in (None, "-") else sys.stdout
    print(json.dumps(summary, indent=2, sort_keys=True), file=stream)


# --------------------------------------------------------------------------
# Worker pool with input-ordered output
# --------------------------------------------------------------------------

_WORKER = {}


def _init_worker(fn, payload):
    _WORKER["fn"] = fn
    _WORKER["payload"] = payload


def _call_worker(item):
    return _WORKER["fn"](item, _WORKER["payload"])


def _ordered_map(fn, items, payload, jobs, chunksize):
    """``map(fn, items)`` with results in input order, on ``jobs`` processes."""
    if jobs <= 1:
        for item in items:
            yield fn(item, payload)
        return
    with multiprocessing.get_context("fork").Pool(jobs, initializer=_init_worker, initargs=(fn, payload)) as pool:
        yield from pool.imap(_call_worker, items, chunksize=chunksize)


# --------------------------------------------------------------------------
# dream generate / eval
# --------------------------------------------------------------------------


def _dream_worker(frame, payload):
    seed, dreamer_cfg, dyn_cfg = payload
    try:
        samples = generate_frame(frame, seed, dreamer_cfg, dyn_cfg)
    except RailsimError as exc:
        raise RailsimError(f"frame {frame.frame_id}: {exc}") from None
    provenance = {"generator": f"railsim {__version__}", "seed": seed}
    lines = []
    for s in samples:
        rec = s.to_record()
        rec["provenance"] = provenance
        lines.append((s.mode.value, s.safe, _dumps(rec)))
    return lines


def cmd_dream_generate(args, cfg: Config):
    seed = cfg.dreamer.seed
    counts = collections.Counter()
    unsafe = frames = 0
    payload = (seed, cfg.dreamer, cfg.dynamics)
    with _atomic_writer(args.out) as fh:
        for lines in _ordered_map(_dream_worker, iter_scene_log(args.log), payload, cfg.io.jobs, cfg.io.chunksize):
            frames += 1
            for mode, safe, line in lines:
                counts[mode] += 1
                unsafe += not safe
                fh.write(line + "\n")
    total = sum(counts.values())
    _emit_summary({
        "frames": frames,
        "samples": total,
        "samples_per_mode": {m: counts.get(m, 0) for m in DREAM_CATEGORIES},
        "unsafe_fraction": unsafe / total if total else 0.0,
        "seed": seed,
    }, args.out)
    return 0


def _iter_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip():
                try:
                    yield lineno, json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise RailsimError(f"{path} line {lineno}: invalid JSON ({exc.msg})") from None


def _prediction_trajectory(rec):
    traj = rec.get("trajectory", rec)
    return Trajectory(traj["speed_wps"], traj["path_wps"])


def cmd_dream_eval(args, cfg: Config):
    if args.oracle is None and args.predictions is None:
        raise RailsimError("give a predictions file or --oracle")
    preds = {}
    if args.oracle is None:
        for lineno, rec in _iter_jsonl(args.predictions):
            try:
                preds[str(rec["sample_id"])] = _prediction_trajectory(rec)
            except (KeyError, TypeError, ValueError) as exc:
                raise RailsimError(f"{args.predictions} line {lineno}: bad prediction record ({exc})") from None
    results = []
    with _atomic_writer(args.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "mode", "success"])
        for _, rec in _iter_jsonl(args.samples):
            sample = DreamSample.from_record(rec)
            if args.oracle == "dreamer":
                pred = sample.trajectory
            elif args.oracle == "expert":
                pred = sample.expert
            elif sample.sample_id in preds:
                pred = preds[sample.sample_id]
            else:
                raise MissingPrediction(sample.sample_id)
            ok = dream_success(pred, sample, slope_per=cfg.metrics.slope_per)
            results.append((sample.mode, ok))
            writer.writerow([sample.sample_id, sample.mode.value, int(ok)])
    table = dream_success_table(results)
    if args.summary:
        with _atomic_writer(args.summary) as sf:
            sf.write(json.dumps(table, indent=2) + "\n")
    _emit_summary({"samples": len(results), "success_rate": table}, args.out)
    return 0


# --------------------------------------------------------------------------
# score
# --------------------------------------------------------------------------


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(round(value, 6))
    return value


def cmd_score(args, cfg: Config):
    m = cfg.metrics
    rows = []
    for lineno, rec in _iter_jsonl(args.runs):
        try:
            run = RouteRun.from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise RailsimError(f"{args.runs} line {lineno}: {exc}") from None
        rows.append(score_run(run, m.penalties, m.comfort, m.comfort_mode))
    if not rows:
        raise EmptySequence(f"{args.runs} contains no route runs")
    mean = mean_row(rows)
    with _atomic_writer(args.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows + [mean]:
            writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    _emit_summary({
        "routes": len(rows),
        "driving_score": mean["DS"],
        "route_completion": mean["RC"],
        "infraction_score": mean["IS"],
        "b2d_driving_score": mean["B2D_DS"],
        "success_rate": mean["success"],
        "efficiency": mean["efficiency"],
        "comfortness": mean["comfort"],
    }, args.out)
    return 0


# --------------------------------------------------------------------------
# label
# --------------------------------------------------------------------------


def _label_worker(frame, cfg):
    lab = label_frame(frame, cfg)
    return _dumps({
        "frame_id": frame.frame_id,
        "text": lab.full_text,
        "route_action": lab.route_action,
        "speed_action": lab.speed_action.value,
        "speed_reason": lab.speed_reason,
        "junction_notice": lab.junction_notice,
    })


def cmd_label(args, cfg: Config):
    n = 0
    with _atomic_writer(args.out) as fh:
        for line in _ordered_map(_label_worker, iter_scene_log(args.log), cfg.commentary, cfg.io.jobs, cfg.io.chunksize):
            fh.write(line + "\n")
            n += 1
    _emit_summary({"frames": n}, args.out)
    return 0


# --------------------------------------------------------------------------
# buckets
# --------------------------------------------------------------------------


def cmd_buckets_build(args, cfg: Config):
    index = build_buckets(iter_scene_log(args.log), cfg.buckets.specs)
    with _atomic_writer(args.out) as fh:
        fh.write(json.dumps(index, indent=1) + "\n")
    _emit_summary({"buckets": {k: len(v) for k, v in index.items()}}, args.out)
    return 0


def cmd_buckets_sample(args, cfg: Config):
    with open(args.index, encoding="utf-8") as fh:
        index = json.load(fh)
    weights = {s.name: s.weight for s in cfg.buckets.specs}
    if not any(k in weights for k in index):
        weights = {k: 1.0 for k in index}
    ids, buckets = sample_epoch(index, weights, args.n, cfg.buckets.seed, return_buckets=True)
    with _atomic_writer(args.out) as fh:
        for i, (fid, b) in enumerate(zip(ids, buckets)):
            fh.write(_dumps({"draw": i, "frame_id": fid, "bucket": b}) + "\n")
    _emit_summary({"draws": len(ids), "per_bucket": dict(collections.Counter(buckets))}, args.out)
    return 0


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------


def cmd_synth(args, cfg: Config):
    from .synthetic import random_log

    frames = random_log(args.frames, seed=args.seed if args.seed is not None else 0)
    if args.out in (None, "-"):
        raise RailsimError("synth needs --out")
    save_scene_log(args.out, frames)
    _emit_summary({"frames": len(frames)}, args.out)
    return 0


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    p.add_argument("--jobs", type=int, help="worker processes (overrides the config file)")
    p.add_argument("--out", default="-", help="output file, '-' for stdout (default)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="railsim", description="World-on-rails driving-log simulation and scoring.")
    parser.add_argument("--version", action="version", version=f"railsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    dream = sub.add_parser("dream", help="instruction-conditioned dream samples")
    dsub = dream.add_subparsers(dest="action", required=True)
    gen = dsub.add_parser("generate", parents=[common], help="generate dream samples from a scene log")
    gen.add_argument("log")
    gen.set_defaults(func=cmd_dream_generate)
    ev = dsub.add_parser("eval", parents=[common], help="success rate of predictions per dream category")
    ev.add_argument("predictions", nargs="?", help="JSONL with sample_id, speed_wps, path_wps")
    ev.add_argument("samples", help="dream samples written by 'dream generate'")
    ev.add_argument("--oracle", choices=("dreamer", "expert"), help="score the samples' own or the expert trajectories")
    ev.add_argument("--summary", help="also write the JSON success table here")
    ev.set_defaults(func=cmd_dream_eval)

    sc = sub.add_parser("score", parents=[common], help="driving score and benchmark metrics for route runs")
    sc.add_argument("runs")
    sc.set_defaults(func=cmd_score)

    lb = sub.add_parser("label", parents=[common], help="commentary text per frame")
    lb.add_argument("log")
    lb.set_defaults(func=cmd_label)

    bk = sub.add_parser("buckets", help="training-data buckets")
    bsub = bk.add_subparsers(dest="action", required=True)
    bb = bsub.add_parser("build", parents=[common], help="index a scene log into buckets")
    bb.add_argument("log")
    bb.set_defaults(func=cmd_buckets_build)
    bs = bsub.add_parser("sample", parents=[common], help="draw an epoch of frame ids from a bucket index")
    bs.add_argument("index")
    bs.add_argument("--n", type=int, required=True, help="number of draws")
    bs.set_defaults(func=cmd_buckets_sample)

    sy = sub.add_parser("synth", parents=[common], help="write a synthetic demo scene log")
    sy.add_argument("--frames", type=int, default=20)
    sy.set_defaults(func=cmd_synth)
    return parser


def _apply_overrides(cfg: Config, args) -> Config:
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            dreamer=dataclasses.replace(cfg.dreamer, seed=args.seed),
            buckets=dataclasses.replace(cfg.buckets, seed=args.seed),
        )
    if args.jobs is not None:
        cfg = dataclasses.replace(cfg, io=dataclasses.replace(cfg.io, jobs=args.jobs))
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.func(args, cfg)
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (RailsimError, OSError, ValueError) as exc:
        print(f"railsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
