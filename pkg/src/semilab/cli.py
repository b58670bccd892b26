"""Command-line surface: train / federated / stream / schedule / analyze.

Runs are configured by a JSON file (every key optional; an empty file is the
vanilla baseline on synthetic data).  Artifacts land in the output directory:
a JSONL record stream, CSV summaries, and a final checkpoint.  Exit codes:
0 success, 1 run error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .accounting import (
    run_summary_row,
    utilization,
    write_figure1_csv,
    write_summary_csv,
)
from .config import (
    ConfigError,
    RunConfig,
    build_federated_config,
    build_problem,
    build_stream_plan,
    build_train_config,
    parse_config,
)
from .engine import EvalRecord, StepStats, train
from .federated import run_federated
from .nn import save_checkpoint
from .schedules import bexp, cosine_lr
from .streaming import run_streaming

__all__ = ["main"]

OUTPUT_DIR_ENV = "SEMILAB_OUTPUT_DIR"


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(path)


def _output_dir(config: RunConfig, flag_value: str | None) -> str:
    directory = os.environ.get(OUTPUT_DIR_ENV) or flag_value or config.output_dir or "."
    os.makedirs(directory, exist_ok=True)
    return directory


def _progress(label: str):
    def report(done: int, total: int) -> None:
        print(f"{label}: {done}/{total}", flush=True)

    return report


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    out = _output_dir(config, args.output_dir)
    train_ds, test_ds, split = build_problem(config)
    tc = build_train_config(config, train_ds, test_ds, split)
    jsonl_path = os.path.join(out, "train.jsonl")
    result = train(tc, jsonl_path=jsonl_path, progress=_progress("train"))

    row = run_summary_row(
        tc.flags,
        len(train_ds),
        result.ledger.forward_total,
        result.ledger.backward_total,
        result.stats,
        result.evals,
        tc.target_accuracy,
    )
    write_summary_csv(os.path.join(out, "summary.csv"), [row])
    write_figure1_csv(os.path.join(out, "figure1.csv"), result.stats)
    save_checkpoint(result.model, os.path.join(out, "model.ffml"))
    final = result.final_accuracy
    print(
        f"done: flags={tc.flags} epochs={row['epochs']:.2f} "
        f"accuracy={final if final is not None else 'n/a'} "
        f"stopped_early={result.stopped_early}"
    )
    return 0


def _cmd_federated(args) -> int:
    config = _load_config(args.config)
    out = _output_dir(config, args.output_dir)
    train_ds, test_ds, _split = build_problem(config)
    fc = build_federated_config(config, train_ds, test_ds)
    jsonl_path = os.path.join(out, "federated.jsonl")
    result = run_federated(fc, jsonl_path=jsonl_path, progress=_progress("round"))

    stats = [s for c in result.clients if c.trainer is not None for s in c.trainer.stats]
    row = run_summary_row(
        f"federated/{_flags_of(fc)}",
        len(train_ds),
        result.ledger.forward_total,
        result.ledger.backward_total,
        stats,
        [
            EvalRecord(r.round, r.cumulative_epochs, r.global_accuracy)
            for r in result.rounds
            if r.global_accuracy is not None
        ],
        fc.target_accuracy,
    )
    write_summary_csv(os.path.join(out, "summary.csv"), [row])
    save_checkpoint(result.model, os.path.join(out, "model.ffml"))
    final = result.final_accuracy
    print(
        f"done: rounds={len(result.rounds)} epochs={row['epochs']:.2f} "
        f"accuracy={final if final is not None else 'n/a'} "
        f"stopped_early={result.stopped_early}"
    )
    return 0


def _flags_of(fc) -> str:
    from .engine import flags_label

    return flags_label(fc.cbs_enabled, fc.labeled_strong_aug, fc.cpl_enabled)


def _cmd_stream(args) -> int:
    config = _load_config(args.config)
    out = _output_dir(config, args.output_dir)
    train_ds, test_ds, split = build_problem(config)
    tc = build_train_config(config, train_ds, test_ds, split)
    plan = build_stream_plan(config)
    jsonl_path = os.path.join(out, "stream.jsonl")
    result = run_streaming(tc, plan, jsonl_path=jsonl_path, progress=_progress("stream"))

    row = run_summary_row(
        f"stream/{tc.flags}",
        len(train_ds),
        result.ledger.forward_total,
        result.ledger.backward_total,
        result.stats,
        result.evals,
        tc.target_accuracy,
    )
    write_summary_csv(os.path.join(out, "summary.csv"), [row])
    write_figure1_csv(os.path.join(out, "figure1.csv"), result.stats)
    save_checkpoint(result.model, os.path.join(out, "model.ffml"))
    final = result.final_accuracy
    print(
        f"done: chunks={plan.n_chunks} epochs={row['epochs']:.2f} "
        f"accuracy={final if final is not None else 'n/a'} "
        f"stopped_early={result.stopped_early}"
    )
    return 0


def _cmd_schedule(args) -> int:
    if args.u % args.l:
        print(f"error: u={args.u} must be a multiple of l={args.l}", file=sys.stderr)
        return 2
    if not 0 <= args.alpha < 1:
        print(f"error: alpha={args.alpha} must lie in [0, 1)", file=sys.stderr)
        return 2
    rows = []
    for t in range(args.T + 1):
        u_t = min(max(int(round(bexp(args.u, t, args.T, args.alpha))), 0), args.u)
        rows.append(
            (
                t,
                u_t,
                repr(args.base_lambda * u_t / args.l),
                repr(cosine_lr(args.lr, t, args.T)),
            )
        )
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("t", "u_t", "lambda_t", "lr_t"))
            writer.writerows(rows)
        print(f"wrote {args.out} ({len(rows)} rows)")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(("t", "u_t", "lambda_t", "lr_t"))
        writer.writerows(rows)
    return 0


def _cmd_analyze(args) -> int:
    with open(args.jsonl, "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        print("error: empty record stream", file=sys.stderr)
        return 1
    header = records[0]

    if "n_clients" in header:
        rounds = [r for r in records[1:] if "round" in r]
        if not rounds:
            print("error: no round records found", file=sys.stderr)
            return 1
        final = rounds[-1]
        reached = None
        target = header.get("target_accuracy")
        if target is not None:
            for r in rounds:
                acc = r.get("global_accuracy")
                if acc is not None and acc >= target:
                    reached = r["cumulative_epochs"]
                    break
        print(f"federated run: {len(rounds)} rounds")
        print(f"final accuracy: {final.get('global_accuracy')}")
        print(f"cumulative epochs: {final['cumulative_epochs']}")
        print(f"epochs to target: {reached if reached is not None else 'n/a'}")
        return 0

    if "dataset_size" not in header or "flags" not in header:
        print("error: first record is not a run header", file=sys.stderr)
        return 1

    steps = [r for r in records[1:] if "loss_s" in r]
    evals = [
        EvalRecord(r["t"], r["epoch_equivalent"], r["accuracy"])
        for r in records[1:]
        if "epoch_equivalent" in r
    ]
    stats = [
        StepStats(
            t=r["t"],
            u_t=r["u_t"],
            n_confident=r["n_confident"],
            n_correct_confident=r["n_correct_confident"],
            supervised_loss=r["loss_s"],
            unsupervised_loss=r["loss_u"],
            lambda_t=r["lambda"],
        )
        for r in steps
    ]
    forward_total = steps[-1]["fwd_total"] if steps else 0
    backward_total = steps[-1]["bwd_total"] if steps else 0

    out = os.environ.get(OUTPUT_DIR_ENV) or args.output_dir or "."
    os.makedirs(out, exist_ok=True)
    row = run_summary_row(
        header["flags"],
        header["dataset_size"],
        forward_total,
        backward_total,
        stats,
        evals,
        header.get("target_accuracy"),
    )
    write_summary_csv(os.path.join(out, "summary.csv"), [row])
    write_figure1_csv(os.path.join(out, "figure1.csv"), stats)

    report = utilization(stats) if stats else None
    print(f"run: flags={header['flags']} steps={len(stats)} evals={len(evals)}")
    print(f"passes: forward={forward_total} backward={backward_total}")
    print(f"epochs: {row['epochs']}")
    print(f"total utilization: {report.total if report else 'n/a'}")
    if evals:
        print(f"final accuracy: {evals[-1].accuracy}")
    print(f"wrote {os.path.join(out, 'summary.csv')} and figure1.csv")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semilab",
        description="Desk-scale semi-supervised learning laboratory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler, blurb in (
        ("train", _cmd_train, "run one training configuration"),
        ("federated", _cmd_federated, "run the federated simulator"),
        ("stream", _cmd_stream, "run the streaming simulator"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--output-dir", default=None, help="artifact directory")
        p.set_defaults(handler=handler)

    p = sub.add_parser("schedule", help="emit the batch-size/lambda/lr curves as CSV")
    p.add_argument("--u", type=int, default=448, help="maximum unlabeled batch size")
    p.add_argument("--l", type=int, default=64, help="labeled batch size")
    p.add_argument("--T", type=int, default=1024, help="total iterations")
    p.add_argument("--alpha", type=float, default=0.7, help="curve shape in [0, 1)")
    p.add_argument("--base-lambda", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.03)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(handler=_cmd_schedule)

    p = sub.add_parser("analyze", help="recompute summaries from a JSONL stream")
    p.add_argument("--jsonl", required=True, help="record stream to analyze")
    p.add_argument("--output-dir", default=None, help="where to write the CSVs")
    p.set_defaults(handler=_cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0

    try:
        return args.handler(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
