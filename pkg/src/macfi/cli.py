"""Command-line interface: single inferences, fault campaigns, plan dumps.

Exit codes: 0 success, 2 bad input (model/dataset/fault-spec/flags), 3 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import campaign as camp
from .errors import MacfiError, OutOfRange, SchemaError
from .faultctl import parse_fault_spec
from .macarray import Emulator, available_backends, classify_argmax
from .model import load_dataset, load_model
from .planner import dump_plan, plan_model, plan_stats
from .report import boxplot_svg, heatmap_svg


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip() != ""]
    except ValueError as exc:
        raise SchemaError(f"expected a comma-separated int list, got {text!r}") from exc
    if not vals:
        raise SchemaError(f"expected a comma-separated int list, got {text!r}")
    return vals


def _slice_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise SchemaError(f"--slice wants off,count, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise SchemaError(f"--slice wants off,count, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="macfi",
        description="MAC-array CNN emulator with per-multiplier fault injection",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    def add_model_flags(sp, dataset: bool):
        sp.add_argument("--model", required=True, help="model manifest (JSON)")
        sp.add_argument("--weights", required=True, help="weights blob (int8 + int32 bias)")
        if dataset:
            sp.add_argument("--dataset", required=True, help="QDS1 dataset file")
        sp.add_argument("--kernel", choices=available_backends(), default=None,
                        help="execution backend (default: compiled when built)")

    sp = sub.add_parser("infer", help="run inference, print per-sample predictions")
    add_model_flags(sp, dataset=True)
    sp.add_argument("--faults", help="fault-spec file: unit,lane,mode[,value[,start,len]]")
    sp.add_argument("--sample", type=int, help="run a single sample index instead of all")
    sp.add_argument("--verbose", action="store_true")

    sp = sub.add_parser("campaign", help="run a fault-injection campaign")
    add_model_flags(sp, dataset=True)
    sp.add_argument("--mode", choices=("sweep", "heatmap"), required=True)
    sp.add_argument("--k", help="comma list of fault counts (sweep mode)")
    sp.add_argument("--values", default="0,1,-1", help="comma list of injected values")
    sp.add_argument("--reps", type=int, default=10, help="repetitions per (k, value)")
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    sp.add_argument("--workers", type=int, default=None,
                    help="worker threads (default: available parallelism)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--slice", help="dataset slice off,count")
    sp.add_argument("--verbose", action="store_true")

    sp = sub.add_parser("plan", help="dump the execution plan and its statistics")
    add_model_flags(sp, dataset=False)
    sp.add_argument("--out", help="write to this file instead of stdout")
    sp.add_argument("--verbose", action="store_true")
    return p


def _load(args, with_dataset: bool):
    g = load_model(args.model, args.weights)
    plan = plan_model(g)
    ds = load_dataset(args.dataset) if with_dataset else None
    return plan, ds


def cmd_infer(args) -> int:
    plan, ds = _load(args, with_dataset=True)
    faults = None
    if args.faults:
        try:
            with open(args.faults, "r", encoding="utf-8") as fh:
                faults = parse_fault_spec(fh.read(), plan.cfg.units, plan.cfg.lanes)
        except OSError as exc:
            raise SchemaError(f"cannot read fault spec {args.faults}: {exc}") from exc
    if args.sample is not None:
        if not 0 <= args.sample < len(ds):
            raise OutOfRange(f"--sample {args.sample} outside dataset of {len(ds)}")
        indices = [args.sample]
    else:
        indices = list(range(len(ds)))

    emu = Emulator(plan, faults, kernel=args.kernel)
    if args.verbose:
        print(f"# backend={emu.backend} micro_ops_per_inference={plan.total_micro_ops}")
    correct = 0
    t0 = time.perf_counter()
    for i in indices:
        res = emu.run(ds.sample(i))
        pred = classify_argmax(res.logits)
        label = int(ds.labels[i])
        correct += pred == label
        print(f"sample={i} pred={pred} label={label}")
    elapsed = max(time.perf_counter() - t0, 1e-9)
    accuracy = correct / len(indices)
    print(f"accuracy={accuracy!r} throughput_ips={len(indices) / elapsed:.1f}")
    return 0


def _write(path: str, text: str, written: list[str]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    written.append(path)


def cmd_campaign(args) -> int:
    plan, ds = _load(args, with_dataset=True)
    values = _int_list(args.values)
    off, count = _slice_pair(args.slice) if args.slice else (0, None)
    os.makedirs(args.out, exist_ok=True)
    written: list[str] = []
    try:
        if args.mode == "sweep":
            if not args.k:
                raise SchemaError("sweep mode requires --k")
            spec = camp.SweepSpec(tuple(_int_list(args.k)), tuple(values), args.reps,
                                  args.seed, off, count)
            result = camp.run_fault_sweep(spec, plan, ds, workers=args.workers,
                                          kernel=args.kernel)
            _write(os.path.join(args.out, "boxplot.svg"),
                   boxplot_svg(result.groups, "accuracy drop vs faulted lanes"), written)
        else:
            result = camp.run_heatmap(values, plan, ds, workers=args.workers,
                                      kernel=args.kernel, slice_offset=off, slice_count=count)
            for value in values:
                _write(os.path.join(args.out, f"heatmap_{value}.svg"),
                       heatmap_svg(result.heatmap[value],
                                   f"accuracy drop, injected value {value}"), written)
        _write(os.path.join(args.out, "results.csv"), camp.results_to_csv(result), written)
        _write(os.path.join(args.out, "summary.csv"), camp.summary_to_csv(result.groups), written)
    except BaseException:
        for path in written:
            try:
                os.unlink(path)
            except OSError:
                pass
        raise
    print(f"baseline={result.baseline!r} runs={sum(r.kind != 'baseline' for r in result.records)}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_plan(args) -> int:
    plan, _ = _load(args, with_dataset=False)
    stats = plan_stats(plan)
    lines = [dump_plan(plan)]
    lines.append("micro-ops per unit:")
    for unit, n in enumerate(stats.micro_ops_per_unit):
        lines.append(f"  unit {unit}: {int(n)}")
    lines.append("lane activity (operand-carrying slots, rows = units):")
    for unit in range(stats.lane_activity.shape[0]):
        row = " ".join(f"{int(v):8d}" for v in stats.lane_activity[unit])
        lines.append(f"  unit {unit}: {row}")
    lines.append(f"idle lane slots: {stats.idle_slots}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {"infer": cmd_infer, "campaign": cmd_campaign, "plan": cmd_plan}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.cmd](args)
    except MacfiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:  # downstream consumer closed early, e.g. `... | head`
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0
    except Exception as exc:  # pragma: no cover - internal invariant violations
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
