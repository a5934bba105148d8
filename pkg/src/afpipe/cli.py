"""Command-line front end: simulate, allocate, sweep, compare.

Exit codes: 0 ok, 2 configuration error, 3 simulation error, 4 no feasible
allocation. The AFPIPE_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace

from . import allocator as alloc_mod
from .allocator import AllocatorParams, NoFeasible, canonical_allocation
from .config import ConfigError, Experiment, ScheduleKind, load_experiment
from .costs import attention_flops, ffn_flops, m2n_comm_bytes
from .report import (
    DEFAULT_GPU_MEMORY_BYTES,
    build_run_report,
    estimate_oom,
    format_ms,
    report_to_json,
    run_schedule,
    speedup,
)
from .sim import CycleDetected, NegativeDuration
from .taskgraph import GraphConstructionError
from .trace_io import write_trace

log = logging.getLogger("afpipe")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_INFEASIBLE = 4

_SCHEDULE_CHOICES = [k.value for k in ScheduleKind]
_SWEEP_AXES = ("seq_len", "topk", "ep_size", "virtual_stages", "attn_gpu_share")


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _setup_logging() -> None:
    level = os.environ.get("AFPIPE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _load(path: str) -> Experiment:
    if not os.path.exists(path):
        raise _CliError(EXIT_CONFIG, f"config file not found: {path}")
    try:
        return load_experiment(path)
    except ConfigError as exc:
        raise _CliError(EXIT_CONFIG, f"config error in {path}: {exc}") from exc


def _resolve_allocation(exp: Experiment, args) -> alloc_mod.Allocation:
    cluster = exp.cluster
    try:
        if args.attn_gpus is not None or args.attn_nics is not None:
            gpus = args.attn_gpus if args.attn_gpus is not None else cluster.total_gpus // 2
            nics = args.attn_nics if args.attn_nics is not None else cluster.total_nics // 2
            if not 1 <= gpus <= cluster.total_gpus - 1:
                raise NoFeasible(f"attention GPU count {gpus} leaves no split")
            if not 1 <= nics <= cluster.total_nics - 1:
                raise NoFeasible(f"attention NIC count {nics} leaves no split")
            if args.equal_nics:
                if cluster.total_nics % 2 != 0:
                    raise NoFeasible("equal NIC split requires an even NIC count")
                nics = cluster.total_nics // 2
            return canonical_allocation(
                gpus, nics, cluster.total_gpus, cluster.total_nics, cluster.gpus_per_node
            )
        return alloc_mod.default_allocation(exp, equal_nics=args.equal_nics)
    except NoFeasible as exc:
        raise _CliError(EXIT_INFEASIBLE, f"no feasible allocation: {exc}") from exc


def _simulate_kind(exp, kind, alloc):
    try:
        return run_schedule(exp, kind, alloc)
    except (GraphConstructionError, CycleDetected, NegativeDuration) as exc:
        raise _CliError(EXIT_SIMULATION, f"simulation failed: {exc}") from exc


def _print_result_table(rows: list[tuple]) -> None:
    header = ("schedule", "iter_ms", "bubble_frac", "exposed_ms", "mfu", "warmup_ms")
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    for row in [header, *rows]:
        print("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)))


def _result_row(kind: ScheduleKind, result) -> tuple:
    return (
        kind.value,
        format_ms(result.iteration_time),
        f"{result.bubble_fraction:.4f}",
        format_ms(result.exposed_comm),
        f"{result.mfu:.4f}",
        format_ms(result.bubble_warmup),
    )


def cmd_simulate(args) -> int:
    exp = _load(args.config)
    kind = ScheduleKind(args.schedule)
    alloc = _resolve_allocation(exp, args)
    trace, result = _simulate_kind(exp, kind, alloc)
    report = build_run_report(exp, alloc, {kind: result}, args.mem_cap)
    print(f"allocation: M={alloc.attn_gpus} N={alloc.ffn_gpus} "
          f"Ma={alloc.attn_nics} Mf={alloc.ffn_nics} "
          f"(m={alloc.attn_nodes}x{alloc.attn_gpus_per_node}, "
          f"n={alloc.ffn_nodes}x{alloc.ffn_gpus_per_node})")
    _print_result_table([_result_row(kind, result)])
    for warning in report.warnings:
        print(f"warning: {warning}")
    if args.trace:
        write_trace(trace, args.trace)
        log.info("trace written to %s", args.trace)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report_to_json(report))
    return EXIT_OK


def cmd_allocate(args) -> int:
    exp = _load(args.config)
    params = AllocatorParams(
        radius=args.radius, trials=args.trials, epsilon=args.epsilon, rng_seed=args.seed
    )
    try:
        report = alloc_mod.allocate(exp, params, equal_nics=args.equal_nics)
    except NoFeasible as exc:
        raise _CliError(EXIT_INFEASIBLE, f"no feasible allocation: {exc}") from exc
    best = report.best
    print(f"best allocation: M={best.attn_gpus} N={best.ffn_gpus} "
          f"Ma={best.attn_nics} Mf={best.ffn_nics} "
          f"(m={best.attn_nodes}x{best.attn_gpus_per_node}, "
          f"n={best.ffn_nodes}x{best.ffn_gpus_per_node})")
    print(f"T* = {format_ms(report.t_star)} ms")
    print(f"phase 1 retained {report.phase1_set_size} candidate(s); "
          f"seed M={report.seed_alloc.attn_gpus} Ma={report.seed_alloc.attn_nics}; "
          f"{report.refine_improvements} refinement improvement(s) over {args.trials} trial(s)")
    payload = {
        "best": _alloc_dict(best),
        "t_star": report.t_star,
        "phase1_set_size": report.phase1_set_size,
        "seed": _alloc_dict(report.seed_alloc),
        "refine_improvements": report.refine_improvements,
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    if args.trace_csv:
        with open(args.trace_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["attn_gpus", "ffn_gpus", "attn_nics", "ffn_nics", "profiled_time_s"])
            for cand, t in report.objective_trace:
                writer.writerow([cand.attn_gpus, cand.ffn_gpus, cand.attn_nics, cand.ffn_nics, repr(t)])
    return EXIT_OK


def _alloc_dict(alloc) -> dict:
    from .report import allocation_to_dict

    return allocation_to_dict(alloc)


def _apply_axis(exp: Experiment, axis: str, raw: str) -> tuple[Experiment, float, int | None]:
    """Return (experiment at this sweep point, numeric value, forced attn gpus)."""
    try:
        value = float(raw) if axis == "attn_gpu_share" else int(raw)
    except ValueError:
        raise _CliError(EXIT_CONFIG, f"invalid value {raw!r} for axis {axis}") from None
    if axis == "seq_len":
        if value < 1:
            raise _CliError(EXIT_CONFIG, f"seq_len must be >= 1, got {value}")
        return replace(exp, workload=replace(exp.workload, seq_len=value)), value, None
    if axis == "topk":
        if not 1 <= value <= exp.model.experts:
            raise _CliError(EXIT_CONFIG, f"topk must be in [1, experts], got {value}")
        return replace(exp, model=replace(exp.model, topk=value)), value, None
    if axis == "ep_size":
        if value < 1:
            raise _CliError(EXIT_CONFIG, f"ep_size must be >= 1, got {value}")
        return replace(exp, ep_size=value), value, None
    if axis == "virtual_stages":
        layers = exp.model.layers
        if value < 1 or layers % value != 0:
            raise _CliError(
                EXIT_CONFIG,
                f"virtual_stages must divide layers={layers} evenly, got {value}",
            )
        return replace(exp, virtual_stages=value, pipeline_depth=layers // value), value, None
    if axis == "attn_gpu_share":
        total = exp.cluster.total_gpus
        gpus = round(total * value)
        if not 0 < value < 1 or not 1 <= gpus <= total - 1:
            raise _CliError(EXIT_CONFIG, f"attn_gpu_share must leave both sides a GPU, got {value}")
        return exp, value, gpus
    raise _CliError(EXIT_CONFIG, f"unknown axis {axis}")


def cmd_sweep(args) -> int:
    exp = _load(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise _CliError(EXIT_CONFIG, "no sweep values given")

    fieldnames = [
        "schedule", "axis", "value", "iteration_time_s", "bubble_fraction",
        "exposed_comm_s", "mfu", "speedup_vs_megatron", "attn_flops_share",
        "m2n_bytes", "oom_flag",
    ]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames)
    writer.writeheader()

    for raw in values:
        point, value, forced_gpus = _apply_axis(exp, args.axis, raw)
        cluster = point.cluster
        try:
            if forced_gpus is not None:
                nics = cluster.total_nics // 2
                alloc = canonical_allocation(
                    forced_gpus, nics, cluster.total_gpus, cluster.total_nics,
                    cluster.gpus_per_node,
                )
            else:
                alloc = alloc_mod.default_allocation(point, equal_nics=args.equal_nics)
        except NoFeasible as exc:
            raise _CliError(EXIT_INFEASIBLE, f"no feasible allocation: {exc}") from exc

        c_a = float(attention_flops(point.model, point.workload))
        c_f = float(ffn_flops(point.model, point.workload))
        oom = estimate_oom(point, alloc, args.mem_cap)
        results = {}
        for kind in ScheduleKind:
            _, results[kind] = _simulate_kind(point, kind, alloc)
        base = results[ScheduleKind.MEGATRON_1F1B]
        for kind in ScheduleKind:
            result = results[kind]
            writer.writerow({
                "schedule": kind.value,
                "axis": args.axis,
                "value": value,
                "iteration_time_s": repr(result.iteration_time),
                "bubble_fraction": repr(result.bubble_fraction),
                "exposed_comm_s": repr(result.exposed_comm),
                "mfu": repr(result.mfu),
                "speedup_vs_megatron": repr(speedup(base, result)),
                "attn_flops_share": repr(c_a / (c_a + c_f)),
                "m2n_bytes": m2n_comm_bytes(point.model, point.workload),
                "oom_flag": oom,
            })

    text = buf.getvalue()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    exp = _load(args.config)
    alloc = _resolve_allocation(exp, args)
    results = {}
    for kind in ScheduleKind:
        _, results[kind] = _simulate_kind(exp, kind, alloc)
    _print_result_table([_result_row(kind, results[kind]) for kind in ScheduleKind])
    af = results[ScheduleKind.AFPIPE]
    print()
    for kind in ScheduleKind:
        if kind is ScheduleKind.AFPIPE:
            continue
        other = results[kind]
        sp = speedup(other, af)
        if other.exposed_comm > 0:
            cut = 100.0 * (1.0 - af.exposed_comm / other.exposed_comm)
            reduction = f"exposed comm reduced by {cut:.1f}%"
        else:
            reduction = "no exposed comm to reduce"
        print(f"afpipe vs {kind.value}: speedup {sp:.4f}, {reduction}")
    if args.out:
        report = build_run_report(exp, alloc, results, args.mem_cap)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report_to_json(report))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment document path")
    parser.add_argument("--equal-nics", action="store_true",
                        help="force both groups to take half of the NICs")
    parser.add_argument("--mem-cap", type=float, default=DEFAULT_GPU_MEMORY_BYTES,
                        help="per-GPU memory capacity in bytes for OOM checks")


def _add_alloc_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--attn-gpus", type=int, default=None,
                        help="override the attention-side GPU count")
    parser.add_argument("--attn-nics", type=int, default=None,
                        help="override the attention-side NIC count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afpipe",
        description="Simulate and optimize disaggregated MoE training pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate one schedule")
    _add_common(p_sim)
    _add_alloc_overrides(p_sim)
    p_sim.add_argument("--schedule", choices=_SCHEDULE_CHOICES, default="afpipe")
    p_sim.add_argument("--trace", default=None, help="write a trace-event JSON file")
    p_sim.add_argument("--out", default=None, help="write the report JSON")
    p_sim.set_defaults(func=cmd_simulate)

    p_alloc = sub.add_parser("allocate", help="search for the best GPU/NIC split")
    _add_common(p_alloc)
    p_alloc.add_argument("--radius", type=int, default=2)
    p_alloc.add_argument("--trials", type=int, default=64)
    p_alloc.add_argument("--epsilon", type=float, default=1e-3)
    p_alloc.add_argument("--seed", type=int, default=0)
    p_alloc.add_argument("--out", default=None, help="write the allocation report JSON")
    p_alloc.add_argument("--trace-csv", default=None,
                         help="write the profiled-candidate trace as CSV")
    p_alloc.set_defaults(func=cmd_allocate)

    p_sweep = sub.add_parser("sweep", help="sweep one axis across all schedules")
    _add_common(p_sweep)
    p_sweep.add_argument("--axis", choices=_SWEEP_AXES, required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.add_argument("--out", default=None, help="write CSV here instead of stdout")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="run all four schedules on one config")
    _add_common(p_cmp)
    _add_alloc_overrides(p_cmp)
    p_cmp.add_argument("--out", default=None, help="write the report JSON")
    p_cmp.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
