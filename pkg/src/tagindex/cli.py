"""Command-line entry point: ``tagindex <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .analysis import (
    count_list_entries,
    estimate_storage_bytes,
    fit_power_law,
    frequency_histogram,
    InsufficientData,
    key_list_lengths,
)
from .core import ConfigError, Query, SystemConfig
from .metrics import MetricsLedger, compare_runs, ledgers_to_csv, ledgers_to_json
from .sim import VARIANTS, Cluster, Event, TagAction, run, with_ticks
from .workload import (
    GeneratorConfig,
    clean_query_log,
    filter_nonempty,
    format_queries,
    format_tag_actions,
    generate_synthetic,
    load_tag_dataset,
    match_vocabulary,
    read_query_trace,
    read_stopwords,
)


class UsageError(Exception):
    pass


def _read_lines(path: str) -> List[str]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.read_text(encoding="utf-8").splitlines()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_config_file(path: Optional[str]) -> Dict[str, str]:
    values: Dict[str, str] = {}
    if path is None:
        return values
    for raw in _read_lines(path):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"malformed config line: {raw.strip()!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        values[name] = value
    return values


CONFIG_FLAGS = {
    "seed": "rng_seed",
    "s_max": "s_max",
    "t_max": "t_max",
    "ell": "ell",
    "delta_decay": "delta_decay",
    "delta_update": "delta_update",
    "b_res": "b_res",
    "b_susp": "b_susp",
    "c_ins": "c_ins",
    "c_del": "c_del",
    "gateways": "n_gateways",
    "scheme": "cache_scheme",
}


def _system_config(args) -> SystemConfig:
    values = _read_config_file(getattr(args, "config", None))
    for flag, name in CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    try:
        return SystemConfig.from_mapping(values)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise UsageError(str(exc))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value system config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--s-max", dest="s_max", type=int)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--delta-decay", dest="delta_decay", type=int)
    p.add_argument("--delta-update", dest="delta_update", type=int)
    p.add_argument("--b-res", dest="b_res", type=int)
    p.add_argument("--b-susp", dest="b_susp", type=int)
    p.add_argument("--c-ins", dest="c_ins", type=int)
    p.add_argument("--c-del", dest="c_del", type=int)
    p.add_argument("--gateways", type=int)
    p.add_argument("--scheme", choices=("uniform", "dedicated", "none"))


# -- commands -----------------------------------------------------------------

def cmd_clean(args) -> int:
    lines = _read_lines(args.input)
    stopwords = read_stopwords(_read_lines(args.stopwords)) if args.stopwords else None
    records, stats = clean_query_log(lines, stopwords)
    out = Path(args.out)
    _write(out, format_queries(records))
    stats_path = Path(args.stats) if args.stats else out.with_suffix(out.suffix + ".stats.json")
    _write(stats_path, _dump_json(stats.as_dict()))
    print(f"kept {stats.kept} of {stats.lines} queries ({stats.unreadable} unreadable)")
    return 0


def cmd_match(args) -> int:
    resources, _, _ = load_tag_dataset(_read_lines(args.dataset))
    queries, _ = read_query_trace(_read_lines(args.queries))
    universe = {t for tags in resources.values() for t in tags}
    matched, stats = match_vocabulary(queries, universe)
    out = Path(args.out)
    _write(out, format_queries(matched))
    _write(out.with_suffix(out.suffix + ".stats.json"), _dump_json(stats))
    print(f"kept {len(matched)} of {len(queries)} queries")
    return 0


def cmd_filter_nonempty(args) -> int:
    resources, _, _ = load_tag_dataset(_read_lines(args.dataset))
    queries, _ = read_query_trace(_read_lines(args.queries))
    kept = filter_nonempty(queries, resources, args.t_max)
    _write(Path(args.out), format_queries(kept))
    print(f"kept {len(kept)} of {len(queries)} queries")
    return 0


def cmd_generate(args) -> int:
    lines = _read_lines(args.config) if args.config else []
    try:
        cfg = GeneratorConfig.from_lines(lines)
    except ValueError as exc:
        raise UsageError(str(exc))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    resources, actions, queries = generate_synthetic(cfg)
    out = Path(args.out_dir)
    _write(out / "tags.tsv", format_tag_actions(actions))
    _write(out / "queries.tsv", format_queries(queries))
    print(f"{len(resources)} resources, {len(actions)} tag actions, {len(queries)} queries -> {out}")
    return 0


def cmd_analyze(args) -> int:
    if args.s_max < 1 or args.t_max < 1:
        raise UsageError("--s-max and --t-max must be >= 1")
    resources, _, stats = load_tag_dataset(_read_lines(args.dataset))
    entries = count_list_entries(resources.values(), args.s_max, args.t_max)
    lengths = key_list_lengths(resources, args.s_max, args.t_max)
    report = {
        "resources": len(resources),
        "skipped_lines": stats.skipped,
        "s_max": args.s_max,
        "t_max": args.t_max,
        "list_entries": entries,
        "storage_bytes": estimate_storage_bytes(entries, args.entry_bytes),
        "keys_by_size": {},
    }
    for size, counter in lengths.items():
        hist = frequency_histogram(counter)
        row = {
            "keys": len(counter),
            "entries": sum(counter.values()),
            "length_histogram": {str(k): v for k, v in hist},
        }
        try:
            fit = fit_power_law(hist)
            row["fit"] = {"alpha": fit.alpha, "beta": fit.beta, "r_squared": fit.r_squared}
        except InsufficientData:
            row["fit"] = None
        if args.l_max is not None and counter:
            row["coverage_pct"] = 100.0 * sum(1 for n in counter.values() if n <= args.l_max) / len(counter)
        report["keys_by_size"][str(size)] = row
    _write(Path(args.out), _dump_json(report))
    if args.histogram_csv:
        rows = ["key_size,list_length,keys"]
        for size, counter in lengths.items():
            rows += [f"{size},{length},{n}" for length, n in frequency_histogram(counter)]
        _write(Path(args.histogram_csv), "\n".join(rows) + "\n")
    print(f"{len(resources)} resources, {entries} list entries")
    return 0


def _events(resources_lines: List[str], query_lines: List[str]) -> List[Event]:
    _, actions, _ = load_tag_dataset(resources_lines)
    queries, _ = read_query_trace(query_lines)
    events = [Event(a.timestamp, "tag_action", TagAction(a.resource, a.tag, a.action))
              for a in actions if not a.noop]
    events += [Event(q.timestamp, "query", Query(frozenset(q.terms), q.timestamp)) for q in queries]
    events.sort(key=lambda e: e.time)
    return events


def _simulate_variant(cfg: SystemConfig, variant: str, events: List[Event], args):
    cluster = Cluster(cfg, variant)
    if args.best_case:
        actions = [e for e in events if e.kind == "tag_action"]
        run(cluster, actions)
        cluster.ledger = MetricsLedger()
        settled = max((e.time for e in actions), default=0)
        cluster.pre_resume((e.payload for e in events if e.kind == "query"), now=settled)
        timeline = [e for e in events if e.kind == "query"]
    else:
        timeline = with_ticks(events, cluster, update_ticks=not args.no_updates)
    return run(cluster, timeline, debug=args.debug)


def cmd_simulate(args) -> int:
    cfg = _system_config(args)
    variants = [args.variant] + ([args.baseline] if args.baseline else [])
    for v in variants:
        if v.endswith("_cached") and cfg.cache_scheme == "none":
            raise UsageError(f"variant {v} needs --scheme uniform or dedicated")
    dataset_lines = _read_lines(args.dataset)
    query_lines = _read_lines(args.queries)
    out = Path(args.out_dir)
    manifest = {
        "artifact_version": __version__,
        "config": cfg.as_dict(),
        "seed": cfg.rng_seed,
        "variant": args.variant,
        "baseline": args.baseline,
        "best_case": args.best_case,
        "no_updates": args.no_updates,
        "inputs": {
            "dataset": {"path": args.dataset, "sha256": _digest(args.dataset)},
            "queries": {"path": args.queries, "sha256": _digest(args.queries)},
        },
        "outputs": ["metrics.csv", "metrics.json"] + (["comparison.json"] if args.baseline else []),
    }
    _write(out / "manifest.json", _dump_json(manifest))

    events = _events(dataset_lines, query_lines)
    scheme = cfg.cache_scheme
    runs = []
    for i, variant in enumerate(variants):
        ledger = _simulate_variant(cfg, variant, events, args)
        shown_scheme = scheme if variant.endswith("_cached") else "none"
        runs.append((f"run{i}", variant, shown_scheme, ledger))
    _write(out / "metrics.csv", ledgers_to_csv(runs))
    _write(out / "metrics.json", ledgers_to_json(runs))
    for run_id, variant, _, ledger in runs:
        t = ledger.totals()
        print(f"{run_id} {variant}: CK={t['ck']} IK={t['ik']} TR={t['tr']} "
              f"HR_gw={t['hr_gateway_total']} HR_be={t['hr_backend_total']}")
    if args.baseline:
        report = compare_runs(runs[1][3], runs[0][3])
        _write(out / "comparison.json", _dump_json({
            "baseline": args.baseline, "variant": args.variant,
            "percent_of_baseline": report,
        }))
        print("relative to baseline (baseline = 100%): " + ", ".join(
            f"{k}={'undefined' if v is None else f'{v:.1f}%'}" for k, v in report.items()))
    return 0


def cmd_report(args) -> int:
    docs = []
    for path in args.metrics:
        try:
            docs.extend(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise UsageError(f"no such file: {path}")
    if not docs:
        raise UsageError("no runs found")
    base = docs[0]["totals"]
    print("run_id\tvariant\tscheme\tck\tik\ttr\thr_gw\thr_be\ttr_pct")
    for d in docs:
        t = d["totals"]
        pct = "undefined" if base["tr"] == 0 and t["tr"] else (
            "100.0" if base["tr"] == 0 else f"{100.0 * t['tr'] / base['tr']:.1f}")
        print(f"{d['run_id']}\t{d['variant']}\t{d['scheme']}\t{t['ck']}\t{t['ik']}\t{t['tr']}"
              f"\t{t['hr_gateway_total']}\t{t['hr_backend_total']}\t{pct}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tagindex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clean", help="clean a raw query log")
    p.add_argument("--input", required=True)
    p.add_argument("--stopwords")
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("match", help="restrict query terms to the dataset's tags")
    p.add_argument("--queries", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("filter-nonempty", help="keep queries with a non-empty result")
    p.add_argument("--queries", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.set_defaults(func=cmd_filter_nonempty)

    p = sub.add_parser("generate", help="generate a synthetic workload")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="storage and index extent statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--s-max", dest="s_max", type=int, default=3)
    p.add_argument("--t-max", dest="t_max", type=int, default=20)
    p.add_argument("--l-max", dest="l_max", type=int)
    p.add_argument("--entry-bytes", dest="entry_bytes", type=float, default=73)
    p.add_argument("--out", required=True)
    p.add_argument("--histogram-csv", dest="histogram_csv",
                   help="also write list-length histograms as CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="replay a workload on the simulated cluster")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="mtk")
    p.add_argument("--baseline", choices=VARIANTS)
    p.add_argument("--best-case", dest="best_case", action="store_true",
                   help="pre-resume every relevant key and replay queries only")
    p.add_argument("--no-updates", dest="no_updates", action="store_true")
    p.add_argument("--debug", action="store_true", help="check cache coherence after every event")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="tabulate metrics JSON files")
    p.add_argument("metrics", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc.constraint}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
