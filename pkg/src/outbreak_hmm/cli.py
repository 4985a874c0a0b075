"""Command-line interface: ``outbreak-hmm simulate|train|detect|evaluate|benchmark``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical or
training error. ``--config FILE`` reads ``key = value`` lines whose keys
match the long option names (dashes or underscores); flags override them.
Worker count comes from ``--workers`` or ``OUTBREAK_HMM_WORKERS``.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io as fio
from .errors import DataError, EvaluationError, OutbreakHmmError, UsageError
from .evaluation import ScoredWeek, build_report
from .hmm import model_from_dict, model_to_dict, train
from .pipeline import (BenchmarkConfig, RollingConfig, assign_groups, default_workers,
                       map_ordered, rolling_baseline, rolling_hmm, run_benchmark)
from .series import OUTBREAK, PERIOD, SeriesGroup, shift_year_week, week_offset
from .simulator import get_scenario, scenario_means, simulate_scenario

log = logging.getLogger("outbreak_hmm")


def _parse_ids(text: str) -> list[int]:
    ids = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                a, b = part.split("-", 1)
                ids.extend(range(int(a), int(b) + 1))
            else:
                ids.append(int(part))
        except ValueError:
            raise UsageError(f"bad scenario list {text!r}") from None
    for i in ids:
        try:
            get_scenario(i)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if not ids:
        raise UsageError("no scenarios selected")
    return ids


def _load_config(path) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_string("[run]\n" + fh.read())
    except OSError as exc:
        raise UsageError(f"config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in cp["run"].items()}


def _grid_week(series, year_week: str) -> int:
    return week_offset(series[0].start_week, year_week) + 1


def _workers(args) -> int:
    return args.workers if args.workers is not None else default_workers()


# -- simulate --------------------------------------------------------------

def cmd_simulate(args) -> None:
    ids = _parse_ids(args.scenarios)
    if args.n_series < 1:
        raise UsageError("--n-series must be >= 1")
    for sid in ids:
        spec = get_scenario(sid)
        if args.length:
            spec = replace(spec, length_T=args.length)
        sims = simulate_scenario(spec, args.n_series, args.seed, args.start_week)
        series = [s.series for s in sims]
        stem = os.path.join(args.out_dir, f"scenario_{sid:02d}")
        fio.atomic_write(stem + "_counts.csv", fio.counts_csv(series))
        fio.atomic_write(stem + "_labels.csv", fio.labels_csv(series))
        endemic, outbreak = scenario_means(spec)
        fio.write_json(stem + "_truth.json", {
            "schema": 1,
            "scenario": {"id": spec.id, "beta0": spec.beta0, "beta1": spec.beta1,
                         "beta2": spec.beta2, "beta3": spec.beta3, "phi": spec.phi,
                         "length_T": spec.length_T, "a00_range": list(spec.a00_range),
                         "a11_range": list(spec.a11_range)},
            "root_seed": args.seed,
            "start_week": args.start_week,
            "target_power": 0.5,
            "alpha": 0.01,
            "endemic_mean": [float(x) for x in endemic],
            "outbreak_mean": [float(x) for x in outbreak],
            "series": [{"series_id": s.series.series_id, "seed": s.seed, "a00": s.a00,
                        "a11": s.a11} for s in sims],
        })
        log.info("scenario %d: %d series written", sid, len(sims))


# -- train -----------------------------------------------------------------

def _load_data(args, need_labels=True):
    if need_labels and not args.labels:
        raise UsageError("supervised training needs --labels")
    if args.labels and not os.path.exists(args.labels):
        raise UsageError(f"label file {args.labels} not found")
    counts = fio.read_counts(args.counts)
    labels = fio.read_labels(args.labels) if args.labels else None
    return fio.build_series(counts, labels)


def _train_group(task):
    gid, group, week, wy, hu, pc = task
    model = train(group, week, wy, hu, pc)
    return gid, model_to_dict(model, group.series[0].start_week, gid)


def cmd_train(args) -> None:
    series = _load_data(args)
    by_id = {s.series_id: s for s in series}
    week = _grid_week(series, args.current_week)
    L = args.window_years * PERIOD
    if week - L + 1 < 1:
        raise DataError(f"{args.current_week} needs {L} weeks of history")

    def has_outbreak(ids):
        lo, hi = week - L + 1, week - args.holdout
        return any(np.any(by_id[i].label_array()[lo - 1:hi] == OUTBREAK) for i in ids)

    if args.group_map:
        mapping = fio.read_group_map(args.group_map)
        unknown = sorted(set(mapping) - set(by_id))
        if unknown:
            raise DataError(f"group map names unknown series: {unknown[:5]}")
        groups = {}
        for sid, gid in mapping.items():
            groups.setdefault(gid, []).append(sid)
        groups = {g: sorted(v) for g, v in sorted(groups.items())}
    else:
        if not 1 <= args.n_groups <= len(series):
            raise UsageError(f"--n-groups must lie in [1, {len(series)}]")
        parts = assign_groups(sorted(by_id), args.n_groups, args.seed, has_outbreak)
        width = len(str(len(parts)))
        groups = {f"g{i + 1:0{width}d}": p for i, p in enumerate(parts)}
        mapping = {sid: g for g, ids in groups.items() for sid in ids}
    tasks = [(gid, SeriesGroup(gid, tuple(by_id[i] for i in ids)), week, args.window_years,
              args.holdout, args.pseudocount) for gid, ids in groups.items()]
    for gid, doc in map_ordered(_train_group, tasks, _workers(args)):
        fio.write_json(os.path.join(args.out_dir, f"model_{gid}.json"), doc)
    fio.atomic_write(os.path.join(args.out_dir, "group_map.csv"), fio.group_map_csv(mapping))


# -- detect ----------------------------------------------------------------

def _load_models(model_dir):
    if not os.path.isdir(model_dir):
        raise UsageError(f"model directory {model_dir} not found")
    docs = []
    for name in sorted(os.listdir(model_dir)):
        if name.startswith("model_") and name.endswith(".json"):
            doc = fio.read_json(os.path.join(model_dir, name))
            try:
                model_from_dict(doc)
            except (KeyError, ValueError) as exc:
                raise DataError(f"{name}: bad model file ({exc})") from None
            docs.append(doc)
    if not docs:
        raise DataError(f"no model_*.json files in {model_dir}")
    return docs


def _detect_group(task):
    method, group, weeks, rc = task
    if method == "hmm":
        return rolling_hmm(group, weeks, rc)
    return rolling_baseline(group, weeks, rc)


def cmd_detect(args) -> None:
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError("--threshold must lie in [0, 1]")
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    series = _load_data(args, need_labels=args.method == "hmm")
    by_id = {s.series_id: s for s in series}
    wy, hu, pc = args.window_years, args.holdout, args.pseudocount
    if args.model_dir:
        docs = _load_models(args.model_dir)
        groups = {d["group_id"] or f"g{i}": list(d["series_ids"]) for i, d in enumerate(docs)}
        wy, hu, pc = docs[0]["window_years"], docs[0]["holdout_u"], docs[0]["pseudocount"]
        modelled = {s for ids in groups.values() for s in ids}
        orphans = sorted(set(by_id) - modelled)
        if orphans:
            raise DataError(f"series without a model: {', '.join(orphans[:20])}")
        missing = sorted(modelled - set(by_id))
        if missing:
            raise DataError(f"modelled series absent from data: {', '.join(missing[:20])}")
    elif args.method == "hmm":
        raise UsageError("hmm detection needs --model-dir")
    else:
        groups = {"all": sorted(by_id)}
    w_from = _grid_week(series, args.from_week)
    w_to = _grid_week(series, args.to_week)
    if w_to < w_from:
        raise UsageError("--to-week precedes --from-week")
    if w_to > series[0].T:
        raise DataError(f"--to-week {args.to_week} is past the last data week "
                        f"{shift_year_week(series[0].start_week, series[0].T - 1)}")
    rc = RollingConfig(wy, hu, args.refit_every, pc, args.alpha)
    weeks = list(range(w_from, w_to + 1))
    tasks = [(args.method, SeriesGroup(g, tuple(by_id[i] for i in ids)), weeks, rc)
             for g, ids in groups.items()]
    results = {}
    for part in map_ordered(_detect_group, tasks, _workers(args)):
        results.update(part)
    start = series[0].start_week
    rows = []
    for (sid, t) in sorted(results, key=lambda k: (k[0], k[1])):
        yw = shift_year_week(start, t - 1)
        if args.method == "hmm":
            p, _ = results[(sid, t)]
            rows.append([sid, yw, repr(p), int(p >= args.threshold)])
        else:
            p, thr, alarm = results[(sid, t)]
            rows.append([sid, yw, repr(p), thr, int(alarm)])
    header = (["series_id", "year_week", "p_outbreak", "alarm"] if args.method == "hmm"
              else ["series_id", "year_week", "p_value", "threshold", "alarm"])
    fio.atomic_write(args.out, fio.table_csv(header, rows))


# -- evaluate --------------------------------------------------------------

def _truth_sizes(truth_paths, counts_path):
    """``{(series_id, year_week): (excess cases, scenario tag)}`` from simulation truth."""
    if not truth_paths:
        return {}
    if not counts_path:
        raise UsageError("--truth needs --counts to compute outbreak sizes")
    counts = fio.read_counts(counts_path)
    out = {}
    for path in truth_paths:
        doc = fio.read_json(path)
        start = doc["start_week"]
        endemic = doc["endemic_mean"]
        tag = f"scenario_{doc['scenario']['id']:02d}"
        for entry in doc["series"]:
            sid = entry["series_id"]
            for yw, c in counts.get(sid, {}).items():
                i = week_offset(start, yw)
                if 0 <= i < len(endemic):
                    out[(sid, yw)] = (int(round(c - endemic[i])), tag)
    return out


def cmd_evaluate(args) -> None:
    hmm_rows = fio.read_table(args.hmm_scores, ["series_id", "year_week", "p_outbreak"])
    base_rows = fio.read_table(args.baseline_scores,
                               ["series_id", "year_week", "p_value", "alarm"])
    labels = fio.read_labels(args.labels)
    hmm = {(r["series_id"], r["year_week"]): float(r["p_outbreak"]) for r in hmm_rows}
    base = {(r["series_id"], r["year_week"]): (float(r["p_value"]), r["alarm"] == "1")
            for r in base_rows}
    keys = sorted(set(hmm) & set(base))
    if not keys:
        raise EvaluationError("score files share no (series_id, year_week) keys")
    mismatch = sorted(set(hmm) ^ set(base))
    if mismatch:
        raise EvaluationError(f"score files are misaligned; first mismatched key {mismatch[0]}")
    sizes = _truth_sizes(args.truth, args.counts)
    scored = []
    for sid, yw in keys:
        lab = labels.get(sid, {}).get(yw)
        if lab is None:
            raise EvaluationError(f"no label for {sid} {yw}")
        if lab < 0:
            continue
        p_b, alarm = base[(sid, yw)]
        size, tag = sizes.get((sid, yw), (None, None))
        scored.append(ScoredWeek(sid, week_offset("2000-W01", yw), lab, hmm[(sid, yw)],
                                 1.0 - p_b, size if lab == OUTBREAK else None, alarm, tag))
    report = build_report(scored, args.alpha)
    fio.write_json(os.path.join(args.out_dir, "report.json"), report.to_dict())
    fio.atomic_write(os.path.join(args.out_dir, "roc.csv"), report.roc_csv())
    fio.atomic_write(os.path.join(args.out_dir, "metrics.csv"), report.metrics_csv())
    _print_summary(report)


def _print_summary(report) -> None:
    b, h = report.baseline, report.hmm_matched

    def prec(m):
        return "NA" if m.precision is None else f"{m.precision:.4f}"

    print(f"weeks={report.n_weeks} outbreak_weeks={report.n_outbreak_weeks}")
    print(f"baseline  sens={b.sensitivity:.4f} fpr={b.fpr:.5f} precision={prec(b)} "
          f"auc={report.auc['baseline']:.4f}")
    print(f"hmm       sens={h.sensitivity:.4f} fpr={h.fpr:.5f} precision={prec(h)} "
          f"auc={report.auc['hmm']:.4f} threshold={h.threshold:.6g}")


# -- benchmark -------------------------------------------------------------

def cmd_benchmark(args) -> None:
    cfg = BenchmarkConfig(tuple(_parse_ids(args.scenarios)), args.n_series, args.seed,
                          args.groups_per_scenario, args.eval_weeks, args.refit_every,
                          args.window_years, args.holdout, args.alpha)
    scored, report = run_benchmark(cfg, _workers(args))
    fio.write_json(os.path.join(args.out_dir, "report.json"), report.to_dict())
    fio.atomic_write(os.path.join(args.out_dir, "roc.csv"), report.roc_csv())
    fio.atomic_write(os.path.join(args.out_dir, "metrics.csv"), report.metrics_csv())
    rows = [[w.scenario, w.series_id, w.week, w.label, repr(w.hmm_score), repr(w.baseline_score),
             int(bool(w.baseline_alarm)), "" if w.outbreak_size is None else w.outbreak_size]
            for w in scored]
    fio.atomic_write(os.path.join(args.out_dir, "scored_weeks.csv"), fio.table_csv(
        ["scenario", "series_id", "week", "label", "hmm_score", "baseline_score",
         "baseline_alarm", "outbreak_size"], rows))
    _print_summary(report)


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file with option defaults")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: $OUTBREAK_HMM_WORKERS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    window = argparse.ArgumentParser(add_help=False)
    window.add_argument("--window-years", type=int, default=5)
    window.add_argument("--holdout", type=int, default=26, help="weeks excluded from training")
    window.add_argument("--pseudocount", type=float, default=0.0)

    p = argparse.ArgumentParser(prog="outbreak-hmm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate benchmark scenarios")
    s.add_argument("--scenarios", default="1-14")
    s.add_argument("--n-series", type=int, default=100)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--start-week", default="2000-W01")
    s.add_argument("--length", type=int, default=None, help="weeks per series (default 624)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common, window], help="fit one model per group")
    t.add_argument("--counts", required=True)
    t.add_argument("--labels")
    t.add_argument("--group-map")
    t.add_argument("--n-groups", type=int, default=20)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--current-week", required=True)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", parents=[common, window], help="rolling detection")
    d.add_argument("--method", choices=("hmm", "baseline"), default="hmm")
    d.add_argument("--model-dir")
    d.add_argument("--counts", required=True)
    d.add_argument("--labels")
    d.add_argument("--from-week", required=True)
    d.add_argument("--to-week", required=True)
    d.add_argument("--threshold", type=float, default=0.5, help="posterior alarm cutoff")
    d.add_argument("--alpha", type=float, default=0.01)
    d.add_argument("--refit-every", type=int, default=1)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", parents=[common], help="compare detectors against labels")
    e.add_argument("--hmm-scores", required=True)
    e.add_argument("--baseline-scores", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--truth", nargs="*", default=[], help="simulation truth JSON files")
    e.add_argument("--counts", help="counts CSV (for outbreak sizes with --truth)")
    e.add_argument("--alpha", type=float, default=0.01)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("benchmark", parents=[common], help="simulate, detect and evaluate")
    b.add_argument("--scenarios", default="1-14")
    b.add_argument("--n-series", type=int, default=50)
    b.add_argument("--seed", type=int, default=42)
    b.add_argument("--groups-per-scenario", type=int, default=2)
    b.add_argument("--eval-weeks", type=int, default=8 * PERIOD)
    b.add_argument("--refit-every", type=int, default=4)
    b.add_argument("--window-years", type=int, default=4)
    b.add_argument("--holdout", type=int, default=26)
    b.add_argument("--alpha", type=float, default=0.01)
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_benchmark)
    return p


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    values = _load_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in known or key in ("config", "help"):
            raise UsageError(f"config {args.config}: unknown key {key!r}")
        action = known[key]
        try:
            defaults[key] = action.type(raw) if action.type else raw
        except ValueError:
            raise UsageError(f"config {args.config}: bad value for {key}: {raw!r}") from None
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except OutbreakHmmError as exc:
        print(f"outbreak-hmm: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"outbreak-hmm: error: {exc}", file=sys.stderr)
        return UsageError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
