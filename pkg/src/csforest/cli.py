"""Reproducible experiment runner: generate | run | audit | compare.

A single YAML config drives everything; scalar flags override config
fields which override defaults.  Every random decision derives from the
master seed plus purpose tags, and a manifest records each derived seed,
so rerunning a config byte-identically reproduces all outputs at any
thread count.  Exit codes: 0 success, 1 usage/config error, 2 data error,
3 audit violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import SplitPlan, acrf, acrf_shift, bcops, crf, dc
from .dataset import (
    OUTLIER_LABEL,
    Dataset,
    GaussianClassSpec,
    ShiftScenario,
    multiclass_specs,
    example1_specs,
    generate_example1,
    generate_multiclass,
    load_csv,
    relabel_outliers,
    sample_shift_scenario,
    subsample_per_class,
    write_csv,
)
from .errors import ConfigError, CsForestError, DataError
from .evaluation import aggregate_runs, read_report_json, type_errors, write_report_json, write_report_long_csv
from .forest import CsForestParams, audit_strange_set, run_csforest
from .oracle import OracleSpec, oracle_sets
from .rng import child_sequence, spawn_rng
from .sets import write_sets_csv
from .tree import ForestParams, TreeParams

METHOD_NAMES = ("csforest", "bcops", "crf", "dc", "acrf", "acrf_random", "acrf_shift", "oracle")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_AUDIT = 3


def _load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top-level config must be a mapping")
    return cfg


def _derived_seed(master: int, *tags) -> int:
    """64-bit integer seed for (master, tags); recorded in the manifest."""
    return int(child_sequence(master, *tags).generate_state(1, np.uint64)[0])


def _spec_from_cfg(entry: dict) -> GaussianClassSpec:
    try:
        return GaussianClassSpec(np.asarray(entry["mean"], dtype=float), np.asarray(entry["sd"], dtype=float))
    except KeyError as exc:
        raise ConfigError(f"class spec needs 'mean' and 'sd': missing {exc}") from None


def _per_class_counts(value, n_classes: int, what: str) -> list[int]:
    if isinstance(value, int):
        return [value] * n_classes
    counts = list(value)
    if len(counts) != n_classes:
        raise ConfigError(f"{what} must have {n_classes} entries, got {len(counts)}")
    return [int(c) for c in counts]


class DataSource:
    """Builds (train, test) per repetition and, when densities are known,
    the matching oracle spec."""

    def __init__(self, cfg: dict, master_seed: int):
        if "data" not in cfg:
            raise ConfigError("config needs a 'data' section")
        self.cfg = cfg["data"]
        self.master_seed = master_seed
        self.source = self.cfg.get("source")
        if self.source not in {"example1", "multiclass", "shift", "csv"}:
            raise ConfigError(f"unknown data source {self.source!r}")

    def build(self, rep: int) -> tuple[Dataset, Dataset]:
        seed = _derived_seed(self.master_seed, "data", rep)
        c = self.cfg
        if self.source == "example1":
            return generate_example1(
                int(c.get("n_train_per_class", 200)), int(c.get("n_test_per_class", 200)), seed
            )
        if self.source == "multiclass":
            n_in = int(c.get("n_inlier", 6))
            n_out = int(c.get("n_outlier", 0))
            train_counts = _per_class_counts(c.get("train_per_class", 100), n_in, "train_per_class")
            test_counts = _per_class_counts(c.get("test_per_class", 100), n_in + n_out, "test_per_class")
            return generate_multiclass(
                n_in, n_out, int(c.get("p", 50)), float(c.get("scale", 3.0)),
                train_counts, test_counts, seed, block=int(c.get("block", 4)),
            )
        if self.source == "shift":
            specs = [_spec_from_cfg(e) for e in c.get("classes", [])]
            if not specs:
                raise ConfigError("shift source needs 'classes' specs")
            outlier = _spec_from_cfg(c["outlier"]) if "outlier" in c else None
            train_counts = _per_class_counts(c.get("train_per_class", 100), len(specs), "train_per_class")
            rng = spawn_rng(seed, "shift-train")
            feats = [spec.sample(n, rng) for spec, n in zip(specs, train_counts)]
            labels = np.concatenate([np.full(n, k + 1) for k, n in enumerate(train_counts)])
            names = tuple(str(k + 1) for k in range(len(specs)))
            train = Dataset(np.vstack(feats), labels, names)
            scenario = ShiftScenario(
                tuple(specs),
                tuple(float(w) for w in c.get("test_weights", [])),
                outlier,
                float(c.get("outlier_weight", 0.0)),
                int(c.get("n_test", 100)),
                seed,
            )
            return train, sample_shift_scenario(scenario)
        # csv
        try:
            train = load_csv(c["train_path"], c.get("label_column", "label"))
            test = load_csv(c["test_path"], c.get("label_column", "label"))
        except KeyError as exc:
            raise ConfigError(f"csv source needs {exc} path") from None
        outliers = [str(x) for x in c.get("outlier_classes", [])]
        if outliers:
            test = relabel_outliers(test, outliers)
            train_drop = [x for x in outliers if x in train.class_names]
            if train_drop:
                raise ConfigError(f"outlier classes present in training data: {train_drop}")
        for key, data in (("subsample_train", train), ("subsample_test", test)):
            if key in c:
                counts = {}
                for name, count in c[key].items():
                    name = str(name)
                    if name == "R":
                        counts[OUTLIER_LABEL] = int(count)
                    else:
                        if name not in data.class_names:
                            raise ConfigError(f"{key}: unknown class {name!r}")
                        counts[data.class_names.index(name) + 1] = int(count)
                sub_seed = _derived_seed(self.master_seed, key, rep)
                data = subsample_per_class(data, counts, sub_seed)
                if key == "subsample_train":
                    train = data
                else:
                    test = data
        return train, test

    def oracle_spec(self, method_cfg: dict, seed: int) -> OracleSpec:
        c = self.cfg
        w = float(method_cfg.get("w", 1.0))
        mc = int(method_cfg.get("mc_count", 50_000))
        if self.source == "example1":
            specs = example1_specs()
            return OracleSpec(
                (specs["1"], specs["2"]), (0.5, 0.5), (1 / 3, 1 / 3), 1 / 3, specs["R"],
                w=w, mc_count=mc, seed=seed,
            )
        if self.source == "shift":
            specs = tuple(_spec_from_cfg(e) for e in c.get("classes", []))
            train_counts = _per_class_counts(c.get("train_per_class", 100), len(specs), "train_per_class")
            total = sum(train_counts)
            outlier = _spec_from_cfg(c["outlier"]) if "outlier" in c else None
            return OracleSpec(
                specs,
                tuple(n / total for n in train_counts),
                tuple(float(x) for x in c.get("test_weights", [])),
                float(c.get("outlier_weight", 0.0)),
                outlier,
                w=w, mc_count=mc, seed=seed,
            )
        if self.source == "multiclass":
            n_in = int(c.get("n_inlier", 6))
            n_out = int(c.get("n_outlier", 0))
            if n_out > 1:
                raise ConfigError("oracle supports at most one outlier component")
            specs = multiclass_specs(n_in, n_out, int(c.get("p", 50)), float(c.get("scale", 3.0)), int(c.get("block", 4)))
            train_counts = _per_class_counts(c.get("train_per_class", 100), n_in, "train_per_class")
            test_counts = _per_class_counts(c.get("test_per_class", 100), n_in + n_out, "test_per_class")
            tr_total = sum(train_counts)
            te_total = sum(test_counts)
            return OracleSpec(
                tuple(specs[:n_in]),
                tuple(n / tr_total for n in train_counts),
                tuple(n / te_total for n in test_counts[:n_in]),
                sum(test_counts[n_in:]) / te_total,
                specs[n_in] if n_out == 1 else None,
                w=w, mc_count=mc, seed=seed,
            )
        raise ConfigError("oracle requires a synthetic data source with known densities")


def _tree_params(mcfg: dict) -> TreeParams:
    return TreeParams(
        max_depth=mcfg.get("max_depth"),
        min_leaf=int(mcfg.get("min_leaf", 1)),
        features_per_split=mcfg.get("features_per_split"),
    )


def _run_method(name, mcfg, source, train, test, seed, threads):
    """Returns (PredictionSets, ScoreMatrix | None)."""
    alpha = float(mcfg.get("alpha", 0.05))
    if name == "csforest":
        params = CsForestParams(
            alpha=alpha,
            gamma=float(mcfg.get("gamma", 1.0)),
            b_tilde=int(mcfg.get("b_tilde", 3000)),
            tree=_tree_params(mcfg),
            seed=seed,
        )
        scores, sets = run_csforest(train, test.features, params, n_threads=threads)
        return sets, scores
    if name == "oracle":
        spec = source.oracle_spec(mcfg, seed)
        return oracle_sets(spec, test.features, alpha), None
    forest_params = ForestParams(n_trees=int(mcfg.get("n_trees", 500)), tree=_tree_params(mcfg))
    needs_test_folds = name in {"bcops", "acrf_shift"}
    plan = SplitPlan.stratified(train, n_test=test.n if needs_test_folds else None, seed=seed)
    if name == "crf":
        return crf(train, test.features, alpha, forest_params, plan), None
    if name == "dc":
        return dc(train, test.features, alpha, plan), None
    if name == "bcops":
        return bcops(train, test.features, alpha, forest_params, plan), None
    if name == "acrf":
        return acrf(train, test.features, alpha, forest_params, plan, randomized=False), None
    if name == "acrf_random":
        return acrf(train, test.features, alpha, forest_params, plan, randomized=True), None
    if name == "acrf_shift":
        return acrf_shift(
            train, test.features, alpha, forest_params, plan,
            randomized=bool(mcfg.get("randomized", False)),
        ), None
    raise ConfigError(f"unknown method {name!r}; valid: {', '.join(METHOD_NAMES)}")


def _out_dir(cfg: dict, args) -> Path:
    out = args.out or cfg.get("output_dir") or os.environ.get("CSFOREST_OUT") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        cfg["repetitions"] = args.reps
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    if getattr(args, "alpha", None) is not None:
        for mcfg in cfg.get("methods", []):
            mcfg["alpha"] = args.alpha
    return cfg


def cmd_generate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    out = _out_dir(cfg, args)
    source = DataSource(cfg, int(cfg.get("seed", 0)))
    reps = int(cfg.get("repetitions", 1))
    for rep in range(reps):
        train, test = source.build(rep)
        suffix = f"_rep{rep:03d}" if reps > 1 else ""
        write_csv(train, out / f"train{suffix}.csv")
        write_csv(test, out / f"test{suffix}.csv")
        print(f"rep {rep}: wrote train ({train.n} rows) and test ({test.n} rows) to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    out = _out_dir(cfg, args)
    master = int(cfg.get("seed", 0))
    threads = int(cfg.get("threads", 1))
    reps = int(cfg.get("repetitions", 1))
    methods = cfg.get("methods")
    if not methods:
        raise ConfigError("config needs a non-empty 'methods' list")
    source = DataSource(cfg, master)
    # thread count is pure orchestration and never changes results, so it
    # stays out of the manifest to keep reruns byte-identical
    manifest = {
        "version": __version__,
        "config": {k: v for k, v in cfg.items() if k != "threads"},
        "seeds": {},
        "outputs": [],
    }
    for rep in range(reps):
        train, test = source.build(rep)
        manifest["seeds"][f"data_rep{rep}"] = _derived_seed(master, "data", rep)
        for mcfg in methods:
            name = mcfg.get("name")
            if name not in METHOD_NAMES:
                raise ConfigError(f"unknown method {name!r}; valid: {', '.join(METHOD_NAMES)}")
            seed = _derived_seed(master, "method", name, rep)
            manifest["seeds"][f"{name}_rep{rep}"] = seed
            sets, scores = _run_method(name, mcfg, source, train, test, seed, threads)
            stem = f"{name}_rep{rep:03d}"
            write_sets_csv(out / f"{stem}_sets.csv", sets, scores)
            report = type_errors(sets, test.require_labels())
            write_report_json(
                report, out / f"{stem}_report.json",
                extra={"method": name, "rep": rep, "alpha": float(mcfg.get("alpha", 0.05))},
            )
            write_report_long_csv(report, out / f"{stem}_report_long.csv")
            manifest["outputs"] += [f"{stem}_sets.csv", f"{stem}_report.json", f"{stem}_report_long.csv"]
            print(f"rep {rep} {name}: type1={report.type1:.4f} type2={report.type2:.4f}")
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def _audit_instances(acfg: dict, master: int):
    alphas = [float(a) for a in acfg.get("alphas", [0.05, 0.2, 0.5])]
    sizes = [int(n) for n in acfg.get("train_sizes", [3, 6, 9, 12])]
    per_case = int(acfg.get("seeds_per_case", 10))
    p = int(acfg.get("p", 3))
    for alpha in alphas:
        for n in sizes:
            for case_seed in range(per_case):
                yield alpha, n, p, case_seed


def cmd_audit(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    out = _out_dir(cfg, args)
    master = int(cfg.get("seed", 0))
    acfg = cfg.get("audit", {})
    b_tilde = int(acfg.get("b_tilde", 20))
    m_test = int(acfg.get("n_test", 4))
    n_other = int(acfg.get("n_other", 5))
    violations = 0
    total = 0
    lines = ["alpha,n,seed,strange_size,bound,diagonal_ok,ok"]
    for alpha, n, p, case_seed in _audit_instances(acfg, master):
        rng = spawn_rng(master, "audit", repr(alpha), n, case_seed)
        class_x = rng.normal(size=(n, p))
        other_x = rng.normal(loc=1.0, size=(n_other, p))
        test_x = rng.normal(loc=0.5, size=(m_test, p))
        held = rng.normal(size=p)
        params = CsForestParams(alpha=alpha, b_tilde=b_tilde, seed=0)
        record = audit_strange_set(class_x, other_x, test_x, held, params, alpha, rng)
        total += 1
        if not record.ok:
            violations += 1
        lines.append(
            f"{alpha},{n},{case_seed},{record.strange_size},{record.bound},"
            f"{record.diagonal_ok},{record.ok}"
        )
    log_path = out / "audit.csv"
    log_path.write_text("\n".join(lines) + "\n")
    print(f"audit: {total} instances, {violations} violations ({log_path})")
    return EXIT_AUDIT if violations else EXIT_OK


def cmd_compare(args) -> int:
    by_method: dict[str, list] = {}
    alphas: dict[str, float] = {}
    for path in args.reports:
        if not Path(path).exists():
            raise ConfigError(f"report file not found: {path}")
        report, meta = read_report_json(path)
        name = meta.get("method", "unknown")
        by_method.setdefault(name, []).append(report)
        if "alpha" in meta:
            alphas[name] = meta["alpha"]
    if not by_method:
        raise ConfigError("no report files given")
    rows = [("Method", "Type I", "Type II", "Runs")]
    for name in sorted(by_method):
        agg = aggregate_runs(by_method[name])
        t1m, t1s = agg["type1"]
        t2m, t2s = agg["type2"]
        rows.append((name, f"{t1m:.3f}±{t1s:.3f}", f"{t2m:.3f}±{t2s:.3f}", str(len(by_method[name]))))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    if args.out_table:
        with open(args.out_table, "w") as fh:
            fh.write("method,type1_mean,type1_sd,type2_mean,type2_sd,runs\n")
            for name in sorted(by_method):
                agg = aggregate_runs(by_method[name])
                fh.write(
                    f"{name},{agg['type1'][0]!r},{agg['type1'][1]!r},"
                    f"{agg['type2'][0]!r},{agg['type2'][1]!r},{len(by_method[name])}\n"
                )
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csforest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", "-c", required=True, help="YAML experiment config")
        p.add_argument("--out", "-o", help="output directory (default: config, then $CSFOREST_OUT)")
        p.add_argument("--seed", type=int, help="override master seed")

    p_gen = sub.add_parser("generate", help="write train/test CSVs for the configured data source")
    common(p_gen)
    p_gen.add_argument("--reps", type=int, help="override repetition count")
    p_gen.set_defaults(func=cmd_generate)

    p_run = sub.add_parser("run", help="run configured methods and write sets + reports")
    common(p_run)
    p_run.add_argument("--reps", type=int, help="override repetition count")
    p_run.add_argument("--threads", type=int, help="threads for tree fitting")
    p_run.add_argument("--alpha", type=float, help="override alpha for every method")
    p_run.set_defaults(func=cmd_run)

    p_audit = sub.add_parser("audit", help="run the strange-set audit sweep")
    common(p_audit)
    p_audit.set_defaults(func=cmd_audit)

    p_cmp = sub.add_parser("compare", help="aggregate report JSONs into a mean±sd table")
    p_cmp.add_argument("reports", nargs="+", help="report JSON files from `run`")
    p_cmp.add_argument("--out-table", help="also write the table as CSV")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CsForestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
