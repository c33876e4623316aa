"""``robustsel`` command line: select, train, attack and bench.

Exit codes: 0 success, 2 input/data error, 3 degenerate computation,
1 anything unexpected.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from robustsel.adversarial import (
    PerturbationConfig,
    evasion_attack,
    learn_patterns,
    load_groups,
)
from robustsel.benchmark import render_report, run_benchmark
from robustsel.consensus import (
    DEFAULT_THRESHOLD,
    FeatureSetArtifact,
    consensus_rank,
    normalize,
    ranking_to_artifact,
    time_related_set,
)
from robustsel.ensembles import FAMILIES, ModelConfig, fit, load_model, save_model
from robustsel.errors import DataError, DegenerateError
from robustsel.flowdata import (
    FeatureSchema,
    FeatureTable,
    clean,
    load_csv,
    schema_from_csv,
    stratified_split,
    write_csv,
)
from robustsel.io import atomic_write_json, atomic_write_text
from robustsel.selectors import METHODS, score_all

logger = logging.getLogger("robustsel")

EXIT_OK, EXIT_UNEXPECTED, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3

# defaults for options that a --config file may also set
_OPTION_DEFAULTS = {
    "threshold": DEFAULT_THRESHOLD,
    "max_iter": 15,
    "magnitude": 0.25,
    "features_per_step": 2,
    "jobs": 1,
    "strict": False,
    "label": "Label",
    "tune_rows": 5000,
    "no_tune": False,
}


# -- config resolution -----------------------------------------------------------

def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from --config, then defaults; flags win."""
    file_cfg: dict = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise DataError("config file must hold a JSON object")
    for key, val in file_cfg.items():
        key = key.replace("-", "_")
        if hasattr(args, key) and getattr(args, key) in (None, []):
            setattr(args, key, val)
    for key, val in _OPTION_DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)
    if getattr(args, "seed", None) is None:
        env = os.environ.get("ROBUSTSEL_SEED")
        try:
            args.seed = int(env) if env not in (None, "") else 0
        except ValueError:
            raise DataError(f"ROBUSTSEL_SEED must be an integer, got {env!r}") from None
    if hasattr(args, "threshold") and not 0.0 < args.threshold < 1.0:
        raise DataError("--threshold must be in (0, 1)")
    if hasattr(args, "max_iter") and args.max_iter < 1:
        raise DataError("--max-iter must be at least 1")
    if hasattr(args, "magnitude") and not 0.0 < args.magnitude <= 1.0:
        raise DataError("--magnitude must be in (0, 1]")
    return args


def _require_file(path, what: str) -> Path:
    if not path:
        raise DataError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} {p} does not exist")
    return p


def _schema(args, data: Path) -> FeatureSchema:
    if args.schema:
        return FeatureSchema.load(_require_file(args.schema, "--schema"))
    return schema_from_csv(data, args.label)


def _load_table(args, path=None) -> FeatureTable:
    data = _require_file(path or args.data, "--data")
    table = clean(load_csv(data, _schema(args, data), strict=args.strict))
    if table.n_malicious in (0, table.n_rows):
        raise DataError(f"{data}: need both benign and malicious rows")
    return table


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- select ------------------------------------------------------------------------

def _select(table: FeatureTable, threshold: float, seed: int, jobs: int):
    def one(method: str):
        return score_all(table, method, seed=seed)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, len(METHODS))) as pool:
            raws = list(pool.map(one, METHODS))
    else:
        raws = [one(m) for m in METHODS]
    ranking = consensus_rank([normalize(r) for r in raws], threshold)
    return raws, ranking


def format_ranking(artifact: FeatureSetArtifact) -> str:
    methods = list(METHODS)
    width = max([7] + [len(f) for f in artifact.features])
    head = f"{'#':>3}  {'Feature':<{width}}  {'Mean':>7}  " + "  ".join(
        f"{m[:8]:>8}" for m in methods)
    lines = [head]
    for i, name in enumerate(artifact.features, 1):
        rel = artifact.relevances[name]
        lines.append(f"{i:>3}  {name:<{width}}  {100 * rel.mean_relevance:>6.2f}%  "
                     + "  ".join(f"{100 * rel.per_method[m]:>7.2f}%" for m in methods))
    return "\n".join(lines) + "\n"


def cmd_select(args) -> int:
    table = _load_table(args)
    raws, ranking = _select(table, args.threshold, args.seed, args.jobs)
    out = _out_dir(args)
    for raw in raws:
        atomic_write_json(out / f"scores_{raw.method}.json", raw.to_dict())
    artifact = ranking_to_artifact(ranking, "consensus")
    atomic_write_json(out / "consensus.json", artifact.to_dict())
    sys.stdout.write(format_ranking(artifact))
    logger.info("%d of %d features survive the %.2f%% veto", len(artifact.features),
                table.n_features, 100 * args.threshold)
    return EXIT_OK


# -- bench ------------------------------------------------------------------------

def _feature_sets(args, table: FeatureTable) -> list[FeatureSetArtifact]:
    sources = args.features or ["consensus"]
    sets = []
    for src in sources:
        if src == "consensus":
            _, ranking = _select(table, args.threshold, args.seed, args.jobs)
            sets.append(ranking_to_artifact(ranking, "consensus"))
        elif src == "time_related":
            sets.append(time_related_set(table.names))
        elif src == "all":
            sets.append(FeatureSetArtifact("all", table.names))
        else:
            sets.append(FeatureSetArtifact.load(_require_file(src, "feature-set file")))
    names = [s.name for s in sets]
    if len(set(names)) != len(names):
        raise DataError(f"feature set names must be distinct, got {names}")
    return sets


def _groups(args):
    return load_groups(_require_file(args.groups, "--groups")) if args.groups else None


def cmd_bench(args) -> int:
    table = _load_table(args)
    families = args.family or list(FAMILIES)
    sets = _feature_sets(args, table)
    base = {}
    if args.n_estimators is not None:
        base["n_estimators"] = args.n_estimators
    matrix = run_benchmark(
        table, sets, families,
        seeds=args.bench_seeds or [args.seed],
        attack=PerturbationConfig(args.magnitude, args.features_per_step, args.seed),
        max_iter=args.max_iter,
        do_tune=not args.no_tune,
        tune_rows=args.tune_rows if args.tune_rows and args.tune_rows > 0 else None,
        base_config=base,
        groups=_groups(args),
        jobs=args.jobs,
        dataset_id=Path(args.data).name,
    )
    out = _out_dir(args)
    formats = args.format or ["json", "text"]
    suffix = {"json": "json", "text": "txt", "csv": "csv"}
    for fmt in formats:
        atomic_write_text(out / f"report.{suffix[fmt]}", render_report(matrix, fmt))
    for s in sets:
        atomic_write_json(out / f"features_{s.name}.json", s.to_dict())
    if "text" in formats:
        sys.stdout.write(render_report(matrix, "text"))
    return EXIT_OK


# -- train / attack ------------------------------------------------------------------

def _restrict(table: FeatureTable, args) -> FeatureTable:
    if not args.features:
        return table
    if len(args.features) != 1:
        raise DataError("train accepts a single --features source")
    src = args.features[0]
    fs = time_related_set(table.names) if src == "time_related" else FeatureSetArtifact.load(
        _require_file(src, "feature-set file"))
    return table.select(fs.features)


def cmd_train(args) -> int:
    table = _restrict(_load_table(args), args)
    split = stratified_split(table, 0.7, args.seed)
    family = (args.family or ["random_forest"])[0]
    overrides = {}
    if args.n_estimators is not None:
        overrides["n_estimators"] = args.n_estimators
    model = fit(ModelConfig(family, seed=args.seed, **overrides), split.train)
    out = _out_dir(args)
    save_model(model, out / f"model_{family}.json")
    write_csv(split.train, out / "train.csv")
    write_csv(split.holdout, out / "holdout.csv")
    logger.info("trained %s on %d rows; holdout %d rows", family, split.train.n_rows,
                split.holdout.n_rows)
    return EXIT_OK


def cmd_attack(args) -> int:
    model = load_model(_require_file(args.model, "--model"))
    train = _load_table(args)
    if args.holdout:
        holdout = clean(load_csv(_require_file(args.holdout, "--holdout"), train.schema,
                                 strict=args.strict))
    else:
        split = stratified_split(train, 0.7, args.seed)
        train, holdout = split.train, split.holdout
    missing = [n for n in model.feature_names if n not in train.names]
    if missing:
        raise DataError(f"data lacks model feature(s) {missing}")
    names = list(model.feature_names)
    train, holdout = train.select(names), holdout.select(names)
    pattern = learn_patterns(train, _groups(args))
    cfg = PerturbationConfig(args.magnitude, args.features_per_step, args.seed)
    result = evasion_attack(model, holdout, pattern, cfg, args.max_iter)
    out = _out_dir(args)
    write_csv(result.adversarial_holdout, out / "adversarial_holdout.csv")
    atomic_write_json(out / "attack_trace.json", result.to_dict())
    sys.stdout.write(f"iterations {result.iterations_run}  recall {result.initial_recall:.4f}"
                     f" -> {result.final_recall:.4f}\n")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustsel", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log at debug level")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--data", help="input CSV")
        sp.add_argument("--schema", help="schema JSON (inferred from the CSV when omitted)")
        sp.add_argument("--label", default=None, help="label column when inferring the schema")
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed (default: $ROBUSTSEL_SEED or 0)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, default=None, help="worker thread cap")
        sp.add_argument("--strict", action="store_true", default=None,
                        help="fail on unparseable cells instead of dropping rows")
        sp.add_argument("--config", help="JSON file of option values; flags win")

    def attack_knobs(sp):
        sp.add_argument("--max-iter", type=int, default=None, help="attack iterations (15)")
        sp.add_argument("--magnitude", type=float, default=None,
                        help="step size as a fraction of interval width (0.25)")
        sp.add_argument("--features-per-step", type=int, default=None,
                        help="features moved per attack iteration (2)")
        sp.add_argument("--groups", help="correlated-group spec JSON")

    s = sub.add_parser("select", help="score features and build the consensus ranking")
    common(s)
    s.add_argument("--threshold", type=float, default=None, help="relevance veto (0.01)")
    s.set_defaults(func=cmd_select)

    b = sub.add_parser("bench", help="run the training x attack benchmark matrix")
    common(b)
    attack_knobs(b)
    b.add_argument("--features", action="append", default=[],
                   help="feature set: a JSON file, 'consensus', 'time_related' or 'all'")
    b.add_argument("--family", action="append", default=[], choices=FAMILIES)
    b.add_argument("--threshold", type=float, default=None, help="veto for 'consensus' sets")
    b.add_argument("--format", action="append", default=[], choices=("json", "text", "csv"))
    b.add_argument("--tune-rows", type=int, default=None,
                   help="row cap for tuning subsamples (5000; 0 = all rows)")
    b.add_argument("--no-tune", action="store_true", default=None,
                   help="skip tuning and use family defaults")
    b.add_argument("--n-estimators", type=int, default=None)
    b.add_argument("--bench-seeds", type=int, nargs="+", default=None,
                   help="run every cell once per listed seed")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", help="fit one family on a 70%% split and save it")
    common(t)
    t.add_argument("--family", action="append", default=[], choices=FAMILIES)
    t.add_argument("--features", action="append", default=[])
    t.add_argument("--n-estimators", type=int, default=None)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="evasion attack against a saved model")
    common(a)
    attack_knobs(a)
    a.add_argument("--model", help="model JSON from 'train'")
    a.add_argument("--holdout", help="holdout CSV; --data then supplies the patterns")
    a.set_defaults(func=cmd_attack)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(_resolve(args))
    except DataError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except DegenerateError as exc:
        logger.error("degenerate computation: %s", exc)
        return EXIT_DEGENERATE
    except Exception as exc:  # noqa: BLE001 - top-level guard
        logger.exception("unexpected failure: %s", exc)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
