"""
main.py
Command-line entry point. One subcommand per pipeline stage plus the one-shot experiment
driver. Every subcommand writes into a staging directory that replaces ``--out`` only on
success, and leaves a run_manifest.json next to its outputs.

Exit codes: 0 success, 1 user error (inputs, flags, config), 2 internal error.
"""

import argparse
import logging
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd

from config.experiment import load_experiment
from config.logging_config import level_from_flags, setup_logging
from config.settings import APP_NAME, APP_VERSION, Settings, load_settings, settings as default_settings
from services.cohort.service import build_cohort, read_manifest, read_stays, write_manifest, write_stays
from services.drift.inputs import load_drift_inputs
from services.drift.report import build_drift_report, emit_report
from services.evaluation.experiment import run_experiment
from services.evaluation.results import write_results
from services.evaluation.scoring import fit_on_split, score_split
from services.evaluation.splits import make_split, plan_from_rows, plan_to_rows, split_units
from services.features.specs import featureset_label, load_featureset
from services.features.store import extract_feature_store, read_feature_store, write_feature_store
from services.ingest.tables import MimicAdapter
from services.labeling.service import label_cohort, read_labels, write_labels
from services.models.bundle import ModelBundle
from services.synth.generator import generate, load_synth_config
from shared.exceptions import ConfigError, UserError, WorkbenchError
from shared.schemas.schemas import ModelKind, Regime, RunManifest, Task
from shared.utils.files import config_hash, read_json, require_file, staged_output, write_csv, write_json
from shared.utils.manifest import recorded_stage, write_manifest_file

logger = logging.getLogger(APP_NAME)

SPLIT_FILE = "split.csv"
SPLIT_META = "split.json"


class UsageError(UserError):
    pass


class _Parser(argparse.ArgumentParser):
    """Flag errors raise instead of exiting, so they map onto exit code 1."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ── Settings from flags ───────────────────────────────────────

def _parse_value(raw: str) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = _parse_value(value.strip())
    return out


def resolve_settings(args: argparse.Namespace) -> Settings:
    base = load_settings(args.settings) if getattr(args, "settings", None) else default_settings
    cfg = base.with_overrides(_overrides(getattr(args, "set", None)))
    runtime: Dict[str, Any] = {}
    if args.threads is not None:
        runtime["runtime.threads"] = args.threads
    if args.seed is not None:
        runtime["runtime.seed"] = args.seed
    return cfg.with_overrides(runtime)


def _settings_epilog() -> str:
    lines = ["labeling settings (set with --settings FILE or --set KEY=VALUE):"]
    for section in ("soi", "sofa", "cohort"):
        for key, value in getattr(default_settings, section).model_dump().items():
            lines.append(f"  {section}.{key:<20} default {value}")
    return "\n".join(lines)


def _manifest(command: str, args: argparse.Namespace, cfg: Settings, seeds: Sequence[int] = ()) -> RunManifest:
    echo = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "handler"}
    return RunManifest(
        config_hash=config_hash({"args": echo, "settings": cfg}),
        tool_version=APP_VERSION,
        command=command,
        seeds=list(seeds),
        lab_join_key=cfg.ingest.lab_join_key,
    )


# ── Subcommands ───────────────────────────────────────────────

def cmd_synth_gen(args: argparse.Namespace) -> None:
    cfg = resolve_settings(args)
    synth = load_synth_config(args.config)
    if args.seed is not None:
        synth = synth.model_copy(update={"seed": args.seed})
    manifest = _manifest("synth-gen", args, cfg, [synth.seed])
    with staged_output(args.out, args.force) as stage:
        with recorded_stage(manifest, "synth-gen", stage) as rec:
            result = generate(synth, stage, threads=cfg.runtime.threads)
            rec.outputs.extend(result.paths)
            rec.detail = {"rows": result.counts, "eligible_positive": result.n_positive}
        write_manifest_file(manifest, stage)


def cmd_ingest(args: argparse.Namespace) -> None:
    cfg = resolve_settings(args)
    manifest = _manifest("ingest", args, cfg)
    with staged_output(args.out, args.force) as stage:
        with recorded_stage(manifest, "ingest", stage) as rec:
            adapter = MimicAdapter(args.tables, cfg.ingest.lab_join_key)
            stays, report = build_cohort(adapter, cfg)
            rec.outputs.append(write_stays(stays, stage / "stays.csv"))
            rec.detail = {"cohort": report.as_dict(), "tables": adapter.describe()}
        write_manifest_file(manifest, stage)


def cmd_label(args: argparse.Namespace) -> None:
    cfg = resolve_settings(args)
    seed = args.seed if args.seed is not None else 0
    manifest = _manifest("label", args, cfg, [seed])
    adapter = MimicAdapter(args.tables, cfg.ingest.lab_join_key)
    with staged_output(args.out, args.force) as stage:
        with recorded_stage(manifest, "label", stage) as rec:
            if args.stays:
                stays = read_stays(args.stays)
            else:
                stays, _ = build_cohort(adapter, cfg)
                rec.outputs.append(write_stays(stays, stage / "stays.csv"))
            run = label_cohort(adapter, stays, args.task, seed, cfg)
            rec.outputs.append(write_labels(run.labels, stays, stage / "labels.csv"))
            rec.outputs.append(write_manifest(run.manifest, stage / "manifest.csv"))
            rec.detail = {"onset_rejected": run.report.onset_rejected, "kept": run.report.kept,
                          "unscoreable": run.unscoreable, "ingest": run.ingest,
                          "default_weight_hours": run.default_weight_hours}
        write_manifest_file(manifest, stage)


def cmd_extract_features(args: argparse.Namespace) -> None:
    cfg = resolve_settings(args)
    manifest = _manifest("extract-features", args, cfg)
    spec = load_featureset(args.featureset)
    labels_dir = Path(args.labels)
    stays_path = Path(args.stays) if args.stays else labels_dir / "stays.csv"
    stays = read_stays(require_file(stays_path, "stays file"))
    rows = read_manifest(require_file(labels_dir / "manifest.csv", "cohort manifest"))
    with staged_output(args.out, args.force) as stage:
        with recorded_stage(manifest, "extract-features", stage) as rec:
            adapter = MimicAdapter(args.tables, cfg.ingest.lab_join_key)
            store = extract_feature_store(adapter, stays, rows, spec, args.task, cfg)
            rec.outputs.extend(write_feature_store(store, stage))
            rec.detail = {"featureset": featureset_label(spec), "stays": len(store.stay_ids)}
        write_manifest_file(manifest, stage)


def cmd_train(args: argparse.Namespace) -> None:
    cfg = resolve_settings(args)
    train_config = cfg.train if args.seed is None else cfg.train.model_copy(update={"seed": args.seed})
    manifest = _manifest("train", args, cfg, [train_config.seed])
    store = read_feature_store(args.features)
    ratios = tuple(args.ratios)
    with staged_output(args.out, args.force) as stage:
        with recorded_stage(manifest, "split", stage) as rec:
            plan = make_split(split_units(store.static[["stay_id", "patient_id", "year_bucket"]]
                                          .astype(str).itertuples(index=False, name=None)),
                              args.regime, ratios, train_config.seed)
            rec.outputs.append(write_csv(pd.DataFrame(plan_to_rows(plan)), stage / SPLIT_FILE))
            rec.outputs.append(write_json(stage / SPLIT_META, {
                "regime": plan.regime, "seed": plan.seed, "ratios": list(plan.ratios),
                "featureset": featureset_label(store.spec), "task": store.task,
            }))
        with recorded_stage(manifest, "train", stage) as rec:
            bundle = fit_on_split(store, plan, args.model, train_config)
            rec.outputs.extend(bundle.save(stage))
            rec.detail = {"epochs": len(bundle.history.records), "best_epoch": bundle.history.best_epoch,
                          "selection": bundle.history.selection}
        write_manifest_file(manifest, stage)


def cmd_evaluate(args: argparse.Namespace) -> None:
    cfg = resolve_settings(args)
    model_dir = Path(args.model)
    meta = read_json(model_dir / SPLIT_META)
    manifest = _manifest("evaluate", args, cfg, [int(meta["seed"])])
    store = read_feature_store(args.features)
    rows = pd.read_csv(require_file(model_dir / SPLIT_FILE, "split file"), dtype=str).to_dict("records")
    plan = plan_from_rows(rows, meta["regime"], int(meta["seed"]), meta["ratios"])
    with staged_output(args.out, args.force) as stage:
        with recorded_stage(manifest, "evaluate", stage) as rec:
            bundle = ModelBundle.load(model_dir, store.spec)
            results, skipped = score_split(bundle, store, plan, feature_set=meta["featureset"],
                                           task=meta.get("task", store.task), seed=int(meta["seed"]))
            rec.outputs.extend(write_results(results, stage, feature_sets=[meta["featureset"]],
                                             models=[bundle.model.kind]))
            rec.detail = {"skipped_buckets": skipped, "n_results": len(results)}
        write_manifest_file(manifest, stage)


def cmd_drift_report(args: argparse.Namespace) -> None:
    cfg = resolve_settings(args)
    manifest = _manifest("drift-report", args, cfg)
    labels = read_labels(args.labels)
    with staged_output(args.out, args.force) as stage:
        with recorded_stage(manifest, "drift-report", stage) as rec:
            inputs = load_drift_inputs(labels, args.events, cfg)
            report = build_drift_report(inputs, top_n=args.top_n, threads=cfg.runtime.threads)
            rec.outputs.extend(emit_report(report, stage))
            rec.detail = {"daytime_share": report.daytime_shares(), "ingest": inputs.ingest}
        write_manifest_file(manifest, stage)


def cmd_experiment(args: argparse.Namespace) -> None:
    config = load_experiment(args.config)
    if args.seed is not None:
        config = config.with_seeds([args.seed])
    if args.threads is not None:
        config = config.model_copy(update={"threads": args.threads})
    cfg = resolve_settings(args)
    with staged_output(args.out, args.force) as stage:
        outcome = run_experiment(config, stage, settings=cfg, synth_seed=args.seed)
        if not outcome.results:
            raise WorkbenchError(f"experiment produced no AUCs ({outcome.n_failed} of {outcome.n_cells} cells failed)")


# ── Parser ────────────────────────────────────────────────────

def _common() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override every seed used by the command")
    common.add_argument("--threads", type=int, default=None, help="worker threads (0 = all cores)")
    common.add_argument("--force", action="store_true", help="replace a non-empty --out directory")
    common.add_argument("-v", "--verbose", action="count", default=0, help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    common.add_argument("--settings", type=Path, help="pipeline settings TOML file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting, e.g. soi.abx_window_h=48")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=APP_NAME, description="Sepsis temporal-drift workbench.")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    common = _common()

    def add(name: str, handler: Callable, help_: str, **kwargs) -> argparse.ArgumentParser:
        sub = subs.add_parser(name, parents=[common], help=help_, description=help_, **kwargs)
        sub.add_argument("--out", type=Path, required=True, help="output directory")
        sub.set_defaults(handler=handler)
        return sub

    p = add("synth-gen", cmd_synth_gen, "Generate synthetic tables with ground truth.")
    p.add_argument("--config", type=Path, required=True, help="generator TOML file")

    p = add("ingest", cmd_ingest, "Load tables and build the filtered cohort.")
    p.add_argument("--tables", type=Path, required=True)

    p = add("label", cmd_label, "Label cohort stays and anchor observation windows.",
            epilog=_settings_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--tables", type=Path, required=True)
    p.add_argument("--stays", type=Path, help="stays.csv from ingest (default: build the cohort)")
    p.add_argument("--task", choices=[t.value for t in Task], default=Task.SEPSIS.value)

    p = add("extract-features", cmd_extract_features, "Build a feature store for one feature set.")
    p.add_argument("--tables", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True, help="label output directory (manifest.csv)")
    p.add_argument("--stays", type=Path, help="stays.csv (default: <labels>/stays.csv)")
    p.add_argument("--featureset", required=True, help="dascena, epic, epic_minus_icd or a TOML path")
    p.add_argument("--task", choices=[t.value for t in Task], default=Task.SEPSIS.value)

    p = add("train", cmd_train, "Split a feature store and train one model.")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", choices=[m.value for m in ModelKind], default=ModelKind.RNN.value)
    p.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.YEAR_AGNOSTIC.value)
    p.add_argument("--ratios", type=float, nargs=3, default=[0.7, 0.15, 0.15], metavar=("TRAIN", "VAL", "TEST"))

    p = add("evaluate", cmd_evaluate, "Score a trained model on its test split.")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True, help="train output directory")

    p = add("drift-report", cmd_drift_report, "Emit the data-change diagnostics.")
    p.add_argument("--labels", type=Path, required=True, help="labels.csv")
    p.add_argument("--events", type=Path, required=True, help="tables directory")
    p.add_argument("--top-n", type=int, default=20)

    p = add("experiment", cmd_experiment, "Run every stage for an experiment file.")
    p.add_argument("--config", type=Path, required=True, help="experiment TOML file")
    return parser


# ── Entry point ───────────────────────────────────────────────

def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc.message, file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "handler", None) is None:
        parser.print_usage(sys.stderr)
        return 1

    setup_logging(level_from_flags(args.verbose, args.quiet))
    try:
        args.handler(args)
    except WorkbenchError as exc:
        logger.error(exc.message)
        print(f"error: {exc.message}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"Internal error in {args.command}")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
