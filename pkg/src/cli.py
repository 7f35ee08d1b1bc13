"""Command-line entry point: synth, train, search, eval and cost-report."""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from src.data.store import CorpusStore
from src.data.synth import SPLITS, CorpusGenerator
from src.search.evolution import (
    EvolutionarySearch,
    exhaustive_search,
    rescore,
    resolve_constraints,
    winners_for,
)
from src.search.pareto import read_front, write_front
from src.supernet.checkpoint import load_checkpoint, load_subnetwork, save_subnetwork
from src.supernet.evaluation import decode_utterances
from src.supernet.search_space import parse_config_key
from src.training.cost import DEFAULT_KS, CostReporter
from src.training.trainer import SupernetTrainer, latest_checkpoint
from src.utils.config import Config, apply_overrides, set_config
from src.utils.errors import CheckpointError, ConfigError, ContractError, TODMError
from src.utils.logger import get_logger, print_error, print_section, print_table, setup_logging
from src.utils.run_manifest import RunManifestStore

logger = get_logger(__name__)

DEFAULT_CONFIG = "config/config.yaml"


def load_config(path: Optional[str], overrides: Sequence[str]) -> Config:
    """Config from ``path`` (defaults when the default file is absent) plus overrides.

    Raises:
        ConfigError: If an explicitly given file is missing or any value is invalid
    """
    if path is None:
        config = Config.from_yaml(DEFAULT_CONFIG) if Path(DEFAULT_CONFIG).exists() else Config()
    else:
        try:
            config = Config.from_yaml(path)
        except FileNotFoundError as exc:
            raise ConfigError(f"configuration file not found: {path}") from exc
    if overrides:
        config = apply_overrides(config, overrides)
    config.setup_directories()
    return set_config(config)


def _resolve_checkpoint(config: Config, checkpoint: Optional[str]) -> Path:
    if checkpoint and checkpoint != "latest":
        return Path(checkpoint)
    found = latest_checkpoint(config.run_dir())
    if found is None:
        raise CheckpointError(f"no checkpoint found in {config.run_dir() / 'checkpoints'}")
    return found


def _split_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def cmd_synth(config: Config, args: argparse.Namespace) -> int:
    """Generate the corpus and write it under ``paths.corpus_dir``."""
    print_section("Synthesize corpus")
    store = CorpusStore(config, args.out)
    corpus = CorpusGenerator(config).generate()
    digest = store.save(corpus)
    manifest = RunManifestStore(store.directory, config)
    manifest.snapshot_config(config)
    manifest.record_artifact("corpus", store.meta_file, "corpus", {"hash": digest})
    manifest.record_command("synth", {"out": str(store.directory)})
    print(json.dumps({"corpus_dir": str(store.directory), "hash": digest}))
    return 0


def cmd_train(config: Config, args: argparse.Namespace) -> int:
    """Train a Supernet (or an individual subnetwork) on the stored corpus."""
    overrides = []
    if args.kd is not None:
        overrides.append(f"train.kd_mode={args.kd}")
    if args.kd_j is not None:
        overrides.append(f"train.kd_j={args.kd_j}")
    if args.mode is not None:
        overrides.append(f"train.mode={args.mode}")
    if args.individual_config is not None:
        overrides.append(f"train.individual_config={args.individual_config}")
    if args.run_name is not None:
        overrides.append(f"train.run_name={args.run_name}")
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if overrides:
        config = set_config(apply_overrides(config, overrides))

    print_section(f"Train {config.train.run_name}")
    corpus = CorpusStore(config).load(["train", "dev"])
    resume = _resolve_checkpoint(config, args.resume) if args.resume else None
    trainer = SupernetTrainer(config)
    trainer.manifest.record_command("train", {k: v for k, v in vars(args).items() if k != "handler"})
    result = trainer.train(corpus.train, corpus.dev, resume_from=resume)
    print(
        json.dumps(
            {
                "run_dir": str(result.run_dir),
                "checkpoint": str(result.checkpoints[-1]) if result.checkpoints else None,
                "dev_wer": result.final_dev_wer,
                "aborted_steps": result.aborted_steps,
            }
        )
    )
    return 0


def _parse_constraints(text: Optional[str], percent: bool) -> Optional[List[str]]:
    if text is None:
        return None
    items = _split_list(text)
    if percent:
        items = [i if i.endswith("%") else f"{i}%" for i in items]
    return items


def cmd_search(config: Config, args: argparse.Namespace) -> int:
    """Evolutionary (or exhaustive) search on a trained Supernet; writes a front file."""
    overrides = []
    if args.seed is not None:
        overrides.append(f"search.seed={args.seed}")
    constraints = _parse_constraints(args.constraints, args.percent)
    if constraints is not None:
        overrides.append("search.constraints=[" + ", ".join(f'"{c}"' for c in constraints) + "]")
    if overrides:
        config = set_config(apply_overrides(config, overrides))
    params = config.search

    checkpoint_path = _resolve_checkpoint(config, args.checkpoint)
    checkpoint = load_checkpoint(checkpoint_path)
    model = checkpoint.model
    space = model.space.channel_only() if args.channel_only else model.space
    utterances = CorpusStore(config).load([args.split])[args.split]
    if params.max_utterances:
        utterances = utterances[: params.max_utterances]

    print_section("Search")
    search = EvolutionarySearch(model, config, params, space)
    if args.exhaustive:
        front = exhaustive_search(model, utterances, params, space)
        taus = resolve_constraints(params.constraints, model.size_bytes(space.max_config()))
        winners = winners_for(front, taus)
        history = []
        evaluations = space.size()
    else:
        result = search.run(utterances)
        front, winners, taus = result.front, result.winners, result.constraints
        history = [h.to_record() for h in result.history]
        evaluations = result.evaluations

    feasible = [w.entry for w in winners if w.entry is not None]
    reported = rescore(model, feasible, utterances, params.report_decoder, params) if feasible else []
    report_wer = {e.config.key(): e.wer for e in reported}

    out = Path(args.out) if args.out else config.run_dir() / "search" / "front.json"
    winner_records = []
    for winner in winners:
        record = winner.to_record()
        if winner.entry is not None:
            record["report_wer"] = report_wer.get(winner.entry.config.key())
            record["report_decoder"] = params.report_decoder
        winner_records.append(record)

    exported: Dict[str, str] = {}
    if args.export_models:
        for winner in winners:
            if winner.entry is None:
                continue
            path = out.parent / "models" / f"tau_{winner.tau}.npz"
            subnet = model.extract_subnetwork(winner.entry.config)
            save_subnetwork(path, subnet, {"tau": winner.tau, "wer": winner.entry.wer})
            exported[str(winner.tau)] = str(path)

    write_front(
        front,
        out,
        {
            "checkpoint": str(checkpoint_path),
            "split": args.split,
            "fitness_decoder": params.fitness_decoder,
            "seed": params.seed,
            "exhaustive": bool(args.exhaustive),
            "space": space.model_dump(mode="json"),
            "constraints": taus,
            "winners": winner_records,
            "evaluations": evaluations,
            "history": history,
            "exported_models": exported,
        },
    )

    rows = [
        (
            f"{w.tau:,}",
            w.entry.config.key() if w.entry else "infeasible",
            f"{w.entry.size_bytes:,}" if w.entry else "-",
            w.entry.wer if w.entry else "-",
            report_wer.get(w.entry.config.key(), "-") if w.entry else "-",
        )
        for w in winners
    ]
    print_table(
        "Best subnetwork per budget",
        ["Budget (B)", "Config", "Size (B)", params.fitness_decoder, params.report_decoder],
        rows,
    )
    manifest = RunManifestStore(config.run_dir(), config)
    manifest.record_artifact("search/front", out, "front", {"entries": len(front), "evaluations": evaluations})
    manifest.record_command("search", {"checkpoint": str(checkpoint_path), "out": str(out)})
    print(json.dumps({"front": str(out), "winners": winner_records}))
    return 0


def cmd_eval(config: Config, args: argparse.Namespace) -> int:
    """WER of one subnetwork, every entry of a front file, or an exported model."""
    splits = list(SPLITS[1:]) if args.split == "both" else [args.split]
    decoders = ["greedy", "beam5"] if args.decoder == "both" else [args.decoder]
    corpus = CorpusStore(config).load(splits)

    targets = []
    if args.model:
        subnet = load_subnetwork(args.model)
        targets.append((subnet.cfg.key(), subnet, None))
    else:
        checkpoint = load_checkpoint(_resolve_checkpoint(config, args.checkpoint))
        model = checkpoint.model
        if args.front:
            for entry in read_front(args.front):
                targets.append((entry.config.key(), model, entry.config))
        else:
            cfg = parse_config_key(args.subnet, model.space)
            targets.append((cfg.key(), model, cfg))

    print_section("Evaluate")
    results = []
    for name, model, cfg in targets:
        for split in splits:
            for decoder in decoders:
                report = decode_utterances(
                    model,
                    corpus[split],
                    cfg,
                    decoder=decoder,
                    beam_size=config.search.beam_size,
                    max_symbols_per_frame=config.search.max_symbols_per_frame,
                )
                results.append({"config": name, "split": split, "decoder": decoder, "wer": report.wer})
    print_table(
        "Word error rate",
        ["Config", "Split", "Decoder", "WER"],
        [(r["config"], r["split"], r["decoder"], r["wer"]) for r in results],
    )
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as f:
            json.dump({"format": "todm-eval/1", "results": results}, f, indent=2)
    print(json.dumps(results))
    return 0


def cmd_cost_report(config: Config, args: argparse.Namespace) -> int:
    """Training FLOPs of K individual models against each Supernet run."""
    runs = [Path(r) for r in args.runs] if args.runs else sorted(
        p for p in config.paths.runs_dir.iterdir() if (p / "metrics.jsonl").exists()
    )
    if not runs:
        raise ContractError(f"no runs with metrics found under {config.paths.runs_dir}")
    ks = [int(k) for k in _split_list(args.ks)] if args.ks else list(DEFAULT_KS)
    reporter = CostReporter(config)
    table = reporter.report(runs, ks)
    print_table("Training FLOPs", table.columns, table.iter_rows(), float_format="{:.3e}")
    out = Path(args.out) if args.out else config.paths.runs_dir / "cost_report.csv"
    reporter.write(table, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="todm", description="Supernet training and subnetwork search")
    parser.add_argument("--config", default=None, help=f"YAML config (default {DEFAULT_CONFIG} if present)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one config value (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate the synthetic corpus")
    synth.add_argument("--out", default=None, help="Corpus directory (default paths.corpus_dir)")
    synth.set_defaults(handler=cmd_synth)

    train = sub.add_parser("train", help="Train a Supernet or an individual subnetwork")
    train.add_argument("--resume", nargs="?", const="latest", default=None, help="Checkpoint path or 'latest'")
    train.add_argument("--kd", choices=["none", "kld", "alphaD"], default=None)
    train.add_argument("--kd-j", type=int, default=None)
    train.add_argument("--mode", choices=["supernet", "individual"], default=None)
    train.add_argument("--individual-config", default=None, help="max, min or a config key")
    train.add_argument("--run-name", default=None)
    train.add_argument("--epochs", type=int, default=None)
    train.set_defaults(handler=cmd_train)

    search = sub.add_parser("search", help="Search the Pareto front of a trained Supernet")
    search.add_argument("--checkpoint", default=None, help="Checkpoint path (default latest of the run)")
    search.add_argument("--constraints", default=None, help="Comma-separated budgets: bytes or N%%")
    search.add_argument("--percent", action="store_true", help="Read bare constraint numbers as percent")
    search.add_argument("--seed", type=int, default=None)
    search.add_argument("--split", choices=["dev", "test"], default="dev")
    search.add_argument("--out", default=None, help="Front JSON path (CSV written alongside)")
    search.add_argument("--exhaustive", action="store_true", help="Evaluate every config instead")
    search.add_argument("--channel-only", action="store_true", help="Search widths only, no layer dropping")
    search.add_argument("--export-models", action="store_true", help="Save sliced winners as subnetwork files")
    search.set_defaults(handler=cmd_search)

    evaluate = sub.add_parser("eval", help="Decode a split and report WER")
    evaluate.add_argument("--checkpoint", default=None)
    evaluate.add_argument("--subnet", default="max", help="max, min or a config key")
    evaluate.add_argument("--front", default=None, help="Evaluate every entry of a front file")
    evaluate.add_argument("--model", default=None, help="Exported subnetwork file")
    evaluate.add_argument("--split", default="both", help="dev, test or both")
    evaluate.add_argument("--decoder", choices=["greedy", "beam5", "both"], default="both")
    evaluate.add_argument("--out", default=None, help="Write results as JSON")
    evaluate.set_defaults(handler=cmd_eval)

    cost = sub.add_parser("cost-report", help="Compare Supernet and individual training FLOPs")
    cost.add_argument("--runs", nargs="*", default=None, help="Run directories (default all under runs_dir)")
    cost.add_argument("--ks", default=None, help="Comma-separated K values (default 3,6,...,30)")
    cost.add_argument("--out", default=None, help="CSV destination")
    cost.set_defaults(handler=cmd_cost_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and map failures to exit codes.

    Returns:
        0 on success, 2 config, 3 contract, 4 numeric, 5 I/O, 1 anything else
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging()
    try:
        config = load_config(args.config, args.overrides)
        return args.handler(config, args)
    except TODMError as exc:
        print_error(f"{exc.category} error: {exc}")
        logger.debug("command failed", exc_info=True)
        return exc.exit_code
    except KeyboardInterrupt:
        print_error("interrupted")
        return 130
    except Exception as exc:
        print_error(f"unexpected error: {exc}")
        logger.error(f"{args.command} failed: {exc}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
