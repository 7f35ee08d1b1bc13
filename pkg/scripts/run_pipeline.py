"""End-to-end pipeline (synth, train, search, eval) with benchmarking."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.benchmark.metrics import BenchmarkContext, BenchmarkTracker, format_bytes
from src.data.store import CorpusStore
from src.data.synth import CorpusGenerator
from src.search.evolution import EvolutionarySearch, rescore
from src.search.pareto import write_front
from src.supernet.evaluation import decode_utterances
from src.training.trainer import SupernetTrainer
from src.utils.config import apply_overrides, get_config, set_config
from src.utils.logger import print_error, print_info, print_section, setup_logging


def main(argv=None):
    """Run the complete pipeline with stage timing."""
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="config/config.yaml")
    parser.add_argument("--set", dest="overrides", action="append", default=[])
    args = parser.parse_args(argv)

    setup_logging()
    config = get_config(reload=True, config_path=args.config)
    if args.overrides:
        config = set_config(apply_overrides(config, args.overrides))
    config.setup_directories()

    tracker = BenchmarkTracker(config)
    print_section("TODM pipeline")

    try:
        print_section("Step 1: Synthesize corpus")
        with BenchmarkContext(tracker, "synth"):
            store = CorpusStore(config)
            corpus = CorpusGenerator(config).generate()
            digest = store.save(corpus)
            tracker.record_run_info("corpus_hash", digest)
            tracker.record_run_info("train_utterances", len(corpus.train))

        print_section("Step 2: Train Supernet")
        with BenchmarkContext(tracker, "train", {"run": config.train.run_name}):
            trainer = SupernetTrainer(config)
            result = trainer.train(corpus.train, corpus.dev)
            tracker.record_run_info("final_dev_wer", result.final_dev_wer)

        print_section("Step 3: Evolutionary search")
        with BenchmarkContext(tracker, "search"):
            search = EvolutionarySearch(trainer.model, config)
            found = search.run(corpus.dev)
            out = write_front(
                found.front,
                config.run_dir() / "search" / "front.json",
                {
                    "constraints": found.constraints,
                    "winners": [w.to_record() for w in found.winners],
                    "seed": config.search.seed,
                },
            )
            tracker.record_run_info("front_file", str(out))
            tracker.record_run_info("search_evaluations", found.evaluations)

        print_section("Step 4: Evaluate winners on test")
        with BenchmarkContext(tracker, "eval"):
            winners = [w.entry for w in found.winners if w.entry is not None]
            for entry in rescore(trainer.model, winners, corpus.test, config.search.report_decoder, config.search):
                print_info(
                    f"{entry.config.key()} ({format_bytes(entry.size_bytes)}): "
                    f"test WER {entry.wer:.4f} [{entry.decoder}]"
                )
            max_wer = decode_utterances(trainer.model, corpus.test, trainer.space.max_config()).wer
            tracker.record_run_info("max_config_test_wer", max_wer)

        ratio = tracker.stage_ratio("search", "train")
        if ratio is not None:
            tracker.record_run_info("search_over_train_wall_clock", f"{ratio:.4f}")
        tracker.record_run_info("peak_rss_mb", f"{tracker.current_rss_mb():.2f}")

        print_section("Benchmark Results")
        tracker.print_summary()
        if config.benchmark.enabled:
            results_path = tracker.save_results()
            print_info(f"Detailed results saved to: {results_path}")
        return 0

    except Exception as e:
        print_error(f"Pipeline failed: {e}")
        tracker.logger.error(f"Pipeline failed: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
