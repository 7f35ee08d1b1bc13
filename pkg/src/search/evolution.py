"""Evolutionary and exhaustive search over a trained Supernet.

Weights stay frozen throughout: every evaluation decodes under ``no_grad``
and the fitness of a config is cached by its key.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from src.data.synth import Utterance
from src.search.operators import crossover, mutate
from src.search.pareto import ParetoEntry, pareto_filter
from src.supernet.evaluation import decode_utterances
from src.supernet.model import SupernetModel
from src.supernet.search_space import SearchSpace, SubnetworkConfig, require_valid
from src.utils.config import Config, SearchParams, get_config
from src.utils.errors import ContractError
from src.utils.logger import LoggerMixin, make_progress, print_info, print_warning


def resolve_constraints(constraints: Iterable[Union[int, str]], max_size: int) -> List[int]:
    """Byte budgets from ints (bytes) or ``"N%"`` strings (percent of ``max_size``).

    Raises:
        ContractError: If the list is empty, unparseable or not strictly ascending
    """
    budgets = []
    for item in constraints:
        if isinstance(item, str):
            text = item.strip()
            try:
                if text.endswith("%"):
                    budgets.append(int(math.floor(float(text[:-1]) / 100.0 * max_size + 1e-9)))
                else:
                    budgets.append(int(float(text)))
            except ValueError as exc:
                raise ContractError(f"unparseable size constraint {item!r}") from exc
        else:
            budgets.append(int(item))
    if not budgets:
        raise ContractError("at least one size constraint is required")
    if any(b <= a for a, b in zip(budgets, budgets[1:])):
        raise ContractError(f"size constraints must be strictly ascending, got {budgets}")
    return budgets


@dataclass
class ConstraintWinner:
    """Best evaluated config within one byte budget; ``entry`` is None when infeasible."""

    tau: int
    entry: Optional[ParetoEntry]

    @property
    def feasible(self) -> bool:
        return self.entry is not None

    def to_record(self) -> Dict:
        return {
            "tau": self.tau,
            "feasible": self.feasible,
            "entry": self.entry.to_record() if self.entry else None,
        }


@dataclass
class GenerationRecord:
    generation: int
    population: int
    evaluations: int
    best_wer: float
    mean_wer: float
    best_per_tau: Dict[int, Optional[float]]

    def to_record(self) -> Dict:
        return {
            "generation": self.generation,
            "population": self.population,
            "evaluations": self.evaluations,
            "best_wer": self.best_wer,
            "mean_wer": self.mean_wer,
            "best_per_tau": {str(k): v for k, v in self.best_per_tau.items()},
        }


@dataclass
class SearchResult:
    constraints: List[int]
    winners: List[ConstraintWinner]
    front: List[ParetoEntry]
    evaluated: List[ParetoEntry] = field(default_factory=list)
    history: List[GenerationRecord] = field(default_factory=list)
    evaluations: int = 0


def best_within(entries: Sequence[ParetoEntry], tau: int) -> Optional[ParetoEntry]:
    """Lowest WER (then smallest size, then key) among entries of size <= ``tau``."""
    feasible = [e for e in entries if e.size_bytes <= tau]
    if not feasible:
        return None
    return min(feasible, key=lambda e: (e.wer, e.size_bytes, e.config.key()))


def winners_for(entries: Sequence[ParetoEntry], constraints: Sequence[int]) -> List[ConstraintWinner]:
    return [ConstraintWinner(tau, best_within(entries, tau)) for tau in constraints]


class FitnessEvaluator(LoggerMixin):
    """Cached validation WER of subnetworks of a frozen Supernet.

    Args:
        model: Trained Supernet
        utterances: Validation set
        decoder: ``greedy`` or ``beam<N>``
        beam_size: Width used for ``beam5``
        max_symbols_per_frame: Emission cap per frame
        workers: Threads used by :meth:`evaluate_many`
        seed: Recorded on produced entries
    """

    def __init__(
        self,
        model: SupernetModel,
        utterances: Sequence[Utterance],
        decoder: str = "greedy",
        beam_size: int = 5,
        max_symbols_per_frame: int = 3,
        workers: int = 1,
        seed: Optional[int] = None,
    ):
        if not utterances:
            raise ContractError("validation set is empty")
        self.model = model
        self.utterances = list(utterances)
        self.decoder = decoder
        self.beam_size = beam_size
        self.max_symbols_per_frame = max_symbols_per_frame
        self.workers = workers
        self.seed = seed
        self.cache: Dict[str, ParetoEntry] = {}
        self.evaluations = 0

    def _score(self, cfg: SubnetworkConfig) -> float:
        return decode_utterances(
            self.model,
            self.utterances,
            cfg,
            decoder=self.decoder,
            beam_size=self.beam_size,
            max_symbols_per_frame=self.max_symbols_per_frame,
        ).wer

    def _entry(self, cfg: SubnetworkConfig, wer: float) -> ParetoEntry:
        return ParetoEntry(cfg, self.model.size_bytes(cfg), wer, self.decoder, self.seed)

    def evaluate(self, cfg: SubnetworkConfig) -> ParetoEntry:
        """Entry for ``cfg``, decoding only on a cache miss.

        Raises:
            ContractError: If ``cfg`` is not in the Supernet's search space
        """
        require_valid(self.model.space, cfg)
        key = cfg.key()
        if key not in self.cache:
            self.cache[key] = self._entry(cfg, self._score(cfg))
            self.evaluations += 1
        return self.cache[key]

    def evaluate_many(self, configs: Sequence[SubnetworkConfig]) -> List[ParetoEntry]:
        """Entries in input order; uncached configs are decoded in parallel."""
        for cfg in configs:
            require_valid(self.model.space, cfg)
        pending: Dict[str, SubnetworkConfig] = {}
        for cfg in configs:
            if cfg.key() not in self.cache:
                pending.setdefault(cfg.key(), cfg)
        if pending:
            todo = list(pending.values())
            if self.workers > 1 and len(todo) > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    scores = list(pool.map(self._score, todo))
            else:
                scores = [self._score(cfg) for cfg in todo]
            for cfg, wer in zip(todo, scores):
                self.cache[cfg.key()] = self._entry(cfg, wer)
            self.evaluations += len(todo)
        return [self.cache[cfg.key()] for cfg in configs]

    def entries(self) -> List[ParetoEntry]:
        return list(self.cache.values())


def evaluate_fitness(
    model: SupernetModel,
    cfg: SubnetworkConfig,
    utterances: Sequence[Utterance],
    decoder: str = "greedy",
    beam_size: int = 5,
    max_symbols_per_frame: int = 3,
) -> float:
    """Corpus WER of subnetwork ``cfg`` on ``utterances``.

    Raises:
        ContractError: On an invalid config or empty set
    """
    evaluator = FitnessEvaluator(model, utterances, decoder, beam_size, max_symbols_per_frame)
    return evaluator.evaluate(cfg).wer


class EvolutionarySearch(LoggerMixin):
    """Seeded evolutionary search for the best subnetwork per byte budget.

    Args:
        model: Trained Supernet (weights are not modified)
        config: Configuration object (uses global config if None)
        params: Search parameters (defaults to ``config.search``)
        space: Space to search (defaults to the Supernet's; must be a subset of it)
    """

    def __init__(
        self,
        model: SupernetModel,
        config: Optional[Config] = None,
        params: Optional[SearchParams] = None,
        space: Optional[SearchSpace] = None,
    ):
        self.config = config or get_config()
        self.params = params or self.config.search
        self.model = model
        self.space = space or model.space

    def make_evaluator(self, utterances: Sequence[Utterance], decoder: Optional[str] = None) -> FitnessEvaluator:
        p = self.params
        return FitnessEvaluator(
            self.model,
            utterances,
            decoder or p.fitness_decoder,
            p.beam_size,
            p.max_symbols_per_frame,
            p.workers,
            p.seed,
        )

    def constraints(self) -> List[int]:
        return resolve_constraints(self.params.constraints, self.model.size_bytes(self.space.max_config()))

    def _fitness(self, entry: ParetoEntry, max_tau: int) -> float:
        return entry.wer + (self.params.penalty if entry.size_bytes > max_tau else 0.0)

    def _initial_population(self, rng: np.random.Generator) -> List[SubnetworkConfig]:
        size = self.params.population_size
        if self.space.size() <= size:
            return list(self.space.enumerate_configs())
        population = {c.key(): c for c in (self.space.max_config(), self.space.min_config())}
        attempts = 0
        while len(population) < size and attempts < 50 * size:
            cfg = self.space.random_config(rng)
            population.setdefault(cfg.key(), cfg)
            attempts += 1
        return list(population.values())

    def _offspring(
        self, parents: List[SubnetworkConfig], seen: Dict[str, SubnetworkConfig], count: int, rng: np.random.Generator
    ) -> List[SubnetworkConfig]:
        p = self.params
        children: Dict[str, SubnetworkConfig] = {}
        attempts = 0
        while len(children) < count and attempts < 50 * max(count, 1):
            attempts += 1
            a = parents[int(rng.integers(len(parents)))]
            if rng.random() < p.crossover_rate:
                b = parents[int(rng.integers(len(parents)))]
                child = crossover(a, b, rng)
            else:
                child = a
            child = mutate(child, self.space, rng, p.mutation_rate)
            if child.key() not in seen:
                children.setdefault(child.key(), child)
        return list(children.values())

    def run(self, utterances: Sequence[Utterance]) -> SearchResult:
        """Evolve a population and return per-budget winners and the Pareto front.

        Args:
            utterances: Validation set used as fitness data

        Returns:
            SearchResult

        Raises:
            ContractError: On an empty validation set or bad constraints
        """
        p = self.params
        rng = np.random.default_rng(p.seed)
        constraints = self.constraints()
        max_tau = constraints[-1]
        evaluator = self.make_evaluator(utterances)
        min_size = self.model.size_bytes(self.space.min_config())
        for tau in constraints:
            if tau < min_size:
                print_warning(f"Budget {tau:,} B is below the smallest subnetwork ({min_size:,} B); infeasible")

        self.logger.info(
            f"Evolutionary search: population {p.population_size}, {p.generations} generations, "
            f"space of {self.space.size():,} configs, budgets {constraints}"
        )
        population = self._initial_population(rng)
        evaluator.evaluate_many(population)
        history: List[GenerationRecord] = []

        def rank(cfg: SubnetworkConfig):
            entry = evaluator.cache[cfg.key()]
            return (self._fitness(entry, max_tau), entry.size_bytes, cfg.key())

        def record(generation: int) -> GenerationRecord:
            current = [evaluator.cache[c.key()] for c in population]
            best = {tau: best_within(evaluator.entries(), tau) for tau in constraints}
            return GenerationRecord(
                generation=generation,
                population=len(population),
                evaluations=evaluator.evaluations,
                best_wer=min(e.wer for e in current),
                mean_wer=float(np.mean([e.wer for e in current])),
                best_per_tau={t: (e.wer if e else None) for t, e in best.items()},
            )

        history.append(record(0))
        with make_progress(transient=True) as progress:
            task = progress.add_task("search", total=p.generations, status="")
            for generation in range(1, p.generations + 1):
                ranked = sorted(population, key=rank)
                parents = {c.key(): c for c in ranked[: max(1, len(ranked) // 2)]}
                for tau in constraints:
                    elite = best_within(evaluator.entries(), tau)
                    if elite is not None:
                        parents.setdefault(elite.config.key(), elite.config)
                parent_list = list(parents.values())
                children = self._offspring(
                    parent_list, parents, max(0, p.population_size - len(parent_list)), rng
                )
                evaluator.evaluate_many(children)
                population = parent_list + children
                history.append(record(generation))
                progress.update(task, advance=1, status=f"best {history[-1].best_wer:.3f}")
                self.logger.debug(
                    f"generation {generation}: {len(children)} children, {evaluator.evaluations} evaluations"
                )

        evaluated = evaluator.entries()
        result = SearchResult(
            constraints=constraints,
            winners=winners_for(evaluated, constraints),
            front=pareto_filter(evaluated),
            evaluated=evaluated,
            history=history,
            evaluations=evaluator.evaluations,
        )
        print_info(f"Search evaluated {evaluator.evaluations} configs; front has {len(result.front)} entries")
        return result


def evolve(
    model: SupernetModel,
    utterances: Sequence[Utterance],
    params: SearchParams,
    space: Optional[SearchSpace] = None,
    config: Optional[Config] = None,
) -> SearchResult:
    """Functional entry point for :class:`EvolutionarySearch`."""
    return EvolutionarySearch(model, config, params, space).run(utterances)


def exhaustive_search(
    model: SupernetModel,
    utterances: Sequence[Utterance],
    params: Optional[SearchParams] = None,
    space: Optional[SearchSpace] = None,
) -> List[ParetoEntry]:
    """Pareto front over every config of ``space``.

    Raises:
        ContractError: If the space exceeds ``params.exhaustive_cap``
    """
    params = params or SearchParams()
    space = space or model.space
    n_configs = space.size()
    if n_configs > params.exhaustive_cap:
        raise ContractError(
            f"search space has {n_configs:,} configs, above the exhaustive cap of {params.exhaustive_cap:,}"
        )
    evaluator = FitnessEvaluator(
        model,
        utterances,
        params.fitness_decoder,
        params.beam_size,
        params.max_symbols_per_frame,
        params.workers,
        params.seed,
    )
    entries = evaluator.evaluate_many(list(space.enumerate_configs()))
    return pareto_filter(entries)


def rescore(
    model: SupernetModel,
    entries: Sequence[ParetoEntry],
    utterances: Sequence[Utterance],
    decoder: str = "beam5",
    params: Optional[SearchParams] = None,
) -> List[ParetoEntry]:
    """Re-evaluate ``entries`` with another decoder, preserving order."""
    params = params or SearchParams()
    evaluator = FitnessEvaluator(
        model,
        utterances,
        decoder,
        params.beam_size,
        params.max_symbols_per_frame,
        params.workers,
        params.seed,
    )
    return evaluator.evaluate_many([e.config for e in entries])
