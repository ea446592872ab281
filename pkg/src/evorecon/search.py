"""Genetic search over genomes.

Each generation fills ``population_size`` slots.  For slot ``i`` two parents
are drawn by independent with-replacement tournaments on the current
population; with probability ``crossover_rate`` they produce two offspring by
single-point crossover, and with probability ``mutation_rate`` parent A is
mutated.  The slot keeps whichever of {parent A, offspring, mutant} has the
highest fitness, parent first on ties.

Every random choice comes from a generator seeded by
``(run seed, generation, slot)`` so that results do not depend on evaluation
order, parallelism, or interruption.  Progress is checkpointed after every
slot.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import genome as gn
from .errors import IntegrityError
from .genome import Genome
from .phenotype import ArchGraph, TensorShape, compile_genome, graph_digest, structurally_equal
from .trainer import TrainConfig, fitness, train

log = logging.getLogger(__name__)

_INIT_STREAM = 0
_SLOT_STREAM = 1


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 50
    generations: int = 30
    tournament_size: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = ""
    plateau_window: int = 3
    plateau_boost: float = 2.0
    mutation_cap: float = 0.5
    early_stop_gens: int = 5
    mutate_offspring: bool = False
    jobs: int = 1
    verify_cache: bool = False

    def __post_init__(self):
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError("population_size must be even and >= 2")
        for name in ("crossover_rate", "mutation_rate", "mutation_cap"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")

    def echo(self) -> dict:
        """Settings that determine the lineage (jobs and dataset path excluded)."""
        d = asdict(self)
        d.pop("jobs")
        d.pop("dataset")
        return d


@dataclass
class Individual:
    genome: Genome
    decode_seed: int
    digest: str
    fitness: float | None = None
    val_mse: float | None = None
    params: dict | None = field(default=None, repr=False)

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


@dataclass(frozen=True)
class Evaluation:
    val_mse: float
    diverged: bool = False
    params: dict | None = field(default=None, repr=False)


@dataclass(frozen=True)
class SlotRecord:
    generation: int
    slot: int
    parent_a: int
    parent_b: int
    crossover_point: int | None
    mutated: bool
    fv_parent: float
    fv_offspring1: float | None
    fv_offspring2: float | None
    fv_mutant: float | None
    survivor_fv: float
    survivor_digest: str

    def line(self) -> str:
        def f(v):
            return "-" if v is None else repr(float(v))
        xp = "-" if self.crossover_point is None else str(self.crossover_point)
        cols = [str(self.generation), str(self.slot), str(self.parent_a), str(self.parent_b),
                xp, "1" if self.mutated else "0", f(self.fv_parent), f(self.fv_offspring1),
                f(self.fv_offspring2), f(self.fv_mutant), self.survivor_digest]
        return "\t".join(cols)

    def candidate_fvs(self) -> list[float]:
        vals = [self.fv_parent, self.fv_offspring1, self.fv_offspring2, self.fv_mutant]
        return [v for v in vals if v is not None]


LINEAGE_HEADER = ("# gen\tslot\tparentA\tparentB\txpoint\tmutated\tfv_parent\tfv_o1\tfv_o2"
                  "\tfv_mut\tsurvivor_digest")


@dataclass(frozen=True)
class GenerationRecord:
    generation: int  # -1 for the initial population
    entries: tuple[SlotRecord, ...]
    best_fv: float
    mean_fv: float
    mutation_rate: float


def lineage_text(records) -> str:
    return "\n".join([LINEAGE_HEADER] + [r.line() for r in records]) + "\n"


def lineage_digest(records) -> str:
    return hashlib.sha256(lineage_text(records).encode("utf-8")).hexdigest()


# -- evaluation ---------------------------------------------------------------

class TrainingEvaluator:
    """Compile-train-validate; the default fitness oracle."""

    def __init__(self, dataset, train_cfg: TrainConfig):
        self.dataset = dataset
        self.train_cfg = train_cfg

    def __call__(self, graph: ArchGraph, genome: Genome) -> Evaluation:
        result = train(graph, self.dataset, self.train_cfg, optimizer=genome.g11)
        return Evaluation(result.best_val_mse, result.diverged, result.params)


_worker_evaluator = None


def _worker_init(evaluator):
    global _worker_evaluator
    _worker_evaluator = evaluator


def _safe_eval(evaluator, graph, genome) -> Evaluation:
    """Run one evaluation; a failure scores FV = 0 instead of aborting the slot."""
    evaluator = evaluator or _worker_evaluator
    try:
        return evaluator(graph, genome)
    except (ArithmeticError, ValueError, MemoryError) as exc:
        log.warning("evaluation of %s failed: %s", graph_digest(graph), exc)
        return Evaluation(float("inf"), diverged=True)


def derive_decode_seed(run_seed: int, genome: Genome) -> int:
    """Decode seed as a function of the genome, so equal genomes decode equally."""
    h = hashlib.blake2b(f"{run_seed}\n{gn.to_text(genome)}".encode("utf-8"), digest_size=4)
    return int.from_bytes(h.digest(), "little")


def tournament_index(population, k: int, rng: np.random.Generator) -> int:
    """Index of the fittest of ``k`` draws with replacement (lowest index on ties)."""
    draws = rng.integers(0, len(population), size=k)
    return int(min(draws, key=lambda i: (-population[i].fitness, i)))


def tournament_select(population, k: int, rng: np.random.Generator) -> Individual:
    return population[tournament_index(population, k, rng)]


@dataclass
class SlotPlan:
    slot: int
    parent_a: int
    parent_b: int
    crossover_point: int | None
    offspring: tuple[Individual, ...]
    mutant: Individual | None


# -- state ----------------------------------------------------------------------

@dataclass
class SearchState:
    config: dict
    generation: int = 0
    slot: int = 0
    population: list[Individual] = field(default_factory=list)
    next_population: list[Individual] = field(default_factory=list)
    records: list[SlotRecord] = field(default_factory=list)
    history: list[GenerationRecord] = field(default_factory=list)
    best_fv: float = 0.0
    stale: int = 0
    done: bool = False
    cache: dict[tuple, Evaluation] = field(default_factory=dict)


class SearchInterrupted(Exception):
    """Raised when ``stop_after_slots`` is reached; carries the live state."""

    def __init__(self, state: SearchState):
        super().__init__(f"interrupted at generation {state.generation}, slot {state.slot}")
        self.state = state


@dataclass
class SearchResult:
    best: Individual
    records: list[SlotRecord]
    history: list[GenerationRecord]
    state: SearchState

    @property
    def lineage(self) -> str:
        return lineage_text(self.records)


class _Search:
    def __init__(self, cfg: SearchConfig, dataset, evaluator, input_shape):
        self.cfg = cfg
        self.dataset = dataset
        self.evaluator = evaluator
        self.input_shape = input_shape
        self.graphs: dict[tuple, ArchGraph] = {}
        self.best_params: tuple[tuple, dict] | None = None
        self.pool = None

    # individuals

    def make(self, genome: Genome) -> tuple[Individual, ArchGraph]:
        seed = derive_decode_seed(self.cfg.seed, genome)
        graph = compile_genome(genome, self.input_shape, seed)
        return Individual(genome, seed, graph_digest(graph)), graph

    def key(self, ind: Individual) -> tuple:
        return (ind.digest, ind.genome.g11, self.cfg.train.seed)

    def evaluate_all(self, state: SearchState, pending: list[tuple[Individual, ArchGraph]]):
        """Evaluate every not-yet-cached candidate, then fill in fitness values."""
        todo = {}
        for ind, graph in pending:
            k = self.key(ind)
            if k in state.cache:
                if self.cfg.verify_cache and k in self.graphs:
                    if not structurally_equal(self.graphs[k], graph):
                        raise AssertionError(f"fitness cache collision on {ind.digest}")
                continue
            todo.setdefault(k, (graph, ind.genome))
        if todo:
            keys = list(todo)
            if self.pool is not None:
                futures = [self.pool.submit(_safe_eval, None, *todo[k]) for k in keys]
                results = [f.result() for f in futures]
            else:
                results = [_safe_eval(self.evaluator, *todo[k]) for k in keys]
            for k, res in zip(keys, results):
                state.cache[k] = Evaluation(res.val_mse, res.diverged)
                if self.cfg.verify_cache:
                    self.graphs[k] = todo[k][0]
                fv = fitness(res.val_mse, res.diverged)
                if res.params is not None and (self.best_params is None
                                                or fv > self.best_params[0][1]):
                    self.best_params = ((k, fv), res.params)
        for ind, _ in pending:
            ev = state.cache[self.key(ind)]
            ind.val_mse = ev.val_mse
            ind.fitness = fitness(ev.val_mse, ev.diverged)

    # phases

    def initial_population(self, state: SearchState):
        cfg = self.cfg
        pending = []
        for i in range(cfg.population_size):
            rng = np.random.default_rng([cfg.seed, _INIT_STREAM, i])
            pending.append(self.make(gn.random_genome(rng)))
        self.evaluate_all(state, pending)
        state.population = [ind for ind, _ in pending]
        fvs = [ind.fitness for ind in state.population]
        state.best_fv = max(fvs)
        state.history.append(GenerationRecord(-1, (), max(fvs), float(np.mean(fvs)),
                                              cfg.mutation_rate))

    def mutation_rate(self, state: SearchState) -> float:
        cfg = self.cfg
        if state.stale >= cfg.plateau_window:
            return max(cfg.mutation_rate, min(cfg.mutation_cap, cfg.mutation_rate * cfg.plateau_boost))
        return cfg.mutation_rate

    def plan_slot(self, population, t: int, i: int, mu: float) -> tuple[SlotPlan, list]:
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, _SLOT_STREAM, t, i])
        ia = tournament_index(population, cfg.tournament_size, rng)
        ib = tournament_index(population, cfg.tournament_size, rng)
        do_cross = rng.random() < cfg.crossover_rate
        do_mut = rng.random() < mu
        a, b = population[ia], population[ib]
        point, offspring, pending = None, (), []
        if do_cross:
            point = int(rng.integers(1, gn.N_GENES))
            made = [self.make(child) for child in gn.crossover(a.genome, b.genome, point)]
            offspring = tuple(ind for ind, _ in made)
            pending.extend(made)
        mutant = None
        if do_mut:
            base = offspring[0].genome if (cfg.mutate_offspring and offspring) else a.genome
            mutant, graph = self.make(gn.mutate(base, rng))
            pending.append((mutant, graph))
        return SlotPlan(i, ia, ib, point, offspring, mutant), pending

    def finish_slot(self, state: SearchState, plan: SlotPlan, t: int) -> SlotRecord:
        parent = state.population[plan.parent_a]
        candidates = [parent, *plan.offspring]
        if plan.mutant is not None:
            candidates.append(plan.mutant)
        survivor = candidates[0]
        for cand in candidates[1:]:
            if cand.fitness > survivor.fitness:
                survivor = cand
        o1, o2 = (plan.offspring + (None, None))[:2]
        record = SlotRecord(
            t, plan.slot, plan.parent_a, plan.parent_b, plan.crossover_point,
            plan.mutant is not None, parent.fitness,
            None if o1 is None else o1.fitness, None if o2 is None else o2.fitness,
            None if plan.mutant is None else plan.mutant.fitness,
            survivor.fitness, survivor.digest)
        state.next_population.append(Individual(survivor.genome, survivor.decode_seed,
                                                survivor.digest, survivor.fitness,
                                                survivor.val_mse))
        state.records.append(record)
        state.slot += 1
        return record

    def end_generation(self, state: SearchState, mu: float):
        t = state.generation
        entries = tuple(r for r in state.records if r.generation == t)
        fvs = [ind.fitness for ind in state.next_population]
        best = max(fvs)
        state.history.append(GenerationRecord(t, entries, best, float(np.mean(fvs)), mu))
        if best > state.best_fv:
            state.best_fv, state.stale = best, 0
        else:
            state.stale += 1
        state.population = state.next_population
        state.next_population = []
        state.generation += 1
        state.slot = 0
        if state.stale >= self.cfg.early_stop_gens:
            state.done = True
        log.info("generation %d: best FV %.4g, mean FV %.4g", t, best, float(np.mean(fvs)))


def run_search(cfg: SearchConfig, dataset, *, state: SearchState | None = None,
               checkpoint_path=None, stop_after_slots: int | None = None,
               evaluator: Callable | None = None,
               input_shape: TensorShape | None = None) -> SearchResult:
    """Run (or resume) the genetic search.

    ``evaluator(graph, genome) -> Evaluation`` replaces compile-and-train
    fitness when given.  With ``stop_after_slots`` the run raises
    :class:`SearchInterrupted` after that many slots (a checkpoint has been
    written first if ``checkpoint_path`` is set).
    """
    if input_shape is None:
        h, w = dataset.image_shape
        input_shape = TensorShape(h, w, 1)
    if evaluator is None:
        evaluator = TrainingEvaluator(dataset, cfg.train)
    if state is None:
        state = SearchState(config=cfg.echo())
    elif state.config != cfg.echo():
        raise ValueError("checkpoint was written by a different search configuration")

    search = _Search(cfg, dataset, evaluator, input_shape)
    pool = None
    if cfg.jobs > 1:
        pool = ProcessPoolExecutor(cfg.jobs, initializer=_worker_init, initargs=(evaluator,))
        search.pool = pool
    slots_done = 0

    def save():
        if checkpoint_path is not None:
            checkpoint(state, checkpoint_path)

    try:
        if not state.population:
            search.initial_population(state)
            save()
        while state.generation < cfg.generations and not state.done:
            t = state.generation
            mu = search.mutation_rate(state)
            plans, pending = [], []
            for i in range(state.slot, cfg.population_size):
                plan, todo = search.plan_slot(state.population, t, i, mu)
                plans.append(plan)
                pending.extend(todo)
            search.evaluate_all(state, pending)
            for plan in plans:
                search.finish_slot(state, plan, t)
                if state.slot == cfg.population_size:
                    search.end_generation(state, mu)
                save()
                slots_done += 1
                if stop_after_slots is not None and slots_done >= stop_after_slots:
                    raise SearchInterrupted(state)
    finally:
        if pool is not None:
            pool.shutdown()

    best = max(enumerate(state.population), key=lambda p: (p[1].fitness, -p[0]))[1]
    key = search.key(best)
    if search.best_params is not None and search.best_params[0][0] == key:
        best.params = search.best_params[1]
    else:
        # params were not retained (resumed run, or the winner was evicted
        # from the tracker by a fitter individual that later died out)
        graph = compile_genome(best.genome, input_shape, best.decode_seed)
        best.params = evaluator(graph, best.genome).params
    return SearchResult(best, state.records, state.history, state)


def best_graph(result: SearchResult, input_shape: TensorShape) -> ArchGraph:
    return compile_genome(result.best.genome, input_shape, result.best.decode_seed)


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_MAGIC = b"EVCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sHQ32s")


def _ind_to_json(ind: Individual) -> dict:
    return {"genome": gn.to_text(ind.genome), "decode_seed": ind.decode_seed,
            "digest": ind.digest, "fitness": ind.fitness, "val_mse": ind.val_mse}


def _ind_from_json(d: dict) -> Individual:
    return Individual(gn.from_text(d["genome"]), d["decode_seed"], d["digest"],
                      d["fitness"], d["val_mse"])


def _record_from_json(d: dict) -> SlotRecord:
    return SlotRecord(**d)


def state_to_json(state: SearchState) -> dict:
    return {
        "config": state.config,
        "generation": state.generation,
        "slot": state.slot,
        "population": [_ind_to_json(i) for i in state.population],
        "next_population": [_ind_to_json(i) for i in state.next_population],
        "records": [asdict(r) for r in state.records],
        "history": [{"generation": h.generation, "best_fv": h.best_fv, "mean_fv": h.mean_fv,
                     "mutation_rate": h.mutation_rate} for h in state.history],
        "best_fv": state.best_fv,
        "stale": state.stale,
        "done": state.done,
        "cache": [[list(k), v.val_mse, v.diverged] for k, v in state.cache.items()],
    }


def state_from_json(d: dict) -> SearchState:
    records = [_record_from_json(r) for r in d["records"]]
    history = [GenerationRecord(h["generation"],
                                tuple(r for r in records if r.generation == h["generation"]),
                                h["best_fv"], h["mean_fv"], h["mutation_rate"])
               for h in d["history"]]
    return SearchState(
        config=d["config"],
        generation=d["generation"],
        slot=d["slot"],
        population=[_ind_from_json(i) for i in d["population"]],
        next_population=[_ind_from_json(i) for i in d["next_population"]],
        records=records,
        history=history,
        best_fv=d["best_fv"],
        stale=d["stale"],
        done=d["done"],
        cache={tuple(k): Evaluation(v, bool(dv)) for k, v, dv in d["cache"]},
    )


def checkpoint(state: SearchState, path) -> Path:
    """Atomically write the search state (header + sha256-checked JSON)."""
    path = Path(path)
    payload = json.dumps(state_to_json(state), sort_keys=True).encode("utf-8")
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(payload),
                          hashlib.sha256(payload).digest())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def resume(path) -> SearchState:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise IntegrityError(f"{path}: truncated checkpoint header")
    magic, version, length, digest = _HEADER.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: not a search checkpoint")
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version}")
    payload = buf[_HEADER.size:]
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch")
    return state_from_json(json.loads(payload.decode("utf-8")))


def config_field_names() -> list[str]:
    return [f.name for f in fields(SearchConfig)]
