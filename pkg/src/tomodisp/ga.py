"""Seeded bitstring genetic algorithm for illumination strategies."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .strategy import (CostBreakdown, IlluminationStrategy, StrategyProblem, _pick_best, batch_cost,
                       primitive_strategy)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaParams:
    population_size: int = 1000
    max_generations: int = 1000
    mutation_rate: Optional[float] = None  # per bit; None means 1/n
    crossover_probability: float = 0.9
    elitism: int = 2
    tournament_size: int = 4
    stall_generations: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be in [0, population_size)")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if not 0.0 <= self.crossover_probability <= 1.0:
            raise ValueError("crossover_probability must be in [0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")


@dataclass(frozen=True)
class GaResult:
    strategy: IlluminationStrategy
    cost: CostBreakdown
    trace: np.ndarray  # columns: generation, best cost, mean cost
    generations: int


def run_binary_ga(fitness: Callable[[np.ndarray], np.ndarray], n_bits: int, params: GaParams,
                  seeds: np.ndarray = None, repair: Callable[[np.ndarray], np.ndarray] = None):
    """Minimize ``fitness`` over {0,1}^n_bits.

    Tournament selection, uniform crossover, per-bit mutation and elitism.
    ``seeds`` rows are placed first in the initial population; the rest are
    random strings whose density is itself drawn uniformly. Returns the
    final population, its costs, and the per-generation trace.
    """
    rng = np.random.default_rng(params.rng_seed)
    pop_size = params.population_size
    mut = params.mutation_rate if params.mutation_rate is not None else 1.0 / n_bits
    repair = repair if repair is not None else (lambda p: p)

    density = rng.random((pop_size, 1))
    pop = (rng.random((pop_size, n_bits)) < density).astype(np.uint8)
    if seeds is not None:
        seeds = np.asarray(seeds, dtype=np.uint8)[:pop_size]
        pop[: len(seeds)] = seeds
    pop = repair(pop)
    costs = fitness(pop)

    trace = []
    best = float(costs.min())
    stall = 0
    gen = 0
    for gen in range(1, params.max_generations + 1):
        order = np.argsort(costs, kind="stable")
        elite = pop[order[: params.elitism]]
        n_children = pop_size - params.elitism
        n_pairs = (n_children + 1) // 2

        contenders = rng.integers(0, pop_size, size=(2 * n_pairs, params.tournament_size))
        winners = contenders[np.arange(2 * n_pairs), np.argmin(costs[contenders], axis=1)]
        mothers = pop[winners[0::2]]
        fathers = pop[winners[1::2]]

        cross = rng.random(n_pairs) < params.crossover_probability
        mask = (rng.random((n_pairs, n_bits)) < 0.5) & cross[:, None]
        child_a = np.where(mask, fathers, mothers)
        child_b = np.where(mask, mothers, fathers)
        children = np.concatenate([child_a, child_b])[:n_children]

        flips = rng.random(children.shape) < mut
        children = np.where(flips, 1 - children, children).astype(np.uint8)
        children = repair(children)

        pop = np.concatenate([elite, children])
        costs = fitness(pop)

        gen_best = float(costs.min())
        trace.append((gen, gen_best, float(costs.mean())))
        if gen_best < best:
            best = gen_best
            stall = 0
        else:
            stall += 1
        if params.stall_generations is not None and stall >= params.stall_generations:
            break
    return pop, costs, np.array(trace, dtype=float).reshape(-1, 3), gen


def optimize_ga(problem: StrategyProblem, params: GaParams = GaParams()) -> GaResult:
    """Best-of-run strategy for one target depth.

    The initial population holds the primitive strategy and the all-ones
    string, so the returned cost never exceeds the primitive cost.
    All-zero children are repaired by switching on the primitive bit.
    """
    n = problem.n
    primitive = primitive_strategy(problem).bits
    seeds = np.stack([primitive, np.ones(n, dtype=np.uint8)])

    def repair(p):
        empty = p.sum(axis=1) == 0
        if np.any(empty):
            p = p.copy()
            p[empty] = primitive
        return p

    pop, costs, trace, gens = run_binary_ga(lambda p: batch_cost(p, problem), n, params, seeds, repair)
    best = float(costs.min())
    tol = 1e-9 * max(1.0, abs(best))
    candidates = np.unique(pop[costs <= best + tol], axis=0)
    strategy, breakdown = _pick_best(candidates, problem)
    log.debug("GA z_d=%.5f D: cost %.6g after %d generations", problem.target_depth, breakdown.total, gens)
    return GaResult(strategy, breakdown, trace, gens)
