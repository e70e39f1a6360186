"""Elitist genetic search for the partition minimizing the balance criterion.

One generation keeps the ``elite_count`` fittest partitions unchanged, then
fills the population with children: parents are drawn by size-2 tournaments,
crossed over with a permutation-prefix exchange that preserves group sizes,
and every child is mutated by one cross-group swap.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Partition, balanced_sizes
from .errors import ConfigError
from .kernel import KernelGram, criterion


@dataclass(frozen=True)
class GaConfig:
    """Search budget and reproducibility knobs.

    ``population_size - elite_count`` must be even (children come in pairs).
    ``group_sizes=None`` means the near-equal split. ``stall_window`` enables
    optional early stopping after that many generations without improvement;
    by default the search always runs ``max_generations`` generations.
    """

    population_size: int = 100
    elite_count: int = 20
    max_generations: int = 300
    seed: int = 0
    group_sizes: tuple[int, ...] | None = None
    stall_window: int | None = None

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if not 0 <= self.elite_count < self.population_size:
            raise ConfigError("elite_count must satisfy 0 <= elites < population")
        if (self.population_size - self.elite_count) % 2 != 0:
            raise ConfigError("population_size - elite_count must be even")
        if self.max_generations < 0:
            raise ConfigError("max_generations must be >= 0")
        if self.stall_window is not None and self.stall_window < 1:
            raise ConfigError("stall_window must be >= 1 when set")
        if self.group_sizes is not None and any(s < 1 for s in self.group_sizes):
            raise ConfigError("explicit group sizes must be positive")

    @staticmethod
    def scaled(n_units: int, seed: int = 0, **overrides) -> "GaConfig":
        """Defaults grown with the unit count: population 100/150/200 and
        generations 200/300/500 by size band, elites 20% (parity adjusted)."""
        population = 100 if n_units <= 400 else 150 if n_units <= 1500 else 200
        generations = 200 if n_units <= 100 else 300 if n_units <= 600 else 500
        elites = population // 5
        if (population - elites) % 2 != 0:
            elites += 1
        base = GaConfig(
            population_size=population,
            elite_count=elites,
            max_generations=generations,
            seed=seed,
        )
        return replace(base, **overrides) if overrides else base

    def resolve_sizes(self, n_units: int, group_count: int) -> tuple[int, ...]:
        if self.group_sizes is None:
            return balanced_sizes(n_units, group_count)
        if len(self.group_sizes) != group_count:
            raise ConfigError(
                f"{len(self.group_sizes)} group sizes configured for {group_count} groups"
            )
        if sum(self.group_sizes) != n_units:
            raise ConfigError("configured group sizes must sum to the unit count")
        return self.group_sizes


@dataclass
class Population:
    """Candidate partitions with cached fitness, all sharing group sizes."""

    members: list[Partition]
    fitness: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.fitness))

    @property
    def best(self) -> tuple[Partition, float]:
        i = self.best_index
        return self.members[i], float(self.fitness[i])


def select_parent(population: Population, rng: np.random.Generator) -> Partition:
    """Size-2 tournament: two uniform draws, the fitter one wins."""
    if not population.members:
        raise ConfigError("cannot select from an empty population")
    size = len(population.members)
    i = int(rng.random() * size)
    j = int(rng.random() * size)
    fit_i, fit_j = population.fitness[i], population.fitness[j]
    if fit_i < fit_j:
        return population.members[i]
    if fit_j < fit_i:
        return population.members[j]
    return population.members[i if rng.random() < 0.5 else j]


def encode_permutation(partition: Partition) -> np.ndarray:
    """Block ordering: group-1 indices first (ascending), then group-2, ..."""
    cached = getattr(partition, "_perm", None)
    if cached is None:
        cached = np.concatenate(partition.members())
        object.__setattr__(partition, "_perm", cached)
    return cached


def _repair(child: np.ndarray, cut: int, universe: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Replace suffix values duplicating the imported prefix by the absent ones."""
    prefix_values = set(child[:cut].tolist())
    duplicate_positions = [
        pos for pos in range(cut, child.size) if int(child[pos]) in prefix_values
    ]
    if not duplicate_positions:
        return child
    present = set(child.tolist())
    missing = [int(v) for v in universe.tolist() if int(v) not in present]
    if len(missing) > 1:
        missing = [missing[k] for k in rng.permutation(len(missing))]
    child = child.copy()
    for pos, value in zip(duplicate_positions, missing):
        child[pos] = value
    return child


def crossover_permutations(
    perm_a: np.ndarray,
    perm_b: np.ndarray,
    cut: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Exchange the first ``cut`` elements of two orderings, then repair.

    Each child keeps its imported prefix intact; duplicated values in its
    suffix are replaced left to right by the values it is missing, in random
    order when there is more than one.
    """
    perm_a = np.asarray(perm_a)
    perm_b = np.asarray(perm_b)
    n = perm_a.size
    if perm_b.size != n:
        raise ConfigError("orderings must have equal length")
    if not 1 < cut < n:
        raise ConfigError(f"cut point must satisfy 1 < cut < {n}")
    child_a = np.concatenate([perm_b[:cut], perm_a[cut:]])
    child_b = np.concatenate([perm_a[:cut], perm_b[cut:]])
    return _repair(child_a, cut, perm_a, rng), _repair(child_b, cut, perm_b, rng)


def crossover(
    parent_a: Partition, parent_b: Partition, rng: np.random.Generator
) -> tuple[Partition, Partition]:
    """Two children sharing the parents' group sizes.

    Parents are encoded as block orderings, prefixes of a uniform random
    length in (1, n) are exchanged, duplicates repaired, and the orderings
    decoded back to partitions. Parents of 2 units have no admissible cut
    and are returned unchanged.
    """
    if parent_a.n != parent_b.n or parent_a.group_count != parent_b.group_count:
        raise ConfigError("parents must cover the same units and group count")
    if parent_a.sizes != parent_b.sizes:
        raise ConfigError("parents must share group sizes")
    if parent_a.n <= 2:
        return parent_a, parent_b
    cut = 2 + int(rng.random() * (parent_a.n - 2))
    child_a, child_b = crossover_permutations(
        encode_permutation(parent_a), encode_permutation(parent_b), cut, rng
    )
    sizes = parent_a.sizes
    return (
        Partition.from_sizes_order(child_a, sizes),
        Partition.from_sizes_order(child_b, sizes),
    )


def mutate(child: Partition, rng: np.random.Generator) -> Partition:
    """Swap one unit from a random group with one from a different group."""
    count = child.group_count
    if count < 2:
        raise ConfigError("mutation needs at least 2 groups")
    members = child.members()
    group_a = 1 + int(rng.random() * count)
    other = 1 + int(rng.random() * (count - 1))
    group_b = other if other < group_a else other + 1
    idx_a = members[group_a - 1]
    idx_b = members[group_b - 1]
    unit_a = int(idx_a[int(rng.random() * idx_a.size)])
    unit_b = int(idx_b[int(rng.random() * idx_b.size)])
    groups = child.groups.copy()
    groups[unit_a], groups[unit_b] = groups[unit_b], groups[unit_a]
    return Partition._trusted(groups, count)


@dataclass(frozen=True, eq=False)
class OptimizeResult:
    partition: Partition
    value: float
    trace: tuple[float, ...]


def evolve(
    members: list[Partition],
    fitness_fn,
    config: GaConfig,
    rng: np.random.Generator,
) -> OptimizeResult:
    """Run the elitist generational loop on an initial population.

    Generic over the fitness function so the streaming assigner can score
    batch partitions against the full cumulative criterion.
    """
    if len(members) != config.population_size:
        raise ConfigError("initial population size does not match the config")
    population = Population(members, np.array([fitness_fn(m) for m in members]))
    best_partition, best_value = population.best
    trace = [best_value]
    stall = 0
    pair_count = (config.population_size - config.elite_count) // 2
    for _ in range(config.max_generations):
        order = np.argsort(population.fitness, kind="stable")
        new_members = [population.members[i] for i in order[: config.elite_count]]
        new_fitness = [float(population.fitness[i]) for i in order[: config.elite_count]]
        for _ in range(pair_count):
            parent_a = select_parent(population, rng)
            parent_b = select_parent(population, rng)
            for child in crossover(parent_a, parent_b, rng):
                mutated = mutate(child, rng)
                new_members.append(mutated)
                new_fitness.append(fitness_fn(mutated))
        population = Population(new_members, np.asarray(new_fitness))
        candidate, value = population.best
        if value < best_value:
            best_partition, best_value = candidate, value
            stall = 0
        else:
            stall += 1
        trace.append(best_value)
        if config.stall_window is not None and stall >= config.stall_window:
            break
    return OptimizeResult(best_partition, best_value, tuple(trace))


def optimize(
    gram: KernelGram,
    group_count: int,
    config: GaConfig,
    rng: np.random.Generator | None = None,
) -> OptimizeResult:
    """Best balanced partition found within the configured budget.

    Deterministic for a fixed seed; ``trace`` holds the best criterion value
    at the initial population and after each generation (non-increasing).
    Passing ``rng`` explicitly (e.g. from a streaming assignment state)
    overrides ``config.seed``.
    """
    if group_count < 2:
        raise ConfigError("need at least 2 groups")
    if gram.n < group_count:
        raise ConfigError(f"cannot split {gram.n} units into {group_count} groups")
    sizes = config.resolve_sizes(gram.n, group_count)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    members = [
        Partition.random_balanced(gram.n, group_count, rng, sizes)
        for _ in range(config.population_size)
    ]
    return evolve(members, lambda part: criterion(gram, part), config, rng)
