"""Sequential assignment of unit batches with past assignments frozen.

Each incoming batch is partitioned so that the balance criterion of the full
cumulative partition is as small as possible, holding all earlier labels
fixed. Only the very first batch is labeled at random; afterwards a unit's
treatment is simply its group's treatment, fixed at initialization.

Bandwidth handling per batch: by default the bandwidth (and the whole gram)
is recomputed because folding new data into the covariance estimate changes
every pairwise entry. With ``freeze_bandwidth=True`` the bandwidth stays at
its initial fit and only the new gram rows/columns are computed. With PCA
enabled the coordinate system itself is refreshed each batch, so bandwidth
and gram are refit on the transformed cumulative data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .bandwidth import BandwidthState, update_inverse
from .data import CovariateSet, Partition, balanced_sizes
from .errors import ConfigError, DimensionMismatchError
from .ga import GaConfig, evolve
from .kernel import KernelGram, compute_gram, criterion, extend_gram
from .pca import PcaState, PcaTarget, fit_pca, transform, update_pca

# Batches up to this size are assigned by exhaustive search, which makes the
# result the exact minimum over all admissible batch partitions.
EXHAUSTIVE_BATCH_LIMIT = 8

BALANCE_MODES = ("strict", "batch")


@dataclass(frozen=True, eq=False)
class OnlineState:
    """Everything needed to keep assigning batches: data, labels, fits, rng."""

    covariates: CovariateSet
    groups: np.ndarray
    group_count: int
    group_to_treatment: dict[int, int]
    bandwidth: BandwidthState
    gram: KernelGram
    config: GaConfig
    rng: np.random.Generator
    pca: PcaState | None = None
    freeze_bandwidth: bool = False
    balance: str = "strict"
    weight_override: float | None = None

    def __post_init__(self):
        groups = np.array(self.groups, dtype=np.int64, copy=True)
        groups.setflags(write=False)
        object.__setattr__(self, "groups", groups)
        if self.balance not in BALANCE_MODES:
            raise ConfigError(f"balance mode must be one of {BALANCE_MODES}")
        if sorted(self.group_to_treatment) != list(range(1, self.group_count + 1)) or sorted(
            self.group_to_treatment.values()
        ) != list(range(1, self.group_count + 1)):
            raise ConfigError("group_to_treatment must be a bijection on 1..group_count")

    @property
    def partition(self) -> Partition:
        return Partition(self.groups, self.group_count)

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return self.partition.sizes

    def treatments(self) -> dict[str, int]:
        """Treatment label per assigned unit id."""
        return {
            uid: self.group_to_treatment[int(g)]
            for uid, g in zip(self.covariates.unit_ids, self.groups)
        }


def _criterion_coordinates(
    covariates: CovariateSet, pca: PcaState | None
) -> CovariateSet:
    return transform(pca, covariates) if pca is not None else covariates


def init_online(
    first_batch: CovariateSet,
    group_count: int,
    config: GaConfig,
    rng: np.random.Generator | int,
    pca_target: PcaTarget | None = None,
    freeze_bandwidth: bool = False,
    balance: str = "strict",
    weight_override: float | None = None,
) -> tuple[OnlineState, dict[str, int]]:
    """Randomly label the first batch and set up bandwidth/PCA/gram state.

    Groups are mapped to treatment labels by a random bijection fixed here
    for the rest of the experiment.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if first_batch.n < group_count:
        raise ConfigError(
            f"first batch has {first_batch.n} units, need at least {group_count}"
        )
    if group_count < 2:
        raise ConfigError("need at least 2 groups")
    sizes = balanced_sizes(first_batch.n, group_count)
    sizes = tuple(sizes[k] for k in rng.permutation(group_count))
    partition = Partition.random_balanced(first_batch.n, group_count, rng, sizes)
    treatment_map = {
        l + 1: int(t) for l, t in enumerate(rng.permutation(group_count) + 1)
    }
    pca = fit_pca(first_batch, pca_target) if pca_target is not None else None
    coords = _criterion_coordinates(first_batch, pca)
    bandwidth = BandwidthState.from_data(coords, weight_override)
    gram = compute_gram(coords, bandwidth)
    state = OnlineState(
        covariates=first_batch,
        groups=partition.groups,
        group_count=group_count,
        group_to_treatment=treatment_map,
        bandwidth=bandwidth,
        gram=gram,
        config=config,
        rng=rng,
        pca=pca,
        freeze_bandwidth=freeze_bandwidth,
        balance=balance,
        weight_override=weight_override,
    )
    return state, state.treatments()


def admissible_profiles(
    current_sizes: tuple[int, ...], batch_size: int, mode: str = "strict"
) -> list[tuple[int, ...]]:
    """Per-group counts a batch may take.

    ``strict`` keeps cumulative sizes within a spread of one whenever some
    completion can (all minimal completions are returned when the remainder
    leaves a choice); when past sizes are too lopsided for that, new units
    are poured greedily into the smallest groups. ``batch`` balances within
    the batch alone.
    """
    count = len(current_sizes)
    if batch_size < 1:
        raise ConfigError("batch must contain at least one unit")
    if mode == "batch":
        base, extras = divmod(batch_size, count)
        if extras == 0:
            return [(base,) * count]
        return [
            tuple(base + (1 if l in chosen else 0) for l in range(count))
            for chosen in combinations(range(count), extras)
        ]
    if mode != "strict":
        raise ConfigError(f"balance mode must be one of {BALANCE_MODES}")
    total = sum(current_sizes) + batch_size
    base, rem = divmod(total, count)
    forced = [l for l in range(count) if current_sizes[l] == base + 1]
    feasible = all(c <= base + 1 for c in current_sizes) and len(forced) <= rem
    if feasible:
        open_slots = [l for l in range(count) if current_sizes[l] <= base]
        profiles = []
        for chosen in combinations(open_slots, rem - len(forced)):
            plus_one = set(forced) | set(chosen)
            final = [base + (1 if l in plus_one else 0) for l in range(count)]
            profiles.append(tuple(final[l] - current_sizes[l] for l in range(count)))
        return profiles
    # Past imbalance too large for a spread-1 completion: greedy waterfill.
    sizes = list(current_sizes)
    added = [0] * count
    for _ in range(batch_size):
        l = min(range(count), key=lambda k: (sizes[k], k))
        sizes[l] += 1
        added[l] += 1
    return [tuple(added)]


def _enumerate_labelings(batch_size: int, profile: tuple[int, ...]):
    """All label vectors over the batch with the given per-group counts."""
    labels = np.zeros(batch_size, dtype=np.int64)

    def fill(positions: tuple[int, ...], group: int):
        if group > len(profile):
            yield labels.copy()
            return
        take = profile[group - 1]
        for chosen in combinations(positions, take):
            labels[list(chosen)] = group
            remaining = tuple(pos for pos in positions if pos not in chosen)
            yield from fill(remaining, group + 1)

    yield from fill(tuple(range(batch_size)), 1)


def _batch_to_full(old_groups: np.ndarray, batch_labels: np.ndarray, count: int) -> Partition:
    return Partition(np.concatenate([old_groups, batch_labels]), count)


def _search_profile_ga(
    state: OnlineState,
    gram: KernelGram,
    profile: tuple[int, ...],
    batch_size: int,
) -> tuple[float, np.ndarray]:
    """GA over batch labelings with fixed per-group counts."""
    active = [l for l in range(1, state.group_count + 1) if profile[l - 1] > 0]
    if len(active) == 1:
        labels = np.full(batch_size, active[0], dtype=np.int64)
        return criterion(gram, _batch_to_full(state.groups, labels, state.group_count)), labels
    compact_sizes = tuple(profile[l - 1] for l in active)
    lut = np.array([0] + active, dtype=np.int64)

    def fitness(batch_partition: Partition) -> float:
        labels = lut[batch_partition.groups]
        return criterion(gram, _batch_to_full(state.groups, labels, state.group_count))

    members = [
        Partition.random_balanced(batch_size, len(active), state.rng, compact_sizes)
        for _ in range(state.config.population_size)
    ]
    result = evolve(members, fitness, state.config, state.rng)
    return result.value, lut[result.partition.groups]


def assign_batch(
    state: OnlineState, batch: CovariateSet
) -> tuple[OnlineState, dict[str, int]]:
    """Label a batch to minimize the cumulative criterion; past labels fixed.

    Batches of up to ``EXHAUSTIVE_BATCH_LIMIT`` units are assigned by
    exhaustive enumeration over every admissible labeling, larger ones by
    the genetic search run once per admissible count profile.
    """
    if batch.n == 0:
        raise ConfigError("batch must contain at least one unit")
    if batch.p != state.covariates.p:
        raise DimensionMismatchError(
            f"batch has p={batch.p}, experiment has p={state.covariates.p}"
        )
    merged = state.covariates.concat(batch)

    pca = state.pca
    if pca is not None:
        pca = update_pca(pca, batch)
        coords = _criterion_coordinates(merged, pca)
        bandwidth = BandwidthState.from_data(coords, state.weight_override)
        gram = compute_gram(coords, bandwidth)
    elif state.freeze_bandwidth:
        bandwidth = state.bandwidth
        gram = extend_gram(state.gram, state.covariates, batch, bandwidth)
    else:
        bandwidth = update_inverse(state.bandwidth, batch)
        gram = compute_gram(merged, bandwidth)

    profiles = admissible_profiles(state.group_sizes, batch.n, state.balance)
    best_value, best_labels = np.inf, None
    if batch.n <= EXHAUSTIVE_BATCH_LIMIT:
        for profile in profiles:
            for labels in _enumerate_labelings(batch.n, profile):
                value = criterion(
                    gram, _batch_to_full(state.groups, labels, state.group_count)
                )
                if value < best_value:
                    best_value, best_labels = value, labels
    else:
        for profile in profiles:
            value, labels = _search_profile_ga(state, gram, profile, batch.n)
            if value < best_value:
                best_value, best_labels = value, labels

    new_groups = np.concatenate([state.groups, best_labels])
    new_state = replace(
        state,
        covariates=merged,
        groups=new_groups,
        bandwidth=bandwidth,
        gram=gram,
        pca=pca,
    )
    assignments = {
        uid: new_state.group_to_treatment[int(g)]
        for uid, g in zip(batch.unit_ids, best_labels)
    }
    return new_state, assignments
