"""Fixed-budget exemplar memory.

The budget is counted in stored scalars: a real sample of dimension d costs
d units, its code costs ``len(code.payload)`` units. New-class exemplars are
the top of a distance-to-class-mean ranking; room is made by dropping the
bottom-ranked exemplar of the largest class (lowest class id on ties).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from memcil.codec import Codec
from memcil.errors import (BudgetOverflowError, ConfigError, EmptyClassError, IntegrityError,
                           StateError)


TIE_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class HerdingRank:
    class_id: int
    ordered_indices: np.ndarray
    distances: np.ndarray  # distance of each ranked sample, in ranked order


def rank_by_herding(features, class_id) -> HerdingRank:
    """Order a class's samples by ascending distance to the class mean.

    Ties keep the original index order. Distances that differ only by
    rounding (within ``TIE_TOLERANCE`` of the largest distance) count as ties,
    so e.g. two points placed symmetrically about the mean rank by index;
    a tie group reports its smallest distance.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if len(f) == 0:
        raise EmptyClassError(f"class {class_id} has no samples to rank")
    dist = np.linalg.norm(f - f.mean(axis=0), axis=1)
    order = np.argsort(dist, kind="stable")
    ranked = dist[order]
    tol = TIE_TOLERANCE * ranked[-1]
    start = 0
    for i in range(1, len(order) + 1):
        if i == len(order) or ranked[i] - ranked[start] > tol:
            order[start:i] = np.sort(order[start:i])
            ranked[start:i] = ranked[start]
            start = i
    return HerdingRank(int(class_id), order, ranked)


def capacity(budget_units, r, unit_sample_size):
    """How many codes of cost ratio ``r`` fit into ``budget_units``."""
    r = Fraction(r)
    if not 0 < r <= 1:
        raise ConfigError(f"cost ratio must lie in (0, 1], got {r}")
    return math.floor(Fraction(budget_units) / (r * unit_sample_size))


def memory_cost_ratio(exemplars_per_class, samples_per_class, r):
    """Kept-sample fraction times compression ratio, as an exact fraction."""
    return Fraction(exemplars_per_class, samples_per_class) * Fraction(r)


class MemoryBuffer:
    def __init__(self, budget_units):
        if budget_units < 0:
            raise ConfigError("budget must be non-negative")
        self.budget_units = int(budget_units)
        self.per_class: dict[int, list] = {}
        self.used_units = 0
        self.written = 0
        self.evicted = 0

    @property
    def free_units(self):
        return self.budget_units - self.used_units

    def counts(self):
        return {c: len(codes) for c, codes in sorted(self.per_class.items())}

    def __len__(self):
        return sum(len(codes) for codes in self.per_class.values())

    def classes(self):
        return sorted(self.per_class)

    def codec_ids(self):
        return sorted({code.codec_id for codes in self.per_class.values() for code in codes})

    def _freeable_units(self):
        return sum(len(code) for codes in self.per_class.values() for code in codes[1:])

    def evict_to_fit(self, needed_units):
        """Drop bottom-ranked exemplars until ``needed_units`` are free.

        Never empties a class below one exemplar; raises
        BudgetOverflowError (without evicting anything) if that is not enough.
        """
        if needed_units > self.budget_units:
            raise BudgetOverflowError(f"{needed_units} units requested, budget is {self.budget_units}")
        if self.free_units >= needed_units:
            return
        if self.free_units + self._freeable_units() < needed_units:
            raise BudgetOverflowError(
                f"cannot free {needed_units} units: {self.free_units} free, "
                f"{self._freeable_units()} evictable")
        while self.free_units < needed_units:
            victim = min((c for c, codes in self.per_class.items() if len(codes) > 1),
                         key=lambda c: (-len(self.per_class[c]), c))
            code = self.per_class[victim].pop()
            self.used_units -= len(code)
            self.evicted += 1

    def write_new_class(self, class_id, ranked_codes, k):
        """Store the first ``k`` of ``ranked_codes`` (already in herding order)."""
        if k < 0 or k > len(ranked_codes):
            raise ConfigError(f"k={k} outside 0..{len(ranked_codes)}")
        if k == 0:
            return
        class_id = int(class_id)
        if class_id in self.per_class:
            raise StateError(f"class {class_id} is already in memory")
        chosen = list(ranked_codes[:k])
        if any(code.label != class_id for code in chosen):
            raise IntegrityError(f"codes for class {class_id} carry other labels")
        needed = sum(len(code) for code in chosen)
        self.evict_to_fit(needed)
        self.per_class[class_id] = chosen
        self.used_units += needed
        self.written += k

    def read_all(self, codecs):
        """Decode every stored code; returns ``(x_hat, labels)`` arrays.

        ``codecs`` is one Codec or a mapping codec_id -> Codec; each code is
        decoded by the codec version that wrote it.
        """
        if isinstance(codecs, Codec):
            codecs = {codecs.codec_id: codecs}
        xs, ys = [], []
        for c in self.classes():
            for code in self.per_class[c]:
                codec = codecs.get(code.codec_id)
                if codec is None:
                    raise IntegrityError(f"no codec {code.codec_id} to decode class {c}")
                xs.append(codec.decode(code))
                ys.append(code.label)
        if not xs:
            return np.empty((0, 0)), np.empty(0, dtype=np.int64)
        return np.vstack(xs), np.asarray(ys, dtype=np.int64)

    def __repr__(self):
        return f"MemoryBuffer(used={self.used_units}/{self.budget_units}, counts={self.counts()})"


def write_new_class(buffer, class_id, ranked_codes, k):
    buffer.write_new_class(class_id, ranked_codes, k)
    return buffer


def evict_to_fit(buffer, needed_units):
    buffer.evict_to_fit(needed_units)
    return buffer


def read_all(buffer, codecs):
    return buffer.read_all(codecs)
