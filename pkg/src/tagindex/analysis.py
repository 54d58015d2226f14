"""Offline analytics over corpora, index snapshots and simulation results."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import derive_considered_tags
from .index import SnapshotRow, parse_snapshot

AVG_URL_BYTES = 73


class InsufficientData(ValueError):
    pass


def count_list_entries(tag_sets: Iterable[Iterable[str]], s_max: int, t_max: int) -> int:
    """Posting entries generated by all keys of up to ``s_max`` considered tags."""
    total = 0
    for tags in tag_sets:
        n = min(len(set(tags)), t_max)
        total += sum(comb(n, i) for i in range(1, min(n, s_max) + 1))
    return total


def estimate_storage_bytes(entry_count: int, avg_entry_bytes: float = AVG_URL_BYTES) -> float:
    if entry_count < 0:
        raise ValueError("entry_count must be >= 0")
    return entry_count * avg_entry_bytes


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    beta: float
    r_squared: float
    n_points: int

    def __call__(self, x):
        return self.alpha * np.asarray(x, dtype=float) ** (-self.beta)


def fit_power_law(points: Iterable[Tuple[float, float]]) -> PowerLawFit:
    """Least squares of log(count) on log(x), over strictly positive pairs.

    The returned ``beta`` is the magnitude of the slope, so a decaying
    distribution ``alpha * x**-2`` reports ``beta == 2``.
    """
    xy = np.array([(x, y) for x, y in points if x > 0 and y > 0], dtype=float)
    if len(xy) < 3:
        raise InsufficientData(f"need >= 3 positive points, got {len(xy)}")
    lx, ly = np.log(xy[:, 0]), np.log(xy[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(float(np.exp(intercept)), float(abs(slope)), r2, len(xy))


def rank_frequency(counts: Mapping[Hashable, int]) -> List[Tuple[int, int]]:
    """``(rank, count)`` pairs, most frequent item at rank 1."""
    ordered = sorted(counts.values(), reverse=True)
    return [(i + 1, c) for i, c in enumerate(ordered) if c > 0]


def frequency_histogram(counts: Mapping[Hashable, int]) -> List[Tuple[int, int]]:
    """``(frequency, number of items with that frequency)`` pairs."""
    hist = Counter(c for c in counts.values() if c > 0)
    return sorted(hist.items())


def key_list_lengths(resources: Mapping[str, Iterable[str]], s_max: int, t_max: int
                     ) -> Dict[int, Counter]:
    """List length of every key of each size derivable from the corpus."""
    by_size: Dict[int, Counter] = {i: Counter() for i in range(1, s_max + 1)}
    for tags in resources.values():
        considered = sorted(derive_considered_tags(tags, t_max))
        for size in range(1, min(len(considered), s_max) + 1):
            by_size[size].update(combinations(considered, size))
    return by_size


def query_key_frequencies(queries: Iterable[Sequence[str]], s_max: int) -> Dict[int, Counter]:
    by_size: Dict[int, Counter] = {i: Counter() for i in range(1, s_max + 1)}
    for terms in queries:
        terms = sorted(set(terms))
        for size in range(1, min(len(terms), s_max) + 1):
            by_size[size].update(combinations(terms, size))
    return by_size


def extent_stats(snapshot, l_max: Optional[int] = None) -> dict:
    """List-length histogram, key counts per size and coverage below ``l_max``.

    ``snapshot`` is either snapshot text lines or parsed rows; only available
    keys are counted, by live list length.
    """
    rows = list(snapshot)
    if rows and not isinstance(rows[0], SnapshotRow):
        rows = list(parse_snapshot(rows))
    rows = [r for r in rows if r.state == "available"]
    lengths = [len(r.live) for r in rows]
    histogram = dict(sorted(Counter(lengths).items()))
    by_size = dict(sorted(Counter(len(r.key) for r in rows).items()))
    out = {"histogram": histogram, "keys_by_size": by_size, "keys": len(rows)}
    if l_max is not None:
        out["l_max"] = l_max
        out["coverage_pct"] = (100.0 * sum(1 for n in lengths if n <= l_max) / len(lengths)
                               if lengths else 100.0)
    return out


def result_overlap(run_stk: Mapping, run_mtk: Mapping) -> float:
    """Mean Jaccard overlap of per-query results, as a percentage."""
    if set(run_stk) != set(run_mtk):
        raise ValueError("result maps cover different queries")
    if not run_stk:
        return 100.0
    total = 0.0
    for q in run_stk:
        a, b = set(run_stk[q]), set(run_mtk[q])
        union = a | b
        total += 1.0 if not union else len(a & b) / len(union)
    return 100.0 * total / len(run_stk)


def tr_bound_check(s: int, r_max: int, measured_tr: int) -> dict:
    """Compare an incremental update's transfers with the worst-case bounds.

    ``published_bound`` is ``r_max * (s**2 + 3*s)``; ``derived_bound`` is the
    value the term-by-term summation actually yields, half of that.
    """
    if s < 2 or r_max < 0:
        raise ValueError("need s >= 2 and r_max >= 0")
    published = r_max * (s * s + 3 * s)
    derived = published // 2
    return {
        "s": s,
        "r_max": r_max,
        "measured_tr": measured_tr,
        "published_bound": published,
        "derived_bound": derived,
        "within_published": measured_tr <= published,
        "within_derived": measured_tr <= derived,
    }
