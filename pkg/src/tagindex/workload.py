"""Trace ingestion, query-log cleaning, vocabulary matching and synthetic
power-law workloads.

File formats (UTF-8, tab separated, one record per line):

* tag actions: ``<timestamp>\\t<+|->\\t<resource_id>\\t<tag>``
* query log:   ``<timestamp>\\t<user_id>\\t<space separated terms>``
* generator config: ``key = value`` lines; ``#`` starts a comment
"""

from __future__ import annotations

import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from importlib import resources as importlib_resources
from itertools import combinations
from math import comb
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .core import derive_considered_tags

# Delicious figures: all tag actions vs. additions only, per minute.
DELICIOUS_ACTIONS_PER_MINUTE = 66.74
DELICIOUS_ADDS_PER_MINUTE = 34.32

MAX_TERM_CHARS = 30
MAX_QUERY_CHARS = 100


@dataclass(frozen=True)
class TagActionRecord:
    timestamp: int
    action: str  # "add" | "delete"
    resource: str
    tag: str
    noop: bool = False


@dataclass(frozen=True)
class QueryRecord:
    timestamp: int
    user: str
    terms: Tuple[str, ...]


def _data_lines(name: str) -> List[str]:
    text = importlib_resources.files("tagindex").joinpath("data", name).read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def default_stopwords() -> FrozenSet[str]:
    return frozenset(_data_lines("stopwords_en.txt"))


def read_stopwords(lines: Iterable[str]) -> FrozenSet[str]:
    return frozenset(line.strip().lower() for line in lines if line.strip() and not line.startswith("#"))


_TLDS = frozenset(_data_lines("tlds.txt"))
_HOST_RE = re.compile(r"^([a-z0-9-]+\.)+([a-z]{2,})(:\d+)?(/.*)?$")


def is_url(term: str) -> bool:
    t = term.lower()
    if t.startswith(("http://", "https://", "www.")):
        return True
    m = _HOST_RE.match(t)
    return bool(m) and m.group(2) in _TLDS


def _has_alnum(term: str) -> bool:
    return any(ch.isalnum() for ch in term)


# -- tag datasets -------------------------------------------------------------

@dataclass
class LoadStats:
    lines: int = 0
    skipped: int = 0
    duplicates: int = 0


def load_tag_dataset(lines: Iterable[str]) -> Tuple[Dict[str, FrozenSet[str]], List[TagActionRecord], LoadStats]:
    """Parse a tag-action file.

    Returns the final tag set of every resource, the action trace in file
    order and parse statistics. Adding a tag the resource already carries (or
    deleting one it lacks) stays in the trace flagged as ``noop``.
    """
    stats = LoadStats()
    state: Dict[str, Set[str]] = defaultdict(set)
    actions: List[TagActionRecord] = []
    last_ts = None
    for raw in lines:
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        stats.lines += 1
        parts = line.split("\t")
        if len(parts) != 4 or parts[1] not in ("+", "-") or not parts[2] or not parts[3]:
            stats.skipped += 1
            continue
        try:
            ts = int(parts[0])
        except ValueError:
            stats.skipped += 1
            continue
        if ts < 0 or (last_ts is not None and ts < last_ts):
            stats.skipped += 1
            continue
        last_ts = ts
        rid, tag = parts[2], parts[3]
        action = "add" if parts[1] == "+" else "delete"
        tags = state[rid]
        noop = (tag in tags) if action == "add" else (tag not in tags)
        if noop:
            stats.duplicates += 1
        elif action == "add":
            tags.add(tag)
        else:
            tags.discard(tag)
        actions.append(TagActionRecord(ts, action, rid, tag, noop))
    resources = {rid: frozenset(tags) for rid, tags in state.items() if tags}
    return resources, actions, stats


def format_tag_actions(actions: Iterable[TagActionRecord]) -> str:
    return "".join(
        f"{a.timestamp}\t{'+' if a.action == 'add' else '-'}\t{a.resource}\t{a.tag}\n" for a in actions
    )


# -- query logs ---------------------------------------------------------------

def parse_query_line(line: str) -> Optional[QueryRecord]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        return None
    try:
        ts = int(parts[0])
    except ValueError:
        return None
    return QueryRecord(ts, parts[1], tuple(parts[2].split()))


def read_query_trace(lines: Iterable[str]) -> Tuple[List[QueryRecord], int]:
    records, skipped = [], 0
    for line in lines:
        if not line.strip():
            continue
        rec = parse_query_line(line)
        if rec is None or not rec.terms:
            skipped += 1
        else:
            records.append(rec)
    return records, skipped


def format_queries(records: Iterable[QueryRecord]) -> str:
    return "".join(f"{r.timestamp}\t{r.user}\t{' '.join(r.terms)}\n" for r in records)


CLEANING_STEPS = (
    "stopwords",
    "url_only_queries",
    "non_alphanumeric_terms",
    "long_terms",
    "long_queries",
    "empty_queries",
)


@dataclass
class CleaningStats:
    lines: int = 0
    unreadable: int = 0
    kept: int = 0
    terms_removed: Dict[str, int] = field(default_factory=lambda: {s: 0 for s in CLEANING_STEPS})
    queries_removed: Dict[str, int] = field(default_factory=lambda: {s: 0 for s in CLEANING_STEPS})

    def as_dict(self) -> dict:
        return {
            "lines": self.lines,
            "unreadable": self.unreadable,
            "kept": self.kept,
            "terms_removed": dict(self.terms_removed),
            "queries_removed": dict(self.queries_removed),
        }


def _survives_term_filters(term: str) -> bool:
    return _has_alnum(term) and len(term) <= MAX_TERM_CHARS


def _url_only(terms: Sequence[str]) -> bool:
    # judged on the terms the later term filters keep, so that cleaning twice
    # never drops a query the first pass kept
    surviving = list(dict.fromkeys(t for t in terms if _survives_term_filters(t)))
    if len(surviving) == 1:
        return is_url(surviving[0])
    return not surviving and any(is_url(t) for t in terms)


def clean_query_log(lines: Iterable[str], stopwords: Optional[Iterable[str]] = None
                    ) -> Tuple[List[QueryRecord], CleaningStats]:
    """Run the six cleaning steps in order over a raw query log."""
    stop = default_stopwords() if stopwords is None else frozenset(w.lower() for w in stopwords)
    stats = CleaningStats()
    out: List[QueryRecord] = []
    for line in lines:
        if not line.strip():
            continue
        stats.lines += 1
        rec = parse_query_line(line)
        if rec is None:
            stats.unreadable += 1
            continue
        terms = list(rec.terms)

        kept = [t for t in terms if t.lower() not in stop]
        stats.terms_removed["stopwords"] += len(terms) - len(kept)
        terms = kept

        if terms and _url_only(terms):
            stats.queries_removed["url_only_queries"] += 1
            continue

        kept = [t for t in terms if _has_alnum(t)]
        stats.terms_removed["non_alphanumeric_terms"] += len(terms) - len(kept)
        terms = kept

        kept = [t for t in terms if len(t) <= MAX_TERM_CHARS]
        stats.terms_removed["long_terms"] += len(terms) - len(kept)
        terms = kept

        if len(" ".join(terms)) > MAX_QUERY_CHARS:
            stats.queries_removed["long_queries"] += 1
            continue

        if not terms:
            stats.queries_removed["empty_queries"] += 1
            continue

        deduped = tuple(dict.fromkeys(terms))
        out.append(QueryRecord(rec.timestamp, rec.user, deduped))
    stats.kept = len(out)
    return out, stats


# -- vocabulary matching and result filtering ---------------------------------

def match_vocabulary(queries: Iterable[QueryRecord], tag_universe: Iterable[str]
                     ) -> Tuple[List[QueryRecord], dict]:
    """Keep only query terms that exist as tags; drop queries left empty."""
    universe = frozenset(tag_universe)
    queries = list(queries)
    distinct = {t for q in queries for t in q.terms}
    occurrences = sum(len(q.terms) for q in queries)
    out, kept_terms = [], 0
    for q in queries:
        terms = tuple(t for t in q.terms if t in universe)
        kept_terms += len(terms)
        if terms:
            out.append(QueryRecord(q.timestamp, q.user, terms))

    def pct(a, b):
        return 100.0 * a / b if b else 0.0

    stats = {
        "distinct_terms_pct": pct(len(distinct & universe), len(distinct)),
        "term_occurrence_pct": pct(kept_terms, occurrences),
        "query_pct": pct(len(out), len(queries)),
        "terms_per_query": (sum(len(q.terms) for q in out) / len(out)) if out else 0.0,
    }
    return out, stats


def build_term_index(resources: Dict[str, Iterable[str]], t_max: Optional[int] = None
                     ) -> Dict[str, Set[str]]:
    index: Dict[str, Set[str]] = defaultdict(set)
    for rid, tags in resources.items():
        considered = derive_considered_tags(tags, t_max) if t_max else tags
        for t in considered:
            index[t].add(rid)
    return index


def filter_nonempty(queries: Iterable[QueryRecord], resources: Dict[str, Iterable[str]],
                    t_max: Optional[int] = None) -> List[QueryRecord]:
    """Keep queries matched by at least one resource's (considered) tags."""
    index = build_term_index(resources, t_max)
    out = []
    for q in queries:
        lists = sorted((index.get(t, set()) for t in set(q.terms)), key=len)
        if not lists or not lists[0]:
            continue
        hits = set(lists[0])
        for lst in lists[1:]:
            hits &= lst
            if not hits:
                break
        if hits:
            out.append(q)
    return out


# -- synthetic workloads ------------------------------------------------------

# Table-derived defaults: share of queries by term count (1..6 terms) and the
# frequency-distribution skew of query keys per key size.
DEFAULT_TERM_COUNT_SHARES = (0.265, 0.32, 0.233, 0.111, 0.046, 0.025)
DEFAULT_QUERY_KEY_BETAS = (1.8, 1.6, 1.9, 2.1)


@dataclass(frozen=True)
class GeneratorConfig:
    n_resources: int = 1000
    n_distinct_tags: int = 2000
    tag_exponent: float = 1.0
    tags_per_resource_exponent: float = 1.5
    max_tags_per_resource: int = 25
    n_queries: int = 1000
    term_count_shares: Tuple[float, ...] = DEFAULT_TERM_COUNT_SHARES
    query_key_betas: Tuple[float, ...] = DEFAULT_QUERY_KEY_BETAS
    actions_per_minute: float = 150.0
    delete_fraction: float = 0.0
    duration: int = 3600
    n_users: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.n_resources < 0 or self.n_queries < 0 or self.duration < 1 or self.n_users < 1:
            raise ValueError("counts must be >= 0 and duration, n_users >= 1")
        if self.tag_exponent <= 0 or self.tags_per_resource_exponent <= 0:
            raise ValueError("exponents must be > 0")
        if any(b <= 1.0 for b in self.query_key_betas):
            raise ValueError("query key betas must exceed 1")
        if self.actions_per_minute < 0 or not 0.0 <= self.delete_fraction <= 1.0:
            raise ValueError("rates must be >= 0 and delete_fraction in [0, 1]")
        if self.max_tags_per_resource < 1:
            raise ValueError("max_tags_per_resource must be >= 1")
        if self.max_tags_per_resource > self.n_distinct_tags:
            raise ValueError("more tags per resource than distinct tags")
        if not self.term_count_shares or any(s < 0 for s in self.term_count_shares) \
                or sum(self.term_count_shares) <= 0:
            raise ValueError("term_count_shares must be non-negative with a positive sum")

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "GeneratorConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for raw in lines:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw.strip()!r}")
            name, value = (part.strip() for part in line.split("=", 1))
            if name not in types:
                raise ValueError(f"unknown config key: {name}")
            default = getattr(cls, name)
            if isinstance(default, tuple):
                values[name] = tuple(float(v) for v in value.split(","))
            elif isinstance(default, float):
                values[name] = float(value)
            else:
                values[name] = int(value)
        cfg = cls(**values)
        cfg.validate()
        return cfg


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=float)
    w = ranks ** (-exponent)
    return w / w.sum()


def sample_ranks(rng: np.random.Generator, cdf: np.ndarray, size: int) -> np.ndarray:
    """Inverse-transform sampling of 0-based ranks from a discrete CDF."""
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, len(cdf) - 1)


def _key_pool(resources: Dict[str, FrozenSet[str]], size: int, rng: np.random.Generator,
              per_resource_cap: int = 64) -> List[Tuple[str, ...]]:
    """Distinct tag combinations of ``size``, most widely shared first."""
    counts: Counter = Counter()
    for rid in sorted(resources):
        tags = sorted(resources[rid])
        if len(tags) < size:
            continue
        if comb(len(tags), size) <= per_resource_cap:
            counts.update(combinations(tags, size))
        else:
            for _ in range(per_resource_cap):
                pick = rng.choice(len(tags), size=size, replace=False)
                counts[tuple(sorted(tags[i] for i in pick))] += 1
    return [k for k, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


def generate_synthetic(cfg: GeneratorConfig
                       ) -> Tuple[Dict[str, FrozenSet[str]], List[TagActionRecord], List[QueryRecord]]:
    """Resources with Zipf tag popularity, a tag-action stream and a query log.

    Queries are drawn from tag combinations that exist on some resource, so
    they return non-empty results on the initial data. For each term count
    the combination is picked by a truncated power law over combinations
    ranked by how many resources share them; a rank exponent of
    ``1 / (beta - 1)`` gives a key frequency distribution with skew ``beta``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    tag_names = [f"t{i}" for i in range(cfg.n_distinct_tags)]
    tag_cdf = np.cumsum(zipf_weights(cfg.n_distinct_tags, cfg.tag_exponent))
    count_cdf = np.cumsum(zipf_weights(cfg.max_tags_per_resource, cfg.tags_per_resource_exponent))

    resources: Dict[str, FrozenSet[str]] = {}
    n_tags = sample_ranks(rng, count_cdf, cfg.n_resources) + 1
    width = len(str(max(cfg.n_resources - 1, 0)))
    for i, n in enumerate(n_tags):
        chosen: Set[int] = set()
        while len(chosen) < n:
            chosen.update(int(x) for x in sample_ranks(rng, tag_cdf, int(n) - len(chosen)))
        resources[f"r{i:0{width}d}"] = frozenset(tag_names[j] for j in chosen)

    actions = [TagActionRecord(0, "add", rid, tag)
               for rid in sorted(resources) for tag in sorted(resources[rid])]
    n_actions = int(round(cfg.actions_per_minute * cfg.duration / 60.0)) if resources else 0
    current = {rid: set(tags) for rid, tags in resources.items()}
    rids = sorted(resources)
    times = np.sort(rng.integers(1, cfg.duration + 1, size=n_actions))
    for ts in times:
        rid = rids[int(rng.integers(len(rids)))]
        tags = current[rid]
        if rng.random() < cfg.delete_fraction and tags:
            tag = sorted(tags)[int(rng.integers(len(tags)))]
            tags.discard(tag)
            actions.append(TagActionRecord(int(ts), "delete", rid, tag))
        else:
            for _ in range(32):
                tag = tag_names[int(sample_ranks(rng, tag_cdf, 1)[0])]
                if tag not in tags:
                    tags.add(tag)
                    actions.append(TagActionRecord(int(ts), "add", rid, tag))
                    break

    queries: List[QueryRecord] = []
    if resources and cfg.n_queries:
        shares = np.asarray(cfg.term_count_shares, dtype=float)
        size_cdf = np.cumsum(shares / shares.sum())
        sizes = sample_ranks(rng, size_cdf, cfg.n_queries) + 1
        pools: Dict[int, List[Tuple[str, ...]]] = {}
        cdfs: Dict[int, np.ndarray] = {}
        q_times = np.sort(rng.integers(0, cfg.duration + 1, size=cfg.n_queries))
        for ts, size in zip(q_times, sizes):
            size = int(size)
            while size > 1:
                if size not in pools:
                    pools[size] = _key_pool(resources, size, rng)
                if pools[size]:
                    break
                size -= 1
            if size not in pools:
                pools[size] = _key_pool(resources, size, rng)
            pool = pools[size]
            if size not in cdfs:
                beta = cfg.query_key_betas[min(size, len(cfg.query_key_betas)) - 1]
                cdfs[size] = np.cumsum(zipf_weights(len(pool), 1.0 / (beta - 1.0)))
            terms = pool[int(sample_ranks(rng, cdfs[size], 1)[0])]
            user = f"u{int(rng.integers(cfg.n_users))}"
            queries.append(QueryRecord(int(ts), user, terms))
    return resources, actions, queries
