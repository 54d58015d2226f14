"""Deterministic discrete-event simulation of gateways and back-end nodes."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Set, Union

from . import cache as cache_ops
from . import index as index_ops
from .cache import GatewayNode
from .core import Query, ResourceId, SystemConfig, TagKey, derive_considered_tags
from .index import IndexShard, worst_case_node
from .metrics import MetricsLedger
from .popularity import Action, KeyState, classify, decay, record_requests
from .query import compute_subset_keys, handle_query_request

VARIANTS = ("stk", "mtk", "stk_cached", "mtk_cached")

KIND_RANK = {"tag_action": 0, "decay_tick": 1, "update_tick": 2, "query": 3}


@dataclass(frozen=True)
class TagAction:
    resource: ResourceId
    tag: str
    action: str  # "add" | "delete"


@dataclass(frozen=True)
class Event:
    time: int
    kind: str
    payload: Union[Query, TagAction, None] = None
    sequence: int = 0

    def sort_key(self):
        return (self.time, KIND_RANK[self.kind], self.sequence)


def validate_events(events: Iterable[Event]) -> List[Event]:
    events = list(events)
    prev = None
    for e in events:
        if e.kind not in KIND_RANK:
            raise ValueError(f"unknown event kind {e.kind!r}")
        if not isinstance(e.time, int) or e.time < 0:
            raise ValueError(f"bad event time {e.time!r}")
        if e.kind == "query" and not isinstance(e.payload, Query):
            raise ValueError("query event without a Query payload")
        if e.kind == "tag_action":
            p = e.payload
            if not isinstance(p, TagAction) or p.action not in ("add", "delete") or not p.tag:
                raise ValueError(f"malformed tag action {p!r}")
        if prev is not None and e.time < prev:
            raise ValueError("events are not time-ordered")
        prev = e.time
    return sorted(events, key=Event.sort_key)


def round_robin_placement(n_nodes: int):
    """Keys get back-end nodes in first-seen order, wrapping after ``n_nodes``."""
    assigned: Dict[TagKey, int] = {}

    def place(key: TagKey) -> str:
        if key not in assigned:
            assigned[key] = len(assigned) % n_nodes
        return f"be#{assigned[key]}"

    return place


class Cluster:
    """Gateways, back-end index and metrics for one run of one variant."""

    def __init__(self, cfg: SystemConfig, variant: str = "mtk",
                 backend_nodes: Optional[int] = None, update_ticks_per_period: int = 4):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        cached = variant.endswith("_cached")
        if cached and cfg.cache_scheme == "none":
            raise ValueError(f"variant {variant} needs cache_scheme uniform or dedicated")
        if not cached:
            cfg = cfg.replace(cache_scheme="none")
        self.cfg = cfg
        self.variant = variant
        self.s_max = 1 if variant.startswith("stk") else cfg.s_max
        placement = worst_case_node if backend_nodes is None else round_robin_placement(backend_nodes)
        self.shard = IndexShard(cfg.ell, placement)
        self.gateways = [GatewayNode(i) for i in range(cfg.n_gateways)]
        self.ledger = MetricsLedger()
        self.rng = random.Random(cfg.rng_seed)
        self.resources: Dict[ResourceId, Set[str]] = {}
        self.touched: Set[TagKey] = set()
        self.update_period = max(1, cfg.delta_update // max(1, update_ticks_per_period))

    # -- tag data -------------------------------------------------------------

    def considered(self, rid: ResourceId) -> frozenset:
        return derive_considered_tags(self.resources.get(rid, ()), self.cfg.t_max)

    def apply_tag_action(self, rid: ResourceId, tag: str, action: str, now: int) -> None:
        tags = self.resources.setdefault(rid, set())
        before = derive_considered_tags(tags, self.cfg.t_max)
        if action == "add":
            tags.add(tag)
        else:
            if tag not in tags:
                self.ledger.anomalies += 1
            tags.discard(tag)
        after = derive_considered_tags(tags, self.cfg.t_max)
        for t in sorted(after - before):
            self._update_single(rid, t, "add", now)
        for t in sorted(before - after):
            self._update_single(rid, t, "delete", now)

    def _update_single(self, rid: ResourceId, term: str, action: str, now: int) -> None:
        cause = "single_term_update"
        key = TagKey((term,))
        node = self.shard.node_of(key)
        self.ledger.message(f"rs:{rid}", node, 1, cause)
        self.ledger.access(cause)
        self.ledger.local(node, 1, cause)
        change = index_ops.apply_tag_action(self.shard, term, rid, action, now)
        if change is not None:
            cache_ops.propagate_single_term_update(self, key, rid, change)

    def load(self, resources: Dict[ResourceId, Iterable[str]], now: int = 0) -> None:
        """Bulk-load tag assignments without charging any traffic."""
        for rid in sorted(resources):
            tags = self.resources.setdefault(rid, set())
            tags.update(resources[rid])
            for t in derive_considered_tags(tags, self.cfg.t_max):
                index_ops.apply_tag_action(self.shard, t, rid, "add", now)

    # -- queries --------------------------------------------------------------

    def query(self, q: Query) -> frozenset:
        return handle_query_request(self, q)

    def brute_force(self, q: Query) -> frozenset:
        return frozenset(r for r in self.resources if q.terms <= self.considered(r))

    def pre_resume(self, queries: Iterable[Query], now: int = 0) -> int:
        """Make every multi-term key relevant to ``queries`` available, free of charge."""
        keys = set()
        for q in queries:
            keys.update(k for k in compute_subset_keys(q, self.s_max) if len(k) > 1)
        for key in sorted(keys):
            rec = self.shard.ensure(key)
            if not rec.available:
                index_ops.resume_key(self.shard, key, now)
            # pre-resumed keys still decay and may be suspended later
            self.touched.add(key)
        return len(keys)

    # -- maintenance ticks ----------------------------------------------------

    def decay_tick(self, now: int) -> None:
        for gw in self.gateways:
            for key in sorted(gw.pending_hits):
                rec = self.shard.ensure(key)
                rec.popularity = record_requests(rec.popularity, gw.pending_hits[key])
                self.touched.add(key)
                self.ledger.message(gw.node, self.shard.node_of(key), 0, "cache_maintenance")
            gw.pending_hits.clear()

        caching = self.cfg.cache_scheme != "none"
        for key in sorted(self.touched):
            rec = self.shard.records[key]
            rec.popularity = decay(rec.popularity)
            if rec.cached:
                state = KeyState.CACHED
            else:
                state = rec.state
            actions = classify(rec.popularity, self.cfg, state)
            if Action.CACHE_EVICT in actions:
                cache_ops.cache_evict(self, key)
            if Action.SUSPEND in actions and not key.is_single():
                cache_ops.cache_evict(self, key)
                index_ops.suspend_key(self.shard, key)
            if Action.RESUME in actions and not key.is_single():
                index_ops.resume_key(self.shard, key, now, self.ledger)
            if Action.CACHE_INSERT in actions and caching:
                cache_ops.cache_insert(self, key)
            if rec.popularity.value == 0 and not rec.cached:
                self.touched.discard(key)
                if not rec.available:
                    # nothing left to remember about a cold suspended key
                    del self.shard.records[key]

    def update_tick(self, now: int) -> None:
        threshold = self.cfg.delta_update - self.update_period
        for key in self.shard.available_multi_keys():
            rec = self.shard.records[key]
            if now - rec.plist.last_update_ts >= threshold:
                delta = index_ops.incremental_update(self.shard, key, now, self.ledger)
                cache_ops.propagate_incremental_result(self, key, delta)
        index_ops.gc_tombstones(self.shard, now, self.cfg.delta_update)

    # -- invariants -----------------------------------------------------------

    def check_coherence(self) -> None:
        expected: Dict[TagKey, frozenset] = {}
        for gw in self.gateways:
            for key, cached in gw.cache.items():
                live = expected.get(key)
                if live is None:
                    rec = self.shard.get(key)
                    if rec is None or not rec.available:
                        raise AssertionError(f"cached key {key} is not available in the index")
                    if not rec.cached:
                        raise AssertionError(f"{key} cached on gw {gw.id} without back-end flag")
                    live = expected[key] = rec.plist.live()
                if cached != live:
                    raise AssertionError(f"cache copy of {key} on gw {gw.id} diverged")


def schedule_ticks(start: int, end: int, cfg: SystemConfig, update_period: int,
                   decay_ticks: bool = True, update_ticks: bool = True) -> List[Event]:
    ticks = []
    if decay_ticks:
        t = (start // cfg.delta_decay + 1) * cfg.delta_decay
        while t <= end:
            ticks.append(Event(t, "decay_tick"))
            t += cfg.delta_decay
    if update_ticks:
        t = (start // update_period + 1) * update_period
        while t <= end:
            ticks.append(Event(t, "update_tick"))
            t += update_period
    return ticks


def with_ticks(events: Iterable[Event], cluster: Cluster, **kwargs) -> List[Event]:
    events = list(events)
    if not events:
        return events
    start = min(e.time for e in events)
    end = max(e.time for e in events)
    ticks = schedule_ticks(start, end, cluster.cfg, cluster.update_period, **kwargs)
    merged = [Event(e.time, e.kind, e.payload, i) for i, e in enumerate(events + ticks)]
    return sorted(merged, key=Event.sort_key)


def run(cluster: Cluster, events: Iterable[Event], debug: bool = False,
        on_query: Optional[Callable[[Query, frozenset], None]] = None) -> MetricsLedger:
    """Process every event in (time, kind, sequence) order.

    With ``debug`` the cache coherence invariant is checked after every event.
    """
    for event in validate_events(events):
        if event.kind == "tag_action":
            p = event.payload
            cluster.apply_tag_action(p.resource, p.tag, p.action, event.time)
        elif event.kind == "query":
            result = cluster.query(event.payload)
            if on_query is not None:
                on_query(event.payload, result)
        elif event.kind == "decay_tick":
            cluster.decay_tick(event.time)
        elif event.kind == "update_tick":
            cluster.update_tick(event.time)
        if debug:
            cluster.check_coherence()
    cluster.ledger.anomalies += cluster.shard.anomalies
    cluster.shard.anomalies = 0
    return cluster.ledger
