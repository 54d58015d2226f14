"""Multi-term query processing: direct hits, size probes over all subset keys,
greedy key ordering and chained list intersection."""

from __future__ import annotations

import random
from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import FrozenSet, List, Mapping, Optional, Set, Tuple

from .cache import GatewayNode, responsible_gateway
from .core import Query, ResourceId, TagKey
from .index import get_result_size
from .popularity import record_request

CAUSE = "query"


@dataclass
class PlanStep:
    key: TagKey
    use_cache: bool
    probed_size: int


KeyAccessPlan = List[PlanStep]


def compute_subset_keys(q: Query, s_max: int) -> Set[TagKey]:
    terms = sorted(q.terms)
    keys = set()
    for size in range(1, min(len(terms), s_max) + 1):
        for combo in combinations(terms, size):
            keys.add(TagKey(combo))
    return keys


def max_probes(n_terms: int, s_max: int) -> int:
    return sum(comb(n_terms, i) for i in range(1, min(n_terms, s_max) + 1))


def remove_redundant(keys) -> List[TagKey]:
    """Drop every key that is a proper subset of another key."""
    keys = sorted(set(keys))
    sets = [k.term_set for k in keys]
    return [k for k, s in zip(keys, sets) if not any(s < other for other in sets)]


def compute_key_access_list(q: Query, available: Mapping[TagKey, Tuple[int, bool]],
                            rng: Optional[random.Random] = None) -> KeyAccessPlan:
    """Order available keys for the intersection chain.

    ``available`` maps each available key to ``(live size, cached on the
    handling gateway)``. Start with the smallest list, then repeatedly add the
    key covering the most still-missing terms (ties: smaller list, cached
    first, then a seeded random pick). Interior keys whose neighbours are both
    read from the index are read from the index as well.
    """
    rng = rng or random.Random(0)
    keys = remove_redundant(k for k in available if k.term_set <= q.terms)
    if not keys:
        raise ValueError("no available key for the query")
    first = min(keys, key=lambda k: (available[k][0], k))
    plan = [first]
    covered = set(first.terms)
    remaining = [k for k in keys if k != first]
    while covered != q.terms:
        gains = {k: len(k.term_set - covered) for k in remaining}
        best_gain = max(gains.values(), default=0)
        if best_gain == 0:
            raise ValueError(f"available keys do not cover {sorted(q.terms - covered)}")
        tied = [k for k in remaining if gains[k] == best_gain]
        smallest = min(available[k][0] for k in tied)
        tied = [k for k in tied if available[k][0] == smallest]
        cached = [k for k in tied if available[k][1]]
        pool = cached or tied
        nxt = pool[0] if len(pool) == 1 else rng.choice(sorted(pool))
        plan.append(nxt)
        covered |= nxt.term_set
        remaining.remove(nxt)

    steps = [PlanStep(k, available[k][1], available[k][0]) for k in plan]
    for i in range(1, len(steps) - 1):
        if not available[plan[i - 1]][1] and not available[plan[i + 1]][1]:
            steps[i].use_cache = False
    return steps


class _Requests:
    """Records each key at most once per query toward its popularity."""

    def __init__(self, cluster, gateway: GatewayNode):
        self.cluster = cluster
        self.gateway = gateway
        self.seen: Set[TagKey] = set()

    def __call__(self, key: TagKey, via_cache: bool) -> None:
        if key in self.seen:
            return
        self.seen.add(key)
        if via_cache:
            self.gateway.pending_hits[key] += 1
        else:
            rec = self.cluster.shard.ensure(key)
            rec.popularity = record_request(rec.popularity)
            self.cluster.touched.add(key)


def handle_query_request(cluster, q: Query) -> FrozenSet[ResourceId]:
    ledger, shard = cluster.ledger, cluster.shard
    s_max = cluster.s_max
    ledger.queries += 1
    gateway = cluster.gateways[responsible_gateway(q, cluster.cfg.n_gateways)]
    home = gateway.node
    request = _Requests(cluster, gateway)

    direct_miss = None
    if len(q) <= s_max:
        key = q.key
        ledger.gw_lookups += 1
        hit = gateway.lookup(key)
        if hit is not None:
            ledger.cache_hits += 1
            ledger.local(home, len(hit), CAUSE)
            request(key, True)
            return frozenset(hit)
        node = shard.node_of(key)
        rec = shard.ensure(key)
        request(key, False)
        ledger.message(home, node, 0, CAUSE)
        ledger.access(CAUSE, read_list=rec.available)
        if rec.available:
            lst = rec.plist.live()
            ledger.local(node, len(lst), CAUSE)
            ledger.message(node, home, len(lst), CAUSE)
            return lst
        ledger.message(node, home, 0, CAUSE)
        direct_miss = key  # already known to be unavailable

    available = {}
    for key in sorted(compute_subset_keys(q, s_max)):
        if key == direct_miss:
            continue
        ledger.probes += 1
        ledger.gw_lookups += 1
        hit = gateway.lookup(key)
        if hit is not None:
            ledger.cache_hits += 1
            request(key, True)
            available[key] = (len(hit), True)
            continue
        node = shard.node_of(key)
        shard.ensure(key)
        request(key, False)
        ledger.message(home, node, 0, CAUSE)
        ledger.access(CAUSE)
        size = get_result_size(shard, key)
        ledger.message(node, home, 0, CAUSE)
        if size is not None:
            available[key] = (size, False)

    if any(size == 0 for size, _ in available.values()):
        return frozenset()

    plan = compute_key_access_list(q, available, cluster.rng)
    return execute_plan(cluster, plan, gateway)


def handle_key_list(cluster, plan: KeyAccessPlan, result: Optional[FrozenSet[ResourceId]],
                    gateway: GatewayNode) -> Tuple[FrozenSet[ResourceId], KeyAccessPlan]:
    """Process the head of ``plan`` at its node; returns the new intermediate
    result and the remaining plan (emptied early on an empty result)."""
    step = plan[0]
    if step.use_cache:
        node = gateway.node
        lst = frozenset(gateway.cache[step.key])
    else:
        node = cluster.shard.node_of(step.key)
        lst = cluster.shard.live(step.key)
        cluster.ledger.access(CAUSE, read_list=True)
    cluster.ledger.local(node, len(lst), CAUSE)
    result = lst if result is None else result & lst
    return result, ([] if not result else plan[1:])


def execute_plan(cluster, plan: KeyAccessPlan, gateway: GatewayNode) -> FrozenSet[ResourceId]:
    ledger = cluster.ledger
    result: Optional[FrozenSet[ResourceId]] = None
    holder = gateway.node
    remaining = list(plan)
    while remaining:
        step = remaining[0]
        target = gateway.node if step.use_cache else cluster.shard.node_of(step.key)
        ledger.message(holder, target, 0 if result is None else len(result), CAUSE)
        result, remaining = handle_key_list(cluster, remaining, result, gateway)
        holder = target
    result = result if result is not None else frozenset()
    ledger.message(holder, gateway.node, len(result), CAUSE)
    return result
