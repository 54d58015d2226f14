"""Gateway-node caches: key routing, uniform/dedicated placement,
popularity-driven insertion/eviction and update propagation.

Functions take a cluster object exposing ``cfg``, ``shard``, ``gateways`` and
``ledger`` (see :class:`tagindex.sim.Cluster`).
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Union

from .core import Query, ResourceId, TagKey
from .index import DeltaSet, Unavailable
from .metrics import gateway_node


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def responsible_gateway(key_or_query: Union[TagKey, Query], n_gateways: int) -> int:
    if n_gateways < 1:
        raise ValueError("n_gateways must be >= 1")
    key = key_or_query.key if isinstance(key_or_query, Query) else key_or_query
    return _stable_hash("\x1f".join(key.terms)) % n_gateways


@dataclass
class GatewayNode:
    id: int
    cache: Dict[TagKey, Set[ResourceId]] = field(default_factory=dict)
    # cache hits not yet reported to the owning back-end node
    pending_hits: Counter = field(default_factory=Counter)

    @property
    def node(self) -> str:
        return gateway_node(self.id)

    def lookup(self, key: TagKey) -> Optional[Set[ResourceId]]:
        return self.cache.get(key)


def holders(cluster, key: TagKey) -> List[int]:
    scheme = cluster.cfg.cache_scheme
    if scheme == "uniform":
        return list(range(cluster.cfg.n_gateways))
    if scheme == "dedicated":
        return [responsible_gateway(key, cluster.cfg.n_gateways)]
    return []


def cache_insert(cluster, key: TagKey) -> None:
    rec = cluster.shard.get(key)
    if rec is None or not rec.available:
        raise Unavailable(f"{key} is not available in the index")
    if rec.cached:
        return
    targets = holders(cluster, key)
    if not targets:
        return
    cause = "cache_maintenance"
    src = cluster.shard.node_of(key)
    live = rec.plist.live()
    cluster.ledger.local(src, len(live), cause)
    for g in targets:
        gw = cluster.gateways[g]
        cluster.ledger.message(src, gw.node, len(live), cause)
        gw.cache[key] = set(live)
    rec.cached = True


def cache_evict(cluster, key: TagKey) -> None:
    rec = cluster.shard.get(key)
    if rec is None or not rec.cached:
        return
    src = cluster.shard.node_of(key)
    for gw in cluster.gateways:
        if gw.cache.pop(key, None) is not None:
            cluster.ledger.message(src, gw.node, 0, "cache_maintenance")
    rec.cached = False


def propagate_single_term_update(cluster, key: TagKey, resource: ResourceId, change: str) -> None:
    rec = cluster.shard.get(key)
    if rec is None or not rec.cached:
        return
    src = cluster.shard.node_of(key)
    for gw in cluster.gateways:
        cached = gw.cache.get(key)
        if cached is None:
            continue
        cluster.ledger.message(src, gw.node, 1, "single_term_update")
        if change == "add":
            cached.add(resource)
        else:
            cached.discard(resource)


def propagate_incremental_result(cluster, key: TagKey, delta: DeltaSet) -> None:
    rec = cluster.shard.get(key)
    if rec is None or not rec.cached or delta.empty():
        return
    src = cluster.shard.node_of(key)
    for gw in cluster.gateways:
        cached = gw.cache.get(key)
        if cached is None:
            continue
        cluster.ledger.message(src, gw.node, len(delta), "incremental_update")
        cached.difference_update(delta.dels)
        cached.update(delta.adds)


def dump_cache(gateway: GatewayNode) -> str:
    """``terms<TAB>cached<TAB>-<TAB>resource,...`` per cached key."""
    lines = [
        f"{key.label()}\tcached\t-\t" + ",".join(sorted(gateway.cache[key]))
        for key in sorted(gateway.cache)
    ]
    return "\n".join(lines) + ("\n" if lines else "")
