"""Back-end inverted index: posting lists per key, tombstoned single-term
updates, suspend/resume, tombstone collection and incremental updates of
multi-term keys."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, List, Optional, Set, Tuple

from .core import PostingEntry, PostingList, ResourceId, TagKey
from .metrics import MetricsLedger
from .popularity import KeyState, PopularityVector


class Unavailable(LookupError):
    pass


class Forbidden(ValueError):
    pass


class UpdateAborted(RuntimeError):
    pass


@dataclass
class KeyRecord:
    key: TagKey
    state: KeyState
    popularity: PopularityVector
    plist: Optional[PostingList] = None
    cached: bool = False

    @property
    def available(self) -> bool:
        return self.state is KeyState.AVAILABLE


def worst_case_node(key: TagKey) -> str:
    """Every distinct key lives on its own virtual back-end node."""
    return "be:" + key.label()


class IndexShard:
    """All back-end key records; node placement is delegated to ``placement``."""

    def __init__(self, ell: int, placement: Callable[[TagKey], str] = worst_case_node):
        self.ell = ell
        self.records: Dict[TagKey, KeyRecord] = {}
        self.placement = placement
        self.anomalies = 0

    def node_of(self, key: TagKey) -> str:
        return self.placement(key)

    def get(self, key: TagKey) -> Optional[KeyRecord]:
        return self.records.get(key)

    def ensure(self, key: TagKey) -> KeyRecord:
        """Record for ``key``; single-term keys appear available, others suspended."""
        rec = self.records.get(key)
        if rec is None:
            if key.is_single():
                rec = KeyRecord(key, KeyState.AVAILABLE, PopularityVector.zeros(self.ell),
                                PostingList(key))
            else:
                rec = KeyRecord(key, KeyState.SUSPENDED, PopularityVector.zeros(self.ell))
            self.records[key] = rec
        return rec

    def single(self, term: str) -> KeyRecord:
        return self.ensure(TagKey((term,)))

    def keys(self) -> List[TagKey]:
        return sorted(self.records)

    def available_multi_keys(self) -> List[TagKey]:
        return sorted(k for k, r in self.records.items() if r.available and not k.is_single())

    def live(self, key: TagKey) -> FrozenSet[ResourceId]:
        rec = self.records.get(key)
        if rec is None or not rec.available:
            raise Unavailable(str(key))
        return rec.plist.live()


@dataclass(frozen=True)
class DeltaSet:
    adds: FrozenSet[ResourceId] = frozenset()
    dels: FrozenSet[ResourceId] = frozenset()
    reference_ts: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "adds", frozenset(self.adds))
        object.__setattr__(self, "dels", frozenset(self.dels))
        if self.adds & self.dels:
            raise ValueError("adds and dels overlap")

    def __len__(self) -> int:
        return len(self.adds) + len(self.dels)

    def empty(self) -> bool:
        return not self.adds and not self.dels


def apply_tag_action(shard: IndexShard, term: str, resource: ResourceId, action: str,
                     now: int) -> Optional[str]:
    """Apply an add/delete of ``term`` on ``resource`` to the term's list.

    Returns the effective change (``"add"``, ``"delete"``) or ``None`` when the
    action did not alter the live view.
    """
    if not term:
        raise ValueError("term must be non-empty")
    plist = shard.single(term).plist
    entry = plist.entries.get(resource)
    if action == "add":
        if entry is None or entry.deleted:
            plist.put(resource, now)
            return "add"
        return None
    if action == "delete":
        if entry is None or entry.deleted:
            shard.anomalies += 1
            return None
        plist.mark_deleted(resource, now)
        return "delete"
    raise ValueError(f"unknown action {action!r}")


def get_result_size(shard: IndexShard, key: TagKey) -> Optional[int]:
    """Live list length, or ``None`` when the key is suspended or unknown."""
    rec = shard.get(key)
    if rec is None or not rec.available:
        return None
    return rec.plist.live_size


def get_inverted_list(shard: IndexShard, key: TagKey) -> FrozenSet[ResourceId]:
    return shard.live(key)


def suspend_key(shard: IndexShard, key: TagKey) -> None:
    if key.is_single():
        raise Forbidden(f"single-term key {key} cannot be suspended")
    rec = shard.get(key)
    if rec is None or not rec.available:
        raise Unavailable(str(key))
    if rec.cached:
        raise Forbidden(f"{key} is cached; evict it before suspending")
    rec.plist = None
    rec.state = KeyState.SUSPENDED


def gc_tombstones(shard: IndexShard, now: int, delta_update: int) -> int:
    removed = 0
    for key, rec in shard.records.items():
        if not key.is_single():
            continue
        plist = rec.plist
        expired = [r for r, e in plist.entries.items() if e.deleted and now - e.ts >= delta_update]
        for r in expired:
            plist.remove(r)
        removed += len(expired)
    return removed


def compute_delta(shard: IndexShard, single_key: TagKey, reference_ts: Optional[int]) -> DeltaSet:
    """Entries of a single-term list changed strictly after ``reference_ts``."""
    if not single_key.is_single():
        raise ValueError("delta sets are defined on single-term keys")
    rec = shard.get(single_key)
    if rec is None:
        return DeltaSet(reference_ts=reference_ts)
    ref = -1 if reference_ts is None else reference_ts
    adds, dels = set(), set()
    for r, e in rec.plist.entries.items():
        if e.ts > ref:
            (dels if e.deleted else adds).add(r)
    return DeltaSet(adds, dels, reference_ts)


Hop = Tuple[str, str, int]


def _send(ledger: Optional[MetricsLedger], trace: Optional[List[Hop]], src: str, dst: str,
          count: int, cause: str) -> None:
    if src != dst and trace is not None:
        trace.append((src, dst, count))
    if ledger is not None:
        ledger.message(src, dst, count, cause)


def resume_key(shard: IndexShard, key: TagKey, now: int,
               ledger: Optional[MetricsLedger] = None,
               trace: Optional[List[Hop]] = None) -> FrozenSet[ResourceId]:
    """Rebuild a multi-term key's list from its single-term constituents.

    Runs the query chain restricted to single-term keys, smallest list first,
    stopping early on an empty intermediate result.
    """
    if key.is_single():
        raise Forbidden("only multi-term keys are resumed")
    cause = "resume"
    rec = shard.ensure(key)
    home = shard.node_of(key)
    sizes = []
    for single in key.singles():
        srec = shard.ensure(single)
        _send(ledger, trace, home, shard.node_of(single), 0, cause)
        if ledger is not None:
            ledger.access(cause)
        sizes.append((srec.plist.live_size, single))
    sizes.sort()

    result: Optional[FrozenSet[ResourceId]] = None
    holder = home
    for _, single in sizes:
        node = shard.node_of(single)
        _send(ledger, trace, holder, node, 0 if result is None else len(result), cause)
        lst = shard.live(single)
        if ledger is not None:
            ledger.access(cause, read_list=True)
            ledger.local(node, len(lst), cause)
        result = lst if result is None else result & lst
        holder = node
        if not result:
            break
    result = result or frozenset()
    _send(ledger, trace, holder, home, len(result), cause)
    if ledger is not None:
        ledger.access(cause)
        ledger.local(home, len(result), cause)

    rec.plist = PostingList(key, {r: PostingEntry(r, now) for r in result}, last_update_ts=now)
    rec.state = KeyState.AVAILABLE
    return result


def incremental_update(shard: IndexShard, multi_key: TagKey, now: int,
                       ledger: Optional[MetricsLedger] = None,
                       trace: Optional[List[Hop]] = None) -> DeltaSet:
    """Bring a multi-term key up to date using only constituent changes.

    Constituents are visited in lexicographic order. Moving forward, each
    node drops candidate additions it does not hold live, then appends its
    own changes since the key's last update (tagged with their origin
    position). Candidates that originated at position ``j`` were only checked
    against positions after ``j``, so the payload is walked back through the
    earlier positions before it reaches the multi-term key. Deletions are
    applied as remove-if-present.
    """
    cause = "incremental_update"
    rec = shard.get(multi_key)
    if rec is None or not rec.available or multi_key.is_single():
        raise Unavailable(str(multi_key))
    chain = list(multi_key.singles())
    recs = [shard.ensure(k) for k in chain]
    if any(not r.available for r in recs):
        raise UpdateAborted(f"constituent of {multi_key} is suspended")
    ref = rec.plist.last_update_ts
    home = shard.node_of(multi_key)
    nodes = [shard.node_of(k) for k in chain]
    lives = [r.plist.live() for r in recs]

    candidates: Dict[ResourceId, int] = {}
    dels: Set[ResourceId] = set()
    _send(ledger, trace, home, nodes[0], 0, cause)
    for pos, key in enumerate(chain):
        delta = compute_delta(shard, key, ref)
        if ledger is not None:
            ledger.access(cause, read_list=True)
            ledger.local(nodes[pos], len(delta) + len(candidates), cause)
        live = lives[pos]
        candidates = {r: o for r, o in candidates.items() if r in live}
        for r in sorted(delta.adds):
            candidates.setdefault(r, pos)
        dels |= delta.dels
        if pos + 1 < len(chain):
            _send(ledger, trace, nodes[pos], nodes[pos + 1], len(candidates) + len(dels), cause)

    holder = nodes[-1]
    late = [o for o in candidates.values() if o > 0]
    if late:
        for pos in range(max(late) - 1, -1, -1):
            _send(ledger, trace, holder, nodes[pos], len(candidates) + len(dels), cause)
            checked = {r for r, o in candidates.items() if o > pos}
            if ledger is not None:
                ledger.access(cause)
                ledger.local(nodes[pos], len(checked), cause)
            candidates = {r: o for r, o in candidates.items()
                          if o <= pos or r in lives[pos]}
            holder = nodes[pos]
    _send(ledger, trace, holder, home, len(candidates) + len(dels), cause)

    old = rec.plist.live()
    net_adds = frozenset(candidates) - old
    net_dels = frozenset(dels) & old
    for r in net_dels:
        rec.plist.remove(r)
    for r in net_adds:
        rec.plist.put(r, now)
    rec.plist.last_update_ts = now
    if ledger is not None:
        ledger.access(cause)
        ledger.local(home, len(net_adds) + len(net_dels), cause)
    return DeltaSet(net_adds, net_dels, ref)


# -- snapshot dump ------------------------------------------------------------

def dump_snapshot(shard: IndexShard) -> str:
    """``terms<TAB>state<TAB>last_update_ts<TAB>resource:ts[:D],...`` per key."""
    lines = []
    for key in shard.keys():
        rec = shard.records[key]
        ts = "-"
        entries = ""
        if rec.plist is not None:
            if rec.plist.last_update_ts is not None:
                ts = str(rec.plist.last_update_ts)
            entries = ",".join(
                f"{e.resource}:{e.ts}" + (":D" if e.deleted else "")
                for e in sorted(rec.plist.entries.values(), key=lambda e: e.resource)
            )
        lines.append(f"{key.label()}\t{rec.state.value}\t{ts}\t{entries}")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class SnapshotRow:
    key: TagKey
    state: str
    last_update_ts: Optional[int]
    entries: List[PostingEntry] = field(default_factory=list)

    @property
    def live(self) -> FrozenSet[ResourceId]:
        return frozenset(e.resource for e in self.entries if not e.deleted)


def parse_snapshot(lines: Iterable[str]) -> Iterator[SnapshotRow]:
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        terms, state, ts, entries = line.split("\t")
        parsed = []
        for item in filter(None, entries.split(",")):
            parts = item.split(":")
            parsed.append(PostingEntry(parts[0], int(parts[1]), len(parts) > 2 and parts[2] == "D"))
        yield SnapshotRow(TagKey(tuple(terms.split(" "))), state,
                          None if ts == "-" else int(ts), parsed)
