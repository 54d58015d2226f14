"""Domain types shared across the index, cache, query engine and simulator."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Dict, FrozenSet, Iterable, Optional, Tuple

ResourceId = str


class InvalidKey(ValueError):
    pass


class KeyTooLarge(InvalidKey):
    pass


class ConfigError(ValueError):
    """Raised for an invalid SystemConfig; ``constraint`` names the violated rule."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(f"{constraint}" + (f" ({detail})" if detail else ""))


@dataclass(frozen=True, order=True)
class TagKey:
    """Canonical term set: sorted, duplicate-free, non-empty."""

    terms: Tuple[str, ...]
    _hash: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self):
        if not self.terms:
            raise InvalidKey("key must contain at least one term")
        if any(a >= b for a, b in zip(self.terms, self.terms[1:])):
            raise InvalidKey(f"terms not strictly sorted: {self.terms!r}")
        # keys are hashed constantly by the index and caches
        object.__setattr__(self, "_hash", hash(self.terms))

    def __hash__(self) -> int:
        return self._hash

    @classmethod
    def of(cls, *terms: str) -> "TagKey":
        return canonicalize_key(terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def term_set(self) -> FrozenSet[str]:
        return frozenset(self.terms)

    def issubset(self, other: "TagKey") -> bool:
        return set(self.terms) <= set(other.terms)

    def is_single(self) -> bool:
        return len(self.terms) == 1

    def singles(self) -> Tuple["TagKey", ...]:
        return tuple(TagKey((t,)) for t in self.terms)

    def label(self) -> str:
        return " ".join(self.terms)

    def __str__(self) -> str:
        return "{" + ",".join(self.terms) + "}"


def canonicalize_key(terms: Iterable[str], s_max: Optional[int] = None) -> TagKey:
    unique = sorted(set(terms))
    if not unique:
        raise InvalidKey("empty term set")
    if s_max is not None and len(unique) > s_max:
        raise KeyTooLarge(f"{len(unique)} terms exceed s_max={s_max}")
    return TagKey(tuple(unique))


def derive_considered_tags(resource_tags: Iterable[str], t_max: int) -> FrozenSet[str]:
    """The ``t_max`` lexicographically smallest tags (all of them if fewer)."""
    tags = sorted(set(resource_tags))
    return frozenset(tags[:t_max])


@dataclass(frozen=True)
class Query:
    terms: FrozenSet[str]
    arrival_time: int = 0

    def __post_init__(self):
        object.__setattr__(self, "terms", frozenset(self.terms))
        if not self.terms:
            raise InvalidKey("query must contain at least one term")

    @classmethod
    def of(cls, *terms: str, at: int = 0) -> "Query":
        return cls(frozenset(terms), at)

    @property
    def key(self) -> TagKey:
        """Key derived from the whole query (used for gateway routing)."""
        return TagKey(tuple(sorted(self.terms)))

    def __len__(self) -> int:
        return len(self.terms)


@dataclass
class PostingEntry:
    resource: ResourceId
    ts: int
    deleted: bool = False


@dataclass
class PostingList:
    """Entries of one key. Mutate through the methods so the live view stays current."""

    key: TagKey
    entries: Dict[ResourceId, PostingEntry] = field(default_factory=dict)
    last_update_ts: Optional[int] = None

    def __post_init__(self):
        self._live = {r for r, e in self.entries.items() if not e.deleted}

    @property
    def live_size(self) -> int:
        return len(self._live)

    def live(self) -> FrozenSet[ResourceId]:
        return frozenset(self._live)

    def tombstones(self) -> FrozenSet[ResourceId]:
        return frozenset(r for r, e in self.entries.items() if e.deleted)

    def put(self, resource: ResourceId, ts: int) -> None:
        """Insert ``resource`` live, or unmark its tombstone, stamped ``ts``."""
        self.entries[resource] = PostingEntry(resource, ts)
        self._live.add(resource)

    def mark_deleted(self, resource: ResourceId, ts: int) -> None:
        entry = self.entries[resource]
        entry.deleted = True
        entry.ts = ts
        self._live.discard(resource)

    def remove(self, resource: ResourceId) -> None:
        del self.entries[resource]
        self._live.discard(resource)


@dataclass(frozen=True)
class Resource:
    id: ResourceId
    tags: FrozenSet[str]
    considered_tags: FrozenSet[str]

    @classmethod
    def from_tags(cls, rid: ResourceId, tags: Iterable[str], t_max: int) -> "Resource":
        tags = frozenset(tags)
        return cls(rid, tags, derive_considered_tags(tags, t_max))


CACHE_SCHEMES = ("uniform", "dedicated", "none")


@dataclass(frozen=True)
class SystemConfig:
    s_max: int = 3
    t_max: int = 20
    ell: int = 24
    delta_decay: int = 3600
    delta_update: int = 10800
    b_res: int = 4
    b_susp: int = 0
    c_ins: int = 12
    c_del: int = 0
    n_gateways: int = 5
    cache_scheme: str = "none"
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("s_max", "t_max", "ell", "n_gateways"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} >= 1", f"got {getattr(self, name)}")
        if self.delta_update <= 0:
            raise ConfigError("delta_update > 0", f"got {self.delta_update}")
        if self.delta_decay <= 0:
            raise ConfigError("delta_decay > 0", f"got {self.delta_decay}")
        if self.b_susp < 0:
            raise ConfigError("b_susp >= 0", f"got {self.b_susp}")
        if not self.b_susp < self.b_res:
            raise ConfigError("b_susp < b_res", f"{self.b_susp} vs {self.b_res}")
        if not self.b_res <= self.ell:
            raise ConfigError("b_res <= ell", f"{self.b_res} vs {self.ell}")
        if not self.b_res <= self.c_ins:
            raise ConfigError("b_res <= c_ins", f"{self.b_res} vs {self.c_ins}")
        if not self.c_ins <= self.ell:
            raise ConfigError("c_ins <= ell", f"{self.c_ins} vs {self.ell}")
        if not self.c_del < self.c_ins:
            raise ConfigError("c_del < c_ins", f"{self.c_del} vs {self.c_ins}")
        if not self.c_del >= self.b_susp:
            raise ConfigError("c_del >= b_susp", f"{self.c_del} vs {self.b_susp}")
        if self.cache_scheme not in CACHE_SCHEMES:
            raise ConfigError("cache_scheme in {uniform, dedicated, none}", self.cache_scheme)

    def replace(self, **changes) -> "SystemConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return SystemConfig(**values)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_mapping(cls, values: dict) -> "SystemConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError("known config keys", ", ".join(sorted(unknown)))
        parsed = {}
        for name, raw in values.items():
            parsed[name] = raw if name == "cache_scheme" else int(raw)
        return cls(**parsed)
