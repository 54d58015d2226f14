"""Query-driven multi-term inverted index over a simulated key-value back end."""

from .core import (
    ConfigError,
    InvalidKey,
    KeyTooLarge,
    PostingEntry,
    PostingList,
    Query,
    Resource,
    SystemConfig,
    TagKey,
    canonicalize_key,
    derive_considered_tags,
)
from .sim import Cluster, Event, TagAction, run

__version__ = "0.1.0"

__all__ = [
    "Cluster",
    "ConfigError",
    "Event",
    "InvalidKey",
    "KeyTooLarge",
    "PostingEntry",
    "PostingList",
    "Query",
    "Resource",
    "SystemConfig",
    "TagAction",
    "TagKey",
    "canonicalize_key",
    "derive_considered_tags",
    "run",
]
