"""Message and load accounting: contacted keys (CK), invoked keys (IK),
transferred resources (TR) and handled resources (HR)."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

CAUSES = ("query", "resume", "incremental_update", "single_term_update", "cache_maintenance")

GATEWAY_PREFIX = "gw:"


def gateway_node(i: int) -> str:
    return f"{GATEWAY_PREFIX}{i}"


def is_gateway(node: str) -> bool:
    return node.startswith(GATEWAY_PREFIX)


@dataclass
class CauseCounters:
    ck: int = 0
    ik: int = 0
    tr: int = 0
    hr_gateway: int = 0
    hr_backend: int = 0
    messages: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MetricsLedger:
    by_cause: Dict[str, CauseCounters] = field(
        default_factory=lambda: {c: CauseCounters() for c in CAUSES}
    )
    hr_node: Dict[str, int] = field(default_factory=lambda: defaultdict(int))
    gw_lookups: int = 0
    cache_hits: int = 0
    probes: int = 0
    queries: int = 0
    anomalies: int = 0

    # -- accounting primitives ------------------------------------------------

    def _handle(self, node: str, count: int, cause: str) -> None:
        if count <= 0:
            return
        self.hr_node[node] += count
        c = self.by_cause[cause]
        if is_gateway(node):
            c.hr_gateway += count
        else:
            c.hr_backend += count

    def message(self, src: str, dst: str, resources: int, cause: str) -> None:
        """One network message carrying ``resources`` entries; free when local."""
        if resources < 0:
            raise ValueError("resource count must be >= 0")
        if src == dst:
            return
        c = self.by_cause[cause]
        c.messages += 1
        c.tr += resources
        self._handle(src, resources, cause)
        self._handle(dst, resources, cause)

    def local(self, node: str, resources: int, cause: str) -> None:
        """Resources read from or written to a node's own storage."""
        self._handle(node, resources, cause)

    def access(self, cause: str, read_list: bool = False) -> None:
        c = self.by_cause[cause]
        c.ck += 1
        if read_list:
            c.ik += 1

    # -- totals ---------------------------------------------------------------

    def _sum(self, name: str) -> int:
        return sum(getattr(c, name) for c in self.by_cause.values())

    @property
    def ck(self) -> int:
        return self._sum("ck")

    @property
    def ik(self) -> int:
        return self._sum("ik")

    @property
    def tr(self) -> int:
        return self._sum("tr")

    @property
    def messages(self) -> int:
        return self._sum("messages")

    @property
    def hr_gateway_total(self) -> int:
        return self._sum("hr_gateway")

    @property
    def hr_backend_total(self) -> int:
        return self._sum("hr_backend")

    def totals(self) -> dict:
        return {
            "ck": self.ck,
            "ik": self.ik,
            "tr": self.tr,
            "hr_gateway_total": self.hr_gateway_total,
            "hr_backend_total": self.hr_backend_total,
            "messages": self.messages,
            "gw_lookups": self.gw_lookups,
            "cache_hits": self.cache_hits,
            "probes": self.probes,
            "queries": self.queries,
            "anomalies": self.anomalies,
        }

    def as_dict(self) -> dict:
        return {
            "totals": self.totals(),
            "by_cause": {c: v.as_dict() for c, v in self.by_cause.items()},
        }


CSV_FIELDS = (
    "run_id", "variant", "scheme", "ck", "ik", "tr", "hr_gateway_total",
    "hr_backend_total", "cause", "messages", "gw_lookups", "cache_hits", "probes", "queries",
)


def ledger_rows(ledger: MetricsLedger, run_id: str, variant: str, scheme: str) -> Iterable[dict]:
    t = ledger.totals()
    yield {
        "run_id": run_id, "variant": variant, "scheme": scheme,
        "ck": t["ck"], "ik": t["ik"], "tr": t["tr"],
        "hr_gateway_total": t["hr_gateway_total"], "hr_backend_total": t["hr_backend_total"],
        "cause": "total", "messages": t["messages"], "gw_lookups": t["gw_lookups"],
        "cache_hits": t["cache_hits"], "probes": t["probes"], "queries": t["queries"],
    }
    for cause, c in ledger.by_cause.items():
        yield {
            "run_id": run_id, "variant": variant, "scheme": scheme,
            "ck": c.ck, "ik": c.ik, "tr": c.tr,
            "hr_gateway_total": c.hr_gateway, "hr_backend_total": c.hr_backend,
            "cause": cause, "messages": c.messages, "gw_lookups": "",
            "cache_hits": "", "probes": "", "queries": "",
        }


def ledgers_to_csv(runs: Iterable[tuple]) -> str:
    """``runs`` yields ``(run_id, variant, scheme, ledger)`` tuples."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for run_id, variant, scheme, ledger in runs:
        writer.writerows(ledger_rows(ledger, run_id, variant, scheme))
    return buf.getvalue()


def ledgers_to_json(runs: Iterable[tuple]) -> str:
    doc = [
        {"run_id": run_id, "variant": variant, "scheme": scheme, **ledger.as_dict()}
        for run_id, variant, scheme, ledger in runs
    ]
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


COMPARED = ("ck", "ik", "tr", "hr_gateway_total", "hr_backend_total", "messages")


def compare_runs(baseline: MetricsLedger, variant: MetricsLedger) -> Dict[str, Optional[float]]:
    """Each metric of ``variant`` as a percentage of ``baseline``.

    ``None`` marks an undefined ratio (zero baseline, nonzero variant); two zero
    counters compare as 100%.
    """
    base, var = baseline.totals(), variant.totals()
    report: Dict[str, Optional[float]] = {}
    for name in COMPARED:
        b, v = base[name], var[name]
        if b == 0:
            report[name] = 100.0 if v == 0 else None
        else:
            report[name] = 100.0 * v / b
    return report
