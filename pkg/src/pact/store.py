"""Local observation storage for a device: heard pseudonyms and alt-protocol triples."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field

DAY = 86400

AltTriple = tuple[bytes, bytes, bytes]  # (sigma, R, h)


class Redaction(str, enum.Enum):
    """How much exposure timing an alert may reveal to the user."""

    NONE = "none"
    DAY = "day-granularity"
    SUPPRESS = "suppress-time"


@dataclass
class ObservationStore:
    """The set of (id, heard_at) pairs a device has collected.

    Records are deduplicated per (id, epoch) on the grid given by ``dt`` and
    ``origin``. Alt-protocol triples are kept in per-day buckets so a stored
    triple carries no timestamp of its own; the bucket day only drives purging.
    Redaction never changes what is stored, only what matching reports.
    """

    retention: int
    redaction: Redaction = Redaction.DAY
    dt: int = 900
    origin: int = 0
    _records: dict[tuple[bytes, int], int] = field(default_factory=dict, repr=False)
    _buckets: dict[int, set[AltTriple]] = field(
        default_factory=lambda: defaultdict(set), repr=False
    )

    def add(self, pid: bytes, heard_at: int) -> bool:
        key = (pid, (heard_at - self.origin) // self.dt)
        if key in self._records:
            return False
        self._records[key] = heard_at
        return True

    def add_triple(self, triple: AltTriple, now: int) -> bool:
        if any(triple in bucket for bucket in self._buckets.values()):
            return False
        self._buckets[now // DAY].add(triple)
        return True

    def records(self) -> list[tuple[bytes, int]]:
        return [(pid, t) for (pid, _), t in self._records.items()]

    def by_id(self) -> dict[bytes, list[int]]:
        out: dict[bytes, list[int]] = defaultdict(list)
        for (pid, _), t in self._records.items():
            out[pid].append(t)
        return out

    def triples(self) -> list[AltTriple]:
        return [t for bucket in self._buckets.values() for t in bucket]

    def buckets(self) -> dict[int, list[AltTriple]]:
        return {d: sorted(b) for d, b in sorted(self._buckets.items())}

    def bucket_of(self, triple: AltTriple) -> int | None:
        for day, bucket in self._buckets.items():
            if triple in bucket:
                return day
        return None

    def purge(self, now: int) -> int:
        """Drop records aged ``retention`` or more; return how many were removed.

        A triple bucket goes once its whole day is past retention, so triples
        may outlive ``retention`` by up to one day.
        """
        stale = [k for k, t in self._records.items() if now - t >= self.retention]
        for k in stale:
            del self._records[k]
        removed = len(stale)
        for day in [d for d in self._buckets if now - (d + 1) * DAY >= self.retention]:
            removed += len(self._buckets.pop(day))
        return removed

    def __len__(self) -> int:
        return len(self._records) + sum(len(b) for b in self._buckets.values())
