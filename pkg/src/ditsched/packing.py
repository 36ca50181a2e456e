"""Token-capacity packing of variable-length sequences into micro-batches."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import groupby
from typing import Sequence

from .errors import InstanceTooLarge, ValidationError
from .workload import WorkItem

ORACLE_MAX_ITEMS = 14


@dataclass(frozen=True)
class MicroBatch:
    id: int
    items: tuple[int, ...]
    lengths: tuple[int, ...]
    capacity: int

    def __post_init__(self):
        if not self.items:
            raise ValidationError(f"micro-batch {self.id} is empty")
        if len(self.items) != len(self.lengths):
            raise ValidationError(f"micro-batch {self.id}: items and lengths differ in size")
        if self.total_tokens > self.capacity:
            raise ValidationError(
                f"micro-batch {self.id}: {self.total_tokens} tokens exceed capacity {self.capacity}"
            )

    @property
    def total_tokens(self) -> int:
        return sum(self.lengths)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "items": list(self.items),
            "total_tokens": self.total_tokens,
            "capacity": self.capacity,
        }


def pack_ffd(items: Sequence[WorkItem], capacity: int, first_id: int = 0) -> list[MicroBatch]:
    """First-fit decreasing. Ties in length go to the lower item id."""
    for it in items:
        if it.seq_len > capacity:
            raise ValidationError(f"item {it.id}: seq_len {it.seq_len} exceeds capacity {capacity}")
    order = sorted(items, key=lambda it: (-it.seq_len, it.id))
    loads: list[int] = []
    members: list[list[WorkItem]] = []
    for it in order:
        for b, load in enumerate(loads):
            if load + it.seq_len <= capacity:
                loads[b] += it.seq_len
                members[b].append(it)
                break
        else:
            loads.append(it.seq_len)
            members.append([it])
    return [
        MicroBatch(first_id + b, tuple(m.id for m in ms), tuple(m.seq_len for m in ms), capacity)
        for b, ms in enumerate(members)
    ]


def pack_by_stage(items: Sequence[WorkItem], capacity: int, first_id: int = 0) -> list[MicroBatch]:
    """Pack each training stage separately; micro-batch ids stay unique across stages."""
    out: list[MicroBatch] = []
    for _, group in groupby(sorted(items, key=lambda it: (it.stage, it.id)), key=lambda it: it.stage):
        out.extend(pack_ffd(list(group), capacity, first_id=first_id + len(out)))
    return out


def pack_oracle(items: Sequence[WorkItem | int], capacity: int) -> int:
    """Minimum number of bins, by memoized exhaustive search. Small instances only."""
    lengths = [getattr(it, "seq_len", it) for it in items]
    if len(lengths) > ORACLE_MAX_ITEMS:
        raise InstanceTooLarge(f"pack_oracle handles at most {ORACLE_MAX_ITEMS} items, got {len(lengths)}")
    if any(x > capacity for x in lengths):
        raise ValidationError("an item exceeds capacity")
    xs = tuple(sorted(lengths, reverse=True))
    n = len(xs)

    @lru_cache(maxsize=None)
    def best(i: int, loads: tuple[int, ...]) -> int:
        # loads: sorted residual loads of the open bins
        if i == n:
            return 0
        x = xs[i]
        result = 1 + best(i + 1, tuple(sorted(loads + (x,))))
        tried = set()
        for j, load in enumerate(loads):
            if load + x <= capacity and load not in tried:
                tried.add(load)
                nxt = loads[:j] + (load + x,) + loads[j + 1:]
                result = min(result, best(i + 1, tuple(sorted(nxt))))
        return result

    return best(0, ())
