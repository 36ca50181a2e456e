"""Runtime balance: seqlen-to-runtime lookup tables and per-batch rank assignment.

Micro-batches are costed by querying a lookup table fitted offline from
measured (seq_len, runtime) samples, then spread over the ranks of a single
batch with longest-processing-time greedy. Batches never exchange work.
"""

from __future__ import annotations

import bisect
import csv
import heapq
from concurrent.futures import Executor, Future
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

from .errors import InstanceTooLarge, ValidationError
from .packing import MicroBatch

LUT_HEADER = ("seq_len", "runtime_us")
ORACLE_MAX_MICROBATCHES = 12
ORACLE_MAX_RANKS = 4


@dataclass(frozen=True)
class RuntimeLut:
    """Monotone piecewise-linear map from sequence length to runtime (microseconds)."""

    breakpoints: tuple[tuple[int, float], ...]

    def __post_init__(self):
        bps = tuple((int(s), float(r)) for s, r in self.breakpoints)
        if len(bps) < 2:
            raise ValidationError("a runtime LUT needs at least 2 breakpoints")
        for (s0, r0), (s1, r1) in zip(bps, bps[1:]):
            if s1 <= s0:
                raise ValidationError(f"LUT seq_lens must be strictly increasing ({s0} then {s1})")
            if r1 < r0:
                raise ValidationError(f"LUT runtimes must be non-decreasing ({r0} at {s0}, {r1} at {s1})")
        object.__setattr__(self, "breakpoints", bps)

    @property
    def seq_lens(self) -> list[int]:
        return [s for s, _ in self.breakpoints]

    @property
    def runtimes(self) -> list[float]:
        return [r for _, r in self.breakpoints]

    def scaled(self, k: float) -> "RuntimeLut":
        return RuntimeLut(tuple((s, r * k) for s, r in self.breakpoints))

    def __call__(self, seq_len: int) -> float:
        return estimate(self, seq_len)


def pava(values: Sequence[float], weights: Sequence[float] | None = None) -> list[float]:
    """Weighted least-squares non-decreasing fit by pool-adjacent-violators."""
    if weights is None:
        weights = [1.0] * len(values)
    # each block: [weighted mean, total weight, count]
    blocks: list[list[float]] = []
    for v, w in zip(values, weights):
        blocks.append([float(v), float(w), 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, n2 = blocks.pop()
            m1, w1, n1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, n1 + n2])
    out: list[float] = []
    for m, _, n in blocks:
        out.extend([m] * int(n))
    return out


def fit_lut(samples: Sequence[tuple[int, float]]) -> RuntimeLut:
    """Average duplicate seq_lens, then force runtimes non-decreasing with PAVA."""
    grouped: dict[int, list[float]] = {}
    for s, r in samples:
        if s < 1:
            raise ValidationError(f"sample seq_len must be >= 1, got {s}")
        if r <= 0:
            raise ValidationError(f"sample runtime must be > 0, got {r} at seq_len {s}")
        grouped.setdefault(int(s), []).append(float(r))
    if len(grouped) < 2:
        raise ValidationError(f"need at least 2 distinct seq_lens to fit a LUT, got {len(grouped)}")
    xs = sorted(grouped)
    means = [sum(grouped[x]) / len(grouped[x]) for x in xs]
    return RuntimeLut(tuple(zip(xs, pava(means))))


def estimate(lut: RuntimeLut, seq_len: int) -> float:
    """Interpolate inside the table, extrapolate linearly outside it, never below the smallest entry."""
    xs, ys = lut.seq_lens, lut.runtimes
    i = bisect.bisect_left(xs, seq_len)
    if i < len(xs) and xs[i] == seq_len:
        return ys[i]
    if i == 0:
        i = 1
    elif i == len(xs):
        i = len(xs) - 1
    x0, x1, y0, y1 = xs[i - 1], xs[i], ys[i - 1], ys[i]
    y = y0 + (y1 - y0) * (seq_len - x0) / (x1 - x0)
    return max(y, ys[0])


def read_samples(path: str | Path) -> list[tuple[int, float]]:
    """Parse ``seq_len,runtime_us`` CSV text; the header line is mandatory."""
    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LUT_HEADER:
            raise ValidationError(f"{path}:1: expected header '{','.join(LUT_HEADER)}', got {header!r}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                out.append((int(row[0]), float(row[1])))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: cannot parse {row!r}") from None
    return out


def read_lut(path: str | Path) -> RuntimeLut:
    return RuntimeLut(tuple(read_samples(path)))


def write_lut(lut: RuntimeLut, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LUT_HEADER)
        for s, r in lut.breakpoints:
            w.writerow([s, repr(r)])


Estimator = Union[RuntimeLut, Callable[[MicroBatch], float]]


def microbatch_cost(estimator: Estimator, mb: MicroBatch) -> float:
    if isinstance(estimator, RuntimeLut):
        return estimate(estimator, mb.total_tokens)
    return float(estimator(mb))


def token_count(mb: MicroBatch) -> float:
    """Sequence-length proxy cost."""
    return float(mb.total_tokens)


@dataclass(frozen=True)
class RankAssignment:
    ranks: tuple[tuple[int, ...], ...]
    loads: tuple[float, ...]

    @property
    def n_ranks(self) -> int:
        return len(self.ranks)

    @property
    def makespan(self) -> float:
        return max(self.loads)

    def rank_of(self) -> dict[int, int]:
        return {mb: r for r, ids in enumerate(self.ranks) for mb in ids}


def assignment_from_lists(
    ranks: Sequence[Sequence[int]], microbatches: Sequence[MicroBatch], estimator: Estimator
) -> RankAssignment:
    cost = {mb.id: microbatch_cost(estimator, mb) for mb in microbatches}
    return RankAssignment(tuple(tuple(r) for r in ranks), tuple(sum(cost[i] for i in r) for r in ranks))


def balance_lpt(microbatches: Sequence[MicroBatch], n_ranks: int, estimator: Estimator) -> RankAssignment:
    """Longest-processing-time greedy over the micro-batches of one batch."""
    if n_ranks < 1:
        raise ValidationError(f"rank count must be >= 1, got {n_ranks}")
    if not microbatches:
        raise ValidationError("cannot balance an empty batch")
    costed = sorted(((microbatch_cost(estimator, mb), mb.id) for mb in microbatches), key=lambda t: (-t[0], t[1]))
    heap = [(0.0, r) for r in range(n_ranks)]
    ranks: list[list[int]] = [[] for _ in range(n_ranks)]
    loads = [0.0] * n_ranks
    for cost, mb_id in costed:
        _, r = heapq.heappop(heap)
        ranks[r].append(mb_id)
        loads[r] += cost
        heapq.heappush(heap, (loads[r], r))
    return RankAssignment(tuple(map(tuple, ranks)), tuple(loads))


def balance_round_robin(microbatches: Sequence[MicroBatch], n_ranks: int, estimator: Estimator) -> RankAssignment:
    """Arrival-order round robin; the no-balancing baseline."""
    ranks: list[list[int]] = [[] for _ in range(n_ranks)]
    for i, mb in enumerate(microbatches):
        ranks[i % n_ranks].append(mb.id)
    return assignment_from_lists(ranks, microbatches, estimator)


def balance_oracle(microbatches: Sequence[MicroBatch], n_ranks: int, estimator: Estimator) -> float:
    """Exact minimum makespan by branch-and-bound over all assignments."""
    if len(microbatches) > ORACLE_MAX_MICROBATCHES or n_ranks > ORACLE_MAX_RANKS:
        raise InstanceTooLarge(
            f"balance_oracle handles <= {ORACLE_MAX_MICROBATCHES} micro-batches and <= {ORACLE_MAX_RANKS} ranks"
        )
    return makespan_oracle([microbatch_cost(estimator, mb) for mb in microbatches], n_ranks)


def makespan_oracle(costs: Sequence[float], n_ranks: int) -> float:
    costs = sorted(costs, reverse=True)
    if not costs:
        return 0.0
    best = balance_lpt_costs(costs, n_ranks)
    lower = max(costs[0], sum(costs) / n_ranks)
    loads = [0.0] * n_ranks

    def dfs(i: int) -> None:
        nonlocal best
        if best <= lower:
            return
        if i == len(costs):
            best = min(best, max(loads))
            return
        seen = set()
        for r in range(n_ranks):
            if loads[r] in seen:
                continue
            seen.add(loads[r])
            if loads[r] + costs[i] >= best:
                continue
            loads[r] += costs[i]
            dfs(i + 1)
            loads[r] -= costs[i]

    dfs(0)
    return best


def balance_lpt_costs(costs: Sequence[float], n_ranks: int) -> float:
    loads = [0.0] * n_ranks
    for c in sorted(costs, reverse=True):
        r = min(range(n_ranks), key=lambda k: (loads[k], k))
        loads[r] += c
    return max(loads)


class _Done(Future):
    def __init__(self, value):
        super().__init__()
        self.set_result(value)


def plan_next_batch(
    queue: Sequence[Sequence[MicroBatch]],
    n_ranks: int,
    estimator: Estimator,
    executor: Executor | None = None,
    balancer: Callable = balance_lpt,
) -> Future:
    """Balance the head of ``queue`` as a deferred computation.

    With an executor (e.g. a one-worker process pool) the work runs off the
    caller's thread; without one the result is computed eagerly. Either way
    the outcome equals ``balancer(queue[0], n_ranks, estimator)``.
    """
    if not queue:
        raise ValidationError("plan_next_batch needs a non-empty queue")
    head = list(queue[0])
    if executor is None:
        return _Done(balancer(head, n_ranks, estimator))
    return executor.submit(balancer, head, n_ranks, estimator)
