import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_items
from ditsched.errors import InstanceTooLarge, ValidationError
from ditsched.packing import pack_by_stage, pack_ffd, pack_oracle


def naive_ffd(lengths, capacity):
    """Plain list-of-lists first-fit-decreasing, ids sorted by (-len, id)."""
    order = sorted(range(len(lengths)), key=lambda i: (-lengths[i], i))
    bins = []
    for i in order:
        for b in bins:
            if sum(lengths[j] for j in b) + lengths[i] <= capacity:
                b.append(i)
                break
        else:
            bins.append([i])
    return bins


def partitions(seq):
    if not seq:
        yield []
        return
    first, rest = seq[0], seq[1:]
    for p in partitions(rest):
        for k in range(len(p)):
            yield p[:k] + [[first] + p[k]] + p[k + 1:]
        yield [[first]] + p


def brute_min_bins(lengths, capacity):
    return min(
        (len(p) for p in partitions(list(lengths)) if all(sum(b) <= capacity for b in p)),
        default=0,
    )


def bins_of(mbs):
    return [list(mb.lengths) for mb in mbs]


def test_pigeonhole():
    assert bins_of(pack_ffd(make_items([5, 5, 5]), 10)) == [[5, 5], [5]]


def test_item_at_capacity():
    mbs = pack_ffd(make_items([10]), 10)
    assert len(mbs) == 1 and mbs[0].total_tokens == 10


def test_reference_trace():
    lengths = [7, 6, 3, 3, 2, 2]
    ref = [[lengths[i] for i in b] for b in naive_ffd(lengths, 10)]
    assert ref == [[7, 3], [6, 3], [2, 2]]
    assert bins_of(pack_ffd(make_items(lengths), 10)) == ref


def test_oversized_item_named():
    with pytest.raises(ValidationError, match="item 1"):
        pack_ffd(make_items([3, 11]), 10)


def test_oracle_examples():
    assert pack_oracle([5, 5, 5], 10) == 2
    assert pack_oracle([6, 6, 6, 4, 4, 4], 10) == 3
    assert pack_oracle([], 10) == 0
    assert pack_oracle(make_items([6, 6, 6, 4, 4, 4]), 10) == 3


def test_oracle_rejects_large_instance():
    with pytest.raises(InstanceTooLarge):
        pack_oracle([1] * 15, 10)


def test_oracle_matches_partition_enumeration():
    rng = random.Random(1)
    for _ in range(200):
        cap = rng.randint(5, 20)
        lengths = [rng.randint(1, cap) for _ in range(rng.randint(0, 7))]
        assert pack_oracle(lengths, cap) == brute_min_bins(lengths, cap)


def test_ffd_quality_bound_seeded():
    rng = random.Random(2024)
    for _ in range(1000):
        cap = rng.randint(10, 100)
        lengths = [rng.randint(1, cap) for _ in range(rng.randint(1, 12))]
        mbs = pack_ffd(make_items(lengths), cap)
        opt = pack_oracle(lengths, cap)
        assert len(mbs) <= math.ceil(11 / 9 * opt + 1)
        assert all(mb.total_tokens <= cap for mb in mbs)


instances = st.integers(2, 60).flatmap(
    lambda cap: st.tuples(st.just(cap), st.lists(st.integers(1, cap), min_size=1, max_size=12))
)


@given(instances)
def test_ffd_matches_reference_and_conserves_tokens(inst):
    cap, lengths = inst
    mbs = pack_ffd(make_items(lengths), cap)
    assert [list(mb.items) for mb in mbs] == naive_ffd(lengths, cap)
    assert sum(mb.total_tokens for mb in mbs) == sum(lengths)
    assert sorted(i for mb in mbs for i in mb.items) == list(range(len(lengths)))


@given(instances, st.randoms())
def test_ffd_permutation_invariant(inst, rnd):
    cap, lengths = inst
    items = make_items(lengths)
    shuffled = list(items)
    rnd.shuffle(shuffled)
    assert pack_ffd(shuffled, cap) == pack_ffd(items, cap)


def test_pack_by_stage_keeps_stages_apart():
    items = make_items([4, 4], stage=0) + [
        it.__class__(it.id + 2, it.modality, it.task, 1, it.seq_len, it.media) for it in make_items([4, 4])
    ]
    mbs = pack_by_stage(items, 8, first_id=5)
    assert [mb.id for mb in mbs] == [5, 6]
    assert [set(mb.items) for mb in mbs] == [{0, 1}, {2, 3}]
