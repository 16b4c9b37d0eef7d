import math

import pytest

from gbsemu.errors import ValidationError
from gbsemu.subsets import (
    BELL,
    colex_rank,
    pair_rank,
    partition_patterns,
    subset_rank,
    subset_unrank,
    table_size,
)


def test_order1_offsets():
    M = 9
    for i in range(M):
        assert subset_rank((i,), M, 3) == i


def test_first_pair_offset():
    # colex enumeration of pairs starts right after the M singletons
    M = 4
    pairs = sorted(
        ((i, j) for j in range(M) for i in range(j)),
        key=lambda s: colex_rank(s),
    )
    assert pairs[0] == (0, 1)
    assert subset_rank((0, 1), M, 2) == M
    for r, S in enumerate(pairs):
        assert subset_rank(S, M, 2) == M + r


def test_rank_unrank_roundtrip():
    M, K = 6, 4
    for off in range(table_size(M, K)):
        S = subset_unrank(off, M, K)
        assert subset_rank(S, M, K) == off


def test_rank_errors():
    with pytest.raises(ValidationError):
        subset_rank((2, 1), 5, 3)
    with pytest.raises(ValidationError):
        subset_rank((0, 5), 5, 3)
    with pytest.raises(ValidationError):
        subset_rank((0, 1, 2, 3), 5, 3)
    with pytest.raises(ValidationError):
        subset_unrank(table_size(5, 3), 5, 3)


def test_pair_rank_matches_subset_rank():
    M = 7
    for j in range(M):
        for i in range(j):
            assert pair_rank(i, j) == subset_rank((i, j), M, 2) - M
            assert pair_rank(j, i) == pair_rank(i, j)


def test_bell_counts():
    for d, b in BELL.items():
        assert len(partition_patterns(d)) == b


def test_pattern_weights_d1_d2():
    (p1,) = partition_patterns(1)
    assert p1.blocks == ((0,),) and p1.weight == 1.0
    pats = {pat.blocks: pat.weight for pat in partition_patterns(2)}
    assert pats[((0, 1),)] == 1.0
    assert pats[((0,), (1,))] == -1.0


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_weights_sum_to_zero(d):
    # the cumulant of a deterministic variable vanishes for d >= 2
    total = sum(pat.weight for pat in partition_patterns(d))
    assert total == pytest.approx(0.0, abs=1e-12)


def test_patterns_cover_and_disjoint():
    for d in (3, 5):
        for pat in partition_patterns(d):
            flat = [i for b in pat.blocks for i in b]
            assert sorted(flat) == list(range(d))
            assert all(b for b in pat.blocks)


def test_partition_order_range():
    with pytest.raises(ValidationError):
        partition_patterns(0)
    with pytest.raises(ValidationError):
        partition_patterns(7)


def test_table_size():
    assert table_size(10, 4) == sum(math.comb(10, d) for d in (1, 2, 3, 4)) == 385
