import math
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchfree import gs2
from patchfree.errors import ConfigError
from patchfree.rng import SplitMix64


def fake_positions(counts, offset=0):
    """Distinct coordinates per class: class k occupies row k."""
    return {k: np.array([(k, offset + j) for j in range(n)], dtype=np.int64).reshape(-1, 2)
            for k, n in counts.items()}


def as_multiset(batches):
    return Counter(tuple(r) for b in batches for r in b.tolist())


def check_invariants(pos, sched, alpha):
    counts = {k: len(v) for k, v in pos.items()}
    want = Counter((k, int(r), int(c)) for k, v in pos.items() for r, c in v)
    assert as_multiset(sched.batches) == want
    assert len(sched) == max(math.ceil(n / alpha) for n in counts.values() if n)
    stopped = set()
    for b, batch in enumerate(sched.batches):
        per = Counter(batch[:, 0].tolist())
        assert max(per.values()) <= alpha
        assert not stopped & set(per)
        for k, n in counts.items():
            if n == 0:
                continue
            left = n - b * alpha
            if left <= 0:
                stopped.add(k)
            else:
                assert per[k] == min(alpha, left)


# -- hand traces -------------------------------------------------------------------


def test_two_class_trace():
    sched = gs2.build_schedule(fake_positions({1: 5, 2: 3}), alpha=2, seed=0)
    assert [len(b) for b in sched.batches] == [4, 3, 1]
    assert Counter(sched.batches[0][:, 0].tolist()) == {1: 2, 2: 2}
    assert Counter(sched.batches[1][:, 0].tolist()) == {1: 2, 2: 1}
    assert sched.batches[2][:, 0].tolist() == [1]


def test_single_small_class_is_one_batch():
    sched = gs2.build_schedule(fake_positions({3: 7}), alpha=10)
    assert [len(b) for b in sched.batches] == [7]


def test_exact_multiples_have_no_remainder_batches():
    sched = gs2.build_schedule(fake_positions({1: 6, 2: 6, 3: 6}), alpha=3)
    assert [len(b) for b in sched.batches] == [9, 9]


def test_alpha_covers_everything():
    pos = fake_positions({1: 4, 2: 9, 3: 1})
    for epoch in range(3):
        sched = gs2.build_schedule(pos, alpha=9, seed=5, epoch=epoch)
        assert len(sched) == 1 and len(sched.batches[0]) == 14


def test_rejects_bad_input():
    with pytest.raises(ConfigError):
        gs2.build_schedule(fake_positions({1: 3}), alpha=0)
    with pytest.raises(ConfigError):
        gs2.build_schedule({1: np.zeros((0, 2))}, alpha=2)


def test_empty_class_is_skipped_with_warning():
    with pytest.warns(UserWarning, match="class 2"):
        sched = gs2.build_schedule({1: fake_positions({1: 3})[1], 2: np.zeros((0, 2))}, alpha=2)
    assert sched.warnings and sched.total() == 3


def test_batch_count_falls_with_alpha():
    pos = fake_positions({1: 40, 2: 25, 3: 7})
    sizes = [len(gs2.build_schedule(pos, a)) for a in (1, 2, 5, 10, 20, 40)]
    assert sizes == [40, 20, 8, 4, 2, 1]


# -- determinism and epochs ----------------------------------------------------------


def test_same_seed_same_schedule():
    pos = fake_positions({1: 30, 2: 17, 5: 3})
    a = gs2.build_schedule(pos, 4, seed=9, epoch=2)
    b = gs2.build_schedule(pos, 4, seed=9, epoch=2)
    assert a.dump() == b.dump()


def test_epochs_reshuffle_the_same_multiset():
    pos = fake_positions({1: 30, 2: 17, 5: 3})
    s0 = gs2.build_schedule(pos, 4, seed=1)
    s1 = gs2.reshuffle_epoch(s0, 1)
    assert as_multiset(s0.batches) == as_multiset(s1.batches)
    assert len(s0) == len(s1)
    assert s0.dump() != s1.dump()
    assert gs2.reshuffle_epoch(s0, 1).dump() == s1.dump()


def test_seed_changes_order():
    pos = fake_positions({1: 50})
    assert gs2.build_schedule(pos, 5, seed=0).dump() != gs2.build_schedule(pos, 5, seed=1).dump()


def test_splitmix_reference_vector():
    # published SplitMix64 output for a zero state
    r = SplitMix64(0)
    r.state = 0
    assert [r.next_u64() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
                                               0x06C45D188009454F]


def test_splitmix_bounded_draws_are_uniform():
    r = SplitMix64(3, 1)
    counts = np.bincount([r.below(6) for _ in range(60000)], minlength=6)
    # chi-square with 5 dof; 20.5 is the 0.999 quantile
    chi2 = ((counts - 10000) ** 2 / 10000).sum()
    assert chi2 < 20.5


# -- dump and iterate ----------------------------------------------------------------


def test_dump_format():
    sched = gs2.build_schedule(fake_positions({1: 3, 2: 1}), alpha=2, seed=0)
    lines = sched.dump().splitlines()
    assert len(lines) == 4
    parsed = [tuple(map(int, ln.split())) for ln in lines]
    assert [p[0] for p in parsed] == [0, 0, 0, 1]
    assert all(p[2] == p[1] for p in parsed)  # fake positions put class k on row k


def test_iterate_yields_labelled_positions():
    pos = fake_positions({1: 5, 2: 3})
    sched = gs2.build_schedule(pos, 2)
    seen = 0
    for p, k in gs2.iterate(sched):
        assert p.shape == (len(k), 2)
        np.testing.assert_array_equal(p[:, 0], k)
        seen += len(k)
    assert seen == 8


def test_labeled_positions_respects_mask():
    labels = np.array([[0, 1, 2], [2, 0, 1]])
    mask = np.array([[1, 1, 0], [1, 1, 1]], bool)
    pos = gs2.labeled_positions(labels, mask)
    assert sorted(pos) == [1, 2]
    np.testing.assert_array_equal(pos[1], [[0, 1], [1, 2]])
    np.testing.assert_array_equal(pos[2], [[1, 0]])


# -- randomized ------------------------------------------------------------------------


def test_invariants_over_random_configs():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        k = int(rng.integers(1, 9))
        counts = {int(c): int(rng.integers(0, 60)) for c in rng.choice(np.arange(1, 20), k, replace=False)}
        if not any(counts.values()):
            counts[next(iter(counts))] = 1
        alpha = int(rng.integers(1, 30))
        pos = fake_positions(counts)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sched = gs2.build_schedule(pos, alpha, seed=trial)
            check_invariants(pos, sched, alpha)
            again = gs2.reshuffle_epoch(sched, 3)
            check_invariants(pos, again, alpha)
            assert again.dump() == gs2.build_schedule(pos, alpha, seed=trial, epoch=3).dump()


@settings(max_examples=150, deadline=None)
@given(counts=st.dictionaries(st.integers(1, 16), st.integers(1, 80), min_size=1, max_size=6),
       alpha=st.integers(1, 40), seed=st.integers(0, 2**63), epoch=st.integers(0, 50))
def test_schedule_properties(counts, alpha, seed, epoch):
    pos = fake_positions(counts)
    sched = gs2.build_schedule(pos, alpha, seed, epoch)
    check_invariants(pos, sched, alpha)
