import numpy as np

from csforest.rng import child_sequence, kernel_seed, spawn_rng


def test_same_tags_same_stream():
    a = spawn_rng(7, "data", 3).standard_normal(16)
    b = spawn_rng(7, "data", 3).standard_normal(16)
    assert np.array_equal(a, b)


def test_different_tags_different_streams():
    a = spawn_rng(7, "data", 3).standard_normal(16)
    b = spawn_rng(7, "data", 4).standard_normal(16)
    c = spawn_rng(8, "data", 3).standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_string_and_int_tags_are_distinct():
    assert not np.array_equal(
        spawn_rng(1, "2").standard_normal(8), spawn_rng(1, 2).standard_normal(8)
    )


def test_child_sequence_stable_entropy():
    s1 = child_sequence(5, "tree", 0)
    s2 = child_sequence(5, "tree", 0)
    assert s1.entropy == s2.entropy


def test_kernel_seed_nonzero_and_deterministic():
    seeds = {kernel_seed(spawn_rng(0, "k", i)) for i in range(64)}
    assert all(s > 0 for s in seeds)
    assert len(seeds) == 64
    assert kernel_seed(spawn_rng(0, "k", 5)) == kernel_seed(spawn_rng(0, "k", 5))
