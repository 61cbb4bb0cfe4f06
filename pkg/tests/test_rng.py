import numpy as np

from latentdiff.nnet import RngKey, make_rng


def test_same_seed_and_stream_reproduce_draws():
    a = make_rng(42, "train").standard_normal(100)
    b = make_rng(42, "train").standard_normal(100)
    np.testing.assert_array_equal(a, b)


def test_distinct_streams_are_independent():
    a = make_rng(42, "train").standard_normal(100)
    b = make_rng(42, "eval").standard_normal(100)
    assert not np.array_equal(a, b)


def test_distinct_seeds_differ():
    a = make_rng(1, "x").standard_normal(10)
    b = make_rng(2, "x").standard_normal(10)
    assert not np.array_equal(a, b)


def test_child_streams_nest():
    key = RngKey(7, "generate")
    assert key.child("bin3").stream == "generate/bin3"
    a = key.child("bin3").generator().random(5)
    b = RngKey(7, "generate/bin3").generator().random(5)
    np.testing.assert_array_equal(a, b)
