"""Seed fan-out: stable, scope-sensitive, order-free."""

from irisbench.rng import derive_seed, substream


def test_derive_seed_deterministic_and_64bit():
    a = derive_seed(42, "stage", "x")
    assert a == derive_seed(42, "stage", "x")
    assert 0 <= a < 1 << 64


def test_derive_seed_scope_sensitivity():
    base = derive_seed(7, "enc", 12)
    assert base != derive_seed(7, "enc", 13)
    assert base != derive_seed(8, "enc", 12)
    assert base != derive_seed(7, "enc12")        # joining is not concatenation
    assert base != derive_seed(7, 12, "enc")


def test_substream_independent_of_call_order():
    first = substream(3, "a").random(4)
    _ = substream(3, "b").random(100)
    again = substream(3, "a").random(4)
    assert (first == again).all()


def test_substream_distinct_scopes_differ():
    assert substream(3, "a").random() != substream(3, "b").random()
    assert substream(3, "a").random() != substream(4, "a").random()


def test_known_value_regression():
    # frozen from a reference run; any change here breaks every stored
    # manifest and pair list, so it must be deliberate
    assert derive_seed(0, "anchor") == derive_seed(0, "anchor")
    frozen = derive_seed(20240101, "noise", "subj001", "L", 5, 0, 0)
    assert frozen == 17060857072588999288
