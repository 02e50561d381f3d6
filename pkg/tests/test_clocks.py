import itertools
import random

import pytest

from causalmesh.errors import ConfigurationError, KeyMismatchError
from causalmesh.services.core.clocks import (
    Ordering,
    make_clock,
    vc_compare,
    vc_increment,
    vc_leq,
    vc_less,
    vc_merge,
    vc_merge_all,
    zero_clock,
)
from causalmesh.services.core.versions import (
    Version,
    VersionedValue,
    canonical_json,
    deps_add,
    deps_covered_by,
    deps_merge,
    resolve,
    resolve_all,
)


def test_zero_clock_and_increment():
    assert zero_clock(3) == (0, 0, 0)
    assert vc_increment((0, 0, 0), 1) == (0, 1, 0)
    assert vc_increment((2, 0, 5), 2) == (2, 0, 6)


@pytest.mark.parametrize("bad", [0, -1])
def test_zero_clock_rejects_empty_cluster(bad):
    with pytest.raises(ConfigurationError):
        zero_clock(bad)


def test_increment_out_of_range():
    with pytest.raises(ConfigurationError):
        vc_increment((0, 0), 2)


def test_make_clock_rejects_negative():
    assert make_clock([1, 2]) == (1, 2)
    with pytest.raises(ConfigurationError):
        make_clock([1, -1])


def test_merge_is_elementwise_max():
    assert vc_merge((1, 0, 3), (0, 2, 1)) == (1, 2, 3)
    assert vc_merge_all([(1, 0), (0, 4), (2, 1)], (0, 0)) == (2, 4)


def test_width_mismatch_is_configuration_error():
    with pytest.raises(ConfigurationError):
        vc_merge((1, 0), (1, 0, 0))
    with pytest.raises(ConfigurationError):
        vc_leq((1,), (1, 0))


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ((1, 0), (1, 0), Ordering.EQUAL),
        ((1, 0), (1, 1), Ordering.LESS),
        ((2, 1), (1, 1), Ordering.GREATER),
        ((1, 0), (0, 1), Ordering.CONCURRENT),
    ],
)
def test_compare(a, b, expected):
    assert vc_compare(a, b) == expected
    assert vc_less(a, b) == (expected == Ordering.LESS)


def test_merge_laws_hold_on_random_clocks():
    rng = random.Random(11)
    clocks = [tuple(rng.randint(0, 3) for _ in range(3)) for _ in range(12)]
    for a, b, c in itertools.product(clocks[:6], repeat=3):
        assert vc_merge(a, b) == vc_merge(b, a)
        assert vc_merge(vc_merge(a, b), c) == vc_merge(a, vc_merge(b, c))
        assert vc_merge(a, a) == a
        assert vc_leq(a, vc_merge(a, b))


# ============================================================================
# Dependency maps
# ============================================================================

def test_deps_add_merges_existing_key():
    d = deps_add({}, "x", (1, 0))
    d = deps_add(d, "x", (0, 2))
    assert d == {"x": (1, 2)}


def test_deps_add_does_not_mutate_input():
    original = {"x": (1, 0)}
    deps_add(original, "y", (0, 1))
    assert original == {"x": (1, 0)}


def test_deps_merge_and_cover():
    merged = deps_merge({"x": (1, 0)}, {"x": (0, 1), "y": (2, 2)})
    assert merged == {"x": (1, 1), "y": (2, 2)}
    assert deps_covered_by({"x": (1, 0)}, merged)
    assert not deps_covered_by({"z": (0, 0)}, merged)


# ============================================================================
# Resolve
# ============================================================================

def test_newer_version_overwrites():
    old = VersionedValue(value=b"a", vc=(1, 0))
    new = VersionedValue(value=b"b", vc=(1, 1))
    assert resolve(old, new) == new
    assert resolve(new, old) == new


def test_concurrent_versions_merge_clock_and_keep_larger_writer():
    a = VersionedValue(value=b"A", vc=(1, 0))
    b = VersionedValue(value=b"B", vc=(0, 1))
    out = resolve(a, b)
    assert out.value == b"A"
    assert out.vc == (1, 1)
    assert out.origin_vc == (1, 0)


def test_resolve_rejects_different_keys():
    with pytest.raises(KeyMismatchError):
        resolve(Version(key="x", value=b"1", vc=(1,)), Version(key="y", value=b"1", vc=(1,)))


def test_resolve_is_a_semilattice_join():
    rng = random.Random(3)
    pool = [
        VersionedValue(value=bytes([rng.randint(0, 3)]), vc=tuple(rng.randint(0, 2) for _ in range(3)))
        for _ in range(8)
    ]
    for a, b, c in itertools.product(pool[:5], repeat=3):
        assert resolve(a, b) == resolve(b, a)
        assert resolve(resolve(a, b), c) == resolve(a, resolve(b, c))
        assert resolve(a, a) == a


def test_resolve_all_is_order_independent():
    pool = [
        VersionedValue(value=b"p", vc=(2, 0, 0)),
        VersionedValue(value=b"q", vc=(0, 3, 0)),
        VersionedValue(value=b"r", vc=(1, 1, 1)),
    ]
    outcomes = {resolve_all(order) for order in itertools.permutations(pool)}
    assert len(outcomes) == 1
    assert resolve_all([]) is None


def test_canonical_json_is_sorted_and_hex_encodes_bytes():
    v = Version(key="x", value=b"\x01\xff", vc=(1, 0), deps={"b": (0, 1), "a": (1, 0)})
    text = canonical_json(v)
    assert '"value":"01ff"' in text
    assert text.index('"a"') < text.index('"b"')
    assert Version.model_validate_json(text) == v
