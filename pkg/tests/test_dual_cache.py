import itertools
import random
from collections import deque

import pytest

from causalmesh.errors import UnsatisfiableDependencyError
from causalmesh.services.cache.cut import (
    ccache_as_versions,
    forms_cut,
    is_strict_causal_cut,
    snapshot_forms_cut,
)
from causalmesh.services.cache.dual_cache import (
    DualCache,
    ReverseDepIndex,
    collect_transitive,
    evict,
    icache_insert,
    icache_latest,
    integrate,
    integrate_tcc,
)
from causalmesh.services.core.clocks import vc_leq, vc_merge
from causalmesh.services.core.versions import Version, VersionedValue, resolve


def V(key, vc, deps=None, value=None):
    return Version(key=key, value=value or f"{key}{list(vc)}".encode(), vc=tuple(vc), deps=deps or {})


# ============================================================================
# Integration
# ============================================================================

def test_integrate_pulls_transitive_dependencies():
    x = V("x", (1, 0, 0))
    y = V("y", (2, 0, 0), {"x": (1, 0, 0)})
    icache = {"x": [x], "y": [y]}
    icache2, ccache2, gvc2 = integrate(icache, {}, (0, 0, 0), {"y": (2, 0, 0)})
    assert set(ccache2) == {"x", "y"}
    assert ccache2["y"].vc == (2, 0, 0)
    assert icache2 == {}
    assert gvc2 == (2, 0, 0)


def test_integrate_is_pure():
    x = V("x", (1, 0))
    icache = {"x": [x]}
    ccache = {}
    integrate(icache, ccache, (0, 0), {"x": (1, 0)})
    assert icache == {"x": [x]}
    assert ccache == {}


def test_integrate_leaves_newer_versions_behind():
    x1 = V("x", (1, 0))
    x2 = V("x", (2, 0), {"x": (1, 0)})
    icache2, ccache2, _ = integrate({"x": [x1, x2]}, {}, (0, 0), {"x": (1, 0)})
    assert ccache2["x"].vc == (1, 0)
    assert [v.vc for v in icache2["x"]] == [(2, 0)]


def test_dependency_already_in_ccache_is_satisfied():
    ccache = {"x": VersionedValue(value=b"x", vc=(3, 0))}
    icache2, ccache2, gvc2 = integrate({}, ccache, (0, 0), {"x": (1, 0)})
    assert ccache2 == ccache
    assert gvc2 == (1, 0)


def test_unsatisfiable_dependency_raises():
    with pytest.raises(UnsatisfiableDependencyError) as info:
        integrate({}, {}, (0, 0), {"x": (1, 0)})
    assert info.value.key == "x"
    assert info.value.vc == (1, 0)


def test_merged_clock_dependency_pulls_both_concurrent_versions():
    a = V("x", (1, 0), value=b"A")
    b = V("x", (0, 1), value=b"B")
    icache2, ccache2, _ = integrate({"x": [a, b]}, {}, (0, 0), {"x": (1, 1)})
    assert ccache2["x"].vc == (1, 1)
    assert ccache2["x"].value == b"A"
    assert icache2 == {}


def test_implicit_same_key_takes_concurrent_versions():
    x_a = V("x", (1, 0, 0))
    x_b = V("x", (0, 1, 0))
    strict = collect_transitive({"x": [x_a, x_b]}, {}, {"x": (1, 0, 0)})
    implicit = collect_transitive({"x": [x_a, x_b]}, {}, {"x": (1, 0, 0)}, implicit_same_key=True)
    assert implicit["x"] == {(1, 0, 0), (0, 1, 0)}
    assert strict["x"] == {(1, 0, 0)}


def test_icache_insert_ignores_duplicate_clock():
    icache = {}
    assert icache_insert(icache, V("x", (1, 0)))
    assert not icache_insert(icache, V("x", (1, 0)))
    assert len(icache["x"]) == 1
    assert icache_latest(icache, "x").vc == (1, 0)
    assert icache_latest(icache, "y") is None


def _closure_oracle(icache, deps):
    """Fixpoint over (key, clock) pairs: the brute-force version of collect_transitive."""
    demanded = {(k, tuple(vc)) for k, vc in deps.items()}
    pulled = set()
    changed = True
    while changed:
        changed = False
        for key, vc in list(demanded):
            for v in icache.get(key, ()):
                if vc_leq(v.vc, vc) and (key, v.vc) not in pulled:
                    pulled.add((key, v.vc))
                    for k2, d2 in v.deps.items():
                        demanded.add((k2, tuple(d2)))
                    changed = True
    return pulled


def _random_history(rng, n=3, writes=10, keys="abcd", per_key=None):
    """Writes in causal order: each depends on a random subset of earlier writes."""
    history = []
    gvc = [0] * n
    counts = {}
    for _ in range(writes):
        key = rng.choice(keys)
        if per_key is not None and counts.get(key, 0) >= per_key:
            continue
        counts[key] = counts.get(key, 0) + 1
        server = rng.randrange(n)
        deps = {}
        for earlier in rng.sample(history, k=min(len(history), rng.randint(0, 2))):
            deps[earlier.key] = earlier.vc
        for vc in deps.values():
            gvc = [max(a, b) for a, b in zip(gvc, vc)]
        gvc[server] += 1
        history.append(V(key, tuple(gvc), deps))
    return history


def _fold_oracle(icache, pulled):
    """Per key, the resolve-fold of the pulled versions, in sorted clock order."""
    folded = {}
    for key, vc in sorted(pulled):
        v = next(v for v in icache[key] if v.vc == vc).as_value()
        folded[key] = v if key not in folded else resolve(folded[key], v)
    return {k: (v.vc, v.value) for k, v in folded.items()}


def _check_against_oracle(rng):
    n = rng.randint(1, 3)
    keys = "abcde"[: rng.randint(1, 5)]
    history = _random_history(rng, n=n, writes=rng.randint(1, 20), keys=keys, per_key=4)
    icache = {}
    for v in history:
        icache_insert(icache, v)
    targets = rng.sample(history, k=rng.randint(1, min(2, len(history))))
    demand = {}
    for t in targets:
        demand[t.key] = t.vc if t.key not in demand else vc_merge(demand[t.key], t.vc)
    pulled = _closure_oracle(icache, demand)
    expected = _fold_oracle(icache, pulled)

    icache2, ccache2, _ = integrate(icache, {}, (0,) * n, demand)
    moved = {(k, v.vc) for k, vs in icache.items() for v in vs} - {
        (k, v.vc) for k, vs in icache2.items() for v in vs
    }
    assert moved == pulled
    assert {k: (v.vc, v.value) for k, v in ccache2.items()} == expected
    recorded = {}
    for key, vc in moved:
        for v in icache[key]:
            if v.vc == vc:
                recorded.setdefault(key, {}).update(v.deps)
    assert is_strict_causal_cut(ccache_as_versions(ccache2, recorded))

    icache3, rings, _ = integrate_tcc(icache, {}, (0,) * n, demand, capacity=2)
    assert icache3 == icache2
    assert {k: (ring[-1].vc, ring[-1].value) for k, ring in rings.items()} == expected
    assert all(len(ring) == 1 for ring in rings.values())


def test_integrate_matches_closure_oracle_on_random_histories():
    rng = random.Random(5)
    for _ in range(300):
        _check_against_oracle(rng)


@pytest.mark.slow
def test_integrate_matches_closure_oracle_on_many_histories():
    rng = random.Random(11)
    for _ in range(10_000):
        _check_against_oracle(rng)


def test_dependency_met_by_newer_icache_version():
    x2 = V("x", (2, 0), {"y": (0, 1)})
    y1 = V("y", (0, 1))
    icache2, ccache2, _ = integrate({"x": [x2], "y": [y1]}, {}, (0, 0), {"x": (1, 0)})
    assert ccache2["x"].vc == (2, 0)
    assert ccache2["y"].vc == (0, 1)
    assert icache2 == {}


# ============================================================================
# TCC rings
# ============================================================================

def test_integrate_tcc_appends_to_bounded_ring():
    x1 = V("x", (1, 0))
    x2 = V("x", (2, 0), {"x": (1, 0)})
    icache2, rings, _ = integrate_tcc({"x": [x1]}, {}, (0, 0), {"x": (1, 0)}, capacity=2)
    icache3, rings, _ = integrate_tcc({"x": [x2]}, rings, (1, 0), {"x": (2, 0)}, capacity=2)
    assert [v.vc for v in rings["x"]] == [(1, 0), (2, 0)]
    icache4, rings2, _ = integrate_tcc(
        {"x": [V("x", (3, 0), {"x": (2, 0)})]}, rings, (2, 0), {"x": (3, 0)}, capacity=2
    )
    assert [v.vc for v in rings2["x"]] == [(2, 0), (3, 0)]
    assert [v.vc for v in rings["x"]] == [(1, 0), (2, 0)]


def test_integrate_tcc_skips_identical_head():
    rings = {"x": deque([V("x", (1, 0))], maxlen=3)}
    _, rings2, _ = integrate_tcc({}, rings, (1, 0), {"x": (1, 0)}, capacity=3)
    assert len(rings2["x"]) == 1


# ============================================================================
# Eviction
# ============================================================================

def test_evict_drops_dependents_transitively():
    rdi = ReverseDepIndex()
    rdi.record("x", {})
    rdi.record("y", {"x": (1, 0)})
    rdi.record("z", {"y": (2, 0)})
    rdi.record("w", {})
    ccache = {k: VersionedValue(value=b"v", vc=(1, 0)) for k in "xyzw"}
    assert set(evict(ccache, rdi, "x")) == {"w"}
    assert set(evict(ccache, rdi, "y")) == {"x", "w"}
    assert evict(ccache, rdi, "missing") == ccache


def test_dual_cache_evict_keeps_a_cut():
    cache = DualCache()
    x = V("x", (1, 0))
    y = V("y", (2, 0), {"x": (1, 0)})
    cache.insert(x)
    cache.insert(y)
    cache.integrate((0, 0), {"y": (2, 0)})
    assert set(cache.ccache) == {"x", "y"}
    assert cache.evict("x") == ["x", "y"]
    assert cache.ccache == {}
    assert is_strict_causal_cut(ccache_as_versions(cache.ccache, cache.recorded_deps()))


def test_clone_is_independent():
    cache = DualCache()
    cache.insert(V("x", (1, 0)))
    copy = cache.clone()
    copy.integrate((0, 0), {"x": (1, 0)})
    assert "x" in cache.icache and "x" not in cache.ccache


# ============================================================================
# Cuts
# ============================================================================

def test_strict_cut_requires_every_dependency():
    x = V("x", (1, 0))
    y = V("y", (2, 0), {"x": (1, 0)})
    assert is_strict_causal_cut([x, y])
    assert not is_strict_causal_cut([y])
    assert is_strict_causal_cut([V("x", (3, 0)), y])


def test_forms_cut_treats_absent_keys_as_obligations():
    y = V("y", (2, 0), {"x": (1, 0)})
    assert forms_cut([y])
    assert not forms_cut([y, V("x", (0, 1))])


def test_forms_cut_follows_lookup_transitively():
    # y needs x@1; the oldest x covering it needs z@3, but the set holds z@2.
    x = V("x", (1, 0), {"z": (3, 0)})
    y = V("y", (4, 0), {"x": (1, 0)})
    z = V("z", (2, 0))
    lookup = {"x": x}.get
    assert forms_cut([y, z])
    assert not forms_cut([y, z], lambda key, vc: lookup(key))
    assert snapshot_forms_cut({"y": y}, lambda key, vc: lookup(key))


def test_cut_oracle_agrees_on_small_sets():
    rng = random.Random(9)
    history = _random_history(rng, writes=7)
    for size in range(1, 4):
        for subset in itertools.combinations(history, size):
            held = {}
            for v in subset:
                held.setdefault(v.key, []).append(v.vc)
            brute = all(
                any(vc_leq(d, h) for h in held.get(k, ()))
                for v in subset
                for k, d in v.deps.items()
            )
            assert is_strict_causal_cut(subset) == brute
