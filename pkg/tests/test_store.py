import logging

import pytest

from causalmesh.errors import NotFoundError
from causalmesh.services.core.versions import Version
from causalmesh.services.store.versioned_store import VersionedStore, store_get, store_put, store_snapshot


def test_put_resolves_against_existing():
    st = VersionedStore()
    store_put(st, Version(key="x", value=b"a", vc=(1, 0)))
    store_put(st, Version(key="x", value=b"b", vc=(0, 1)))
    got = store_get(st, "x")
    assert got.value == b"a"
    assert got.vc == (1, 1)
    store_put(st, Version(key="x", value=b"c", vc=(2, 1)))
    assert store_get(st, "x").value == b"c"


def test_missing_key():
    st = VersionedStore()
    with pytest.raises(NotFoundError):
        st.get("nope")
    assert st.reads == 1
    assert "nope" not in st


def test_snapshot_is_a_copy():
    st = VersionedStore()
    st.put(Version(key="x", value=b"a", vc=(1,)))
    snap = store_snapshot(st)
    st.put(Version(key="y", value=b"b", vc=(2,)))
    assert list(snap) == ["x"]
    assert len(st) == 2


def test_history_keeps_every_put():
    st = VersionedStore(keep_history=True)
    for i in range(3):
        st.put(Version(key="x", value=bytes([i]), vc=(i + 1,)))
    assert [v.vc for v in st.history] == [(1,), (2,), (3,)]
    assert VersionedStore().history is None


def test_log_replay(tmp_path):
    path = tmp_path / "store.log"
    st = VersionedStore(log_path=path)
    st.put(Version(key="x", value=b"a", vc=(1, 0), deps={"y": (0, 1)}))
    st.put(Version(key="x", value=b"b", vc=(0, 2)))
    st.put(Version(key="y", value=b"y", vc=(0, 1)))

    again = VersionedStore(log_path=path)
    assert again.snapshot() == st.snapshot()
    assert again.get("x").vc == (1, 2)


def test_log_replay_skips_torn_line(tmp_path, caplog):
    path = tmp_path / "store.log"
    st = VersionedStore(log_path=path)
    st.put(Version(key="x", value=b"a", vc=(1,)))
    with open(path, "a", encoding="utf-8") as f:
        f.write('{"key":"y","value":"00","v')
    with caplog.at_level(logging.WARNING):
        again = VersionedStore(log_path=path)
    assert "x" in again and "y" not in again
    assert "skipping bad store log line 2" in caplog.text
