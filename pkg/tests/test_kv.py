import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakmvc.kv import KvCommand, KvOp, KvStateMachine, apply_kv, decode_result, execute
from weakmvc.types import Batch, Request, RequestId

blobs = st.binary(max_size=12)
commands = st.one_of(
    st.builds(KvCommand.get, blobs),
    st.builds(KvCommand.put, blobs, blobs),
    st.builds(KvCommand.mget, st.lists(blobs, min_size=1, max_size=4)),
    st.builds(KvCommand.mput, st.lists(st.tuples(blobs, blobs), min_size=1, max_size=4)),
)


@given(commands)
def test_command_roundtrip(cmd):
    assert KvCommand.decode(cmd.encode()) == cmd


def test_command_validation():
    with pytest.raises(ValueError):
        KvCommand(KvOp.GET, ())
    with pytest.raises(ValueError):
        KvCommand(KvOp.PUT, (b"a",), ())
    with pytest.raises(ValueError):
        KvCommand(KvOp.GET, (b"a",), (b"v",))
    with pytest.raises(ValueError):
        KvCommand.decode(b"\x02\x00")
    with pytest.raises(ValueError):
        KvCommand.decode(KvCommand.put(b"k", b"v").encode()[:-3])
    with pytest.raises(ValueError):
        KvCommand.decode(KvCommand.get(b"k").encode() + b"!")


def test_execute_and_decode_results():
    store = {}
    put = KvCommand.put(b"a", b"1")
    assert decode_result(put, execute(store, put)) is True
    assert decode_result(KvCommand.get(b"a"), execute(store, KvCommand.get(b"a"))) == b"1"
    assert decode_result(KvCommand.get(b"z"), execute(store, KvCommand.get(b"z"))) is None
    mput = KvCommand.mput([(b"b", b""), (b"c", b"3")])
    execute(store, mput)
    mget = KvCommand.mget([b"a", b"b", b"x", b"c"])
    assert decode_result(mget, execute(store, mget)) == [b"1", b"", None, b"3"]


@given(st.lists(commands, max_size=20))
def test_state_machine_matches_pure_application(cmds):
    reqs = tuple(Request(RequestId(1, i), i, c.encode()) for i, c in enumerate(cmds, 1))
    sm = KvStateMachine()
    results = [sm.apply(r) for r in reqs]
    if reqs:
        store, replies = apply_kv({}, Batch(reqs))
        assert store == sm.store
        assert [r.result for r in replies] == results


def test_digest_tracks_contents_only():
    a, b = KvStateMachine(), KvStateMachine()
    a.apply(Request(RequestId(1, 1), 0, KvCommand.put(b"x", b"1").encode()))
    a.apply(Request(RequestId(1, 2), 0, KvCommand.put(b"y", b"2").encode()))
    b.restore({b"y": b"2", b"x": b"1"})
    assert a.digest() == b.digest()
    b.restore({b"x": b"12"})
    assert a.digest() != b.digest()
