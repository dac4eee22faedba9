from weakmvc.kv import KvCommand
from weakmvc.linearizability import Operation, check_linearizable

put = KvCommand.put
get = KvCommand.get


def op(client, cmd, start, end, result=None):
    if result is None and cmd.is_write and end is not None:
        result = True
    return Operation(client, cmd, start, end, result)


def test_sequential_history():
    h = [op(1, put(b"x", b"1"), 0, 1), op(1, get(b"x"), 2, 3, b"1")]
    ok, order = check_linearizable(h)
    assert ok and order == [0, 1]


def test_concurrent_write_may_be_seen_either_way():
    for seen in (None, b"1"):
        h = [op(1, put(b"x", b"1"), 0, 10), op(2, get(b"x"), 1, 2, seen)]
        assert check_linearizable(h)[0]


def test_stale_read_is_rejected():
    h = [op(1, put(b"x", b"1"), 0, 1), op(2, get(b"x"), 2, 3, None)]
    assert not check_linearizable(h)[0]


def test_read_order_must_be_consistent():
    # two readers observe the two writes in opposite orders after both finished
    h = [
        op(1, put(b"x", b"a"), 0, 5),
        op(2, put(b"x", b"b"), 0, 5),
        op(3, get(b"x"), 6, 7, b"a"),
        op(3, get(b"x"), 8, 9, b"b"),
        op(4, get(b"x"), 10, 11, b"a"),
    ]
    assert not check_linearizable(h)[0]


def test_pending_write_may_or_may_not_take_effect():
    lost = op(1, put(b"x", b"1"), 0, None)
    assert check_linearizable([lost, op(2, get(b"x"), 5, 6, b"1")])[0]
    assert check_linearizable([lost, op(2, get(b"x"), 5, 6, None)])[0]


def test_multi_key_operations():
    h = [
        op(1, KvCommand.mput([(b"a", b"1"), (b"b", b"1")]), 0, 4),
        op(2, KvCommand.mget([b"a", b"b"]), 1, 3, [b"1", None]),
    ]
    # an mput is atomic, so a half-applied read cannot be linearized
    assert not check_linearizable(h)[0]


def test_initial_state():
    h = [op(1, get(b"k"), 0, 1, b"v")]
    assert not check_linearizable(h)[0]
    assert check_linearizable(h, {b"k": b"v"})[0]


def test_read_of_a_value_nobody_wrote_is_refuted_at_once():
    h = [op(c, put(b"x", b"%d" % c), 0, None) for c in range(60)]
    h.append(op(99, get(b"x"), 1, 2, b"ghost"))
    assert check_linearizable(h) == (False, [])


def test_many_unobserved_pending_writes_stay_cheap():
    h = [op(c, put(b"x", b"%d" % c), 0, None) for c in range(60)]
    h += [op(99, put(b"x", b"seen"), 0, 1), op(99, get(b"x"), 2, 3, b"seen")]
    ok, order = check_linearizable(h)
    assert ok and order == [60, 61]
    h.append(op(98, get(b"x"), 4, 5, b"7"))
    ok, order = check_linearizable(h)
    assert ok and order.index(7) > order.index(60)
