import pytest

from scenarios import failover_scenario, service_checks
from weakmvc.kv import KvCommand
from weakmvc.linearizability import Operation, check_linearizable
from weakmvc.sim import run_scenario


@pytest.mark.parametrize("seed", range(6))
def test_failover_scenarios(seed):
    cfg, wl = failover_scenario(seed)
    res = run_scenario(cfg, wl, seed)
    assert len(res.history) <= 200 and wl.clients <= 5
    assert service_checks(res) == []
    assert res.stats.failovers > 0


def test_checks_notice_a_corrupted_history():
    cfg, wl = failover_scenario(0)
    res = run_scenario(cfg, wl, 0)
    i = next(k for k, op in enumerate(res.history) if op.command.op.name == "GET" and op.completed_at is not None)
    op = res.history[i]
    res.history[i] = Operation(op.client, op.command, op.invoked_at, op.completed_at, b"never written")
    assert "history is not linearizable" in service_checks(res)


def test_checks_notice_divergent_state():
    cfg, wl = failover_scenario(2)
    res = run_scenario(cfg, wl, 2)
    res.live[0].machine.store[b"extra"] = b"1"
    assert "replica states differ" in service_checks(res)


def test_history_records_every_answered_operation():
    cfg, wl = failover_scenario(3)
    res = run_scenario(cfg, wl, 3)
    answered = [op for op in res.history if op.completed_at is not None]
    assert len(answered) + res.stats.gave_up * wl.client_batch >= len(res.history)
    assert all(op.invoked_at <= op.completed_at for op in answered)
    writes = [op for op in answered if op.command.is_write]
    assert all(op.result is True for op in writes)
    assert check_linearizable([Operation(1, KvCommand.get(b"k"), 0, 1, None)])[0]
