"""Acceptance criteria 1-10, each at its stated tolerance and runtime limit."""

import asyncio
import os
import random
import subprocess
import sys
import time

from cluster import ProcessCluster
from msggen import random_message
from scenarios import failover_scenario, random_scenario, service_checks
from weakmvc import wire
from weakmvc.cli import main
from weakmvc.kv import KvCommand
from weakmvc.sim import (
    NetworkModel,
    SafetyViolation,
    ScenarioConfig,
    Workload,
    measure_termination,
    run_scenario,
    run_slots,
    write_stats,
    write_trace,
)
from weakmvc.sim.explore import explore_mutant, explore_small
from weakmvc.tcp import TcpClient
from weakmvc.types import MsgKind

TRIALS = 10_000
_termination = {}


def termination_run():
    if "worst" not in _termination:
        t0 = time.perf_counter()
        _termination["worst"] = measure_termination(TRIALS, "worst", 2024)
        _termination["seconds"] = time.perf_counter() - t0
    return _termination["worst"], _termination["seconds"]


def test_criterion_1_fast_path_latency(verdict):
    t0 = time.perf_counter()
    slots = run_slots(3, 1, "unanimous", 1000, 1)
    elapsed = time.perf_counter() - t0
    fast = sum(1 for s in slots if s.message_delays == 3 and s.decision_kind == "Agreed")
    wide = run_slots(5, 2, "unanimous", 1000, 2)
    fast5 = sum(1 for s in wide if s.message_delays == 3 and s.decision_kind == "Agreed")
    ok = fast == 1000 and elapsed < 1.0
    verdict(
        1,
        ok,
        f"{fast}/1000 slots at 3 delays (n=3) in {elapsed:.2f}s (limit 1s); "
        f"n=5 with jitter (reported): {fast5}/1000, the rest adopted an announced decision at hop 4",
    )
    assert ok


def test_criterion_2_unique_proposals_fast_path(verdict):
    slots = run_slots(3, 1, "distinct", 1000, 3)
    good = sum(1 for s in slots if s.message_delays == 3 and s.decision_kind == "Null")
    ok = good == 1000
    verdict(2, ok, f"{good}/1000 all-distinct slots decide Null at 3 delays")
    assert ok


def test_criterion_3_geometric_termination(verdict):
    r, elapsed = termination_run()
    worst = min(range(1, 11), key=lambda t: r.cdf[t - 1] - (1 - 0.5**t - 0.03))
    failing = [t for t in range(1, 11) if r.cdf[t - 1] < 1 - 0.5**t - 0.03]
    ok = not failing and elapsed < 60
    cdf = ", ".join(f"{r.cdf[t - 1]:.3f}" for t in range(1, 11))
    verdict(
        3,
        ok,
        f"CDF(1..10) = [{cdf}] vs 1-(1/2)^t-0.03; tightest t={worst}; "
        f"below bound at t={failing or 'none'}; {TRIALS} trials in {elapsed:.1f}s (limit 60s)",
    )
    for t in range(1, 11):
        assert r.cdf[t - 1] >= 1 - 0.5**t - 0.03, f"phase {t}"
    assert elapsed < 60


def test_criterion_4_average_rounds(verdict):
    r, _ = termination_run()
    limit = 5 + 3 * r.sigma_of_mean
    unanimous = measure_termination(1000, "unanimous", 7)
    ok = r.mean_rounds <= limit and unanimous.mean_rounds == 3.0 and r.capped == 0
    verdict(
        4,
        ok,
        f"mean rounds {r.mean_rounds:.4f} <= {limit:.4f} (5 + 3 sigma, sigma={r.sigma_of_mean:.4f}); "
        f"unanimous mean {unanimous.mean_rounds}",
    )
    assert ok


def test_criterion_5_randomized_safety(verdict):
    t0 = time.perf_counter()
    decided = 0
    violations = []
    shapes = set()
    for seed in range(1000):
        cfg, wl = random_scenario(seed)
        shapes.add((cfg.n, len(cfg.crashes)))
        try:
            res = run_scenario(cfg, wl, seed)
        except SafetyViolation as e:
            violations.append((seed, str(e.report)))
            continue
        decided += res.stats.decided
        if res.stats.stalled:
            violations.append((seed, "stalled"))
    elapsed = time.perf_counter() - t0
    ok = not violations and decided >= 100_000 and elapsed < 300
    verdict(
        5,
        ok,
        f"1000 scenarios, {decided} decided slots, {len(violations)} violations, "
        f"(n, crashes) covered {sorted(shapes)}, {elapsed:.0f}s (limit 300s)",
    )
    assert not violations, violations[:3]
    assert decided >= 100_000
    assert elapsed < 300


def test_criterion_6_bounded_exhaustive_oracle(verdict):
    t0 = time.perf_counter()
    parts = []
    ok = True
    for pattern in ("unanimous", "BBC", "distinct"):
        v = explore_small(3, 1, 4, pattern)
        ok &= v.ok and not v.bounded and v.states > 0
        parts.append(f"{pattern}: {v.states} states, {len(v.violations)} violations")
    mutant = explore_mutant("BBC", 4, stop_at_first=True)
    caught = sorted({x.check for x in mutant.violations})
    ok &= bool(caught)
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    verdict(6, ok, f"{'; '.join(parts)}; mutant caught by {caught}; {elapsed:.0f}s (limit 600s)")
    assert ok


def test_criterion_7_forfeit_liveness(verdict):
    runs = [
        (ScenarioConfig(), Workload(clients=3, requests=150, mode="open", interval_us=100)),
        (ScenarioConfig(), Workload(clients=4, requests=100, client_batch=2)),
        (ScenarioConfig(n=5, f=2), Workload(clients=5, requests=80, mode="open", interval_us=200)),
        (ScenarioConfig(network=NetworkModel(jitter_mean_us=300)), Workload(clients=3, requests=120)),
    ]
    slots = nulls = 0
    missing = []
    for seed, (cfg, wl) in enumerate(runs, 1):
        res = run_scenario(cfg, wl, seed)
        slots += res.stats.decided
        nulls += res.stats.null
        entered = {
            rid for _, ev, _, _, _, v in res.trace.events if ev == "start" for rid in v.request_ids()
        }
        submitted = wl.clients * wl.requests
        for e in res.live:
            log = {**e.digests, **e.log}
            in_agreed = {rid for d in log.values() if d.batch is not None for rid in d.batch.request_ids()}
            lost = entered - in_agreed
            if lost or res.stats.stalled or len(in_agreed) != submitted:
                missing.append((seed, e.id, len(lost)))
    pct = 100.0 * nulls / slots
    ok = not missing
    verdict(7, ok, f"every queued request reached an agreed slot in 4 contended runs; NULL slots {nulls}/{slots} = {pct:.2f}% (reported)")
    assert not missing, missing


def test_criterion_8_end_to_end_at_most_once(verdict):
    t0 = time.perf_counter()
    problems = []
    ops = failovers = 0
    for seed in range(12):
        cfg, wl = failover_scenario(seed)
        res = run_scenario(cfg, wl, seed)
        assert wl.clients <= 5 and len(res.history) <= 200
        ops += len(res.history)
        failovers += res.stats.failovers
        problems += [(seed, p) for p in service_checks(res)]
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 120 and failovers > 0
    verdict(
        8,
        ok,
        f"12 failover scenarios, {ops} operations, {failovers} client failovers: identical states, "
        f"single application, linearizable; {len(problems)} problems; {elapsed:.1f}s (limit 120s)",
    )
    assert ok, problems[:3]


def _sim_files(path, seed, cfg, wl):
    res = run_scenario(cfg, wl, seed)
    write_stats(path.with_suffix(".stats"), res.stats, {"seed": seed})
    write_trace(path.with_suffix(".trace"), res.trace.deliveries)
    return path.with_suffix(".stats").read_bytes(), path.with_suffix(".trace").read_bytes()


def test_criterion_9_determinism(tmp_path, verdict):
    same = 0
    cases = []
    for seed in range(10):
        cfg, wl = random_scenario(seed)
        cfg = ScenarioConfig(**{**cfg.__dict__, "record_deliveries": True})
        a = _sim_files(tmp_path / f"a{seed}", seed, cfg, wl)
        b = _sim_files(tmp_path / f"b{seed}", seed, cfg, wl)
        same += a == b
        cases.append(a)
    out = tmp_path / "child"
    env = dict(os.environ, PYTHONHASHSEED="4242")
    subprocess.run(
        [sys.executable, "-m", "weakmvc.cli", "sim", "run", "--seed", "5", "--clients", "3", "--requests", "50",
         "--crash", "1@20000", "--stats", f"{out}.stats", "--trace", f"{out}.trace"],
        check=True, env=env, capture_output=True,
    )
    main(["sim", "run", "--seed", "5", "--clients", "3", "--requests", "50", "--crash", "1@20000",
          "--stats", str(tmp_path / "here.stats"), "--trace", str(tmp_path / "here.trace")])
    cross = (tmp_path / "here.stats").read_bytes() == (tmp_path / "child.stats").read_bytes() and (
        tmp_path / "here.trace"
    ).read_bytes() == (tmp_path / "child.trace").read_bytes()
    distinct = len({c[1] for c in cases}) == len(cases)
    ok = same == 10 and cross and distinct
    verdict(9, ok, f"{same}/10 re-runs byte-identical (stats and trace); identical across processes with another hash seed: {cross}")
    assert ok


def test_criterion_10_wire_correctness(tmp_path, verdict):
    rng = random.Random(10)
    kinds = (MsgKind.PROPOSAL, MsgKind.STATE, MsgKind.VOTE, MsgKind.DECIDED, MsgKind.CATCHUP_REQ, MsgKind.CATCHUP_RESP)
    seen = set()
    bad = 0
    for _ in range(100_000):
        m = random_message(rng, kinds)
        seen.add(m.kind)
        if wire.decode(wire.encode(m)) != m:
            bad += 1
    with ProcessCluster(tmp_path) as pc:

        async def drive():
            client = TcpClient(3, pc.cluster.addresses, timeout_s=2.0)
            try:
                for i in range(100):
                    await client.execute([KvCommand.put(b"slot%d" % i, b"%d" % i)])
            finally:
                await client.close()

        asyncio.run(drive())
        time.sleep(0.3)
    stats = pc.read_stats()
    decided = sorted(int(s["decided"]) for s in stats.values())
    digests = {s["state_digest"] for s in stats.values()}
    ok = bad == 0 and len(seen) == 6 and len(stats) == 3 and decided[0] >= 100 and len(digests) == 1
    verdict(10, ok, f"100000 random messages of {len(seen)} kinds round-trip, {bad} mismatches; 3 processes decided {decided} slots with one state digest")
    assert ok
