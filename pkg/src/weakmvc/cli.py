"""Command line entry point: ``weakmvc sim|replica|client``."""

from __future__ import annotations

import argparse
import asyncio
import logging
import random
import statistics
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import Address, Settings, load_config
from .kv import KvCommand


def _parse_peers(text: str) -> Dict[int, Address]:
    """``1=host:port,2=host:port`` or plain ``host:port,...`` (ids numbered from 1)."""
    peers: Dict[int, Address] = {}
    for i, item in enumerate(filter(None, (s.strip() for s in text.split(","))), 1):
        rid, sep, addr = item.partition("=")
        if not sep:
            rid, addr = str(i), item
        host, _, port = addr.rpartition(":")
        peers[int(rid)] = (host or "127.0.0.1", int(port))
    if not peers:
        raise argparse.ArgumentTypeError("empty peer list")
    return peers


def _parse_crash(text: str):
    rid, _, at = text.partition("@")
    return int(rid), float(at or 0)


def parse_op(line: str) -> Optional[KvCommand]:
    """``get k``, ``put k v``, ``mget k1 k2 ..``, ``mput k1 v1 k2 v2 ..``; blank and # lines give None."""
    words = line.split("#", 1)[0].split()
    if not words:
        return None
    op, args = words[0].lower(), [w.encode() for w in words[1:]]
    if op == "get" and len(args) == 1:
        return KvCommand.get(args[0])
    if op == "put" and len(args) == 2:
        return KvCommand.put(args[0], args[1])
    if op == "mget" and args:
        return KvCommand.mget(args)
    if op == "mput" and args and len(args) % 2 == 0:
        return KvCommand.mput(list(zip(args[::2], args[1::2])))
    raise ValueError(f"cannot parse operation {line.strip()!r}")


def _show(result) -> str:
    if result is True:
        return "OK"
    if result is None:
        return "(nil)"
    if isinstance(result, list):
        return " ".join(_show(r) for r in result)
    return result.decode(errors="replace")


# -- sim -----------------------------------------------------------------------


def _sim_run(args) -> int:
    from .sim.stats import write_stats, write_trace
    from .sim.world import NetworkModel, SafetyViolation, ScenarioConfig, Workload, run_scenario

    if args.config:
        cluster, settings = load_config(args.config)
        n, f, shared = cluster.n, cluster.f, cluster.shared_seed
    else:
        n, f, shared, settings = args.n, args.f, 0, Settings()
    cfg = ScenarioConfig(
        n=n,
        f=f,
        shared_seed=shared,
        settings=settings,
        network=NetworkModel(base_us=args.base_us, jitter_mean_us=args.jitter_us),
        crashes=tuple(args.crash),
        record_deliveries=bool(args.trace),
    )
    wl = Workload(
        clients=args.clients,
        requests=args.requests,
        mode=args.mode,
        interval_us=args.interval_us,
        client_batch=settings.client_batch_size,
    )
    try:
        res = run_scenario(cfg, wl, args.seed)
    except SafetyViolation as e:
        print(f"SAFETY VIOLATION: {e.report}", file=sys.stderr)
        if args.trace:
            write_trace(args.trace, e.result.trace.deliveries)
        return 2
    header = {"seed": args.seed, "n": n, "f": f, "clients": args.clients, "requests": args.requests}
    write_stats(args.stats, res.stats, header)
    if args.trace:
        write_trace(args.trace, res.trace.deliveries)
    st = res.stats
    print(
        f"{st.decided} slots ({st.agreed} agreed, {st.null} null), fast path {st.fast_path_pct:.2f}%, "
        f"null {st.null_pct:.2f}%, safety {res.report}; stats -> {args.stats}"
    )
    return 1 if st.stalled else 0


def _sim_explore(args) -> int:
    from .sim.explore import explore_mutant, explore_small

    if args.mutant:
        v = explore_mutant(args.pattern, args.max_phases, crashes=args.crashes, max_states=args.max_states)
    else:
        v = explore_small(3, 1, args.max_phases, args.pattern, crashes=args.crashes, max_states=args.max_states)
    print(v.summary())
    for x in v.violations:
        print(f"  {x}")
    return 0 if v.ok else 2


def _sim_measure(args) -> int:
    from .sim.single import measure_termination

    r = measure_termination(args.trials, args.split, args.seed, n=args.n, f=args.f)
    lines = [
        f"trials={r.trials}",
        f"split={r.split}",
        f"n={args.n}",
        f"f={args.f}",
        f"mean_rounds={r.mean_rounds:.6f}",
        f"std_rounds={r.std_rounds:.6f}",
        f"capped={r.capped}",
        "",
        "phase,cdf,geometric_bound",
    ]
    for t in range(1, args.show + 1):
        lines.append(f"{t},{r.cdf[t - 1]:.6f},{1 - 0.5 ** t:.6f}")
    text = "\n".join(lines) + "\n"
    if args.stats:
        Path(args.stats).write_text(text)
    print(text, end="")
    return 0


# -- replica / client ------------------------------------------------------------


def _replica(args) -> int:
    cluster, settings = load_config(args.config)
    if args.id not in cluster.members:
        print(f"replica {args.id} is not in {args.config}", file=sys.stderr)
        return 2
    if args.transport == "sim":
        from .sim.world import ScenarioConfig, Workload, run_scenario

        cfg = ScenarioConfig(n=cluster.n, f=cluster.f, shared_seed=cluster.shared_seed, settings=settings)
        ids = {rid: i + 1 for i, rid in enumerate(cluster.members)}
        res = run_scenario(cfg, Workload(clients=args.clients, requests=args.requests), args.seed)
        eng = res.replicas[ids[args.id]]
        print(f"replica {args.id} (simulated): applied through slot {eng.applied_upto}, state {eng.machine.digest()[:16]}")
        return 0

    from .tcp import run_replica

    try:
        asyncio.run(run_replica(args.id, cluster, settings, stats_path=args.stats))
    except KeyboardInterrupt:
        pass
    return 0


async def _run_ops(peers, ops: List[KvCommand], timeout: float, client_id: int) -> None:
    from .tcp import TcpClient

    c = TcpClient(client_id, peers, timeout_s=timeout)
    try:
        for op in ops:
            res = await c.execute([op])
            print(_show(res[0]))
    finally:
        await c.close()


async def _bench(peers, clients: int, batch: int, duration: float, timeout: float, keys: int) -> dict:
    from .tcp import TcpClient

    latencies: List[float] = []
    done = 0
    stop_at = time.monotonic() + duration

    async def one(cid: int) -> None:
        nonlocal done
        rng = random.Random(cid)
        c = TcpClient(cid, peers, timeout_s=timeout, proxy=sorted(peers)[cid % len(peers)])
        try:
            while time.monotonic() < stop_at:
                cmds = [
                    KvCommand.put(b"k%d" % rng.randrange(keys), b"v%d" % cid) if rng.random() < 0.5 else KvCommand.get(b"k%d" % rng.randrange(keys))
                    for _ in range(batch)
                ]
                t0 = time.monotonic()
                await c.execute(cmds)
                latencies.append(time.monotonic() - t0)
                done += batch
        finally:
            await c.close()

    t0 = time.monotonic()
    await asyncio.gather(*(one(1000 + i) for i in range(clients)))
    elapsed = time.monotonic() - t0
    lat = sorted(latencies) or [0.0]
    return {
        "ops": done,
        "throughput_ops_s": done / elapsed,
        "median_ms": statistics.median(lat) * 1000,
        "p99_ms": lat[min(len(lat) - 1, int(0.99 * len(lat)))] * 1000,
    }


def _client(args) -> int:
    peers = args.peers
    if args.ops:
        ops = [op for op in (parse_op(line) for line in Path(args.ops).read_text().splitlines()) if op is not None]
        asyncio.run(_run_ops(peers, ops, args.timeout, args.client_id))
        return 0
    res = asyncio.run(_bench(peers, args.clients, args.batch, args.duration, args.timeout, args.keys))
    for k, v in res.items():
        print(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakmvc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("sim", help="deterministic simulation tools").add_subparsers(dest="sim_cmd", required=True)
    run = sim.add_parser("run", help="simulate a cluster serving a KV workload")
    run.add_argument("--config", help="cluster configuration file")
    run.add_argument("--n", type=int, default=3)
    run.add_argument("--f", type=int, default=1)
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--requests", type=int, default=100, help="KV commands per client")
    run.add_argument("--clients", type=int, default=1)
    run.add_argument("--mode", choices=("closed", "open"), default="closed")
    run.add_argument("--interval-us", type=float, default=0.0)
    run.add_argument("--base-us", type=float, default=100.0)
    run.add_argument("--jitter-us", type=float, default=50.0)
    run.add_argument("--crash", type=_parse_crash, action="append", default=[], metavar="ID@TIME_US")
    run.add_argument("--stats", default="sim_stats.txt")
    run.add_argument("--trace", help="write every delivery to this file")
    run.set_defaults(func=_sim_run)

    ex = sim.add_parser("explore", help="enumerate every schedule of one slot at n=3")
    ex.add_argument("--pattern", default="unanimous", help="unanimous, distinct or letters such as BBC")
    ex.add_argument("--max-phases", type=int, default=4)
    ex.add_argument("--crashes", action="store_true", help="also branch on one replica crash")
    ex.add_argument("--max-states", type=int, default=2_000_000)
    ex.add_argument("--mutant", action="store_true", help="explore an instance with the decide threshold lowered to f")
    ex.set_defaults(func=_sim_explore)

    me = sim.add_parser("measure", help="phase CDF of the binary stage")
    me.add_argument("--trials", type=int, default=10_000)
    me.add_argument("--split", default="worst", help="worst, unanimous, random or digits such as 011")
    me.add_argument("--seed", type=int, default=1)
    me.add_argument("--n", type=int, default=3)
    me.add_argument("--f", type=int, default=1)
    me.add_argument("--show", type=int, default=10, help="phases to print")
    me.add_argument("--stats")
    me.set_defaults(func=_sim_measure)

    rep = sub.add_parser("replica", help="run one replica")
    rep.add_argument("--config", required=True)
    rep.add_argument("--id", type=int, required=True)
    rep.add_argument("--transport", choices=("sim", "tcp"), default="tcp")
    rep.add_argument("--stats", help="stats file written on shutdown")
    rep.add_argument("--seed", type=int, default=1, help="sim transport only")
    rep.add_argument("--clients", type=int, default=1, help="sim transport only")
    rep.add_argument("--requests", type=int, default=100, help="sim transport only")
    rep.set_defaults(func=_replica)

    cl = sub.add_parser("client", help="talk to a TCP cluster")
    cl.add_argument("--peers", type=_parse_peers, required=True, help="1=host:port,2=host:port,...")
    mode = cl.add_mutually_exclusive_group(required=True)
    mode.add_argument("--ops", help="file with one get/put/mget/mput per line")
    mode.add_argument("--bench", choices=("closed-loop",))
    cl.add_argument("--clients", type=int, default=1)
    cl.add_argument("--batch", type=int, default=1)
    cl.add_argument("--duration", type=float, default=5.0)
    cl.add_argument("--keys", type=int, default=1000)
    cl.add_argument("--timeout", type=float, default=1.0)
    cl.add_argument("--client-id", type=int, default=1)
    cl.set_defaults(func=_client)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
