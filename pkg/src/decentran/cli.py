"""Command-line front end.

Exit codes: 0 success, 1 scenario error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, DecentranError
from .ledger import verify_dump
from .sim.config import load_config


def _steps(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--steps expects comma-separated integers, got {text!r}")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decentran", description="DecentRAN simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", type=Path, required=config_required, help="scenario TOML file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    run = sub.add_parser("run", help="run one scenario")
    common(run)
    run.add_argument("--engine", choices=["solo", "raft", "hotstuff"], default=None)
    run.add_argument("--steps", type=_steps, default=None, help="e.g. 2,4,8")

    sw = sub.add_parser("sweep", help="run a scenario under several engines")
    common(sw)
    sw.add_argument("--engine", default="solo,raft,hotstuff", help="comma-separated engines")
    sw.add_argument("--steps", type=_steps, default=None)
    sw.add_argument("--workers", type=int, default=1)

    vc = sub.add_parser("verify-chain", help="check a chain dump")
    vc.add_argument("--chain", type=Path, default=None, help="chain dump (default OUT/chain.bin)")
    vc.add_argument("--out", type=Path, default=Path("out"))

    for name, text in [
        ("demo-auth", "honest handshakes"),
        ("demo-mitm", "relay adversary against handshakes"),
        ("demo-handover", "handover walk across four gNBs"),
    ]:
        d = sub.add_parser(name, help=text)
        common(d, config_required=False)
        if name == "demo-handover":
            d.add_argument("--engine", choices=["solo", "raft", "hotstuff"], default="raft")
            d.add_argument("--steps", type=int, default=10, help="walk length")
        else:
            d.add_argument("--trials", type=int, default=1000)
    return p


def _table(metrics) -> str:
    head = f"{'step':>4} {'offered':>10} {'committed':>10} {'mean ms':>9} {'p50 ms':>9} {'p95 ms':>9} {'p99 ms':>9}"
    lines = [f"engine={metrics.engine} seed={metrics.seed}", head]
    for s in metrics.steps:
        lines.append(
            f"{s.step:>4} {s.offered_tps:>10.1f} {s.committed_tps:>10.1f} {s.mean_ms:>9.2f} "
            f"{s.percentile_ms(50):>9.2f} {s.percentile_ms(95):>9.2f} {s.percentile_ms(99):>9.2f}"
        )
    lines.append(
        f"submitted={metrics.submitted} committed={metrics.committed} "
        f"rejected={metrics.rejected} in_flight={metrics.in_flight_end}"
    )
    return "\n".join(lines)


def _cmd_run(args) -> int:
    from .sim.harness import run_scenario

    cfg = load_config(args.config).with_overrides(seed=args.seed, engine=args.engine, steps=args.steps)
    result = run_scenario(cfg, args.out)
    print(_table(result.metrics))
    if not result.chain_verifies():
        print("chain verification FAILED", file=sys.stderr)
        return 1
    print(f"artifacts written to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    from .sim.harness import sweep

    cfg = load_config(args.config).with_overrides(seed=args.seed)
    engines = [e.strip() for e in args.engine.split(",") if e.strip()]
    profiles = [args.steps] if args.steps else None
    merged = sweep(cfg, engines, profiles, out_dir=args.out, workers=args.workers)
    print(merged, end="")
    return 0


def _cmd_verify(args) -> int:
    path = args.chain or args.out / "chain.bin"
    try:
        data = path.read_bytes()
    except OSError as exc:
        print(f"cannot read {path}: {exc.strerror}", file=sys.stderr)
        return 1
    ok = verify_dump(data)
    print(f"{path}: {'valid' if ok else 'INVALID'}")
    return 0 if ok else 1


def _cmd_demo_auth(args) -> int:
    from .demos import honest_trials

    stats = honest_trials(args.trials, args.seed or 0)
    print(f"honest handshakes: {stats.verified_both}/{stats.trials} verified, "
          f"{stats.keys_equal}/{stats.trials} matching session keys")
    return 0 if stats.all_ok else 1


def _cmd_demo_mitm(args) -> int:
    from .demos import mitm_trials

    stats = mitm_trials(args.trials, args.seed or 0)
    n = len(stats.trials)
    print(f"mitm substitution runs: {n}, detected (a side failed): {stats.detected}")
    print(f"successful MitM sessions: {stats.adversary_verified}")
    return 0 if stats.adversary_verified == 0 else 1


def _cmd_demo_handover(args) -> int:
    from .demos import handover_demo

    result = handover_demo(args.seed or 0, args.steps, args.engine)
    for ev in result.world.mobility.events:
        lat = f"{ev.latency * 1e3:.2f} ms" if ev.latency is not None else "-"
        print(f"{ev.ue.short()} {ev.source_gnb or '-':>6} -> {ev.target_gnb:<6} "
              f"{ev.outcome.value:<9} seq={ev.sequence} latency={lat}")
    result.write(args.out)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "verify-chain": _cmd_verify,
    "demo-auth": _cmd_demo_auth,
    "demo-mitm": _cmd_demo_mitm,
    "demo-handover": _cmd_demo_handover,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DecentranError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
