"""Command-line entry point: ``dsnmech <subcommand> ...``.

Exit codes: 0 success (``verify``: accept), 1 ``verify`` reject, 2 usage
error, 3 any other failure (bad input file, decode error, ...).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench as benchmod
from . import game, merkle, simulation
from .contract import ContractError
from .crypto import KeyDecodeError, dump_keypair, keygen

EXIT_OK, EXIT_REJECT, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3


def _write(out: str | None, payload: str | bytes) -> None:
    if out is None:
        text = payload.hex() + "\n" if isinstance(payload, bytes) else payload
        sys.stdout.write(text)
    elif isinstance(payload, bytes):
        Path(out).write_bytes(payload)
    else:
        Path(out).write_text(payload)


def _read_digest(arg: str) -> merkle.Digest:
    path = Path(arg)
    text = path.read_text() if path.exists() else arg
    return merkle.Digest.from_text(text)


def _read_proof(arg: str) -> merkle.StorageProof:
    blob = Path(arg).read_bytes()
    if not blob.startswith(merkle.PROOF_MAGIC):
        # tolerate hex-armored proofs as printed by `prove` without --out
        try:
            blob = bytes.fromhex(blob.decode().strip())
        except (UnicodeDecodeError, ValueError):
            pass
    return merkle.decode_proof(blob)


def _load_params(args: argparse.Namespace) -> game.GameParams:
    params = game.load_params(Path(args.config).read_text()) if args.config else game.GameParams.example()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return params.replace(**overrides) if overrides else params


def cmd_keygen(args: argparse.Namespace) -> int:
    kp = keygen(args.seed.encode() if args.seed is not None else None)
    _write(args.out, dump_keypair(kp))
    return EXIT_OK


def cmd_digest(args: argparse.Namespace) -> int:
    d, tree = merkle.setup(Path(args.file).read_bytes(), args.segment_size)
    _write(args.out, d.to_text())
    if args.verbose:
        print(f"segments={tree.raw_segment_count} padded={tree.padded_segment_count} height={d.height}",
              file=sys.stderr)
    return EXIT_OK


def cmd_prove(args: argparse.Namespace) -> int:
    proof = merkle.prove(Path(args.file).read_bytes(), args.challenge, args.segment_size)
    _write(args.out, merkle.encode_proof(proof))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    d = _read_digest(args.digest)
    proof = _read_proof(args.proof)
    challenge = proof.challenge if args.challenge is None else args.challenge
    ok = merkle.verify(d, challenge, proof)
    print("accept" if ok else "reject")
    return EXIT_OK if ok else EXIT_REJECT


def cmd_game_solve(args: argparse.Namespace) -> int:
    params = _load_params(args)
    result = game.solve_spe(game.build_payoffs(params), params)
    sys.stdout.write(result.to_text())
    return EXIT_OK


def cmd_game_check(args: argparse.Namespace) -> int:
    params = _load_params(args)
    report = game.check_constraints(params, args.margin)
    result = game.solve_spe(game.build_payoffs(params), params)
    sys.stdout.write(report.to_text())
    spe = "{" + ", ".join(result.path_actions) + "}"
    verdict = "all constraints pass" if report.all_pass else "constraints violated"
    print(f"{verdict}; SPE = {spe}")
    return EXIT_OK


def cmd_sim_run(args: argparse.Namespace) -> int:
    config = simulation.load_config(Path(args.config).read_text())
    trace = simulation.run(config)
    if args.trace:
        Path(args.trace).write_text(trace.to_jsonl())
    sys.stdout.write(trace.summary())
    if args.compare:
        sys.stdout.write(simulation.realized_vs_predicted(trace, config.params).to_text())
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    file_sizes = [benchmod.parse_size(s) for s in args.file_sizes.split(",")]
    seg_sizes = [benchmod.parse_size(s) for s in args.segment_sizes.split(",")]
    results = benchmod.bench(file_sizes, seg_sizes, reps=args.reps, seed=args.seed)
    for size, rows in results.items():
        text = benchmod.to_csv(rows)
        if args.out:
            out = Path(args.out)
            if len(results) > 1:
                out = out.with_name(f"{out.stem}_{size // benchmod.MB}MB{out.suffix or '.csv'}")
            out.write_text(text)
        if len(results) > 1:
            print(f"# file_size={size}")
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsnmech", description="Challenge-based storage contract toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate an Ed25519 key pair")
    p.add_argument("--seed", help="derive the key deterministically from this string")
    p.add_argument("--out")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("digest", help="compute the Merkle digest of a file")
    p.add_argument("file")
    p.add_argument("--segment-size", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_digest)

    p = sub.add_parser("prove", help="produce a proof for one node number")
    p.add_argument("file")
    p.add_argument("--segment-size", type=int, required=True)
    p.add_argument("--challenge", type=int, required=True)
    p.add_argument("--out", help="write the binary proof here (default: hex on stdout)")
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("verify", help="check a proof against a digest (exit 0 accept, 1 reject)")
    p.add_argument("--digest", required=True, help="digest file or '<hex root> <height>'")
    p.add_argument("--proof", required=True)
    p.add_argument("--challenge", type=int)
    p.set_defaults(func=cmd_verify)

    for name, func, text in (
        ("game-solve", cmd_game_solve, "solve the contract game by backward induction"),
        ("game-check", cmd_game_check, "check the incentive constraints"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key = value parameter file (default: the worked example)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        if name == "game-check":
            p.add_argument("--margin", default="0")
        p.set_defaults(func=func)

    p = sub.add_parser("sim-run", help="run a seeded contract simulation")
    p.add_argument("config")
    p.add_argument("--trace", help="write the line-delimited trace here")
    p.add_argument("--compare", action="store_true", help="diff realized against predicted payoffs")
    p.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("bench", help="time tree construction and proofs")
    p.add_argument("--file-sizes", default="10MB")
    p.add_argument("--segment-sizes", default=",".join(str(s) for s in benchmod.DEFAULT_SEGMENT_SIZES))
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, ContractError, KeyDecodeError) as exc:
        print(f"dsnmech {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
