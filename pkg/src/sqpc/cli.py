"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 protocol abort, 3 failed internal check.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .adversary import (
    NO_ATTACK,
    EntangleMeasure,
    InterceptResend,
    MeasureResend,
    controlled_rotation_family,
    load_matrix,
)
from .errors import InvalidArgument
from .protocol import (
    Completed,
    ProtocolConfig,
    describe,
    format_bits,
    parse_bits,
    random_bits,
    run_until_keyed,
)

EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_INTERNAL = 0, 1, 2, 3
SEED_ENV = "SQPC_SEED"
ATTACKS = ("none", "intercept-resend", "measure-resend", "entangle-measure")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sqpc", description="Cavity-QED semiquantum private comparison simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, trials=False):
        p.add_argument("--seed", type=int, default=None, help=f"base seed (default ${SEED_ENV} or 0)")
        p.add_argument("--format", choices=("text", "csv"), default="text")
        p.add_argument("--output", "-o", default=None, help="write the report here instead of stdout")
        if trials:
            p.add_argument("--trials", type=int, default=10000)
            p.add_argument("--workers", type=int, default=1)

    def attack_opts(p, default="none"):
        p.add_argument("--kind", choices=ATTACKS, default=default)
        p.add_argument("--channels", default="A", help="tapped channels: A, B or AB")
        p.add_argument("--theta", type=float, default=None, help="controlled-rotation angle")
        p.add_argument("--matrix", default=None, help="forward-leg unitary file (entangle-measure)")
        p.add_argument("--matrix-return", default=None, help="return-leg unitary file")
        p.add_argument("--probe-qubits", type=int, default=1)

    p = sub.add_parser("run", help="one protocol run")
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--ma", default="random")
    p.add_argument("--mb", default="random")
    p.add_argument("--kab", default="random")
    p.add_argument("--transcript", default=None, help="write the JSON-lines transcript here ('-' for stdout)")
    attack_opts(p)
    common(p)

    p = sub.add_parser("attack", help="Monte Carlo detection experiment")
    p.add_argument("--L", type=int, default=1)
    attack_opts(p, default="intercept-resend")
    common(p, trials=True)

    p = sub.add_parser("efficiency", help="qubit efficiency accounting")
    p.add_argument("--L", type=int, default=1)
    common(p)

    p = sub.add_parser("table1", help="exhaustive correctness table")
    common(p)

    p = sub.add_parser("theorem1", help="entangle-measure detection vs probe information scan")
    p.add_argument("--grid", type=int, default=9)
    p.add_argument("--L", type=int, default=1)
    common(p, trials=True)
    return parser


def make_attack(args):
    channels = tuple(dict.fromkeys(args.channels.upper()))
    if args.kind == "none":
        return NO_ATTACK
    if args.kind == "intercept-resend":
        return InterceptResend(channels=channels)
    if args.kind == "measure-resend":
        return MeasureResend(channels=channels)
    if args.matrix is not None:
        u_e = load_matrix(args.matrix)
        u_f = load_matrix(args.matrix_return) if args.matrix_return else None
        return EntangleMeasure(channels=channels, u_e=u_e, u_f=u_f, probe_qubits=args.probe_qubits)
    if args.theta is None:
        raise UsageError("entangle-measure needs --theta or --matrix")
    return controlled_rotation_family(args.theta, channels=channels)


def _bits_arg(text: str, L: int, rng, name: str):
    if text == "random":
        return random_bits(rng, L)
    try:
        bits = parse_bits(text)
    except InvalidArgument as exc:
        raise UsageError(f"--{name}: {exc}") from None
    if len(bits) != L:
        raise UsageError(f"--{name} has length {len(bits)}, expected L={L}")
    return bits


def cmd_run(args, seed):
    L = args.L
    if L is None:
        given = [s for s in (args.ma, args.mb, args.kab) if s != "random"]
        if not given:
            raise UsageError("--L is required when all inputs are random")
        L = len(given[0])
    if L < 1:
        raise UsageError("--L must be >= 1")
    # inputs come from a stream independent of the protocol's own streams
    input_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(5)[4])
    m_a = _bits_arg(args.ma, L, input_rng, "ma")
    m_b = _bits_arg(args.mb, L, input_rng, "mb")
    k_ab = _bits_arg(args.kab, L, input_rng, "kab")
    attack = make_attack(args)

    outcome, attempts = run_until_keyed(ProtocolConfig(L=L, seed=seed), m_a, m_b, k_ab, attack)
    pairs = [
        ("result", describe(outcome)),
        ("L", L),
        ("seed", seed),
        ("attempts", attempts),
        ("run_seed", outcome.transcript.config.seed),
        ("attack", attack.kind),
        ("m_a", format_bits(m_a)),
        ("m_b", format_bits(m_b)),
        ("k_ab", format_bits(k_ab)),
    ]
    transcript = outcome.transcript
    if isinstance(outcome, Completed):
        pairs.append(("r", format_bits(outcome.r)))
    else:
        pairs.append(("observed_error_rate", analysis.fmt_prob(outcome.observed_error_rate)))
    for case in (1, 2, 3, 4):
        pairs.append((f"case{case}_checked", transcript.checks.checked[case - 1]))
        pairs.append((f"case{case}_failures", transcript.checks.failures[case - 1]))
    if args.transcript:
        text = "\n".join(transcript.to_lines(outcome)) + "\n"
        if args.transcript == "-":
            sys.stdout.write(text)
        else:
            Path(args.transcript).write_text(text)
    return analysis.render(pairs, args.format), EXIT_OK if isinstance(outcome, Completed) else EXIT_ABORT


def cmd_attack(args, seed):
    plan = analysis.MonteCarloPlan(
        trials=args.trials, L=args.L, attack=make_attack(args), seed=seed, workers=args.workers
    )
    stats = analysis.estimate_detection(plan)
    return analysis.render(analysis.detection_report(stats, plan), args.format), EXIT_OK


def cmd_efficiency(args, seed):
    rep = analysis.qubit_efficiency(args.L)
    return analysis.render(analysis.efficiency_report(rep, args.L), args.format), EXIT_OK


def _render_rows(summary, header, rows, fmt):
    if fmt == "csv":
        return analysis.render_table(header, rows)
    lines = analysis.render(summary, "text")
    for i, row in enumerate(rows, start=1):
        lines += f"row{i}=" + ",".join(str(v) for v in row) + "\n"
    return lines


def cmd_table1(args, seed):
    rows = analysis.table1_oracle()
    bad = sum(not r.ok for r in rows)
    summary = [("rows", len(rows)), ("violations", bad), ("columns", ",".join(analysis.TABLE1_HEADER))]
    text = _render_rows(summary, analysis.TABLE1_HEADER, analysis.table1_rows(rows), args.format)
    return text, EXIT_INTERNAL if bad else EXIT_OK


def cmd_theorem1(args, seed):
    grid = analysis.theta_grid(args.grid)
    rows = analysis.theorem1_scan(grid, args.trials, L=args.L, seed=seed, workers=args.workers)
    summary = [
        ("grid", len(rows)),
        ("trials", args.trials),
        ("seed", seed),
        ("columns", ",".join(analysis.THEOREM1_HEADER)),
    ]
    text = _render_rows(summary, analysis.THEOREM1_HEADER, analysis.theorem1_rows(rows), args.format)
    return text, EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "attack": cmd_attack,
    "efficiency": cmd_efficiency,
    "table1": cmd_table1,
    "theorem1": cmd_theorem1,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        seed = args.seed if args.seed is not None else default_seed()
        if seed < 0:
            raise UsageError("--seed must be non-negative")
        if getattr(args, "trials", 1) < 1:
            raise UsageError("--trials must be >= 1")
        text, code = COMMANDS[args.command](args, seed)
    except (UsageError, InvalidArgument, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"internal check failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
