"""Monte Carlo harnesses, closed-form detection oracles and protocol accounting."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from . import qsim
from .adversary import (
    NO_ATTACK,
    Attack,
    InterceptResend,
    MeasureResend,
    ProbeAccumulator,
    controlled_rotation_family,
)
from .errors import InvalidArgument
from .protocol import (
    Aborted,
    Completed,
    InitialState,
    ProtocolConfig,
    encrypt_inputs,
    random_bits,
    run_protocol,
    tp_compare,
)
from .qsim import ZOutcome

# trials per work unit; fixed so results do not depend on the worker count
CHUNK = 2000


def wilson_interval(successes: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class MonteCarloPlan:
    trials: int
    L: int = 1
    attack: Attack = NO_ATTACK
    seed: int = 0
    workers: int = 1
    error_threshold: float = 0.0

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidArgument("trials must be >= 1")
        if self.seed < 0:
            raise InvalidArgument("seed must be non-negative")


@dataclass
class DetectionStats:
    """Aggregated run outcomes.

    ``aborts`` counts only check-failure aborts; runs that stop for lack of
    key material are counted in ``insufficient`` and never as detections.
    """

    runs: int = 0
    aborts: int = 0
    insufficient: int = 0
    completed: int = 0
    # completed runs whose verdict disagreed with m_a == m_b
    wrong_verdicts: int = 0
    checked: list = field(default_factory=lambda: [0, 0, 0, 0])
    failures: list = field(default_factory=lambda: [0, 0, 0, 0])

    @property
    def abort_rate(self) -> float:
        return self.aborts / self.runs if self.runs else 0.0

    @property
    def confidence_interval(self) -> tuple[float, float]:
        return wilson_interval(self.aborts, self.runs, 0.99)

    @property
    def ci_half_width(self) -> float:
        lo, hi = self.confidence_interval
        return (hi - lo) / 2

    def case_rate(self, case: int) -> float:
        n = self.checked[case - 1]
        return self.failures[case - 1] / n if n else 0.0

    @property
    def case_rates(self) -> list[float]:
        return [self.case_rate(c) for c in (1, 2, 3, 4)]

    @property
    def atom_detection_rate(self) -> float:
        """Failed checks per checked atom, pooled over all cases."""
        n = sum(self.checked)
        return sum(self.failures) / n if n else 0.0

    def add(self, outcome, expected_equal: bool | None = None) -> None:
        self.runs += 1
        transcript = outcome.transcript
        if transcript is not None:
            for k in range(4):
                self.checked[k] += transcript.checks.checked[k]
                self.failures[k] += transcript.checks.failures[k]
        if isinstance(outcome, Aborted):
            if outcome.detected:
                self.aborts += 1
            else:
                self.insufficient += 1
        else:
            self.completed += 1
            if expected_equal is not None and outcome.equal != expected_equal:
                self.wrong_verdicts += 1

    def merge(self, other: "DetectionStats") -> "DetectionStats":
        self.runs += other.runs
        self.aborts += other.aborts
        self.insufficient += other.insufficient
        self.completed += other.completed
        self.wrong_verdicts += other.wrong_verdicts
        for k in range(4):
            self.checked[k] += other.checked[k]
            self.failures[k] += other.failures[k]
        return self


def trial_setup(plan: MonteCarloPlan, index: int):
    """Inputs and protocol config for trial ``index``, derived from (seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence([plan.seed, index]))
    m_a = random_bits(rng, plan.L)
    m_b = random_bits(rng, plan.L)
    k_ab = random_bits(rng, plan.L)
    run_seed = int(rng.integers(0, 2**63))
    config = ProtocolConfig(L=plan.L, seed=run_seed, error_threshold=plan.error_threshold)
    return config, m_a, m_b, k_ab


def run_trial(plan: MonteCarloPlan, index: int):
    config, m_a, m_b, k_ab = trial_setup(plan, index)
    return run_protocol(config, m_a, m_b, k_ab, plan.attack), m_a == m_b


def _run_chunk(plan: MonteCarloPlan, start: int, stop: int, with_probe: bool):
    stats = DetectionStats()
    probe = ProbeAccumulator() if with_probe else None
    for i in range(start, stop):
        outcome, same = run_trial(plan, i)
        stats.add(outcome, same)
        if probe is not None and outcome.transcript is not None:
            probe.add(outcome.transcript)
    return stats, probe


def _run_plan(plan: MonteCarloPlan, with_probe: bool = False):
    bounds = [(s, min(s + CHUNK, plan.trials)) for s in range(0, plan.trials, CHUNK)]
    if plan.workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            parts = list(
                pool.map(_run_chunk, *zip(*[(plan, a, b, with_probe) for a, b in bounds]))
            )
    else:
        parts = [_run_chunk(plan, a, b, with_probe) for a, b in bounds]
    # reduce in chunk order so float sums are reproducible
    stats = DetectionStats()
    probe = ProbeAccumulator() if with_probe else None
    for s, p in parts:
        stats.merge(s)
        if probe is not None:
            probe.merge(p)
    return stats, probe


def estimate_detection(plan: MonteCarloPlan) -> DetectionStats:
    stats, _ = _run_plan(plan)
    return stats


def closed_form_detection(kind, L: int) -> float:
    """Run-level detection probability for the two resend attacks.

    ``kind`` is an attack instance, class, or one of the CLI names.
    """
    name = getattr(kind, "kind", kind)
    if L < 1:
        raise InvalidArgument("L must be >= 1")
    if name == "intercept-resend":
        return 1 - 0.5 ** (8 * L)
    if name == "measure-resend":
        return 1 - (7 / 8) ** (8 * L)
    raise InvalidArgument(f"no closed form for attack {name!r}")


CLOSED_FORM_CASE_RATES = {
    InterceptResend.kind: (0.75, 0.5, 0.5, 0.5),
    MeasureResend.kind: (0.5, 0.0, 0.0, 0.0),
}


# -- correctness table -----------------------------------------------------------


@dataclass(frozen=True)
class Table1Row:
    m_a: int
    m_b: int
    k_ab: int
    initial: InitialState
    k_c: int
    collapsed: tuple
    k_a: int
    k_b: int
    r_a: int
    r_b: int
    r: int

    @property
    def ok(self) -> bool:
        return self.r == self.m_a ^ self.m_b


def collapse_support(initial: InitialState) -> list[tuple[ZOutcome, ZOutcome]]:
    """Z-outcome pairs with non-zero probability after the cavity map."""
    amps = qsim.cavity_unitary()[:, int(initial)]
    return [
        (ZOutcome(idx >> 1), ZOutcome(idx & 1))
        for idx in range(4)
        if abs(amps[idx]) ** 2 > qsim.IMPOSSIBLE
    ]


def table1_oracle() -> list[Table1Row]:
    """Every (inputs, shared key, initial state, collapse) combination.

    Each row is built from the key and masking rules alone; a row whose
    ``r`` differs from ``m_a xor m_b`` is a correctness failure.
    """
    rows = []
    for m_a, m_b, k_ab, initial in product((0, 1), (0, 1), (0, 1), InitialState):
        for za, zb in collapse_support(initial):
            k_a, k_b, k_c = int(za), int(zb), initial.k_c
            (r_a,) = encrypt_inputs((m_a,), (k_a,), (k_ab,))
            (r_b,) = encrypt_inputs((m_b,), (k_b,), (k_ab,))
            _, (r,) = tp_compare((r_a,), (r_b,), (k_c,))
            rows.append(Table1Row(m_a, m_b, k_ab, initial, k_c, (za, zb), k_a, k_b, r_a, r_b, r))
    return rows


# -- efficiency -------------------------------------------------------------------------


@dataclass(frozen=True)
class EfficiencyReport:
    eta_c: int
    eta_q: int
    eta_b: int

    @property
    def eta(self) -> Fraction:
        return Fraction(self.eta_c, self.eta_q + self.eta_b)


# qubits spent pre-sharing one bit of K_AB with the external SQKD scheme
SQKD_QUBITS_PER_BIT = 24


def qubit_efficiency(L: int) -> EfficiencyReport:
    """Compared bits over (consumed qubits + transmitted classical bits).

    Qubits: 8L pairs (two atoms each), 4L fresh atoms from each participant's
    SIFTs, and the SQKD cost of K_AB.  Classical bits: R_A and R_B.
    """
    if L < 1:
        raise InvalidArgument("L must be >= 1")
    eta_q = 8 * L * 2 + 4 * L * 2 + SQKD_QUBITS_PER_BIT * L
    return EfficiencyReport(eta_c=L, eta_q=eta_q, eta_b=2 * L)


# -- entangle-measure scan ----------------------------------------------------------


@dataclass(frozen=True)
class Theorem1Row:
    theta: float
    detection_rate: float
    probe_information: float
    runs: int
    checked_atoms: int
    failures: int


def theta_grid(points: int) -> np.ndarray:
    if points < 1:
        raise InvalidArgument("grid needs at least one point")
    return np.linspace(0.0, np.pi, points) if points > 1 else np.zeros(1)


def theorem1_scan(
    thetas: Sequence[float] | Iterable[float],
    trials: int,
    L: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> list[Theorem1Row]:
    """Detection rate and probe information across the controlled-rotation family.

    ``detection_rate`` is failed checks per checked atom; ``probe_information``
    is measured on key-eligible positions (where Alice sifted).
    """
    thetas = list(thetas)
    if not thetas:
        raise InvalidArgument("theta grid is empty")
    rows = []
    for k, theta in enumerate(thetas):
        plan = MonteCarloPlan(
            trials=trials,
            L=L,
            attack=controlled_rotation_family(float(theta)),
            seed=seed + k,
            workers=workers,
        )
        stats, probe = _run_plan(plan, with_probe=True)
        rows.append(
            Theorem1Row(
                theta=float(theta),
                detection_rate=stats.atom_detection_rate,
                probe_information=probe.value(),
                runs=stats.runs,
                checked_atoms=sum(stats.checked),
                failures=sum(stats.failures),
            )
        )
    return rows


# -- report formatting --------------------------------------------------------------


def fmt_prob(p: float) -> str:
    return f"{p:.6f}"


def fmt_fraction(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def render(pairs: list[tuple[str, object]], fmt: str = "text") -> str:
    """Render ``(key, value)`` pairs as ``key=value`` lines or a two-row CSV."""
    if fmt == "text":
        return "".join(f"{k}={v}\n" for k, v in pairs)
    if fmt == "csv":
        return render_table([k for k, _ in pairs], [[v for _, v in pairs]])
    raise InvalidArgument(f"unknown format {fmt!r}")


def render_table(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def detection_report(stats: DetectionStats, plan: MonteCarloPlan) -> list[tuple[str, object]]:
    kind = plan.attack.kind
    lo, hi = stats.confidence_interval
    pairs = [
        ("attack", kind),
        ("L", plan.L),
        ("trials", plan.trials),
        ("seed", plan.seed),
        ("runs", stats.runs),
        ("aborts", stats.aborts),
        ("insufficient_key_material", stats.insufficient),
        ("completed", stats.completed),
        ("wrong_verdicts", stats.wrong_verdicts),
        ("abort_rate", fmt_prob(stats.abort_rate)),
        ("ci99_low", fmt_prob(lo)),
        ("ci99_high", fmt_prob(hi)),
    ]
    try:
        pairs.append(("closed_form", fmt_prob(closed_form_detection(kind, plan.L))))
    except InvalidArgument:
        pairs.append(("closed_form", "n/a" if kind != "none" else fmt_prob(0.0)))
    for case in (1, 2, 3, 4):
        pairs.append((f"case{case}_checked", stats.checked[case - 1]))
        pairs.append((f"case{case}_failures", stats.failures[case - 1]))
        pairs.append((f"case{case}_rate", fmt_prob(stats.case_rate(case))))
    return pairs


def efficiency_report(rep: EfficiencyReport, L: int) -> list[tuple[str, object]]:
    return [
        ("L", L),
        ("eta_c", rep.eta_c),
        ("eta_q", rep.eta_q),
        ("eta_b", rep.eta_b),
        ("eta", fmt_fraction(rep.eta)),
    ]


TABLE1_HEADER = ["m_a", "m_b", "k_ab", "initial", "k_c", "collapsed", "k_a", "k_b", "r_a", "r_b", "r", "ok"]


def table1_rows(rows: Sequence[Table1Row]) -> list[list[object]]:
    return [
        [
            row.m_a,
            row.m_b,
            row.k_ab,
            row.initial.letters,
            row.k_c,
            "".join(z.letter for z in row.collapsed),
            row.k_a,
            row.k_b,
            row.r_a,
            row.r_b,
            row.r,
            int(row.ok),
        ]
        for row in rows
    ]


THEOREM1_HEADER = ["theta", "detection_rate", "probe_information", "runs", "checked_atoms", "failures"]


def theorem1_rows(rows: Sequence[Theorem1Row]) -> list[list[object]]:
    return [
        [
            fmt_prob(r.theta),
            fmt_prob(r.detection_rate),
            fmt_prob(r.probe_information),
            r.runs,
            r.checked_atoms,
            r.failures,
        ]
        for r in rows
    ]
