"""Three-party private comparison run: TP, Alice and Bob over a tapped channel.

One call to :func:`run_protocol` walks through the whole exchange:

1. TP draws ``8L`` product states from ``{gg, ge, eg, ee}``.
2. Each pair passes through the cavity and the two atoms are sent, one
   pair at a time, to Alice (first atom) and Bob (second atom).
3. Each participant either SIFTs (Z-measures and resends a fresh atom in the
   found state) or CTRLs (reflects the atom untouched).
4. TP checks every CTRL-CTRL, SIFT-CTRL and CTRL-SIFT atom and a random half
   of the SIFT-SIFT atoms, aborting if a case's error rate is too high.
5. The remaining SIFT-SIFT atoms give the keys ``k_a``, ``k_b`` (from the
   participants' results) and ``k_c`` (from the initial state), which mask
   the private inputs.
6. TP XORs the masked strings and announces whether the inputs are equal.
"""

from __future__ import annotations

import json
from functools import reduce
from operator import xor
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Sequence, Union

import numpy as np

from . import qsim
from .adversary import NO_ATTACK, Attack, EveRecord
from .errors import InsufficientKeyMaterial, InvalidArgument
from .qsim import DeltaOutcome, QubitRegister, ZOutcome

Bits = tuple


class InitialState(IntEnum):
    GG = 0
    GE = 1
    EG = 2
    EE = 3

    @property
    def letters(self) -> str:
        return ("gg", "ge", "eg", "ee")[self.value]

    @property
    def bits(self) -> tuple[int, int]:
        return self.value >> 1, self.value & 1

    @property
    def k_c(self) -> int:
        """TP's key bit: 0 for gg/ee, 1 for ge/eg."""
        a, b = self.bits
        return a ^ b

    @classmethod
    def from_letters(cls, s: str) -> "InitialState":
        return cls(("gg", "ge", "eg", "ee").index(s))


# Delta outcome TP expects when a pair comes back undisturbed.
EXPECTED_DELTA = {
    InitialState.GG: DeltaOutcome.PHI_MINUS,
    InitialState.GE: DeltaOutcome.PSI_MINUS,
    InitialState.EG: DeltaOutcome.PSI_PLUS,
    InitialState.EE: DeltaOutcome.PHI_PLUS,
}


class PartyAction(Enum):
    SIFT = "SIFT"
    CTRL = "CTRL"


class AbortStage(Enum):
    CASE1_CHECK = "Case1Check"
    CASE2_CHECK = "Case2Check"
    CASE3_CHECK = "Case3Check"
    CASE4_CHECK = "Case4Check"
    INSUFFICIENT_KEY_MATERIAL = "InsufficientKeyMaterial"


CHECK_STAGES = (
    AbortStage.CASE1_CHECK,
    AbortStage.CASE2_CHECK,
    AbortStage.CASE3_CHECK,
    AbortStage.CASE4_CHECK,
)


def case_of(alice: PartyAction, bob: PartyAction) -> int:
    if alice is PartyAction.CTRL:
        return 1 if bob is PartyAction.CTRL else 3
    return 2 if bob is PartyAction.CTRL else 4


@dataclass(frozen=True)
class ProtocolConfig:
    L: int
    seed: int = 0
    error_threshold: float = 0.0
    case4_check_fraction: float = 0.5

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise InvalidArgument(f"L must be a positive integer, got {self.L!r}")
        if not 0.0 <= self.error_threshold <= 1.0:
            raise InvalidArgument("error_threshold must lie in [0, 1]")
        if not 0.0 <= self.case4_check_fraction <= 1.0:
            raise InvalidArgument("case4_check_fraction must lie in [0, 1]")

    @property
    def n_atoms(self) -> int:
        return 8 * self.L


@dataclass
class AtomRecord:
    index: int
    initial: InitialState
    alice_action: PartyAction
    bob_action: PartyAction
    alice_sift: ZOutcome | None = None
    bob_sift: ZOutcome | None = None
    checked: bool = False
    check_passed: bool | None = None
    tp_result: DeltaOutcome | tuple | None = None

    @property
    def case(self) -> int:
        return case_of(self.alice_action, self.bob_action)

    def to_json(self) -> dict:
        tp = self.tp_result
        if isinstance(tp, DeltaOutcome):
            tp = tp.name
        elif tp is not None:
            tp = "".join(z.letter for z in tp)
        return {
            "index": self.index,
            "initial": self.initial.letters,
            "actionA": self.alice_action.value,
            "actionB": self.bob_action.value,
            "siftA": None if self.alice_sift is None else self.alice_sift.letter,
            "siftB": None if self.bob_sift is None else self.bob_sift.letter,
            "case": self.case,
            "checked": self.checked,
            "passed": self.check_passed,
            "tpResult": tp,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AtomRecord":
        def z(s):
            return None if s is None else ZOutcome("ge".index(s))

        tp = d["tpResult"]
        if tp is not None:
            tp = DeltaOutcome[tp] if tp in DeltaOutcome.__members__ else tuple(z(c) for c in tp)
        return cls(
            index=d["index"],
            initial=InitialState.from_letters(d["initial"]),
            alice_action=PartyAction(d["actionA"]),
            bob_action=PartyAction(d["actionB"]),
            alice_sift=z(d["siftA"]),
            bob_sift=z(d["siftB"]),
            checked=d["checked"],
            check_passed=d["passed"],
            tp_result=tp,
        )


@dataclass
class CheckStats:
    """Checked-atom and failure counts for cases 1..4 (list slot = case - 1)."""

    checked: list = field(default_factory=lambda: [0, 0, 0, 0])
    failures: list = field(default_factory=lambda: [0, 0, 0, 0])

    def rate(self, case: int) -> float:
        n = self.checked[case - 1]
        return self.failures[case - 1] / n if n else 0.0


@dataclass
class Transcript:
    config: ProtocolConfig
    records: list = field(default_factory=list)
    key_positions: list = field(default_factory=list)
    k_a: Bits = ()
    k_b: Bits = ()
    k_c: Bits = ()
    r_a: Bits = ()
    r_b: Bits = ()
    checks: CheckStats = field(default_factory=CheckStats)
    # final global pure state of each atom pair, including Eve's qubits
    registers: list = field(default_factory=list, repr=False)
    returned: list = field(default_factory=list, repr=False)
    eve: EveRecord | None = field(default=None, repr=False)

    def to_lines(self, outcome: "RunOutcome | None" = None) -> list[str]:
        """Line-delimited JSON: one line per atom, then a footer line."""
        lines = [json.dumps(rec.to_json(), sort_keys=True) for rec in self.records]
        footer = {
            "footer": True,
            "L": self.config.L,
            "seed": self.config.seed,
            "error_threshold": self.config.error_threshold,
            "keyPositions": self.key_positions,
            "kA": format_bits(self.k_a),
            "kB": format_bits(self.k_b),
            "kC": format_bits(self.k_c),
            "rA": format_bits(self.r_a),
            "rB": format_bits(self.r_b),
        }
        if outcome is not None:
            footer["outcome"] = describe(outcome)
        lines.append(json.dumps(footer, sort_keys=True))
        return lines


def read_transcript(lines: Sequence[str]) -> tuple[list[AtomRecord], dict]:
    records, footer = [], None
    for ln in lines:
        if not ln.strip():
            continue
        d = json.loads(ln)
        if d.get("footer"):
            footer = d
        else:
            records.append(AtomRecord.from_json(d))
    if footer is None:
        raise InvalidArgument("transcript has no footer line")
    return records, footer


@dataclass
class Aborted:
    stage: AbortStage
    observed_error_rate: float
    transcript: Transcript | None = field(default=None, repr=False)

    @property
    def detected(self) -> bool:
        return self.stage is not AbortStage.INSUFFICIENT_KEY_MATERIAL


@dataclass
class Completed:
    equal: bool
    r: Bits
    transcript: Transcript = field(repr=False)


RunOutcome = Union[Aborted, Completed]


def describe(outcome: RunOutcome) -> str:
    if isinstance(outcome, Completed):
        return "Equal" if outcome.equal else "NotEqual"
    return f"Aborted{{{outcome.stage.value}}}"


# -- bit strings -------------------------------------------------------------


def parse_bits(text: str) -> Bits:
    if not text or set(text) - {"0", "1"}:
        raise InvalidArgument(f"not a 0/1 string: {text!r}")
    return tuple(int(c) for c in text)


def format_bits(bits) -> str:
    return "".join("-" if b is None else str(int(b)) for b in bits)


def xor_bits(*strings) -> Bits:
    n = len(strings[0])
    if any(len(s) != n for s in strings):
        raise InvalidArgument(f"bit strings differ in length: {[len(s) for s in strings]}")
    return tuple(reduce(xor, (int(s[j]) for s in strings)) for j in range(n))


def random_bits(rng: np.random.Generator, n: int) -> Bits:
    return tuple(int(b) for b in rng.integers(0, 2, size=n))


# -- protocol steps ------------------------------------------------------------


def party_streams(seed: int) -> dict:
    """Independent generators for TP, Alice, Bob and Eve derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(4)
    return dict(zip(("tp", "alice", "bob", "eve"), (np.random.default_rng(c) for c in children)))


def prepare_initial_sequence(config: ProtocolConfig, rng) -> list[InitialState]:
    return [InitialState(int(v)) for v in rng.integers(0, 4, size=config.n_atoms)]


_CAVITY = qsim.cavity_unitary()


def evolve_atom_pair(initial: InitialState) -> QubitRegister:
    """Pass a product pair through the cavity; labels are ``A`` and ``B``."""
    initial = InitialState(initial)
    return QubitRegister(("A", "B"), _CAVITY[:, int(initial)])


def party_interact(reg: QubitRegister, label, action: PartyAction, rng, fresh_label=None):
    """Apply SIFT or CTRL to the received atom.

    Returns ``(register, returned label, outcome)``.  SIFT keeps the measured
    atom with the participant and sends back a new atom in the found state.
    """
    reg.position(label)
    if action is PartyAction.CTRL:
        return reg, label, None
    outcome, reg = qsim.measure_z(reg, label, rng)
    fresh = fresh_label if fresh_label is not None else f"{label}.new"
    return reg.append(fresh, outcome), fresh, outcome


def _z_check(rec: AtomRecord, tp_a: ZOutcome, tp_b: ZOutcome) -> bool:
    if (int(tp_a) ^ int(tp_b)) != rec.initial.k_c:
        return False
    if rec.alice_sift is not None and rec.alice_sift != tp_a:
        return False
    if rec.bob_sift is not None and rec.bob_sift != tp_b:
        return False
    return True


def run_checks(transcript: Transcript, rng) -> Aborted | None:
    """TP's eavesdropping check over all four cases.

    Every case is evaluated in full so per-case failure counts are always
    available; the first case whose error rate exceeds the threshold
    (in case order) is reported.
    """
    config = transcript.config
    records = transcript.records
    case4 = [i for i, rec in enumerate(records) if rec.case == 4]
    n_checked4 = int(np.floor(len(case4) * config.case4_check_fraction))
    chosen4 = set()
    if n_checked4:
        chosen4 = {int(i) for i in rng.choice(case4, size=n_checked4, replace=False)}

    stats = CheckStats()
    for i, rec in enumerate(records):
        case = rec.case
        if case == 4 and i not in chosen4:
            continue
        reg = transcript.registers[i]
        lab_a, lab_b = transcript.returned[i]
        if case == 1:
            outcome, reg = qsim.measure_delta(reg, (lab_a, lab_b), rng)
            rec.tp_result = outcome
            passed = outcome == EXPECTED_DELTA[rec.initial]
        else:
            tp_a, reg = qsim.measure_z(reg, lab_a, rng)
            tp_b, reg = qsim.measure_z(reg, lab_b, rng)
            rec.tp_result = (tp_a, tp_b)
            passed = _z_check(rec, tp_a, tp_b)
        transcript.registers[i] = reg
        rec.checked = True
        rec.check_passed = passed
        stats.checked[case - 1] += 1
        stats.failures[case - 1] += not passed
    transcript.checks = stats

    for case, stage in enumerate(CHECK_STAGES, start=1):
        rate = stats.rate(case)
        if rate > config.error_threshold:
            return Aborted(stage, rate, transcript)
    return None


def derive_keys(transcript: Transcript) -> tuple[Bits, Bits, Bits]:
    """Keys from the first L unchecked SIFT-SIFT atoms in transmission order."""
    L = transcript.config.L
    pool = [rec for rec in transcript.records if rec.case == 4 and not rec.checked]
    if len(pool) < L:
        raise InsufficientKeyMaterial(len(pool), L)
    used = pool[:L]
    transcript.key_positions = [rec.index for rec in used]
    transcript.k_a = tuple(int(rec.alice_sift) for rec in used)
    transcript.k_b = tuple(int(rec.bob_sift) for rec in used)
    transcript.k_c = tuple(rec.initial.k_c for rec in used)
    return transcript.k_a, transcript.k_b, transcript.k_c


def encrypt_inputs(m, k, k_ab) -> Bits:
    return xor_bits(m, k, k_ab)


def tp_compare(r_a, r_b, k_c, early_exit: bool = True) -> tuple[bool, tuple]:
    """XOR the masked strings position by position.

    With ``early_exit`` TP stops at the first 1 and the remaining entries of
    ``r`` are ``None`` (not computed).
    """
    if not len(r_a) == len(r_b) == len(k_c):
        raise InvalidArgument("r_a, r_b and k_c must have equal length")
    r = []
    for a, b, c in zip(r_a, r_b, k_c):
        bit = int(a) ^ int(b) ^ int(c)
        r.append(bit)
        if bit and early_exit:
            break
    r.extend([None] * (len(r_a) - len(r)))
    return all(b == 0 for b in r), tuple(r)


def run_protocol(
    config: ProtocolConfig,
    m_a,
    m_b,
    k_ab,
    attack: Attack = NO_ATTACK,
    early_exit: bool = True,
) -> RunOutcome:
    """Execute one full comparison and return ``Aborted`` or ``Completed``."""
    L = config.L
    if not len(m_a) == len(m_b) == len(k_ab) == L:
        raise InvalidArgument(
            f"inputs must all have length L={L}: got {len(m_a)}, {len(m_b)}, {len(k_ab)}"
        )
    streams = party_streams(config.seed)
    tp, alice, bob, eve_rng = streams["tp"], streams["alice"], streams["bob"], streams["eve"]

    transcript = Transcript(config=config)
    eve = EveRecord() if attack.channels else None
    transcript.eve = eve
    initial = prepare_initial_sequence(config, tp)
    actions_a = alice.integers(0, 2, size=config.n_atoms)
    actions_b = bob.integers(0, 2, size=config.n_atoms)

    # atom i+1 enters the channel only after atom i is back with TP
    for i, init in enumerate(initial):
        idx = i + 1
        reg = evolve_atom_pair(init)
        act_a = PartyAction.SIFT if actions_a[i] else PartyAction.CTRL
        act_b = PartyAction.SIFT if actions_b[i] else PartyAction.CTRL

        reg, lab = attack.tap_forward(reg, "A", "A", eve_rng, eve, idx)
        reg, lab, sift_a = party_interact(reg, lab, act_a, alice, "A.alice")
        reg, ret_a = attack.tap_return(reg, lab, "A", eve_rng, eve, idx)

        reg, lab = attack.tap_forward(reg, "B", "B", eve_rng, eve, idx)
        reg, lab, sift_b = party_interact(reg, lab, act_b, bob, "B.bob")
        reg, ret_b = attack.tap_return(reg, lab, "B", eve_rng, eve, idx)

        transcript.records.append(AtomRecord(idx, init, act_a, act_b, sift_a, sift_b))
        transcript.registers.append(reg)
        transcript.returned.append((ret_a, ret_b))

    aborted = run_checks(transcript, tp)
    if aborted is not None:
        return aborted
    try:
        k_a, k_b, k_c = derive_keys(transcript)
    except InsufficientKeyMaterial:
        return Aborted(AbortStage.INSUFFICIENT_KEY_MATERIAL, 0.0, transcript)
    transcript.r_a = encrypt_inputs(m_a, k_a, k_ab)
    transcript.r_b = encrypt_inputs(m_b, k_b, k_ab)
    equal, r = tp_compare(transcript.r_a, transcript.r_b, k_c, early_exit=early_exit)
    return Completed(equal, r, transcript)


def retry_seed(seed: int, attempt: int) -> int:
    if attempt == 0:
        return seed
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1, np.uint64)[0])


def run_until_keyed(
    config: ProtocolConfig,
    m_a,
    m_b,
    k_ab,
    attack: Attack = NO_ATTACK,
    max_attempts: int = 64,
) -> tuple[RunOutcome, int]:
    """Repeat a run with fresh seeds while it stops for lack of key material.

    Returns the final outcome and the number of attempts used.
    """
    for attempt in range(max_attempts):
        cfg = replace(config, seed=retry_seed(config.seed, attempt))
        outcome = run_protocol(cfg, m_a, m_b, k_ab, attack)
        if not (isinstance(outcome, Aborted) and outcome.stage is AbortStage.INSUFFICIENT_KEY_MATERIAL):
            break
    return outcome, attempt + 1
