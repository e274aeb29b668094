"""Eavesdropping strategies that tap the TP <-> participant quantum channels.

An attack sees each flying atom twice: on the forward leg from TP to the
participant (:meth:`Attack.tap_forward`) and on the return leg back to TP
(:meth:`Attack.tap_return`).  Everything Eve touches stays inside the
atom's global register, so her retained atoms and probes remain exactly
entangled with the protocol qubits until analysis time.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import qsim
from .errors import InvalidArgument
from .qsim import QubitRegister, ZOutcome

CHANNELS = ("A", "B")


@dataclass
class EveRecord:
    """What Eve holds after one run, keyed by atom index."""

    retained: dict = field(default_factory=lambda: defaultdict(list))
    injected: dict = field(default_factory=lambda: defaultdict(dict))
    measured: dict = field(default_factory=lambda: defaultdict(dict))
    probes: dict = field(default_factory=lambda: defaultdict(list))

    def is_empty(self) -> bool:
        return not (self.retained or self.injected or self.measured or self.probes)


@dataclass(frozen=True)
class Attack:
    channels: tuple = ("A",)

    kind = "none"

    def __post_init__(self):
        bad = set(self.channels) - set(CHANNELS)
        if bad:
            raise InvalidArgument(f"unknown channel(s) {sorted(bad)}; expected A or B")

    def taps(self, channel: str) -> bool:
        return channel in self.channels

    def tap_forward(self, reg: QubitRegister, label, channel: str, rng, eve: EveRecord, atom: int):
        """Handle an atom travelling TP -> participant.

        Returns the updated register and the label of the qubit actually
        delivered to the participant.
        """
        reg.position(label)
        return reg, label

    def tap_return(self, reg: QubitRegister, label, channel: str, rng, eve: EveRecord, atom: int):
        """Handle an atom travelling participant -> TP."""
        reg.position(label)
        return reg, label


@dataclass(frozen=True)
class NoAttack(Attack):
    channels: tuple = ()

    kind = "none"


@dataclass(frozen=True)
class InterceptResend(Attack):
    """Keep the genuine atom and forward a fresh one in a random Z state."""

    kind = "intercept-resend"

    def tap_forward(self, reg, label, channel, rng, eve, atom):
        reg.position(label)
        if not self.taps(channel):
            return reg, label
        fake = ZOutcome(int(rng.integers(2)))
        fake_label = f"{channel}.fake"
        reg = reg.append(fake_label, fake)
        eve.retained[atom].append(label)
        eve.injected[atom][channel] = fake
        return reg, fake_label


@dataclass(frozen=True)
class MeasureResend(Attack):
    """Z-measure the flying atom and let the collapsed atom continue."""

    kind = "measure-resend"

    def tap_forward(self, reg, label, channel, rng, eve, atom):
        reg.position(label)
        if not self.taps(channel):
            return reg, label
        outcome, reg = qsim.measure_z(reg, label, rng)
        eve.measured[atom][channel] = outcome
        return reg, label


@dataclass(frozen=True, eq=False)
class EntangleMeasure(Attack):
    """Couple each flying atom to a private probe with ``u_e`` and ``u_f``.

    Both unitaries act on ``(flying atom, probe qubits...)`` with the atom as
    the most significant position.  Every tapped atom gets its own probe,
    prepared in ``|0...0>`` and shared by the forward and return couplings.
    """

    u_e: np.ndarray = None
    u_f: np.ndarray = None
    probe_qubits: int = 1

    kind = "entangle-measure"

    def __post_init__(self):
        super().__post_init__()
        if self.probe_qubits < 1:
            raise InvalidArgument("probe_qubits must be positive")
        dim = 1 << (1 + self.probe_qubits)
        for name in ("u_e", "u_f"):
            u = getattr(self, name)
            u = np.eye(dim, dtype=complex) if u is None else np.asarray(u, dtype=complex)
            if u.shape != (dim, dim):
                raise InvalidArgument(f"{name} must be {dim}x{dim} for {self.probe_qubits} probe qubit(s)")
            if not qsim.is_unitary(u):
                raise InvalidArgument(f"{name} is not unitary within 1e-12")
            object.__setattr__(self, name, u)

    def probe_labels(self, channel: str) -> list[str]:
        return [f"{channel}.probe{k}" for k in range(self.probe_qubits)]

    def _attach_probe(self, reg, channel, eve, atom):
        labels = self.probe_labels(channel)
        if labels[0] not in reg:
            for lab in labels:
                reg = reg.append(lab, ZOutcome.G)
            eve.probes[atom].extend(labels)
        return reg, labels

    def tap_forward(self, reg, label, channel, rng, eve, atom):
        reg.position(label)
        if not self.taps(channel):
            return reg, label
        reg, probe = self._attach_probe(reg, channel, eve, atom)
        return qsim.apply_unitary(reg, [label, *probe], self.u_e), label

    def tap_return(self, reg, label, channel, rng, eve, atom):
        reg.position(label)
        if not self.taps(channel):
            return reg, label
        reg, probe = self._attach_probe(reg, channel, eve, atom)
        return qsim.apply_unitary(reg, [label, *probe], self.u_f), label


NO_ATTACK = NoAttack()


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def controlled_rotation_family(theta: float, channels: tuple = ("A",)) -> EntangleMeasure:
    """Probe rotated by ``R_y(theta)`` only when the flying atom is excited.

    ``theta = 0`` leaves everything untouched; ``theta = pi`` writes a copy
    of the atom's Z value into the probe.
    """
    u_e = np.zeros((4, 4), dtype=complex)
    u_e[:2, :2] = np.eye(2)
    u_e[2:, 2:] = ry(theta)
    return EntangleMeasure(channels=tuple(channels), u_e=u_e, u_f=np.eye(4), probe_qubits=1)


def cnot() -> np.ndarray:
    return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def parse_matrix(text: str) -> np.ndarray:
    """Read a complex matrix: a dimension line, then one row of re/im pairs per line.

    Blank lines and ``#`` comments are ignored.
    """
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise InvalidArgument("empty matrix text")
    try:
        dim = int(lines[0])
        rows = [[float(x) for x in ln.replace(",", " ").split()] for ln in lines[1:]]
    except ValueError as exc:
        raise InvalidArgument(f"malformed matrix text: {exc}") from None
    if dim < 1 or len(rows) != dim or any(len(r) != 2 * dim for r in rows):
        raise InvalidArgument(f"expected {dim} rows of {2 * dim} numbers")
    arr = np.array(rows)
    return arr[:, 0::2] + 1j * arr[:, 1::2]


def format_matrix(u) -> str:
    u = np.asarray(u, dtype=complex)
    out = [str(u.shape[0])]
    for row in u:
        out.append(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row))
    return "\n".join(out) + "\n"


def load_matrix(path) -> np.ndarray:
    return parse_matrix(Path(path).read_text())


def key_eligible_positions(transcript) -> list[int]:
    """Unchecked SIFT-SIFT atoms, i.e. the pool key bits are drawn from."""
    return [rec.index for rec in transcript.records if rec.case == 4 and not rec.checked]


class ProbeAccumulator:
    """Running sums of Eve's probe states split by Alice's key bit.

    Only key-eligible atoms are counted, including those of aborted runs:
    the probe state exists whether or not TP later aborts.
    """

    def __init__(self):
        self.sums = [None, None]
        self.counts = [0, 0]

    def add(self, transcript) -> None:
        eve = transcript.eve
        if eve is None:
            return
        for idx in key_eligible_positions(transcript):
            probes = eve.probes.get(idx)
            if not probes:
                continue
            rec = transcript.records[idx - 1]
            bit = int(rec.alice_sift)
            rho = qsim.reduced_density(transcript.registers[idx - 1], probes)
            self.sums[bit] = rho if self.sums[bit] is None else self.sums[bit] + rho
            self.counts[bit] += 1

    def merge(self, other: "ProbeAccumulator") -> "ProbeAccumulator":
        for b in (0, 1):
            if other.sums[b] is not None:
                self.sums[b] = other.sums[b] if self.sums[b] is None else self.sums[b] + other.sums[b]
            self.counts[b] += other.counts[b]
        return self

    def value(self) -> float:
        if not all(self.counts):
            raise InvalidArgument(
                f"need probe data for both key-bit values, have counts {self.counts}"
            )
        rho0 = self.sums[0] / self.counts[0]
        rho1 = self.sums[1] / self.counts[1]
        return qsim.trace_distance(rho0, rho1)


def probe_information(runs: Iterable) -> float:
    """Trace distance between Eve's average probe states for k_a = 0 and k_a = 1.

    ``runs`` holds run outcomes (or transcripts) from an entangle-measure
    attack.  0 means the probe says nothing about Alice's key bits, 1 means
    it identifies them perfectly.
    """
    acc = ProbeAccumulator()
    for run in runs:
        transcript = getattr(run, "transcript", run)
        if transcript is not None:
            acc.add(transcript)
    if acc.counts == [0, 0]:
        raise InvalidArgument("no entangle-measure probe data in these runs")
    return acc.value()
