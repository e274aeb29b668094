"""Exact statevector engine for small atom registers.

Every quantum object in a protocol run lives in a :class:`QubitRegister`:
a complex amplitude vector over labelled two-level atoms.  The first label
is the most significant position of the amplitude index, so ``|ge>`` on
labels ``("A", "B")`` is index 1 and ``|eg>`` is index 2.

Basis letters follow the atomic convention: ``g`` (ground) is bit 0 and
``e`` (excited) is bit 1.
"""

from __future__ import annotations

import math
from enum import IntEnum
from functools import lru_cache
from typing import Hashable, Sequence

import numpy as np

from .errors import InvalidArgument

ATOL = 1e-12
# outcomes with probability below this are never sampled
IMPOSSIBLE = 1e-15


class ZOutcome(IntEnum):
    G = 0
    E = 1

    @property
    def letter(self) -> str:
        return "ge"[self.value]


class DeltaOutcome(IntEnum):
    PHI_MINUS = 0
    PSI_MINUS = 1
    PSI_PLUS = 2
    PHI_PLUS = 3


_S2 = 1 / np.sqrt(2)

# Columns are |phi->, |psi->, |psi+>, |phi+> over (gg, ge, eg, ee).
DELTA_BASIS = _S2 * np.array(
    [
        [1, 0, 0, -1j],
        [0, 1, -1j, 0],
        [0, -1j, 1, 0],
        [-1j, 0, 0, 1],
    ],
    dtype=complex,
)


def delta_state(outcome: DeltaOutcome) -> np.ndarray:
    return DELTA_BASIS[:, int(outcome)].copy()


def delta_projectors() -> list[np.ndarray]:
    return [np.outer(DELTA_BASIS[:, k], DELTA_BASIS[:, k].conj()) for k in range(4)]


class QubitRegister:
    """Pure state of ``n`` labelled qubits.

    Registers are treated as values: engine functions return new registers
    and never mutate their inputs.
    """

    __slots__ = ("labels", "amplitudes")

    def __init__(self, labels: Sequence[Hashable], amplitudes):
        labels = tuple(labels)
        amplitudes = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if len(set(labels)) != len(labels):
            raise InvalidArgument(f"duplicate qubit labels: {labels}")
        if amplitudes.size != 1 << len(labels):
            raise InvalidArgument(
                f"{len(labels)} labels need {1 << len(labels)} amplitudes, "
                f"got {amplitudes.size}"
            )
        self.labels = labels
        self.amplitudes = amplitudes

    @property
    def n(self) -> int:
        return len(self.labels)

    def __repr__(self) -> str:
        return f"QubitRegister(labels={self.labels!r}, n={self.n})"

    def __contains__(self, label) -> bool:
        return label in self.labels

    def position(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidArgument(f"unknown qubit label {label!r}") from None

    def positions(self, labels: Sequence[Hashable]) -> list[int]:
        axes = [self.position(lab) for lab in labels]
        if len(set(axes)) != len(axes):
            raise InvalidArgument(f"target labels are not distinct: {tuple(labels)}")
        return axes

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n)

    def append(self, label, outcome: ZOutcome | int) -> "QubitRegister":
        """Return this register extended by a fresh qubit in a Z eigenstate.

        The new qubit becomes the least significant position.
        """
        if label in self.labels:
            raise InvalidArgument(f"duplicate qubit label {label!r}")
        amps = np.zeros(2 * self.amplitudes.size, dtype=complex)
        amps[int(outcome) :: 2] = self.amplitudes
        return _fast(self.labels + (label,), amps)

    def relabel(self, mapping: dict) -> "QubitRegister":
        return QubitRegister([mapping.get(lab, lab) for lab in self.labels], self.amplitudes)

    def dump(self, atol: float = 0.0) -> list[tuple[str, float, float]]:
        """Debug rows ``(basis, re, im)`` in index order (g before e)."""
        rows = []
        for idx, amp in enumerate(self.amplitudes):
            if abs(amp) <= atol and atol:
                continue
            bits = format(idx, f"0{self.n}b") if self.n else ""
            rows.append((bits.replace("0", "g").replace("1", "e"), float(amp.real), float(amp.imag)))
        return rows


def new_product_state(outcomes: Sequence[ZOutcome | int], labels: Sequence[Hashable] | None = None) -> QubitRegister:
    if len(outcomes) == 0:
        raise InvalidArgument("a register needs at least one qubit")
    if labels is None:
        labels = range(len(outcomes))
    labels = tuple(labels)
    if len(labels) != len(outcomes):
        raise InvalidArgument("one label per qubit is required")
    idx = 0
    for o in outcomes:
        idx = (idx << 1) | int(o)
    amps = np.zeros(1 << len(outcomes), dtype=complex)
    amps[idx] = 1.0
    return QubitRegister(labels, amps)


def cavity_unitary() -> np.ndarray:
    """Two-atom cavity map at lambda*t = pi/4, Omega*t = pi on (gg, ge, eg, ee)."""
    m = np.array(
        [
            [1, 0, 0, -1j],
            [0, 1, -1j, 0],
            [0, -1j, 1, 0],
            [-1j, 0, 0, 1],
        ],
        dtype=complex,
    )
    return _S2 * np.exp(-1j * np.pi / 4) * m


def is_unitary(u, atol: float = ATOL) -> bool:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return bool(np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=atol, rtol=0))


def apply_unitary(reg: QubitRegister, targets: Sequence[Hashable], u) -> QubitRegister:
    u = np.asarray(u, dtype=complex)
    axes = reg.positions(targets)
    k = len(axes)
    if k == 0:
        raise InvalidArgument("no target qubits")
    if u.shape != (1 << k, 1 << k):
        raise InvalidArgument(f"matrix of shape {u.shape} does not act on {k} qubit(s)")
    n = reg.n
    front = list(range(k))
    if axes == front:
        return _fast(reg.labels, (u @ reg.amplitudes.reshape(1 << k, -1)).reshape(-1))
    psi = np.moveaxis(reg.tensor(), axes, front).reshape(1 << k, -1)
    psi = (u @ psi).reshape((2,) * n)
    psi = np.moveaxis(psi, front, axes)
    return _fast(reg.labels, psi.reshape(-1))


def _sample(probs, rng: np.random.Generator) -> int:
    probs = [0.0 if p < IMPOSSIBLE else p for p in probs]
    x = rng.random() * sum(probs)
    acc = 0.0
    last = 0
    for k, p in enumerate(probs):
        if p == 0.0:
            continue
        acc += p
        last = k
        if x < acc:
            return k
    # rounding pushed x past the final partial sum
    return last


def _fast(labels: tuple, amplitudes: np.ndarray) -> QubitRegister:
    reg = object.__new__(QubitRegister)
    reg.labels = labels
    reg.amplitudes = amplitudes
    return reg


@lru_cache(maxsize=None)
def _masks(n: int, axis: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(1 << n)
    excited = ((idx >> (n - 1 - axis)) & 1).astype(bool)
    return ~excited, excited


def _measure_qubit(reg: QubitRegister, axis: int, rng) -> tuple[int, QubitRegister]:
    amps = reg.amplitudes
    masks = _masks(len(reg.labels), axis)
    sel = amps[masks[1]]
    p1 = np.vdot(sel, sel).real
    p0 = np.vdot(amps, amps).real - p1
    outcome = _sample((p0, p1), rng)
    post = np.where(masks[outcome], amps, 0) * (1 / math.sqrt(p1 if outcome else p0))
    return outcome, _fast(reg.labels, post)


def _measure_computational(reg: QubitRegister, axes: list[int], rng) -> tuple[int, QubitRegister]:
    k = len(axes)
    front = list(range(k))
    psi = np.moveaxis(reg.tensor(), axes, front).reshape(1 << k, -1)
    probs = np.einsum("ij,ij->i", psi.conj(), psi).real
    outcome = _sample(probs.tolist(), rng)
    post = np.zeros_like(psi)
    post[outcome] = psi[outcome] / np.sqrt(probs[outcome])
    post = np.moveaxis(post.reshape((2,) * reg.n), front, axes)
    return outcome, _fast(reg.labels, post.reshape(-1))


def measure_z(reg: QubitRegister, target, rng: np.random.Generator) -> tuple[ZOutcome, QubitRegister]:
    outcome, post = _measure_qubit(reg, reg.position(target), rng)
    return ZOutcome(outcome), post


def measure_basis(reg: QubitRegister, targets: Sequence[Hashable], basis, rng) -> tuple[int, QubitRegister]:
    """Projective measurement onto the orthonormal columns of ``basis``.

    The post-measurement targets are left in the selected basis vector.
    """
    basis = np.asarray(basis, dtype=complex)
    rotated = apply_unitary(reg, targets, basis.conj().T)
    outcome, post = _measure_computational(rotated, reg.positions(targets), rng)
    return outcome, apply_unitary(post, targets, basis)


def measure_delta(reg: QubitRegister, targets: Sequence[Hashable], rng) -> tuple[DeltaOutcome, QubitRegister]:
    if len(targets) != 2:
        raise InvalidArgument("the Delta basis measures exactly two atoms")
    outcome, post = measure_basis(reg, targets, DELTA_BASIS, rng)
    return DeltaOutcome(outcome), post


def outcome_probabilities(reg: QubitRegister, targets: Sequence[Hashable], basis=None) -> np.ndarray:
    """Born probabilities for measuring ``targets`` (computational basis by default)."""
    if basis is not None:
        reg = apply_unitary(reg, targets, np.asarray(basis, dtype=complex).conj().T)
    axes = reg.positions(targets)
    k = len(axes)
    psi = np.moveaxis(reg.tensor(), axes, list(range(k))).reshape(1 << k, -1)
    return np.einsum("ij,ij->i", psi.conj(), psi).real


def reduced_density(reg: QubitRegister, keep: Sequence[Hashable]) -> np.ndarray:
    """Partial trace of ``|psi><psi|`` over every label not in ``keep``."""
    keep = list(keep)
    if not keep:
        raise InvalidArgument("keep at least one qubit")
    axes = reg.positions(keep)
    k = len(axes)
    psi = np.moveaxis(reg.tensor(), axes, list(range(k))).reshape(1 << k, -1)
    return psi @ psi.conj().T


def check_density(rho, atol: float = ATOL) -> None:
    rho = np.asarray(rho)
    if not np.allclose(rho, rho.conj().T, atol=atol, rtol=0):
        raise InvalidArgument("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > atol:
        raise InvalidArgument("density matrix trace is not 1")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise InvalidArgument("density matrix has a negative eigenvalue")


def trace_distance(a, b) -> float:
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise InvalidArgument(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = 0.5 * float(np.linalg.svd(a - b, compute_uv=False).sum())
    return min(max(d, 0.0), 1.0)


def equal_up_to_global_phase(a, b, atol: float = ATOL) -> bool:
    """Compare two vectors or matrices ignoring an overall phase factor."""
    a = np.asarray(a, dtype=complex).reshape(-1)
    b = np.asarray(b, dtype=complex).reshape(-1)
    if a.shape != b.shape:
        return False
    k = int(np.argmax(np.abs(b)))
    if abs(b[k]) < atol:
        return bool(np.allclose(a, 0, atol=atol))
    phase = a[k] / b[k]
    if abs(abs(phase) - 1) > 1e-9:
        return False
    return bool(np.allclose(a, phase * b, atol=atol, rtol=0))
