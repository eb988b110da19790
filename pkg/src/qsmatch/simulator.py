"""Circuit construction and simulation for n iterations of the protocol.

``n`` iterations use ``2**n`` qubits.  At step j the survivors of step j-1
(qubit indices divisible by ``2**(j-1)``) are paired as ``(i, i + 2**(j-1))``
and the gate acts with ``i`` as its kept qubit.  Qubit 0 is the finally kept
qubit; every other qubit must read 0 for the shot to count as a success.
All measurements happen at the end of the circuit.

Bitstrings put qubit 0 in the leftmost position.  Sampling draws a single
multinomial over the full outcome distribution with numpy's PCG64 generator
seeded by the caller's 64-bit seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .kak_decomposer import Gate, GateSequence, PAULI_X, synthesize
from .state_space import BlochState, Epsilon
from .unitary_builder import build_u_epsilon

MAX_STATEVECTOR_ITERATIONS = 4
MAX_DENSITY_ITERATIONS = 3


class CircuitError(ValueError):
    pass


class UndefinedEstimateError(ValueError):
    """No post-selected shots to estimate from."""


@dataclass
class Circuit:
    qubit_count: int
    gates: list
    kept_qubit: int = 0
    discard_set: frozenset = frozenset()
    epsilon: Optional[float] = None
    iterations: Optional[int] = None
    pairs: list = field(default_factory=list)  # per step: [(kept, discarded), ...]

    @property
    def gate_applications(self) -> int:
        """Number of protocol-gate applications (pairs across all steps)."""
        return sum(len(step) for step in self.pairs)

    def is_success(self, bitstring: str) -> bool:
        return all(bitstring[q] == "0" for q in self.discard_set)


def step_pairs(n: int) -> list[list[tuple[int, int]]]:
    width = 2**n
    steps = []
    for j in range(1, n + 1):
        stride = 2 ** (j - 1)
        steps.append([(i, i + stride) for i in range(0, width, 2 * stride)])
    return steps


def build_protocol_circuit(
    eps: Union[Epsilon, float], n: int, use_gate_sequence: bool = False
) -> Circuit:
    """Circuit for n iterations; the gate is dense unless ``use_gate_sequence``."""
    if not (1 <= n <= MAX_STATEVECTOR_ITERATIONS):
        raise CircuitError(f"iterations must be in 1..{MAX_STATEVECTOR_ITERATIONS}, got {n}")
    eps = Epsilon.of(eps)
    pairs = step_pairs(n)
    u = build_u_epsilon(eps).astype(complex)
    seq = synthesize(eps) if use_gate_sequence else None
    gates: list[Gate] = []
    for step in pairs:
        for a, b in step:
            if seq is None:
                gates.append(Gate("u2q", (a, b), u))
            else:
                gates.extend(_relabel(seq, a, b))
    width = 2**n
    return Circuit(
        qubit_count=width,
        gates=gates,
        kept_qubit=0,
        discard_set=frozenset(range(1, width)),
        epsilon=eps.epsilon,
        iterations=n,
        pairs=pairs,
    )


def _relabel(seq: GateSequence, a: int, b: int) -> list[Gate]:
    mapping = {0: a, 1: b}
    return [Gate(g.kind, tuple(mapping[q] for q in g.qubits), g.matrix) for g in seq.gates]


# --- noise -------------------------------------------------------------------

def flip_confusion(q: float) -> np.ndarray:
    """Symmetric readout flip with probability q."""
    return np.array([[1 - q, q], [q, 1 - q]], dtype=float)


@dataclass(frozen=True)
class NoiseSpec:
    """Readout confusion, amplitude damping and a state-preparation error.

    ``readout`` columns are the true state, rows the reported one.  Scalars or
    single matrices apply to every qubit; sequences give one entry per qubit.
    ``prep_error`` is an unwanted ``R_x`` angle applied after each qubit's
    preparation.
    """

    damping: Union[float, tuple] = 0.0
    readout: Optional[Union[np.ndarray, tuple]] = None
    prep_error: float = 0.0

    def __post_init__(self) -> None:
        for g in self._as_tuple(self.damping):
            if not (0.0 <= float(g) <= 1.0):
                raise ValueError(f"damping probability must be in [0, 1], got {g}")
        if self.readout is not None:
            for m in self._readout_list():
                m = np.asarray(m, dtype=float)
                if m.shape != (2, 2) or np.any(m < 0) or np.max(np.abs(m.sum(axis=0) - 1)) > 1e-9:
                    raise ValueError("readout confusion must be a 2x2 column-stochastic matrix")

    @staticmethod
    def _as_tuple(x) -> tuple:
        return tuple(x) if isinstance(x, (tuple, list)) else (x,)

    def _readout_list(self) -> list:
        r = self.readout
        if isinstance(r, (tuple, list)) and len(r) and np.asarray(r[0]).ndim == 2:
            return list(r)
        return [r]

    def damping_for(self, qubit: int) -> float:
        d = self._as_tuple(self.damping)
        return float(d[0] if len(d) == 1 else d[qubit])

    def readout_for(self, qubit: int) -> Optional[np.ndarray]:
        if self.readout is None:
            return None
        r = self._readout_list()
        return np.asarray(r[0] if len(r) == 1 else r[qubit], dtype=float)

    @property
    def is_trivial(self) -> bool:
        no_damp = all(float(g) == 0.0 for g in self._as_tuple(self.damping))
        no_read = self.readout is None or all(
            np.array_equal(np.asarray(m, dtype=float), np.eye(2)) for m in self._readout_list()
        )
        return no_damp and no_read and self.prep_error == 0.0

    @classmethod
    def flips(cls, q: float, damping: float = 0.0) -> "NoiseSpec":
        return cls(damping=damping, readout=flip_confusion(q))


def rx(angle: float) -> np.ndarray:
    return math.cos(angle / 2) * np.eye(2) - 1j * math.sin(angle / 2) * PAULI_X


def prepared_qubit(state: BlochState, prep_error: float = 0.0) -> np.ndarray:
    """State-prep ``P(phi) R_y(theta)|0>``, optionally followed by ``R_x(prep_error)``."""
    psi = state.amplitudes()
    if prep_error:
        psi = rx(prep_error) @ psi
    return psi


# --- statevector engine -------------------------------------------------------

def _apply_1q(psi: np.ndarray, m: np.ndarray, q: int) -> np.ndarray:
    out = np.tensordot(m, psi, axes=([1], [q]))
    return np.moveaxis(out, 0, q)


def _apply_2q(psi: np.ndarray, m: np.ndarray, a: int, b: int) -> np.ndarray:
    m4 = m.reshape(2, 2, 2, 2)
    out = np.tensordot(m4, psi, axes=([2, 3], [a, b]))
    return np.moveaxis(out, [0, 1], [a, b])


_CNOT4 = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def _gate_matrix(g: Gate) -> np.ndarray:
    return _CNOT4 if g.kind == "cnot" else g.matrix


def _apply_gate(psi: np.ndarray, g: Gate) -> np.ndarray:
    if g.kind == "u1q":
        return _apply_1q(psi, g.matrix, g.qubits[0])
    if g.kind in ("u2q", "cnot"):
        return _apply_2q(psi, _gate_matrix(g), *g.qubits)
    raise CircuitError(f"unsupported gate kind {g.kind!r}")


def product_state(qubits: Sequence[np.ndarray]) -> np.ndarray:
    psi = np.ones(1, dtype=complex)
    for q in qubits:
        psi = np.kron(psi, q)
    return psi


def final_state(circuit: Circuit, state: BlochState, prep_error: float = 0.0) -> np.ndarray:
    """Output statevector (flattened, qubit 0 most significant)."""
    one = prepared_qubit(state, prep_error)
    psi = product_state([one] * circuit.qubit_count).reshape((2,) * circuit.qubit_count)
    for g in circuit.gates:
        psi = _apply_gate(psi, g)
    return psi.reshape(-1)


def exact_probabilities(circuit: Circuit, state: BlochState, prep_error: float = 0.0) -> np.ndarray:
    psi = final_state(circuit, state, prep_error)
    return np.abs(psi) ** 2


def conditional_kept_state(
    circuit: Circuit, state: BlochState, prep_error: float = 0.0
) -> tuple[np.ndarray, float]:
    """Normalised kept-qubit vector given all discarded qubits read 0, and its probability."""
    if circuit.kept_qubit != 0:
        raise CircuitError("kept qubit must be qubit 0")
    psi = final_state(circuit, state, prep_error).reshape((2,) * circuit.qubit_count)
    zeros = (0,) * (circuit.qubit_count - 1)
    kept = np.array([psi[(0,) + zeros], psi[(1,) + zeros]])
    prob = float(np.vdot(kept, kept).real)
    if prob == 0.0:
        raise UndefinedEstimateError("post-selection probability is zero")
    return kept / math.sqrt(prob), prob


# --- counts -------------------------------------------------------------------

@dataclass
class CountsTable:
    counts: dict
    shots: int
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        total = sum(self.counts.values())
        if total != self.shots:
            raise ValueError(f"counts sum to {total}, expected {self.shots} shots")

    @property
    def width(self) -> int:
        return len(next(iter(self.counts))) if self.counts else 0

    def to_dict(self) -> dict:
        return {"shots": self.shots, "seed": self.seed, "counts": dict(sorted(self.counts.items()))}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CountsTable":
        return cls({str(k): int(v) for k, v in data["counts"].items()}, int(data["shots"]), data.get("seed"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bitstring", "count"])
        for k, v in sorted(self.counts.items()):
            w.writerow([k, v])
        return buf.getvalue()

    def frequencies(self) -> np.ndarray:
        vec = np.zeros(2**self.width)
        for k, v in self.counts.items():
            vec[int(k, 2)] = v
        return vec / self.shots


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_counts(probs: np.ndarray, shots: int, seed: int, width: int) -> CountsTable:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    p = p / p.sum()
    draws = rng_for(seed).multinomial(shots, p)
    counts = {format(i, f"0{width}b"): int(c) for i, c in enumerate(draws) if c}
    return CountsTable(counts, int(shots), int(seed))


def run_statevector(
    circuit: Circuit, state: BlochState, shots: int, seed: int, prep_error: float = 0.0
) -> CountsTable:
    probs = exact_probabilities(circuit, state, prep_error)
    return sample_counts(probs, shots, seed, circuit.qubit_count)


# --- density-matrix engine ------------------------------------------------------

def validate_density(rho: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError("input density must be 2x2")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError("density matrix trace differs from 1")
    if np.min(np.linalg.eigvalsh(rho)) < -tol:
        raise ValueError("density matrix is not positive semidefinite")
    return rho


def _apply_op_density(rho: np.ndarray, m: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """``m rho m^dag`` on tensor-shaped rho (ket axes 0..n-1, bra axes n..2n-1)."""
    k = len(qubits)
    mt = m.reshape((2,) * (2 * k))
    in_axes = list(range(k, 2 * k))
    ket = list(qubits)
    out = np.tensordot(mt, rho, axes=(in_axes, ket))
    out = np.moveaxis(out, list(range(k)), ket)
    bra = [q + n for q in qubits]
    out = np.tensordot(mt.conj(), out, axes=(in_axes, bra))
    return np.moveaxis(out, list(range(k)), bra)


def _damp(rho: np.ndarray, gamma: float, q: int, n: int) -> np.ndarray:
    if gamma == 0.0:
        return rho
    k0 = np.array([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex)
    return _apply_op_density(rho, k0, [q], n) + _apply_op_density(rho, k1, [q], n)


def apply_readout(probs: np.ndarray, noise: Optional[NoiseSpec], n: int) -> np.ndarray:
    if noise is None or noise.readout is None:
        return probs
    p = probs.reshape((2,) * n)
    for q in range(n):
        c = noise.readout_for(q)
        p = np.moveaxis(np.tensordot(c, p, axes=([1], [q])), 0, q)
    return p.reshape(-1)


def evolve_density(rho_in: np.ndarray, gates: Sequence[Gate], n: int) -> np.ndarray:
    """Evolve an n-qubit density matrix (2^n x 2^n) through the gate list."""
    rho = np.asarray(rho_in, dtype=complex).reshape((2,) * (2 * n))
    for g in gates:
        rho = _apply_op_density(rho, _gate_matrix(g), g.qubits, n)
    return rho.reshape(2**n, 2**n)


def measured_distribution(rho: np.ndarray, noise: Optional[NoiseSpec], n: int) -> np.ndarray:
    """Outcome probabilities after pre-measurement damping and readout confusion."""
    t = np.asarray(rho, dtype=complex).reshape((2,) * (2 * n))
    if noise is not None:
        for q in range(n):
            t = _damp(t, noise.damping_for(q), q, n)
    probs = np.clip(np.real(np.diag(t.reshape(2**n, 2**n))), 0.0, None)
    return apply_readout(probs, noise, n)


def input_density(state: Union[BlochState, np.ndarray], prep_error: float = 0.0) -> np.ndarray:
    if isinstance(state, BlochState):
        psi = prepared_qubit(state, prep_error)
        return np.outer(psi, psi.conj())
    rho = validate_density(state)
    if prep_error:
        r = rx(prep_error)
        rho = r @ rho @ r.conj().T
    return rho


def run_density(
    circuit: Circuit,
    state: Union[BlochState, np.ndarray],
    noise: Optional[NoiseSpec] = None,
    exact: bool = False,
    shots: Optional[int] = None,
    seed: Optional[int] = None,
) -> Union[np.ndarray, CountsTable]:
    """Density-matrix simulation; returns the probability vector when ``exact``."""
    n = circuit.qubit_count
    if n > 2**MAX_DENSITY_ITERATIONS:
        raise CircuitError(f"density backend supports at most {2**MAX_DENSITY_ITERATIONS} qubits")
    one = input_density(state, noise.prep_error if noise else 0.0)
    rho0 = one
    for _ in range(n - 1):
        rho0 = np.kron(rho0, one)
    rho = evolve_density(rho0, circuit.gates, n)
    probs = measured_distribution(rho, noise, n)
    if exact:
        return probs
    if shots is None or seed is None:
        raise ValueError("sampling requires shots and seed")
    return sample_counts(probs, shots, seed, n)


def conditional_kept_density(circuit: Circuit, rho_one: np.ndarray) -> tuple[np.ndarray, float]:
    """Kept-qubit density matrix given all discarded qubits read 0 (noiseless gates)."""
    n = circuit.qubit_count
    rho_one = validate_density(rho_one)
    rho0 = rho_one
    for _ in range(n - 1):
        rho0 = np.kron(rho0, rho_one)
    t = evolve_density(rho0, circuit.gates, n).reshape((2,) * (2 * n))
    zeros = (0,) * (n - 1)
    kept = np.array([[t[(a,) + zeros + (b,) + zeros] for b in (0, 1)] for a in (0, 1)])
    prob = float(np.trace(kept).real)
    if prob == 0.0:
        raise UndefinedEstimateError("post-selection probability is zero")
    return kept / prob, prob


# --- post-selection -------------------------------------------------------------

def post_select(
    counts: Union[CountsTable, np.ndarray, Mapping[str, float]], circuit: Circuit
) -> tuple[float, dict]:
    """Success fraction and success counts split by the kept qubit's bit.

    Accepts a CountsTable, an exact probability vector, or any mapping from
    bitstrings to weights (normalised by their total).  Zero successes give
    ``(0.0, {})``.
    """
    n = circuit.qubit_count
    if isinstance(counts, CountsTable):
        items, total = counts.counts.items(), counts.shots
    elif isinstance(counts, np.ndarray):
        items = ((format(i, f"0{n}b"), float(v)) for i, v in enumerate(counts))
        total = float(np.sum(counts))
    else:
        items, total = counts.items(), sum(counts.values())
    kept = {0: 0, 1: 0}
    for bits, c in items:
        if len(bits) != n:
            raise CircuitError(f"bitstring {bits!r} does not match {n} qubits")
        if c and circuit.is_success(bits):
            kept[int(bits[circuit.kept_qubit])] += c
    n_success = kept[0] + kept[1]
    if n_success == 0:
        return 0.0, {}
    return n_success / total, kept


def estimate_theta1(kept_counts: Mapping[int, float]) -> float:
    """Polar angle of the kept qubit from its post-selected 0/1 frequencies."""
    c0 = float(kept_counts.get(0, 0))
    c1 = float(kept_counts.get(1, 0))
    if c0 + c1 <= 0:
        raise UndefinedEstimateError("no post-selected shots")
    return 2.0 * math.atan2(math.sqrt(c1), math.sqrt(c0))
