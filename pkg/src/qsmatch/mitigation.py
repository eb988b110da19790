"""Readout-error mitigation from basis-state calibration runs.

Column ``j`` of a confusion matrix is the distribution of reported outcomes
when basis state ``j`` is prepared, so a noisy distribution is ``A @ p``.
Bitstrings are read with qubit 0 as the leftmost (most significant) bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from typing import Literal, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from .simulator import (
    Circuit,
    CountsTable,
    NoiseSpec,
    UndefinedEstimateError,
    build_protocol_circuit,
    estimate_theta1,
    measured_distribution,
    post_select,
    sample_counts,
)

STOCHASTIC_TOL = 1e-9
CONDITION_LIMIT = 1e12
DEFAULT_CALIBRATION_SHOTS = 2**13


class SingularConfusionError(ValueError):
    """Confusion matrix too ill-conditioned to invert."""


@dataclass
class ConfusionMatrix:
    entries: np.ndarray
    source: Literal["calibration", "synthetic"] = "synthetic"
    shots: Optional[int] = None

    def __post_init__(self) -> None:
        a = np.asarray(self.entries, dtype=float)
        d = a.shape[0] if a.ndim == 2 else 0
        if a.ndim != 2 or a.shape != (d, d) or d < 2 or d & (d - 1):
            raise ValueError(f"confusion matrix must be square with power-of-two size, got {a.shape}")
        if np.any(a < 0):
            raise ValueError("confusion matrix has negative entries")
        if np.max(np.abs(a.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("confusion matrix columns must sum to 1")
        self.entries = a

    @property
    def qubits(self) -> int:
        return int(self.entries.shape[0]).bit_length() - 1

    @classmethod
    def from_tensor(cls, per_qubit: Sequence[np.ndarray]) -> "ConfusionMatrix":
        """Product confusion from one 2x2 matrix per qubit (qubit 0 first)."""
        mats = [np.asarray(m, dtype=float) for m in per_qubit]
        return cls(reduce(np.kron, mats), source="synthetic")

    def condition(self) -> float:
        return float(np.linalg.cond(self.entries))

    def to_dict(self) -> dict:
        return {"entries": self.entries.tolist(), "source": self.source, "shots": self.shots}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConfusionMatrix":
        unknown = set(d) - {"entries", "source", "shots"}
        if unknown:
            raise ValueError(f"unknown confusion fields: {sorted(unknown)}")
        return cls(np.array(d["entries"], dtype=float), d.get("source", "synthetic"), d.get("shots"))

    @classmethod
    def from_json(cls, text: str) -> "ConfusionMatrix":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CalibrationCircuit:
    """Prepare a computational basis state by X gates, then measure all qubits."""

    label: str
    x_on: tuple = field(default_factory=tuple)


def calibration_circuits(qubits: int = 2) -> list[CalibrationCircuit]:
    out = []
    for j in range(2**qubits):
        label = format(j, f"0{qubits}b")
        out.append(CalibrationCircuit(label, tuple(q for q, b in enumerate(label) if b == "1")))
    return out


def calibration_distribution(circ: CalibrationCircuit, noise: Optional[NoiseSpec] = None) -> np.ndarray:
    """Exact reported-outcome distribution of one calibration circuit."""
    n = len(circ.label)
    rho = np.zeros((2**n, 2**n))
    j = int(circ.label, 2)
    rho[j, j] = 1.0
    return measured_distribution(rho, noise, n)


def run_calibration(
    noise: Optional[NoiseSpec],
    shots: int = DEFAULT_CALIBRATION_SHOTS,
    seed: int = 0,
    qubits: int = 2,
) -> list[CountsTable]:
    """Sampled counts for each calibration circuit; circuit j uses seed stream j."""
    tables = []
    for j, circ in enumerate(calibration_circuits(qubits)):
        s = int(np.random.SeedSequence(seed, spawn_key=(j,)).generate_state(1, dtype=np.uint64)[0])
        tables.append(sample_counts(calibration_distribution(circ, noise), shots, s, qubits))
    return tables


def build_confusion(counts: Sequence[Union[CountsTable, Mapping[str, int]]]) -> ConfusionMatrix:
    """Empirical confusion matrix; ``counts[j]`` belongs to prepared state ``j``."""
    d = len(counts)
    if d < 2 or d & (d - 1):
        raise ValueError("need one count table per basis state")
    n = d.bit_length() - 1
    a = np.zeros((d, d))
    shots = set()
    for j, c in enumerate(counts):
        table = c.counts if isinstance(c, CountsTable) else c
        total = sum(table.values())
        if total < 1:
            raise ValueError(f"calibration run {j} has no shots")
        shots.add(total)
        for bits, k in table.items():
            if len(bits) != n:
                raise ValueError(f"bitstring {bits!r} does not match {n} qubits")
            a[int(bits, 2), j] = k / total
    return ConfusionMatrix(a, source="calibration", shots=shots.pop() if len(shots) == 1 else None)


def _simplex_lstsq(a: np.ndarray, b: np.ndarray, start: np.ndarray) -> np.ndarray:
    d = a.shape[1]
    x0 = np.clip(start, 0.0, None)
    x0 = x0 / x0.sum() if x0.sum() > 0 else np.full(d, 1.0 / d)
    res = minimize(
        lambda x: float(np.sum((a @ x - b) ** 2)),
        x0,
        jac=lambda x: 2.0 * a.T @ (a @ x - b),
        method="SLSQP",
        bounds=[(0.0, 1.0)] * d,
        constraints=[{"type": "eq", "fun": lambda x: np.sum(x) - 1.0, "jac": lambda x: np.ones(d)}],
        options={"ftol": 1e-15, "maxiter": 500},
    )
    x = np.clip(res.x, 0.0, None)
    return x / x.sum()


def mitigate(raw: np.ndarray, confusion: ConfusionMatrix) -> np.ndarray:
    """Corrected distribution ``x`` with ``A x = raw``, projected onto the simplex if needed."""
    raw = np.asarray(raw, dtype=float)
    a = confusion.entries
    if raw.shape != (a.shape[0],):
        raise ValueError(f"distribution of length {raw.shape} does not match a {a.shape} confusion")
    if abs(raw.sum() - 1.0) > STOCHASTIC_TOL or np.any(raw < 0):
        raise ValueError("raw frequencies must form a probability vector")
    cond = confusion.condition()
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularConfusionError(f"confusion matrix condition number {cond:.3g} exceeds {CONDITION_LIMIT:g}")
    x = np.linalg.solve(a, raw)
    if x.min() < 0.0:
        # roundoff can leave exact zeros slightly negative; only a real violation needs the fallback
        if x.min() > -1e-13:
            x = np.clip(x, 0.0, None)
        else:
            return _simplex_lstsq(a, raw, x)
    return x / x.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def frequencies(outcomes: Mapping[str, float], width: int) -> np.ndarray:
    v = np.zeros(2**width)
    for bits, c in outcomes.items():
        v[int(bits, 2)] = c
    total = v.sum()
    if total <= 0:
        raise ValueError("outcome table is empty")
    return v / total


@dataclass
class MitigatedEstimate:
    p_est: float
    theta1_est: Optional[float]
    corrected: np.ndarray


def mitigate_outcomes(
    outcomes: Mapping[str, float], circuit: Circuit, confusion: ConfusionMatrix
) -> MitigatedEstimate:
    """Correct a full outcome table, then redo post-selection and the angle estimate."""
    width = circuit.qubit_count
    a = confusion
    if a.qubits != width:
        if a.qubits == 1:
            a = ConfusionMatrix.from_tensor([a.entries] * width)
        else:
            raise ValueError(f"{a.qubits}-qubit confusion cannot correct a {width}-qubit outcome table")
    x = mitigate(frequencies(outcomes, width), a)
    p, kept = post_select(x, circuit)
    try:
        theta = estimate_theta1(kept)
    except UndefinedEstimateError:
        theta = None
    return MitigatedEstimate(float(p), theta, x)


def mitigate_record_outcomes(epsilon: float, iterations: int, outcomes: Mapping[str, float], confusion: ConfusionMatrix):
    return mitigate_outcomes(outcomes, build_protocol_circuit(epsilon, iterations), confusion)
