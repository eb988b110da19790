"""Parameter sweeps and shot statistics for benchmarking runs.

A relative frequency of success is judged against the ideal success
probability ``p`` with the band ``p +/- k*sigma``, ``sigma = sqrt(p(1-p)/M)``
for ``M`` shots.  The band is centred on the theoretical value, not on the
estimate.

Seeds
-----
Every random quantity derives from the single config seed through
``numpy.random.SeedSequence(seed, spawn_key=(stream, index))``:

* stream 0, index = sweep point index -> 64-bit sampling seed of that point;
* stream 1, index = theta0 index -> generator for the random phi0 draws.

Points are therefore independent of evaluation order.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import datetime as _dt
from dataclasses import dataclass, field, asdict
from typing import Iterable, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import __version__
from .simulator import (
    Circuit,
    NoiseSpec,
    UndefinedEstimateError,
    build_protocol_circuit,
    estimate_theta1,
    exact_probabilities,
    flip_confusion,
    post_select,
    run_density,
    sample_counts,
)
from .state_space import BlochState, ideal_state_after, success_probability

DEFAULT_THETA_STOP = 25 * math.pi / 49
POINT_STREAM = 0
PHI_STREAM = 1
CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "epsilon",
    "theta0",
    "phi0",
    "shots",
    "p_ideal",
    "p_est",
    "sigma",
    "band_lo",
    "band_hi",
    "classification",
    "theta1_ideal",
    "theta1_est",
    "seed",
    "iterations",
    "outcomes",
)


class Classification(str, enum.Enum):
    WITHIN = "within-statistical"
    DEVICE = "device-error"


# --- configuration ----------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ThetaGrid(_Strict):
    count: int = Field(26, ge=1)
    start: float = 0.0
    stop: float = DEFAULT_THETA_STOP

    @model_validator(mode="after")
    def _inside_sphere(self) -> "ThetaGrid":
        if not (0.0 <= self.start <= math.pi and 0.0 <= self.stop <= math.pi):
            raise ValueError("theta0 interval must lie within [0, pi]")
        if self.stop < self.start:
            raise ValueError("theta0 stop must not be below start")
        return self

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.start])
        return np.linspace(self.start, self.stop, self.count)


class PhiPolicy(_Strict):
    policy: Literal["equal", "random"] = "equal"
    count: int = Field(25, ge=1)


class NoiseConfig(_Strict):
    damping: Union[float, list[float]] = 0.0
    readout_flip: Optional[Union[float, list[float]]] = None
    readout: Optional[list[list[list[float]]]] = None
    prep_error: float = 0.0

    @model_validator(mode="after")
    def _one_readout(self) -> "NoiseConfig":
        if self.readout_flip is not None and self.readout is not None:
            raise ValueError("give either readout_flip or readout, not both")
        return self

    def to_spec(self) -> NoiseSpec:
        readout = None
        if self.readout_flip is not None:
            flips = self.readout_flip if isinstance(self.readout_flip, list) else [self.readout_flip]
            readout = tuple(flip_confusion(q) for q in flips)
        elif self.readout is not None:
            readout = tuple(np.array(m, dtype=float) for m in self.readout)
        damping = tuple(self.damping) if isinstance(self.damping, list) else self.damping
        return NoiseSpec(damping=damping, readout=readout, prep_error=self.prep_error)


class ExperimentConfig(_Strict):
    """Declarative description of a sweep.  Unknown keys are rejected."""

    epsilon: list[float] = Field(default_factory=lambda: [0.6, 0.7, 0.8, 0.9], min_length=1)
    theta0: ThetaGrid = ThetaGrid()
    phi0: PhiPolicy = PhiPolicy()
    shots: int = Field(2**13, ge=1)
    iterations: int = Field(1, ge=1, le=4)
    backend: Literal["statevector", "density", "gate-sequence"] = "statevector"
    exact: bool = False
    seed: int = Field(0, ge=0, lt=2**64)
    noise: NoiseConfig = NoiseConfig()

    @field_validator("epsilon")
    @classmethod
    def _eps_range(cls, v: list[float]) -> list[float]:
        for e in v:
            if not (0.0 < e <= 1.0):
                raise ValueError(f"epsilon must satisfy 0 < eps <= 1, got {e}")
        return v

    @model_validator(mode="after")
    def _backend_supports(self) -> "ExperimentConfig":
        spec = self.noise.to_spec()
        no_damp = all(float(g) == 0.0 for g in NoiseSpec._as_tuple(spec.damping))
        needs_density = not no_damp or spec.readout is not None
        if needs_density and self.backend != "density":
            raise ValueError("damping and readout noise need backend 'density'")
        if self.backend == "density" and self.iterations > 3:
            raise ValueError("density backend supports at most 3 iterations")
        return self


# --- sweep points ---------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    index: int
    epsilon: float
    theta_index: int
    theta0: float
    phi0: float


def derive_seed(seed: int, stream: int, index: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(stream, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def phi_values(config: ExperimentConfig, theta_index: int) -> np.ndarray:
    count = config.phi0.count
    if config.phi0.policy == "equal":
        return np.linspace(0.0, 2 * math.pi, count) if count > 1 else np.array([0.0])
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(PHI_STREAM, theta_index))))
    return rng.uniform(0.0, 2 * math.pi, count)


def make_sweep(config: ExperimentConfig) -> list[SweepPoint]:
    """All (epsilon, theta0, phi0) points; epsilon outermost, phi0 innermost."""
    thetas = config.theta0.values()
    phis = [phi_values(config, i) for i in range(len(thetas))]
    points = []
    for eps in config.epsilon:
        for ti, theta in enumerate(thetas):
            for phi in phis[ti]:
                points.append(SweepPoint(len(points), float(eps), ti, float(theta), float(phi)))
    return points


# --- statistics ------------------------------------------------------------------

def sigma(p_ideal: float, shots: int) -> float:
    return math.sqrt(max(p_ideal * (1.0 - p_ideal), 0.0) / shots)


def sigma_band(p_ideal: float, shots: int, k: float = 3.0) -> tuple[float, float]:
    if not (0.0 <= p_ideal <= 1.0):
        raise ValueError("p_ideal must be a probability")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    s = sigma(p_ideal, shots)
    return max(0.0, p_ideal - k * s), min(1.0, p_ideal + k * s)


def classify(p_est: float, band: tuple[float, float]) -> Classification:
    lo, hi = band
    return Classification.WITHIN if lo <= p_est <= hi else Classification.DEVICE


@dataclass
class StatRecord:
    epsilon: float
    theta0: float
    phi0: float
    shots: int
    p_ideal: float
    p_est: float
    sigma: float
    band_lo: float
    band_hi: float
    classification: Classification
    theta1_ideal: float
    theta1_est: Optional[float]
    seed: int
    iterations: int = 1
    outcomes: dict = field(default_factory=dict)

    @property
    def n_success(self) -> float:
        return self.p_est * self.shots


@dataclass
class PhiSpread:
    max_minus_min: float
    std: float


@dataclass
class AggregateRow:
    epsilon: float
    theta0: float
    records: int
    p_ideal: float
    band_lo: float
    band_hi: float
    p_est_mean: float
    p_est_std: float
    theta1_ideal: float
    theta1_mean: Optional[float]
    theta1_std: Optional[float]
    theta1_missing: int
    device_errors: int


@dataclass
class SweepResult:
    config: ExperimentConfig
    records: list
    aggregates: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        return records_to_csv(self.records)

    def summary(self) -> dict:
        return {
            "schema_version": CSV_SCHEMA_VERSION,
            "config": self.config.model_dump(mode="json"),
            "records": len(self.records),
            "device_error_fraction": device_error_fraction(self.records),
            "deviation": deviation_descriptors(self.records),
            "aggregates": [asdict(a) for a in self.aggregates],
            "provenance": self.provenance,
        }


def _circuit_for(config: ExperimentConfig, eps: float) -> Circuit:
    return build_protocol_circuit(eps, config.iterations, use_gate_sequence=config.backend == "gate-sequence")


def _distribution(config: ExperimentConfig, circuit: Circuit, state: BlochState, noise: NoiseSpec) -> np.ndarray:
    if config.backend == "density":
        return run_density(circuit, state, noise, exact=True)
    return exact_probabilities(circuit, state, noise.prep_error)


def run_point(config: ExperimentConfig, point: SweepPoint, circuit: Optional[Circuit] = None) -> StatRecord:
    circuit = circuit or _circuit_for(config, point.epsilon)
    noise = config.noise.to_spec()
    state = BlochState(point.theta0, point.phi0)
    probs = _distribution(config, circuit, state, noise)
    seed = derive_seed(config.seed, POINT_STREAM, point.index)
    width = circuit.qubit_count
    if config.exact:
        observed = probs
        outcomes = {format(i, f"0{width}b"): float(v) for i, v in enumerate(probs) if v > 0}
    else:
        observed = sample_counts(probs, config.shots, seed, width)
        outcomes = dict(sorted(observed.counts.items()))
    p_est, kept = post_select(observed, circuit)
    try:
        theta_est: Optional[float] = estimate_theta1(kept)
    except UndefinedEstimateError:
        theta_est = None
    n = config.iterations
    p_ideal = success_probability(point.theta0, point.epsilon, n)
    kept_ideal, _ = ideal_state_after(state, point.epsilon, n)
    lo, hi = sigma_band(p_ideal, config.shots)
    return StatRecord(
        epsilon=point.epsilon,
        theta0=point.theta0,
        phi0=point.phi0,
        shots=config.shots,
        p_ideal=p_ideal,
        p_est=float(p_est),
        sigma=sigma(p_ideal, config.shots),
        band_lo=lo,
        band_hi=hi,
        classification=classify(p_est, (lo, hi)),
        theta1_ideal=kept_ideal.theta,
        theta1_est=theta_est,
        seed=seed,
        iterations=n,
        outcomes=outcomes,
    )


def run_sweep(config: ExperimentConfig) -> SweepResult:
    circuits = {eps: _circuit_for(config, eps) for eps in dict.fromkeys(config.epsilon)}
    records = [run_point(config, p, circuits[p.epsilon]) for p in make_sweep(config)]
    return SweepResult(
        config=config,
        records=records,
        aggregates=aggregate(records),
        provenance={
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "toolkit_version": __version__,
        },
    )


def phi_invariance_stat(records: Sequence[StatRecord]) -> PhiSpread:
    """Spread of the success estimate over the phi0 values at fixed (theta0, epsilon)."""
    if len(records) < 2:
        raise ValueError("need at least two records")
    keys = {(r.epsilon, r.theta0) for r in records}
    if len(keys) != 1:
        raise ValueError("records must share epsilon and theta0")
    p = np.array([r.p_est for r in records])
    return PhiSpread(float(p.max() - p.min()), float(p.std()))


def phi_dependence_flagged(records: Sequence[StatRecord], k: float = 5.0) -> bool:
    """True when the phi0 spread of ``p_est`` exceeds ``k`` binomial sigmas."""
    spread = phi_invariance_stat(records)
    return spread.max_minus_min > k * records[0].sigma


def aggregate(records: Iterable[StatRecord]) -> list[AggregateRow]:
    """Mean and (population) standard deviation over phi0 per (epsilon, theta0)."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.epsilon, r.theta0), []).append(r)
    if not groups:
        raise ValueError("no records to aggregate")
    rows = []
    for (eps, theta), rs in groups.items():
        p = np.array([r.p_est for r in rs])
        th = np.array([r.theta1_est for r in rs if r.theta1_est is not None])
        rows.append(
            AggregateRow(
                epsilon=eps,
                theta0=theta,
                records=len(rs),
                p_ideal=rs[0].p_ideal,
                band_lo=rs[0].band_lo,
                band_hi=rs[0].band_hi,
                p_est_mean=float(p.mean()),
                p_est_std=float(p.std()),
                theta1_ideal=rs[0].theta1_ideal,
                theta1_mean=float(th.mean()) if len(th) else None,
                theta1_std=float(th.std()) if len(th) else None,
                theta1_missing=len(rs) - len(th),
                device_errors=sum(r.classification is Classification.DEVICE for r in rs),
            )
        )
    return rows


def device_error_fraction(records: Sequence[StatRecord]) -> float:
    if not records:
        return 0.0
    return sum(r.classification is Classification.DEVICE for r in records) / len(records)


def deviation_descriptors(records: Sequence[StatRecord], k: float = 3.0) -> dict:
    """Band width and out-of-band excess, averaged over records.

    Descriptive only: the statistical part shrinks like 1/sqrt(M) and the
    excess beyond the band is what remains attributable to the device.
    """
    if not records:
        return {"mean_band_halfwidth": 0.0, "mean_excess": 0.0, "max_excess": 0.0}
    half = np.array([k * r.sigma for r in records])
    excess = np.array([max(0.0, abs(r.p_est - r.p_ideal) - k * r.sigma) for r in records])
    return {
        "mean_band_halfwidth": float(half.mean()),
        "mean_excess": float(excess.mean()),
        "max_excess": float(excess.max()),
    }


def theta1_standard_error(n_success: float) -> float:
    """Delta-method standard error of the angle estimate from N post-selected shots."""
    return math.inf if n_success <= 0 else 1.0 / math.sqrt(n_success)


# --- persistence -------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _fmt_outcomes(outcomes: dict) -> str:
    return ";".join(f"{k}:{_fmt(v)}" for k, v in sorted(outcomes.items()))


def _parse_outcomes(text: str) -> dict:
    out = {}
    if not text:
        return out
    for item in text.split(";"):
        k, v = item.split(":")
        out[k] = int(v) if v.isdigit() else float(v)
    return out


def records_to_csv(records: Sequence[StatRecord], extra: Optional[dict] = None) -> str:
    """CSV text with the fixed column order; ``extra`` maps column -> per-record values."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    extra = extra or {}
    w.writerow(list(CSV_COLUMNS) + list(extra))
    for i, r in enumerate(records):
        row = [
            _fmt(r.epsilon), _fmt(r.theta0), _fmt(r.phi0), _fmt(r.shots),
            _fmt(r.p_ideal), _fmt(r.p_est), _fmt(r.sigma), _fmt(r.band_lo), _fmt(r.band_hi),
            r.classification.value, _fmt(r.theta1_ideal), _fmt(r.theta1_est), _fmt(r.seed),
            _fmt(r.iterations), _fmt_outcomes(r.outcomes),
        ]
        w.writerow(row + [_fmt(col[i]) for col in extra.values()])
    return buf.getvalue()


class CsvFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_records_csv(text: str) -> list[StatRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError("empty file", 1) from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise CsvFormatError(f"missing columns {missing}", 1)
    pos = {c: header.index(c) for c in CSV_COLUMNS}
    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"expected {len(header)} fields, got {len(row)}", line_no)
        try:
            get = lambda c: row[pos[c]]  # noqa: E731
            records.append(
                StatRecord(
                    epsilon=float(get("epsilon")),
                    theta0=float(get("theta0")),
                    phi0=float(get("phi0")),
                    shots=int(get("shots")),
                    p_ideal=float(get("p_ideal")),
                    p_est=float(get("p_est")),
                    sigma=float(get("sigma")),
                    band_lo=float(get("band_lo")),
                    band_hi=float(get("band_hi")),
                    classification=Classification(get("classification")),
                    theta1_ideal=float(get("theta1_ideal")),
                    theta1_est=float(get("theta1_est")) if get("theta1_est") else None,
                    seed=int(get("seed")),
                    iterations=int(get("iterations")),
                    outcomes=_parse_outcomes(get("outcomes")),
                )
            )
        except (ValueError, KeyError) as exc:
            raise CsvFormatError(str(exc), line_no) from None
    return records
