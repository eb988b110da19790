"""Acceptance criteria, one test each; every test reports a PASS/FAIL line."""

import cmath
import math
import time

import numpy as np
import pytest

from qsmatch.cli import main
from qsmatch.kak_decomposer import ANALYTIC_WINDOW, decompose_u_epsilon, synthesize, verify_decomposition
from qsmatch.mitigation import ConfusionMatrix, build_confusion, mitigate, mitigate_outcomes, run_calibration
from qsmatch.simulator import (
    NoiseSpec,
    build_protocol_circuit,
    conditional_kept_state,
    estimate_theta1,
    exact_probabilities,
    flip_confusion,
    post_select,
    run_density,
)
from qsmatch.state_space import Basin, BlochState, basin, ideal_state_after, iterate_map, success_probability
from qsmatch.stats_harness import (
    ExperimentConfig,
    make_sweep,
    run_point,
    run_sweep,
    sigma_band,
    theta1_standard_error,
)
from qsmatch.unitary_builder import build_u_epsilon

CRITICAL = math.sqrt(0.5)
THETA_GRID = np.linspace(0.0, 25 * math.pi / 49, 26)
PHI_GRID = np.linspace(0.0, 2 * math.pi, 25)
EPS_DEFAULT = (0.6, 0.7, 0.8, 0.9)


def fallback_epsilons():
    # |cos 2 alpha| = |2 eps^2 - 1| < window  <=>  eps within about window/(4 eps) of 1/sqrt(2)
    half = ANALYTIC_WINDOW / (4 * CRITICAL)
    return [CRITICAL + f * half for f in (-0.8, -0.4, 0.0, 0.4, 0.8)]


def test_decomposition_round_trip(report):
    grid = [e for e in np.linspace(0.05, 1.0, 50) if abs(e - CRITICAL) >= 1e-3]
    extra = fallback_epsilons()
    start = time.perf_counter()
    worst, cnots, paths = 0.0, set(), set()
    for eps in grid + extra:
        seq = synthesize(eps)
        worst = max(worst, verify_decomposition(seq, build_u_epsilon(eps)))
        cnots.add(seq.cnot_count)
        paths.add(seq.path)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and cnots == {2} and elapsed < 5 and "numerical" in paths and len(grid) == 50
    assert report(ok, f"{len(grid)}+{len(extra)} eps, worst residual {worst:.2e}, cnots {cnots}, {elapsed:.2f}s")


def test_kak_facts(report):
    worst_k, worst_lam, signs = 0.0, 0.0, True
    for eps in np.linspace(0.05, 1.0, 50):
        if abs(2 * eps * eps - 1) < ANALYTIC_WINDOW:
            continue
        kak = decompose_u_epsilon(eps)
        worst_k = max(worst_k, abs(kak.k0), abs(kak.k[0]))
        signs &= bool(kak.k[1] < 0 and kak.k[2] < 0)
        s2 = math.sin(2 * math.acos(eps))
        r = math.sqrt(8 + s2 * s2)
        lam = np.array([(4 - s2 + r) / 8] * 2 + [(4 - s2 - r) / 8] * 2)
        sv = np.sort(np.linalg.svd(kak.intermediates.u_r, compute_uv=False) ** 2)[::-1]
        worst_lam = max(worst_lam, float(np.max(np.abs(sv - lam))))
    ok = worst_k <= 1e-10 and worst_lam <= 1e-10 and signs
    assert report(ok, f"max |k0|,|k1| {worst_k:.1e}, k2,k3<0: {signs}, lambda vs SVD {worst_lam:.1e}")


def test_protocol_exactness(report):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst_p, worst_state = 0.0, 0.0
    for n in (1, 2, 3):
        for _ in range(20):
            s0 = BlochState(rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi))
            eps = rng.uniform(0.05, 1.0)
            c = build_protocol_circuit(eps, n)
            p, _ = post_select(exact_probabilities(c, s0), c)
            worst_p = max(worst_p, abs(p - success_probability(s0.theta, eps, n)))
            vec, _ = conditional_kept_state(c, s0)
            ideal, _ = ideal_state_after(s0, eps, n)
            worst_state = max(worst_state, 1 - abs(np.vdot(ideal.amplitudes(), vec)) ** 2)
    c = build_protocol_circuit(0.7, 1)
    ref, _ = post_select(exact_probabilities(c, BlochState(math.pi / 2, 0.0)), c)
    elapsed = time.perf_counter() - start
    ok = worst_p <= 1e-12 and worst_state <= 1e-10 and abs(ref - 0.3725) <= 1e-12 and elapsed < 10
    assert report(ok, f"p error {worst_p:.1e}, state infidelity {worst_state:.1e}, p(pi/2,0.7)={ref:.12f}, {elapsed:.2f}s")


def test_gate_sequence_equivalence(report):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        eps, n = rng.uniform(0.05, 1.0), int(rng.integers(1, 4))
        s0 = BlochState(rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi))
        dense = exact_probabilities(build_protocol_circuit(eps, n), s0)
        seq = exact_probabilities(build_protocol_circuit(eps, n, use_gate_sequence=True), s0)
        worst = max(worst, float(np.max(np.abs(dense - seq))))
    assert report(worst <= 1e-9, f"max distribution difference {worst:.1e} over 10 configs")


def test_three_sigma_coverage(report):
    # 500 seeded runs spread over the grid; p in {0, 1} never occurs for these eps
    cfg = ExperimentConfig(epsilon=list(EPS_DEFAULT), phi0={"count": 5}, shots=2**13, seed=2024)
    points = make_sweep(cfg)[:: max(1, len(make_sweep(cfg)) // 500)][:500]
    start = time.perf_counter()
    hits = sum(run_point(cfg, p).classification.value == "within-statistical" for p in points)
    elapsed = time.perf_counter() - start
    rate = hits / len(points)
    ok = len(points) == 500 and rate >= 0.986 and elapsed < 60
    assert report(ok, f"{hits}/{len(points)} = {rate:.4f} inside p +/- 3 sigma (need >= 0.986), {elapsed:.2f}s")


def test_phi_invariance(report):
    worst = 0.0
    for eps in EPS_DEFAULT:
        c = build_protocol_circuit(eps, 1)
        for theta in THETA_GRID:
            ps = [post_select(exact_probabilities(c, BlochState(theta, phi)), c)[0] for phi in PHI_GRID]
            worst = max(worst, max(ps) - min(ps))
    assert report(worst < 1e-12, f"largest spread over 25 phi0 values {worst:.1e}")


def test_noise_monotonicity(report):
    noise = NoiseSpec(damping=0.05)
    violations, strict_missing, checked = 0, 0, 0
    for eps in EPS_DEFAULT:
        c = build_protocol_circuit(eps, 1)
        for theta in THETA_GRID:
            s0 = BlochState(theta)
            clean = exact_probabilities(c, s0)
            ideal = success_probability(theta, eps, 1)
            noisy, _ = post_select(run_density(c, s0, noise, exact=True), c)
            checked += 1
            violations += noisy < ideal - 1e-15
            if clean[1] + clean[3] > 1e-9:
                strict_missing += not noisy > ideal
    ok = violations == 0 and strict_missing == 0
    assert report(ok, f"{checked} grid points, {violations} below p_s, {strict_missing} not strictly above")


def test_mitigation_recovery(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        a = np.eye(4) + 0.1 * rng.random((4, 4))
        a = ConfusionMatrix(a / a.sum(axis=0))
        p = rng.dirichlet(np.ones(4))
        worst = max(worst, float(np.max(np.abs(mitigate(a.entries @ p, a) - p))))
    start = time.perf_counter()
    cfg = ExperimentConfig(epsilon=list(EPS_DEFAULT), phi0={"count": 5}, shots=2**16, backend="density",
                           noise={"readout_flip": 0.03}, seed=17)
    confusion = build_confusion(run_calibration(cfg.noise.to_spec(), shots=2**16, seed=18))
    res = run_sweep(cfg)
    outside = recovered = 0
    for r in res.records:
        if r.band_lo <= r.p_est <= r.band_hi:
            continue
        outside += 1
        est = mitigate_outcomes(r.outcomes, build_protocol_circuit(r.epsilon, 1), confusion)
        recovered += r.band_lo <= est.p_est <= r.band_hi
    elapsed = time.perf_counter() - start
    rate = recovered / outside if outside else 0.0
    ok = worst <= 1e-9 and outside > 0 and rate >= 0.95 and elapsed < 60
    assert report(ok, f"round trip {worst:.1e}; recovered {recovered}/{outside} = {rate:.3f} (need >= 0.95), {elapsed:.2f}s")


def test_theta1_estimator(report):
    worst = 0.0
    for eps in EPS_DEFAULT:
        c = build_protocol_circuit(eps, 1)
        for theta in THETA_GRID:
            s0 = BlochState(theta, 0.4)
            _, kept = post_select(exact_probabilities(c, s0), c)
            ideal = 2 * math.atan(math.tan(theta / 2) ** 2 / eps)
            worst = max(worst, abs(estimate_theta1(kept) - ideal))
    res = run_sweep(ExperimentConfig(epsilon=list(EPS_DEFAULT), seed=99))
    within = [abs(r.theta1_est - r.theta1_ideal) <= 3 * theta1_standard_error(r.n_success)
              for r in res.records if r.theta1_est is not None]
    rate = sum(within) / len(within)
    ok = worst <= 1e-10 and rate >= 0.986
    assert report(ok, f"exact error {worst:.1e}; sampled within 3 SE: {sum(within)}/{len(within)} = {rate:.4f}")


def test_map_dynamics(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        eps = rng.uniform(0.05, 1.0)
        z0 = rng.uniform(0.01, 2.0) * cmath.exp(1j * rng.uniform(0, 2 * math.pi))
        for k, z in enumerate(iterate_map(z0, eps, 6)):
            expected = abs(z0) ** (2**k) / eps ** (2**k - 1)
            if expected > 1e140 or expected < 1e-140:
                break
            worst = max(worst, abs(abs(z) - expected) / expected)
    wrong = 0
    for i in range(1000):
        eps = rng.uniform(0.05, 1.0)
        phase = cmath.exp(1j * rng.uniform(0, 2 * math.pi))
        if i % 10 == 0:
            z, truth = eps * phase, Basin.JULIA
        else:
            r = eps * rng.uniform(0.0, 2.0)
            z = r * phase
            # oracle: follow the orbit until it collapses or escapes
            orbit = iterate_map(z, eps, 60)
            truth = Basin.ZERO if abs(orbit[-1]) < eps else Basin.INFINITY
            if abs(r - eps) <= 1e-12 * eps:
                truth = Basin.JULIA
        wrong += basin(z, eps) is not truth
    ok = worst <= 1e-10 and wrong == 0
    assert report(ok, f"closed-form relative error {worst:.1e}; basin errors {wrong}/1000")


def test_determinism(report, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("epsilon: [0.6, 0.7]\ntheta0: {count: 6}\nphi0: {policy: random, count: 5}\n")
    codes = [main(["sweep", "--config", str(cfg), "--seed", "123", "--out", str(tmp_path / d)]) for d in "ab"]
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    b = (tmp_path / "b" / "sweep.csv").read_bytes()
    assert report(codes == [0, 0] and a == b, f"two invocations, {len(a)} bytes each, identical: {a == b}")
