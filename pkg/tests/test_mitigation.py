import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsmatch.mitigation import (
    ConfusionMatrix,
    SingularConfusionError,
    build_confusion,
    calibration_circuits,
    calibration_distribution,
    mitigate,
    mitigate_outcomes,
    run_calibration,
    total_variation,
)
from qsmatch.simulator import CountsTable, NoiseSpec, build_protocol_circuit, flip_confusion


def random_confusion(rng, strength=0.1):
    a = np.eye(4) + strength * rng.random((4, 4))
    return a / a.sum(axis=0)


def test_calibration_circuits():
    circs = calibration_circuits()
    assert [c.label for c in circs] == ["00", "01", "10", "11"]
    assert circs[0].x_on == ()
    np.testing.assert_array_equal(calibration_distribution(circs[0]), [1, 0, 0, 0])
    np.testing.assert_array_equal(calibration_distribution(circs[3]), [0, 0, 0, 1])


def test_flip_column_for_eleven():
    col = calibration_distribution(calibration_circuits()[3], NoiseSpec(readout=flip_confusion(0.03)))
    np.testing.assert_allclose(col, [0.0009, 0.0291, 0.0291, 0.9409], atol=1e-15)


def test_noiseless_calibration_gives_identity():
    a = build_confusion(run_calibration(None, shots=500))
    np.testing.assert_array_equal(a.entries, np.eye(4))
    assert a.source == "calibration" and a.shots == 500


def test_sampled_calibration_recovers_tensor():
    noise = NoiseSpec(readout=(flip_confusion(0.03), flip_confusion(0.05)))
    a = build_confusion(run_calibration(noise, shots=2**16, seed=7))
    truth = np.kron(flip_confusion(0.03), flip_confusion(0.05))
    tol = 4 * np.sqrt(truth * (1 - truth) / 2**16) + 1e-12
    assert np.all(np.abs(a.entries - truth) <= tol)
    np.testing.assert_allclose(a.entries.sum(axis=0), 1.0, atol=1e-15)


def test_build_confusion_rejects_empty():
    with pytest.raises(ValueError):
        build_confusion([{"00": 1}, {}, {"10": 1}, {"11": 1}])
    with pytest.raises(ValueError):
        build_confusion([{"00": 1}] * 3)


def test_confusion_validation_and_serialisation():
    with pytest.raises(ValueError):
        ConfusionMatrix(np.full((4, 4), 0.3))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.eye(3))
    a = ConfusionMatrix.from_tensor([flip_confusion(0.02)] * 2)
    data = json.loads(a.to_json())
    assert set(data) == {"entries", "source", "shots"}
    np.testing.assert_array_equal(ConfusionMatrix.from_dict(data).entries, a.entries)
    with pytest.raises(ValueError):
        ConfusionMatrix.from_dict({**data, "extra": 1})


def test_identity_mitigation():
    raw = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(mitigate(raw, ConfusionMatrix(np.eye(4))), raw, atol=1e-15)


def test_round_trip(rng):
    for _ in range(100):
        a = ConfusionMatrix(random_confusion(rng))
        p = rng.dirichlet(np.ones(4))
        np.testing.assert_allclose(mitigate(a.entries @ p, a), p, atol=1e-9)


def test_round_trip_with_zero_components():
    a = ConfusionMatrix.from_tensor([flip_confusion(0.03)] * 2)
    p = np.array([0.6, 0.0, 0.4, 0.0])
    np.testing.assert_allclose(mitigate(a.entries @ p, a), p, atol=1e-12)


@settings(max_examples=60)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3),
       st.floats(0.0, 0.2))
def test_output_is_probability_vector(weights, q):
    raw = np.array(weights) / sum(weights)
    x = mitigate(raw, ConfusionMatrix.from_tensor([flip_confusion(q), flip_confusion(q / 2)]))
    assert np.all(x >= 0)
    assert abs(x.sum() - 1) <= 1e-9


def test_fallback_is_constrained_least_squares():
    a = ConfusionMatrix.from_tensor([flip_confusion(0.1)] * 2)
    raw = np.array([0.99, 0.01, 0.0, 0.0])
    assert np.linalg.solve(a.entries, raw).min() < 0
    x = mitigate(raw, a)
    assert np.all(x >= 0) and abs(x.sum() - 1) <= 1e-9
    # no simplex point fits better (checked on a fine grid of the active face)
    best = min(
        np.sum((a.entries @ np.array([t, 1 - t, 0, 0]) - raw) ** 2) for t in np.linspace(0, 1, 2001)
    )
    assert np.sum((a.entries @ x - raw) ** 2) <= best + 1e-12


def test_tv_does_not_increase(rng):
    for _ in range(50):
        a = ConfusionMatrix(random_confusion(rng, 0.2))
        p = rng.dirichlet(np.ones(4))
        raw = a.entries @ p
        assert total_variation(mitigate(raw, a), p) <= total_variation(raw, p) + 1e-12


def test_singular_confusion_fails():
    a = ConfusionMatrix(np.full((4, 4), 0.25))
    with pytest.raises(SingularConfusionError):
        mitigate(np.full(4, 0.25), a)


def test_rejects_bad_raw():
    with pytest.raises(ValueError):
        mitigate(np.array([0.5, 0.5, 0.5, 0.0]), ConfusionMatrix(np.eye(4)))
    with pytest.raises(ValueError):
        mitigate(np.array([0.5, 0.5]), ConfusionMatrix(np.eye(4)))


def test_mitigate_outcomes_for_wider_circuit():
    c = build_protocol_circuit(0.7, 2)
    one_qubit = ConfusionMatrix(np.eye(2))
    est = mitigate_outcomes({"0000": 30, "1000": 10, "0100": 60}, c, one_qubit)
    assert est.p_est == pytest.approx(0.4)
    assert est.theta1_est == pytest.approx(2 * math.atan(math.sqrt(1 / 3)))
    with pytest.raises(ValueError):
        mitigate_outcomes({"0000": 1}, c, ConfusionMatrix(np.eye(4)))
    table = CountsTable({"00": 3, "11": 1}, 4)
    assert table.shots == 4
