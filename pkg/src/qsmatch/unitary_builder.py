"""The protocol's entangling two-qubit gate.

Basis order is |00>, |01>, |10>, |11> with the left bit on qubit 1 (the
kept qubit) and the right bit on qubit 2 (the one post-selected on 0).
"""

from __future__ import annotations

import math
from typing import Union

import numpy as np

from .state_space import BlochState, Epsilon, lift_to_sphere, apply_map, project_to_plane

UNITARITY_TOL = 1e-12


def build_u_epsilon(eps: Union[Epsilon, float]) -> np.ndarray:
    """Real orthogonal 4x4 matrix whose post-selected action is ``z -> z**2/eps``."""
    e = Epsilon.of(eps).epsilon
    s = math.sqrt(max(0.0, 1.0 - e * e))
    h = 1.0 / math.sqrt(2.0)
    u = np.array(
        [
            [e, -h * s, h * s, 0.0],
            [0.0, h, h, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [s, h * e, -h * e, 0.0],
        ],
        dtype=float,
    )
    return u


def unitarity_residual(u: np.ndarray) -> float:
    """Max entrywise deviation of ``u^dagger u`` from the identity."""
    u = np.asarray(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def is_unitary(u: np.ndarray, tol: float = UNITARITY_TOL) -> bool:
    return unitarity_residual(u) <= tol


def action_on_pair(eps: Union[Epsilon, float], state0: BlochState) -> tuple[float, BlochState]:
    """Apply the gate to two copies of ``state0`` and post-select qubit 2 on |0>.

    Returns the probability of reading 0 on qubit 2 and the kept state.
    """
    psi = np.kron(state0.amplitudes(), state0.amplitudes())
    out = build_u_epsilon(eps) @ psi
    kept = out[[0, 2]]
    prob = float(np.vdot(kept, kept).real)
    if prob == 0.0:
        # only possible for eps -> 0, which Epsilon rejects
        raise ZeroDivisionError("post-selection has zero probability")
    return prob, BlochState.from_amplitudes(kept[0], kept[1])


def predicted_kept_state(eps: Union[Epsilon, float], state0: BlochState) -> BlochState:
    """Kept state predicted by the plane map alone."""
    return lift_to_sphere(apply_map(project_to_plane(state0), eps))
