"""Magic-basis KAK decomposition of two-qubit gates and two-CNOT synthesis.

Any ``U`` in SU(4) factors as::

    U = (A1 (x) A2) exp(i (k0 + k1 XX + k2 YY + k3 ZZ)) (B1 (x) B2)

The factorisation is found in the magic basis, where local gates become real
orthogonal matrices: ``U' = M^dag U M = Q_L (D + iG) Q_R`` with ``D + iG``
diagonal.  For the protocol gate every intermediate has a closed form, which
is what :func:`joint_diagonalize` uses when it is given ``eps``; other inputs
(and the degenerate point ``eps = 1/sqrt(2)``) go through a numerical SVD path.

When one of the interaction coefficients vanishes the entangling core is
locally equivalent to ``exp(-i(h1 XX + h2 YY))``, which needs only two CNOTs::

    exp(-i(h1 XX + h2 YY)) = (w (x) w^dag) CNOT (u2 (x) v2) CNOT (w^dag (x) w)

with ``w = (1 - iX)/sqrt(2)``, ``u2 = exp(-i h1 X)`` and ``v2 = exp(i h2 Z)``.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .state_space import Epsilon
from .unitary_builder import build_u_epsilon, unitarity_residual

SQRT2 = math.sqrt(2.0)

IDENTITY2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / SQRT2
S_MATRIX = np.array([[1j, -1], [1, -1j]], dtype=complex) / SQRT2
MAGIC = np.array(
    [[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]],
    dtype=complex,
) / SQRT2
# rows: magic-basis phase index j; columns: (k0, k1, k2, k3)
LAMBDA = np.array(
    [[1, 1, -1, 1], [1, 1, 1, -1], [1, -1, -1, -1], [1, -1, 1, 1]],
    dtype=int,
)
SIGMA = tuple(np.kron(p, p) for p in PAULIS)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
W_GATE = (IDENTITY2 - 1j * PAULI_X) / SQRT2

UNITARY_INPUT_TOL = 1e-8
RECONSTRUCTION_TOL = 1e-9
FACTOR_TOL = 1e-8
# |cos 2 alpha| below this leaves the closed forms (lambda_minus -> 0)
ANALYTIC_WINDOW = 1e-6
BRANCH_TIE_TOL = 1e-12
CLUSTER_TOL = 1e-6


class DecompositionError(ValueError):
    """Raised when an input cannot be decomposed as requested."""


class NotUnitaryError(DecompositionError):
    pass


class LocalFactorizationError(DecompositionError):
    pass


class SynthesisError(DecompositionError):
    def __init__(self, message: str, intermediates: Optional["KakIntermediates"] = None):
        super().__init__(message)
        self.intermediates = intermediates


@dataclass(frozen=True)
class KakConstants:
    magic_basis: np.ndarray
    lambda_matrix: np.ndarray
    pauli: tuple
    hadamard: np.ndarray
    s_matrix: np.ndarray

    @property
    def lambda_inverse(self) -> np.ndarray:
        return self.lambda_matrix.T / 4.0


CONSTANTS = KakConstants(MAGIC, LAMBDA, PAULIS, HADAMARD, S_MATRIX)


def rotation(axis: int, mu: float) -> np.ndarray:
    """``R_axis(mu) = exp(-i mu sigma_axis)`` for axis 0, 1, 2 = X, Y, Z."""
    return math.cos(mu) * IDENTITY2 - 1j * math.sin(mu) * PAULIS[axis]


def interaction(k: Sequence[float]) -> np.ndarray:
    """``exp(i (k1 XX + k2 YY + k3 ZZ))``."""
    h = sum(kj * s for kj, s in zip(k, SIGMA))
    return scipy.linalg.expm(1j * h)


@dataclass
class KakIntermediates:
    """Audit trail of one decomposition.

    ``q_l (D + iG) q_r`` reproduces ``u_prime``; on the analytic path
    ``q_l = v_a p`` and ``q_r = p^T x_a^T``.  The numerical path may need
    different left and right rotations inside degenerate singular
    subspaces; the left one is then kept in ``p_left``.
    """

    u_prime: np.ndarray
    u_r: np.ndarray
    u_i: np.ndarray
    global_phase: float = 0.0
    path: str = ""
    v_a: Optional[np.ndarray] = None
    x_a: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    u_i_prime: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    p_left: Optional[np.ndarray] = None
    q_l: Optional[np.ndarray] = None
    q_r: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    scalars: dict = field(default_factory=dict)

    def eckart_young_residual(self) -> float:
        ur, ui = self.u_r, self.u_i
        return float(
            max(
                np.max(np.abs(ui @ ur.T - ur @ ui.T)),
                np.max(np.abs(ui.T @ ur - ur.T @ ui)),
            )
        )

    def diagonal(self) -> np.ndarray:
        return self.d + 1j * self.g


@dataclass
class KakResult:
    k0: float
    k: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    intermediates: KakIntermediates

    def reconstruct(self) -> np.ndarray:
        return (
            cmath.exp(1j * self.k0)
            * np.kron(self.a1, self.a2)
            @ interaction(self.k)
            @ np.kron(self.b1, self.b2)
        )


@dataclass(frozen=True)
class Gate:
    kind: str  # "u1q" or "cnot"
    qubits: tuple
    matrix: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        if self.kind == "cnot":
            return {"kind": "cnot", "control": self.qubits[0], "target": self.qubits[1]}
        m = self.matrix
        return {
            "kind": "u1q",
            "qubit": self.qubits[0],
            "matrix": [[[float(m[r, c].real), float(m[r, c].imag)] for c in range(2)] for r in range(2)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Gate":
        if data["kind"] == "cnot":
            return cls("cnot", (int(data["control"]), int(data["target"])))
        if data["kind"] == "u1q":
            m = np.array([[complex(re, im) for re, im in row] for row in data["matrix"]])
            return cls("u1q", (int(data["qubit"]),), m)
        raise ValueError(f"unknown gate kind {data['kind']!r}")


def u1q(qubit: int, matrix: np.ndarray) -> Gate:
    return Gate("u1q", (qubit,), np.asarray(matrix, dtype=complex))


def cnot(control: int, target: int) -> Gate:
    return Gate("cnot", (control, target))


def _embed(gate: Gate) -> np.ndarray:
    if gate.kind == "u1q":
        q = gate.qubits[0]
        return np.kron(gate.matrix, IDENTITY2) if q == 0 else np.kron(IDENTITY2, gate.matrix)
    if gate.qubits == (0, 1):
        return CNOT
    if gate.qubits == (1, 0):
        swap = np.eye(4, dtype=complex)[[0, 2, 1, 3]]
        return swap @ CNOT @ swap
    raise ValueError(f"bad CNOT qubits {gate.qubits}")


@dataclass
class GateSequence:
    """Ordered two-qubit circuit; ``gates[0]`` acts first."""

    gates: list
    epsilon: Optional[float] = None
    global_phase: float = 0.0
    branch: str = ""
    path: str = ""

    @property
    def cnot_count(self) -> int:
        return sum(1 for g in self.gates if g.kind == "cnot")

    def matrix(self, include_phase: bool = True) -> np.ndarray:
        out = np.eye(4, dtype=complex)
        for g in self.gates:
            out = _embed(g) @ out
        if include_phase:
            out = cmath.exp(1j * self.global_phase) * out
        return out

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "cnot_count": self.cnot_count,
            "global_phase": self.global_phase,
            "branch": self.branch,
            "path": self.path,
            "gates": [g.to_dict() for g in self.gates],
        }

    def to_json(self, **kwargs: Any) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "GateSequence":
        return cls(
            gates=[Gate.from_dict(g) for g in data["gates"]],
            epsilon=data.get("epsilon"),
            global_phase=float(data.get("global_phase", 0.0)),
            branch=data.get("branch", ""),
            path=data.get("path", ""),
        )


def _fourth_root_phase(det: complex) -> float:
    # the four candidate roots differ by pi/2; keep the smallest |phase|
    base = cmath.phase(det) / 4.0
    candidates = [base + m * math.pi / 2 for m in range(-2, 3)]
    return min(candidates, key=lambda t: (abs(t), t))


def to_magic_basis(u: np.ndarray) -> KakIntermediates:
    """Normalise ``u`` to unit determinant and express it in the magic basis."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {u.shape}")
    res = unitarity_residual(u)
    if res > UNITARY_INPUT_TOL:
        raise NotUnitaryError(f"input is not unitary (residual {res:.3e})")
    phase = _fourth_root_phase(np.linalg.det(u))
    u_su4 = u * cmath.exp(-1j * phase)
    u_prime = MAGIC.conj().T @ u_su4 @ MAGIC
    return KakIntermediates(
        u_prime=u_prime,
        u_r=u_prime.real.copy(),
        u_i=u_prime.imag.copy(),
        global_phase=phase,
    )


def use_analytic_path(eps: Union[Epsilon, float]) -> bool:
    e = Epsilon.of(eps).epsilon
    return abs(2 * e * e - 1) >= ANALYTIC_WINDOW


def _analytic(inter: KakIntermediates, eps: Epsilon) -> None:
    e = eps.epsilon
    s2 = 2 * e * math.sqrt(max(0.0, 1 - e * e))  # sin 2 alpha
    c2 = 2 * e * e - 1  # cos 2 alpha
    r = math.sqrt(8 + s2 * s2)
    lam_p = (4 - s2 + r) / 8
    lam_m = (4 - s2 - r) / 8
    y1 = (3 * s2 + r) / (2 * SQRT2 * c2)
    y2 = (s2 - r) / (2 * SQRT2)
    n1 = math.sqrt(1 + y1 * y1)
    n2 = math.sqrt(1 + y2 * y2)
    x_a = np.array(
        [
            [y1 / n1, 0, -1 / n1, 0],
            [0, 1 / n2, 0, -y2 / n2],
            [1 / n1, 0, y1 / n1, 0],
            [0, y2 / n2, 0, 1 / n2],
        ]
    )
    d = np.sqrt([lam_p, lam_p, lam_m, lam_m])
    v = inter.u_r @ x_a / d
    m = np.linalg.norm(v, axis=0)
    v_a = v / m

    r_t = r / (2 * SQRT2 * c2) * (r * r - r * s2 - 12)
    m1 = 2 * math.sqrt(2 * lam_p) * n1 * n2 * m[1]
    m2 = 2 * math.sqrt(lam_m) * n1 * n2 * m[3]
    g1 = r_t / m1 / 2
    g2 = r / m2 / 2
    u_i_prime = np.zeros((4, 4))
    u_i_prime[0, 1] = u_i_prime[1, 0] = g1
    u_i_prime[2, 3] = u_i_prime[3, 2] = g2

    direct = v_a.T @ inter.u_i @ x_a
    mismatch = float(np.max(np.abs(direct - u_i_prime)))
    if mismatch > 1e-8:
        raise DecompositionError(
            f"closed-form imaginary block disagrees with the input by {mismatch:.3e}; "
            "was the input built from this epsilon?"
        )

    p = scipy.linalg.block_diag(HADAMARD.real, HADAMARD.real)
    g = np.array([g1, -g1, g2, -g2])
    inter.path = "analytic"
    inter.v_a, inter.x_a, inter.d = v_a, x_a, d
    inter.u_i_prime, inter.g, inter.p = u_i_prime, g, p
    inter.q_l = v_a @ p
    inter.q_r = p.T @ x_a.T
    inter.scalars = {
        "sin2alpha": s2,
        "cos2alpha": c2,
        "r": r,
        "lambda_plus": lam_p,
        "lambda_minus": lam_m,
        "y1": y1,
        "y2": y2,
        "N1": n1,
        "N2": n2,
        "M": tuple(float(x) for x in m),
        "r_tilde": r_t,
        "M1_tilde": m1,
        "M2_tilde": m2,
    }


def _simultaneous_real_eigvecs(sym: np.ndarray) -> np.ndarray:
    """Real orthogonal R with ``R^T sym R`` diagonal, for complex symmetric ``sym``
    whose real and imaginary parts commute."""
    a, b = sym.real, sym.imag
    best, best_err = None, math.inf
    for c in (0.0, 0.7548776662466927, 1.618033988749895, -2.414213562373095, 3.3166247903554):
        _, vecs = np.linalg.eigh(a + c * b)
        t = vecs.T @ sym @ vecs
        err = float(np.max(np.abs(t - np.diag(np.diag(t)))))
        if err < best_err:
            best, best_err = vecs, err
        if err < 1e-12:
            break
    return best


def _real_kak_block(c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a unitary block as ``L diag(exp(i phi)) R^T`` with L, R real orthogonal."""
    k = c.shape[0]
    if k == 1:
        return np.eye(1), np.eye(1), np.array([cmath.phase(c[0, 0])])
    r = _simultaneous_real_eigvecs(c.T @ c)
    diag = np.diag(r.T @ c.T @ c @ r)
    phi = np.angle(diag) / 2.0
    left = c @ r @ np.diag(np.exp(-1j * phi))
    return left.real, r, phi


def _numerical(inter: KakIntermediates) -> None:
    v, s, xt = np.linalg.svd(inter.u_r)
    x = xt.T
    for j in range(4):
        i = int(np.argmax(np.abs(x[:, j])))
        if x[i, j] < 0:
            x[:, j] *= -1
            v[:, j] *= -1
    u_i_prime = v.T @ inter.u_i @ x

    clusters, start = [], 0
    for j in range(1, 5):
        if j == 4 or s[j - 1] - s[j] > CLUSTER_TOL:
            clusters.append(list(range(start, j)))
            start = j
    p_left = np.zeros((4, 4))
    p_right = np.zeros((4, 4))
    phi = np.zeros(4)
    for idx in clusters:
        block = v[:, idx].T @ inter.u_prime @ x[:, idx]
        lb, rb, ph = _real_kak_block(block)
        p_left[np.ix_(idx, idx)] = lb
        p_right[np.ix_(idx, idx)] = rb
        phi[idx] = ph

    q_l = v @ p_left
    q_r = p_right.T @ x.T
    if np.linalg.det(q_l) < 0:
        q_l[:, 0] *= -1
        phi[0] += math.pi
    if np.linalg.det(q_r) < 0:
        q_r[0, :] *= -1
        phi[0] += math.pi
    phi = np.angle(np.exp(1j * phi))

    inter.path = "numerical"
    inter.v_a, inter.x_a = v, x
    inter.u_i_prime = u_i_prime
    inter.d, inter.g = np.cos(phi), np.sin(phi)
    inter.p, inter.p_left = p_right, p_left
    inter.q_l, inter.q_r = q_l, q_r
    inter.scalars = {"singular_values": tuple(float(t) for t in s), "clusters": clusters}


def joint_diagonalize(
    inter: KakIntermediates, eps: Union[Epsilon, float, None] = None
) -> KakIntermediates:
    """Find real orthogonal ``q_l``, ``q_r`` and phases with ``u' = q_l diag(e^{i phi}) q_r``.

    With ``eps`` given (and away from ``eps = 1/sqrt(2)``) the closed forms for
    the protocol gate are used; otherwise a numerical SVD of the real part
    followed by re-orthogonalisation inside degenerate singular subspaces.
    """
    ey = inter.eckart_young_residual()
    if ey > 1e-8:
        raise DecompositionError(f"real/imaginary parts violate the commutation identities ({ey:.3e})")
    if eps is not None and use_analytic_path(eps):
        _analytic(inter, Epsilon.of(eps))
    else:
        _numerical(inter)
    inter.phi = np.arctan2(inter.g, inter.d)
    recon = inter.q_l @ np.diag(np.exp(1j * inter.phi)) @ inter.q_r
    err = float(np.max(np.abs(recon - inter.u_prime)))
    if err > 1e-9:
        raise DecompositionError(f"joint diagonalisation failed (residual {err:.3e})", )
    return inter


def extract_k_vector(phi: Sequence[float]) -> tuple[float, np.ndarray]:
    """Map magic-basis phases to ``(k0, (k1, k2, k3))``."""
    kv = CONSTANTS.lambda_inverse @ np.asarray(phi, dtype=float)
    return float(kv[0]), kv[1:].copy()


def _canonical_sign(w1: np.ndarray, w2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # first non-negligible entry of w1's first column decides; positive real
    # part, then positive imaginary part
    for z in (w1[0, 0], w1[1, 0]):
        if abs(z) > 1e-12:
            if abs(z.real) > 1e-12:
                flip = z.real < 0
            else:
                flip = z.imag < 0
            return (-w1, -w2) if flip else (w1, w2)
    return w1, w2


def factor_local_so4(o: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``M o M^dag`` into ``w1 (x) w2`` with ``w1``, ``w2`` in SU(2)."""
    k = MAGIC @ np.asarray(o, dtype=complex) @ MAGIC.conj().T
    # k[(a,b),(c,d)] = w1[a,c] w2[b,d]  ->  rank-one matrix over (a,c) x (b,d)
    t = k.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    uu, ss, vh = np.linalg.svd(t)
    w1 = math.sqrt(ss[0]) * uu[:, 0].reshape(2, 2)
    w2 = math.sqrt(ss[0]) * vh[0, :].reshape(2, 2)
    root = cmath.sqrt(np.linalg.det(w1))
    if abs(root) < 1e-12:
        raise LocalFactorizationError("degenerate local factor")
    w1 = w1 / root
    w2 = w2 * root
    w1, w2 = _canonical_sign(w1, w2)
    err = float(np.max(np.abs(np.kron(w1, w2) - k)))
    if err > FACTOR_TOL:
        raise LocalFactorizationError(f"matrix is not a tensor product of one-qubit gates (residual {err:.3e})")
    return w1, w2


def decompose(u: np.ndarray, eps: Union[Epsilon, float, None] = None) -> KakResult:
    """KAK decomposition of ``u``; reconstruction is exact including global phase."""
    inter = joint_diagonalize(to_magic_basis(u), eps)
    k0, k = extract_k_vector(inter.phi)
    a1, a2 = factor_local_so4(inter.q_l)
    b1, b2 = factor_local_so4(inter.q_r)
    result = KakResult(k0 + inter.global_phase, k, a1, a2, b1, b2, inter)
    err = float(np.max(np.abs(result.reconstruct() - np.asarray(u))))
    if err > RECONSTRUCTION_TOL:
        raise SynthesisError(f"KAK reconstruction residual {err:.3e}", inter)
    return result


def decompose_u_epsilon(eps: Union[Epsilon, float]) -> KakResult:
    eps = Epsilon.of(eps)
    return decompose(build_u_epsilon(eps), eps)


@dataclass
class _Canonical:
    """``exp(i k.Sigma) = e^{i phase} (l1 (x) l2) exp(-i(h1 XX + h2 YY)) (r1 (x) r2)``."""

    h1: float
    h2: float
    residual_h3: float
    l1: np.ndarray
    l2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    phase: float
    branch: str


def _protocol_branch(k: np.ndarray) -> Optional[_Canonical]:
    k1, k2, k3 = k
    if abs(k1) > 1e-10 or k2 > 0 or k3 > 0:
        return None
    if abs(k2) - abs(k3) >= -BRANCH_TIE_TOL:
        # XX <- YY via R_z(3pi/4), then YY <- ZZ via R_x(3pi/4)
        c = rotation(2, 3 * math.pi / 4) @ rotation(0, 3 * math.pi / 4)
        h1, h2, branch = abs(k2), abs(k3), "k2>=k3"
    else:
        c = rotation(1, math.pi / 4)
        h1, h2, branch = abs(k3), abs(k2), "k3>k2"
    cd = c.conj().T
    return _Canonical(h1, h2, abs(k1), c, c, cd, cd, 0.0, branch)


def _swap_axes(state: dict, i: int, j: int) -> None:
    third = 3 - i - j
    c = rotation(third, math.pi / 4)
    state["k"][[i, j]] = state["k"][[j, i]]
    state["l1"], state["l2"] = state["l1"] @ c, state["l2"] @ c
    state["r1"], state["r2"] = c.conj().T @ state["r1"], c.conj().T @ state["r2"]


def _flip_signs(state: dict, axis: int) -> None:
    # conjugating by sigma_axis on qubit 1 negates the two other components
    p = PAULIS[axis]
    for j in range(3):
        if j != axis:
            state["k"][j] *= -1
    state["l1"] = state["l1"] @ p
    state["r1"] = p @ state["r1"]


def _generic_canonical(k: np.ndarray) -> _Canonical:
    st = {"k": np.array(k, dtype=float), "l1": IDENTITY2, "l2": IDENTITY2,
          "r1": IDENTITY2, "r2": IDENTITY2, "phase": 0.0}
    for j in range(3):
        m = round(st["k"][j] / (math.pi / 2))
        if m:
            st["k"][j] -= m * math.pi / 2
            st["phase"] += m * math.pi / 2
            if m % 2:
                st["r1"] = PAULIS[j] @ st["r1"]
                st["r2"] = PAULIS[j] @ st["r2"]
    z = int(np.argmin(np.abs(st["k"])))
    if z != 2:
        _swap_axes(st, z, 2)
    kx, ky = st["k"][0], st["k"][1]
    if kx > 0 and ky > 0:
        _flip_signs(st, 2)
    elif kx > 0:
        _flip_signs(st, 1)
    elif ky > 0:
        _flip_signs(st, 0)
    if abs(st["k"][1]) > abs(st["k"][0]):
        _swap_axes(st, 0, 1)
    return _Canonical(-st["k"][0], -st["k"][1], abs(st["k"][2]),
                      st["l1"], st["l2"], st["r1"], st["r2"], st["phase"], "generic")


def canonicalize_and_synthesize(kak: KakResult, epsilon: Optional[float] = None) -> GateSequence:
    """Two-CNOT circuit for a KAK result whose interaction has a vanishing component."""
    can = _protocol_branch(kak.k) if kak.intermediates.path == "analytic" else None
    if can is None:
        can = _generic_canonical(kak.k)
    if can.residual_h3 > RECONSTRUCTION_TOL:
        raise SynthesisError(
            f"interaction needs three CNOTs (smallest coefficient {can.residual_h3:.3e})",
            kak.intermediates,
        )
    big_a1 = kak.a1 @ can.l1
    big_a2 = kak.a2 @ can.l2
    big_b1 = can.r1 @ kak.b1
    big_b2 = can.r2 @ kak.b2
    wd = W_GATE.conj().T
    gates = [
        u1q(0, wd @ big_b1),
        u1q(1, W_GATE @ big_b2),
        cnot(0, 1),
        u1q(0, rotation(0, can.h1)),  # exp(-i h1 X)
        u1q(1, rotation(2, -can.h2)),  # exp(+i h2 Z)
        cnot(0, 1),
        u1q(0, big_a1 @ W_GATE),
        u1q(1, big_a2 @ wd),
    ]
    seq = GateSequence(
        gates=gates,
        epsilon=epsilon,
        global_phase=float(np.angle(np.exp(1j * (kak.k0 + can.phase)))),
        branch=can.branch,
        path=kak.intermediates.path,
    )
    return seq


def synthesize(eps: Union[Epsilon, float]) -> GateSequence:
    """Two-CNOT circuit for the protocol gate, verified against the dense matrix."""
    eps = Epsilon.of(eps)
    target = build_u_epsilon(eps)
    kak = decompose(target, eps)
    seq = canonicalize_and_synthesize(kak, eps.epsilon)
    res = verify_decomposition(seq, target)
    if res > RECONSTRUCTION_TOL:
        raise SynthesisError(f"synthesised circuit misses the target (residual {res:.3e})", kak.intermediates)
    return seq


def verify_decomposition(seq: Union[GateSequence, np.ndarray], target: np.ndarray) -> float:
    """``1 - |tr(target^dag product)| / 4``; zero iff equal up to global phase."""
    product = seq.matrix() if isinstance(seq, GateSequence) else np.asarray(seq)
    overlap = abs(np.trace(np.asarray(target).conj().T @ product)) / 4.0
    return max(0.0, 1.0 - float(overlap))
