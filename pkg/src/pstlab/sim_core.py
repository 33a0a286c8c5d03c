"""Dense state-vector and density-matrix simulation engine.

States are stored big-endian by site: the basis index of |q0 q1 ... q_{n-1}>
is sum_i q_i * 2^(n-1-i), so qubit 0 is the leftmost ket label and chain
site 1. |1000> therefore means "excitation on the first of four sites".

Unitaries and Kraus channels act on arbitrary qubit subsets through tensor
reshaping; nothing here assumes a chain topology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IDENTITY_2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)
S_DAG = np.array([[1.0, 0.0], [0.0, -1.0j]], dtype=complex)

_NORM_TOL = 1e-12
_TRACE_TOL = 1e-9
_HERM_TOL = 1e-12
_PSD_FLOOR = -1e-9
_CPTP_TOL = 1e-10


class PureState:
    """Normalized complex amplitude vector over n qubits."""

    __slots__ = ("n_qubits", "amplitudes")

    def __init__(self, n_qubits: int, amplitudes, validate: bool = True):
        if n_qubits < 1:
            raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
        amps = np.asarray(amplitudes, dtype=complex)
        if amps.shape != (2**n_qubits,):
            raise ValueError(
                f"amplitude vector has shape {amps.shape}, expected ({2**n_qubits},)"
            )
        if validate:
            norm2 = float(np.sum(np.abs(amps) ** 2))
            if abs(norm2 - 1.0) > 1e-10:
                raise ValueError(f"state norm^2 = {norm2}, not 1 within tolerance")
        self.n_qubits = n_qubits
        self.amplitudes = amps

    @classmethod
    def zero(cls, n_qubits: int) -> "PureState":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps, validate=False)

    def to_density_matrix(self) -> "DensityMatrix":
        rho = np.outer(self.amplitudes, self.amplitudes.conj())
        return DensityMatrix(self.n_qubits, rho, validate=False)

    def copy(self) -> "PureState":
        return PureState(self.n_qubits, self.amplitudes.copy(), validate=False)


class DensityMatrix:
    """2^n x 2^n density operator: trace one, Hermitian, positive."""

    __slots__ = ("n_qubits", "matrix")

    def __init__(self, n_qubits: int, matrix, validate: bool = True):
        if n_qubits < 1:
            raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
        mat = np.asarray(matrix, dtype=complex)
        dim = 2**n_qubits
        if mat.shape != (dim, dim):
            raise ValueError(f"matrix has shape {mat.shape}, expected ({dim}, {dim})")
        if validate:
            tr = complex(np.trace(mat))
            if abs(tr - 1.0) > _TRACE_TOL:
                raise ValueError(f"trace = {tr}, not 1 within {_TRACE_TOL}")
            if np.max(np.abs(mat - mat.conj().T)) > 1e-10:
                raise ValueError("matrix is not Hermitian within tolerance")
            evals = np.linalg.eigvalsh(mat)
            if evals.min() < _PSD_FLOOR:
                raise ValueError(f"matrix has eigenvalue {evals.min()} below {_PSD_FLOOR}")
        self.n_qubits = n_qubits
        self.matrix = mat

    @classmethod
    def zero(cls, n_qubits: int) -> "DensityMatrix":
        dim = 2**n_qubits
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
        return cls(n_qubits, rho, validate=False)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.n_qubits, self.matrix.copy(), validate=False)


class UnitaryGate:
    """A 1- or 2-qubit unitary bound to an ordered tuple of target qubits."""

    __slots__ = ("matrix", "targets", "arity", "kind")

    def __init__(self, matrix, targets, kind: str = ""):
        mat = np.asarray(matrix, dtype=complex)
        targets = tuple(int(t) for t in targets)
        arity = len(targets)
        if arity not in (1, 2):
            raise ValueError(f"gate arity must be 1 or 2, got {arity}")
        dim = 2**arity
        if mat.shape != (dim, dim):
            raise ValueError(f"gate matrix shape {mat.shape} does not match arity {arity}")
        if len(set(targets)) != arity:
            raise ValueError(f"duplicate targets {targets}")
        dev = np.max(np.abs(mat.conj().T @ mat - np.eye(dim)))
        if dev > 1e-12:
            raise ValueError(f"matrix is not unitary (deviation {dev:.3e})")
        self.matrix = mat
        self.targets = targets
        self.arity = arity
        self.kind = kind


class KrausChannel:
    """CPTP map as a finite set of Kraus operators on k qubits.

    Construction only checks shapes; completeness is checked by
    validate_cptp so that deliberately broken sets can still be reported on.
    """

    __slots__ = ("kraus_ops", "arity", "_cptp_deviation")

    def __init__(self, kraus_ops):
        ops = tuple(np.asarray(k, dtype=complex) for k in kraus_ops)
        if not ops:
            raise ValueError("Kraus set must be nonempty")
        dim = ops[0].shape[0]
        arity = int(round(np.log2(dim)))
        if 2**arity != dim:
            raise ValueError(f"Kraus operator dimension {dim} is not a power of 2")
        for k in ops:
            if k.shape != (dim, dim):
                raise ValueError("all Kraus operators must share one square shape")
        self.kraus_ops = ops
        self.arity = arity
        self._cptp_deviation = None

    def cptp_deviation(self) -> float:
        """Max-abs deviation of sum K^dag K from the identity (cached)."""
        if self._cptp_deviation is None:
            dim = 2**self.arity
            acc = np.zeros((dim, dim), dtype=complex)
            for k in self.kraus_ops:
                acc += k.conj().T @ k
            self._cptp_deviation = float(np.max(np.abs(acc - np.eye(dim))))
        return self._cptp_deviation


@dataclass(frozen=True)
class CPTPReport:
    ok: bool
    deviation: float
    tolerance: float

    def __str__(self) -> str:
        status = "ok" if self.ok else "violation"
        return f"CPTP {status}: |sum K^dag K - I|_max = {self.deviation:.3e} (tol {self.tolerance:.1e})"


def validate_cptp(channel: KrausChannel, tolerance: float = _CPTP_TOL) -> CPTPReport:
    """Check trace preservation sum K^dag K = I and report the deviation norm."""
    dev = channel.cptp_deviation()
    return CPTPReport(ok=dev <= tolerance, deviation=dev, tolerance=tolerance)


def _check_targets(targets, n_qubits: int) -> None:
    for t in targets:
        if not 0 <= t < n_qubits:
            raise ValueError(f"target {t} out of range for {n_qubits} qubits")
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate targets {targets}")


def _apply_matrix_to_vector(amps: np.ndarray, mat: np.ndarray, targets, n: int) -> np.ndarray:
    """Contract a 2^k x 2^k matrix into the target axes of a state tensor."""
    k = len(targets)
    tensor = amps.reshape((2,) * n)
    gate = mat.reshape((2,) * (2 * k))
    tensor = np.tensordot(gate, tensor, axes=(list(range(k, 2 * k)), list(targets)))
    tensor = np.moveaxis(tensor, range(k), targets)
    return tensor.reshape(2**n)


def _apply_matrix_to_density(rho: np.ndarray, mat: np.ndarray, targets, n: int) -> np.ndarray:
    """rho -> M rho M^dag on the embedded subsystem (M need not be unitary)."""
    k = len(targets)
    tensor = rho.reshape((2,) * (2 * n))
    gate = mat.reshape((2,) * (2 * k))
    row = list(targets)
    col = [n + t for t in targets]
    tensor = np.tensordot(gate, tensor, axes=(list(range(k, 2 * k)), row))
    tensor = np.moveaxis(tensor, range(k), row)
    tensor = np.tensordot(gate.conj(), tensor, axes=(list(range(k, 2 * k)), col))
    tensor = np.moveaxis(tensor, range(k), col)
    return tensor.reshape(2**n, 2**n)


def apply_unitary(state, gate: UnitaryGate):
    """Apply a gate to a PureState or DensityMatrix, returning the same kind.

    The result equals the full 2^N embedding of the gate (identity on
    non-target qubits, with target-order permutation) applied to the state.
    """
    n = state.n_qubits
    _check_targets(gate.targets, n)
    if isinstance(state, PureState):
        amps = _apply_matrix_to_vector(state.amplitudes, gate.matrix, gate.targets, n)
        return PureState(n, amps, validate=False)
    if isinstance(state, DensityMatrix):
        rho = _apply_matrix_to_density(state.matrix, gate.matrix, gate.targets, n)
        return DensityMatrix(n, rho, validate=False)
    raise TypeError(f"unsupported state type {type(state).__name__}")


def apply_channel(rho: DensityMatrix, channel: KrausChannel, targets) -> DensityMatrix:
    """rho -> sum_K K rho K^dag on the embedded subsystem."""
    n = rho.n_qubits
    targets = tuple(int(t) for t in targets)
    if len(targets) != channel.arity:
        raise ValueError(
            f"channel arity {channel.arity} does not match {len(targets)} targets"
        )
    _check_targets(targets, n)
    report = validate_cptp(channel)
    if not report.ok:
        raise ValueError(f"refusing to apply non-CPTP channel: {report}")
    out = np.zeros_like(rho.matrix)
    for k in channel.kraus_ops:
        out += _apply_matrix_to_density(rho.matrix, k, targets, n)
    return DensityMatrix(n, out, validate=False)


def expectation_z(state, qubit: int) -> float:
    """tr(rho Z_qubit) for a DensityMatrix, or <psi|Z|psi> for a PureState."""
    n = state.n_qubits
    if not 0 <= qubit < n:
        raise ValueError(f"qubit {qubit} out of range for {n} qubits")
    if isinstance(state, PureState):
        probs = np.abs(state.amplitudes) ** 2
    elif isinstance(state, DensityMatrix):
        diag = np.diagonal(state.matrix)
        if np.max(np.abs(diag.imag)) > 1e-10:
            raise ValueError("density matrix diagonal has imaginary residue > 1e-10")
        probs = diag.real
    else:
        raise TypeError(f"unsupported state type {type(state).__name__}")
    # big-endian: qubit q is bit (n-1-q) of the basis index
    idx = np.arange(len(probs))
    signs = 1.0 - 2.0 * ((idx >> (n - 1 - qubit)) & 1)
    return float(np.dot(signs, probs))


def sp_from_z(z: float) -> float:
    """Success probability (1 - <Z>)/2, clamping <Z> into [-1, 1]."""
    z = min(1.0, max(-1.0, float(z)))
    return (1.0 - z) / 2.0


def partial_trace_to_qubit(rho: DensityMatrix, keep: int) -> DensityMatrix:
    """Trace out all qubits except `keep`, returning the 2x2 reduced state."""
    n = rho.n_qubits
    if not 0 <= keep < n:
        raise ValueError(f"qubit {keep} out of range for {n} qubits")
    tensor = rho.matrix.reshape((2,) * (2 * n))
    # move kept row/col axes to the front, then trace the rest pairwise
    tensor = np.moveaxis(tensor, (keep, n + keep), (0, 1))
    rest = 2 ** (n - 1)
    tensor = tensor.reshape(2, 2, rest, rest)
    reduced = np.einsum("ijkk->ij", tensor)
    return DensityMatrix(1, reduced, validate=False)


def qubit_state_fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity of two single-qubit states.

    Uses the qubit closed form F = tr(rho sigma) + 2 sqrt(det rho det sigma),
    which coincides with the square of the trace norm of
    sqrt(sqrt(rho) sigma sqrt(rho)) in dimension two.
    """
    for name, s in (("rho", rho), ("sigma", sigma)):
        if s.n_qubits != 1:
            raise ValueError(f"{name} must be a single-qubit state")
        if np.linalg.eigvalsh(s.matrix).min() < _PSD_FLOOR:
            raise ValueError(f"{name} is not positive semidefinite")
    overlap = float(np.real(np.trace(rho.matrix @ sigma.matrix)))
    det_r = max(0.0, float(np.real(np.linalg.det(rho.matrix))))
    det_s = max(0.0, float(np.real(np.linalg.det(sigma.matrix))))
    fid = overlap + 2.0 * np.sqrt(det_r * det_s)
    return min(1.0, max(0.0, fid))


_BASIS_ROTATIONS = {
    "Z": None,
    "X": HADAMARD,
    "Y": HADAMARD @ S_DAG,  # S^dag then H
}


def sample_measurement(rho: DensityMatrix, qubit: int, basis: str,
                       shots: int | float | None = None, seed=None):
    """Measure one qubit in the X, Y, or Z basis.

    Basis rotations follow the tomography protocol: H for X, S^dag then H
    for Y, nothing for Z. With finite `shots` the outcome counts are drawn
    from the Born distribution using `seed`; `shots=None` (or infinity) is
    exact mode and returns the analytic probabilities.

    Returns (p0, p1, estimate of <sigma_basis>).
    """
    basis = basis.upper()
    if basis not in _BASIS_ROTATIONS:
        raise ValueError(f"invalid basis {basis!r}, expected one of X, Y, Z")
    reduced = partial_trace_to_qubit(rho, qubit).matrix
    rot = _BASIS_ROTATIONS[basis]
    if rot is not None:
        reduced = rot @ reduced @ rot.conj().T
    p0 = float(np.real(reduced[0, 0]))
    p0 = min(1.0, max(0.0, p0))
    p1 = 1.0 - p0
    exact = shots is None or (isinstance(shots, float) and np.isinf(shots))
    if exact:
        return p0, p1, p0 - p1
    shots = int(shots)
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    rng = np.random.default_rng(seed)
    n1 = int(rng.binomial(shots, p1))
    p1_hat = n1 / shots
    p0_hat = 1.0 - p1_hat
    return p0_hat, p1_hat, p0_hat - p1_hat


def choi_matrix(channel: KrausChannel) -> np.ndarray:
    """Choi matrix sum_ij |i><j| (x) E(|i><j|), used for channel equality checks."""
    d = 2**channel.arity
    choi = np.zeros((d * d, d * d), dtype=complex)
    for k in channel.kraus_ops:
        vec = k.T.reshape(-1)  # column-stacked |i> (x) K|i>
        choi += np.outer(vec, vec.conj())
    return choi
