"""Chain couplings, gate matrices, Trotter circuits, and the exact transfer oracle.

The engineered profile J_i = j0 * sqrt(i (N - i)) gives an equally spaced
single-excitation spectrum and perfect end-to-end transfer at t = pi/2 (for
j0 = 1) and every odd multiple thereof.

Angle convention: one Trotter step applies RXX(J_i dt) followed by
RYY(J_i dt) on each bond, i.e. exp(-i (J_i dt / 2)(XX + YY)) per bond, so
the effective single-excitation hopping amplitude is exactly J_i and the
ideal first hitting time is (pi/2) / j0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sim_core import HADAMARD, PAULI_X, S_DAG, PureState, UnitaryGate, apply_unitary


@dataclass(frozen=True)
class CouplingProfile:
    """Nearest-neighbour couplings of an N-site chain, in units of the reference j0."""

    n_sites: int
    couplings: tuple
    j0: float | None = None  # uniform scale when the profile is an engineered one

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError(f"chain needs at least 2 sites, got {self.n_sites}")
        cps = tuple(float(j) for j in self.couplings)
        if len(cps) != self.n_sites - 1:
            raise ValueError(
                f"expected {self.n_sites - 1} couplings for {self.n_sites} sites, got {len(cps)}"
            )
        if any(j <= 0 for j in cps):
            raise ValueError(f"all couplings must be positive, got {cps}")
        object.__setattr__(self, "couplings", cps)

    def is_mirror_symmetric(self) -> bool:
        return self.couplings == self.couplings[::-1]


@dataclass(frozen=True)
class TrotterPlan:
    """Time grid: total_time split into n_steps first-order steps."""

    total_time: float
    n_steps: int

    def __post_init__(self):
        if self.total_time <= 0:
            raise ValueError(f"total_time must be positive, got {self.total_time}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.total_time / self.n_steps

    def times(self) -> np.ndarray:
        """Grid t_k = k * dt for k = 0..n_steps (endpoint exact)."""
        return np.linspace(0.0, self.total_time, self.n_steps + 1)


@dataclass
class GateOp:
    """One gate plus the noise channels scheduled right after it."""

    gate: UnitaryGate
    channels: list = field(default_factory=list)  # list of (KrausChannel, targets)


@dataclass
class NoisyCircuit:
    """Prep gates followed by an ordered schedule of Trotter steps.

    Channels are attached per gate (post-gate); a freshly built circuit has
    none. `zeta` records the coherent crosstalk rate baked into the RZZ
    gates, 0 when absent.
    """

    n_qubits: int
    prep: list
    steps: list
    plan: TrotterPlan
    couplings: CouplingProfile
    zeta: float = 0.0

    def has_channels(self) -> bool:
        ops = list(self.prep)
        for step in self.steps:
            ops.extend(step)
        return any(op.channels for op in ops)

    def gate_ops(self):
        yield from self.prep
        for step in self.steps:
            yield from step


def pst_couplings(n_sites: int, j0: float) -> CouplingProfile:
    """Engineered profile J_i = j0 * sqrt(i (N - i)), mirror symmetric by construction."""
    if n_sites < 2:
        raise ValueError(f"chain needs at least 2 sites, got {n_sites}")
    if j0 <= 0:
        raise ValueError(f"j0 must be positive, got {j0}")
    cps = tuple(j0 * math.sqrt(i * (n_sites - i)) for i in range(1, n_sites))
    return CouplingProfile(n_sites=n_sites, couplings=cps, j0=j0)


def gate_matrix(kind: str, theta: float | None = None) -> np.ndarray:
    """Return the unitary matrix for a named gate.

    RXX(theta) and RYY(theta) have cos(theta/2) on the diagonal and
    -/+ i sin(theta/2) on the anti-diagonal; RZZ(phi) is
    diag(e^{-i phi/2}, e^{i phi/2}, e^{i phi/2}, e^{-i phi/2}), so
    RZZ(2 zeta t) is the coherent ZZ-crosstalk propagator for time t.
    """
    kind = kind.upper()
    if kind in ("RXX", "RYY", "RZZ"):
        if theta is None or not math.isfinite(theta):
            raise ValueError(f"{kind} needs a finite rotation angle")
        c = math.cos(theta / 2.0)
        s = math.sin(theta / 2.0)
        if kind == "RXX":
            return np.array(
                [
                    [c, 0, 0, -1j * s],
                    [0, c, -1j * s, 0],
                    [0, -1j * s, c, 0],
                    [-1j * s, 0, 0, c],
                ],
                dtype=complex,
            )
        if kind == "RYY":
            return np.array(
                [
                    [c, 0, 0, 1j * s],
                    [0, c, -1j * s, 0],
                    [0, -1j * s, c, 0],
                    [1j * s, 0, 0, c],
                ],
                dtype=complex,
            )
        return np.diag(
            [
                np.exp(-0.5j * theta),
                np.exp(0.5j * theta),
                np.exp(0.5j * theta),
                np.exp(-0.5j * theta),
            ]
        ).astype(complex)
    if kind == "H":
        return HADAMARD.copy()
    if kind == "SDG":
        return S_DAG.copy()
    if kind == "X":
        return PAULI_X.copy()
    raise ValueError(f"unknown gate kind {kind!r}")


def build_trotter_circuit(couplings: CouplingProfile, plan: TrotterPlan,
                          zeta: float = 0.0) -> NoisyCircuit:
    """First-order product-formula circuit, noise not yet attached.

    Each step applies, per bond i = 1..N-1 in ascending order, RXX(J_i dt)
    then RYY(J_i dt) on qubits (i-1, i); when zeta > 0, RZZ(2 zeta dt) on
    every neighbouring pair closes the step.
    """
    if zeta < 0:
        raise ValueError(f"zeta must be >= 0, got {zeta}")
    n = couplings.n_sites
    dt = plan.dt
    step_ops = []
    for i, j_i in enumerate(couplings.couplings):
        pair = (i, i + 1)
        theta = j_i * dt
        step_ops.append(GateOp(UnitaryGate(gate_matrix("RXX", theta), pair, kind="rxx")))
        step_ops.append(GateOp(UnitaryGate(gate_matrix("RYY", theta), pair, kind="ryy")))
    if zeta > 0:
        phi = 2.0 * zeta * dt
        for i in range(n - 1):
            step_ops.append(GateOp(UnitaryGate(gate_matrix("RZZ", phi), (i, i + 1), kind="rzz")))
    steps = [
        [GateOp(op.gate) for op in step_ops]  # fresh GateOp per step so channels stay per-step
        for _ in range(plan.n_steps)
    ]
    return NoisyCircuit(
        n_qubits=n, prep=[], steps=steps, plan=plan, couplings=couplings, zeta=zeta
    )


def prepare_initial_state(n_sites: int, kind: str, site: int = 1):
    """Initial ket plus the equivalent prep-gate list.

    kind="single_excitation": X on qubit site-1, giving |0..1..0>.
    kind="plus_on_first":     H on qubit 0, giving (|0..0> + |10..0>)/sqrt(2).
    """
    if kind == "single_excitation":
        if not 1 <= site <= n_sites:
            raise ValueError(f"site {site} out of range [1, {n_sites}]")
        gates = [UnitaryGate(gate_matrix("X"), (site - 1,), kind="x")]
    elif kind == "plus_on_first":
        gates = [UnitaryGate(gate_matrix("H"), (0,), kind="h")]
    else:
        raise ValueError(f"unknown initial-state kind {kind!r}")
    state = PureState.zero(n_sites)
    for g in gates:
        state = apply_unitary(state, g)
    return state, gates


def single_excitation_hamiltonian(couplings: CouplingProfile) -> np.ndarray:
    """N x N hopping matrix A with A[i, i+1] = A[i+1, i] = J_{i+1}.

    This is the effective Hamiltonian the theta = J dt circuit approximates
    in the one-excitation sector.
    """
    n = couplings.n_sites
    a = np.zeros((n, n))
    for i, j_i in enumerate(couplings.couplings):
        a[i, i + 1] = a[i + 1, i] = j_i
    return a


def exact_transfer_amplitude(couplings: CouplingProfile, t, source: int = 1,
                             target: int | None = None) -> np.ndarray | complex:
    """<target| e^{-iAt} |source> in the single-excitation sector (sites 1-based).

    Accepts scalar or array t; vectorized over the grid via one
    eigendecomposition.
    """
    n = couplings.n_sites
    if target is None:
        target = n
    if not (1 <= source <= n and 1 <= target <= n):
        raise ValueError("source/target site out of range")
    a = single_excitation_hamiltonian(couplings)
    evals, evecs = np.linalg.eigh(a)
    ts = np.asarray(t, dtype=float)
    phases = np.exp(-1j * np.outer(ts.reshape(-1), evals))
    amps = phases @ (evecs[target - 1, :] * evecs[source - 1, :].conj())
    if ts.ndim == 0:
        return complex(amps[0])
    return amps


def exact_sp_oracle(couplings: CouplingProfile, t) -> np.ndarray | float:
    """Exact end-to-end success probability |<N| e^{-iAt} |1>|^2."""
    amp = exact_transfer_amplitude(couplings, t)
    sp = np.abs(amp) ** 2
    if np.ndim(sp) == 0:
        return float(sp)
    return sp


def format_circuit(circuit: NoisyCircuit, max_steps: int = 1) -> str:
    """Small text diagram of the prep layer and the first `max_steps` steps."""
    lines = [
        f"{circuit.n_qubits}-qubit circuit, {len(circuit.steps)} steps, "
        f"dt = {circuit.plan.dt:.6g}, zeta = {circuit.zeta:g}"
    ]
    if circuit.prep:
        lines.append("prep:")
        for op in circuit.prep:
            lines.append(f"  {_fmt_op(op)}")
    for k, step in enumerate(circuit.steps[:max_steps]):
        lines.append(f"step {k + 1}:")
        for op in step:
            lines.append(f"  {_fmt_op(op)}")
    if len(circuit.steps) > max_steps:
        lines.append(f"... ({len(circuit.steps) - max_steps} more identical steps)")
    return "\n".join(lines)


def _fmt_op(op: GateOp) -> str:
    g = op.gate
    name = g.kind.upper() if g.kind else f"U{g.arity}"
    txt = f"{name} @ q{list(g.targets)}"
    if op.channels:
        kinds = ", ".join(f"{ch.arity}q-channel@" + str(list(tg)) for ch, tg in op.channels)
        txt += f"  -> {kinds}"
    return txt
