"""Reference and interleaved randomized benchmarking on a qutrit register.

Single-qubit Clifford primitives are ideal rotations on the {0,1} block of
each transmon followed by idle decoherence for their nominal duration; the
entangling primitive is a full superoperator of the simulated gate
(including its leakage), so population pumped into |2> is carried along
the sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import curve_fit

from ..device import DeviceSpec
from ..dynamics import CollapseSet
from ..gates import CalibratedGate, gate_collapse, ideal_phase_gate, register_superoperator
from ..quantum import HilbertLayout, phase_rotation
from .clifford import Clifford, clifford_inverse, clifford_sample, primitive_unitary

SINGLE_GATE_NS = 20.0


class RBFitError(RuntimeError):
    def __init__(self, message, data=None):
        super().__init__(message)
        self.data = data


def liouvillian(h: np.ndarray, collapse: CollapseSet | None) -> np.ndarray:
    """Row-stacked generator: vec(d rho/dt) = L vec(rho); rates in 1/us, time in ns."""
    d = h.shape[0]
    eye = np.eye(d)
    out = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for op, rate in (collapse.channels if collapse is not None else ()):
        g = rate * 1e-3
        a = op.matrix
        ada = a.conj().T @ a
        out += g * (np.kron(a, a.conj()) - 0.5 * np.kron(ada, eye) - 0.5 * np.kron(eye, ada.T))
    return out


def _qutrit_embed_1q(u2: np.ndarray) -> np.ndarray:
    u = np.eye(3, dtype=complex)
    u[:2, :2] = u2
    return u


def _register_unitary(u_block: np.ndarray, n: int) -> np.ndarray:
    """Extend a 2^n unitary to the qutrit register, identity on everything with a |2>."""
    idx = [int(np.ravel_multi_index(b, (3,) * n)) for b in np.ndindex(*(2,) * n)]
    u = np.eye(3**n, dtype=complex)
    u[np.ix_(idx, idx)] = u_block
    return u


def _sup(u: np.ndarray) -> np.ndarray:
    return np.kron(u, u.conj())


class RBSimulator:
    """Noise model for RB sequences on an n-qubit (n = 1, 2) qutrit register.

    `gate_sup` is the 81 x 81 superoperator of the physical entangling gate
    on the two-qutrit register (resonator traced out); None means ideal.
    Its ideal action must be diag(-1, 1, 1, 1) on the qubit block; a virtual
    Z on both qubits turns it into the textbook CZ used by the Clifford table.
    """

    def __init__(self, n: int, idle_generator: np.ndarray | None = None, gate_sup: np.ndarray | None = None,
                 depolarizing: float = 0.0, single_gate_ns: float = SINGLE_GATE_NS):
        if n not in (1, 2):
            raise ValueError("RB is implemented for one and two qubits")
        self.n = n
        self.dim = 3**n
        self.single_gate_ns = single_gate_ns
        self.depolarizing = float(depolarizing)
        self._idle_gen = idle_generator
        self._idle_cache: dict[float, np.ndarray] = {}
        ideal_gate = _register_unitary(ideal_phase_gate(2), 2) if n == 2 else None
        self.gate_sup = gate_sup if gate_sup is not None else (_sup(ideal_gate) if n == 2 else None)
        if n == 2:
            zz = np.kron(phase_rotation(math.pi), phase_rotation(math.pi))
            self.cz_sup = _sup(zz) @ self.gate_sup
        idx = [int(np.ravel_multi_index(b, (3,) * n)) for b in np.ndindex(*(2,) * n)]
        self._block = np.array(idx)

    @classmethod
    def noiseless(cls, n: int = 2) -> "RBSimulator":
        return cls(n)

    @classmethod
    def from_gate(cls, gate: CalibratedGate, split_dt: float = 2.5, collapse: CollapseSet | None = None) -> "RBSimulator":
        """Noisy simulator using the calibrated gate's own decoherence parameters."""
        if gate.config.n != 2:
            raise ValueError("two-qubit gate required")
        collapse = collapse or gate_collapse(gate)
        sup = register_superoperator(gate.schedule, gate.device, collapse, levels=3, split_dt=split_dt)
        return cls(2, idle_generator_for(gate.device, gate.config.labels), sup)

    def idle(self, duration: float) -> np.ndarray | None:
        if self._idle_gen is None or duration <= 0:
            return None
        key = round(float(duration), 9)
        if key not in self._idle_cache:
            self._idle_cache[key] = expm(self._idle_gen * duration)
        return self._idle_cache[key]

    def _apply_unitary(self, rho, u):
        return u @ rho @ u.conj().T

    def _apply_sup(self, rho, s):
        d = rho.shape[0]
        return (s @ rho.reshape(-1)).reshape(d, d)

    def _depolarize(self, rho):
        if not self.depolarizing:
            return rho
        # rho_block -> (1 - d) rho_block + d Tr(rho_block) I / 2^n; the rest is untouched
        b = self._block
        blk = rho[np.ix_(b, b)]
        out = rho.copy()
        out[np.ix_(b, b)] = (1.0 - self.depolarizing) * blk + self.depolarizing * np.trace(blk) * np.eye(len(b)) / len(b)
        return out

    def apply_clifford(self, rho: np.ndarray, c: Clifford) -> np.ndarray:
        for layer in c.layers:
            if layer[0] == "cz":
                rho = self._apply_sup(rho, self.cz_sup)
                continue
            seqs = layer[1:]
            u = np.ones((1, 1), dtype=complex)
            for seq in seqs:
                u1 = np.eye(2, dtype=complex)
                for name in seq:
                    u1 = primitive_unitary(name) @ u1
                u = np.kron(u, _qutrit_embed_1q(u1))
            rho = self._apply_unitary(rho, u)
            idle = self.idle(self.single_gate_ns * max(len(s) for s in seqs))
            if idle is not None:
                rho = self._apply_sup(rho, idle)
        return self._depolarize(rho)

    def apply_gate(self, rho: np.ndarray) -> np.ndarray:
        """The gate under test, in its native (phase-on-|00>) convention."""
        return self._apply_sup(rho, self.gate_sup)

    def ground(self) -> np.ndarray:
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        rho[0, 0] = 1.0
        return rho


def idle_generator_for(device: DeviceSpec, labels: Sequence[str]) -> np.ndarray:
    layout = HilbertLayout.qubits_only(len(labels))
    col = CollapseSet.from_device(device, labels, layout, resonator=False)
    return liouvillian(np.zeros((layout.dim, layout.dim)), col)


# --------------------------------------------------------------------------
# sequences


def sequence_rng(seed: int, m: int, j: int) -> np.random.Generator:
    """Independent stream for sequence j at length m, whatever order sequences run in."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(m), int(j))))


def run_sequence(sim: RBSimulator, m: int, rng: np.random.Generator, interleave: bool = False) -> float:
    """Ground-state survival of one random sequence of m Cliffords plus recovery."""
    rho = sim.ground()
    total = np.eye(2**sim.n, dtype=complex)
    gate_ideal = ideal_phase_gate(2) if sim.n == 2 else None
    for _ in range(m):
        c = clifford_sample(sim.n, rng)
        rho = sim.apply_clifford(rho, c)
        total = c.unitary @ total
        if interleave:
            rho = sim.apply_gate(rho)
            total = gate_ideal @ total
    rec = clifford_inverse(total)
    rho = sim.apply_clifford(rho, rec)
    return float(np.real(rho[0, 0]))


def exact_recovery(sim: RBSimulator, m: int, rng: np.random.Generator, interleave: bool = False) -> np.ndarray:
    """Ideal composite of a sequence including its recovery (identity up to phase when correct)."""
    total = np.eye(2**sim.n, dtype=complex)
    for _ in range(m):
        c = clifford_sample(sim.n, rng)
        total = c.unitary @ total
        if interleave:
            total = ideal_phase_gate(2) @ total
    return clifford_inverse(total).unitary @ total


# --------------------------------------------------------------------------
# fitting


def rb_decay(m, a, b, p):
    return a * np.power(p, m) + b


def fit_rb(lengths: Sequence[int], means: Sequence[float], n: int) -> tuple[float, float, float]:
    """Least-squares fit of A p^m + B with B seeded at 1/4^n."""
    m = np.asarray(lengths, dtype=float)
    y = np.asarray(means, dtype=float)
    b0 = 1.0 / 4**n
    if np.allclose(y, y[0], atol=1e-9):
        # flat data: no decay to resolve (noiseless sequences)
        return float(y[0] - b0), b0, 1.0
    ratio = np.clip((y[-1] - b0) / max(y[0] - b0, 1e-12), 1e-6, 1.0)
    p0 = float(np.clip(ratio ** (1.0 / max(m[-1] - m[0], 1.0)), 0.5, 0.9999))
    try:
        popt, _ = curve_fit(rb_decay, m, y, p0=(max(y[0] - b0, 0.1), b0, p0),
                            bounds=([0.0, 0.0, 0.0], [1.5, 1.0, 1.0]), maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise RBFitError(f"RB fit did not converge: {exc}", data=np.column_stack([m, y])) from exc
    return tuple(float(x) for x in popt)


@dataclass
class RBCurve:
    lengths: np.ndarray
    means: np.ndarray
    sems: np.ndarray
    k: int
    a: float
    b: float
    p: float
    survivals: np.ndarray = field(repr=False, default=None)

    def csv_rows(self):
        yield ("m", "mean_p00", "sem", "k")
        for m, mu, se in zip(self.lengths, self.means, self.sems):
            yield (int(m), float(mu), float(se), int(self.k))


@dataclass
class RBResult:
    reference: RBCurve
    interleaved: RBCurve | None
    seed: int

    @property
    def p_ref(self) -> float:
        return self.reference.p

    @property
    def p_interleaved(self) -> float | None:
        return None if self.interleaved is None else self.interleaved.p

    @property
    def fidelity(self) -> float | None:
        """Interleaved two-qubit gate fidelity 1 - 0.75 (1 - p_gate / p_ref)."""
        if self.interleaved is None:
            return None
        return 1.0 - 0.75 * (1.0 - self.p_interleaved / self.p_ref)


def rb_curve(sim: RBSimulator, m_list: Sequence[int], k: int, seed: int, interleave: bool = False,
             map_fn=map) -> RBCurve:
    if not m_list:
        raise ValueError("need at least one sequence length")
    if k < 2:
        raise ValueError("need at least two sequences per length")
    jobs = [(m, j) for m in m_list for j in range(k)]
    surv = list(map_fn(lambda mj: run_sequence(sim, mj[0], sequence_rng(seed, *mj), interleave), jobs))
    s = np.array(surv).reshape(len(m_list), k)
    means = s.mean(axis=1)
    sems = s.std(axis=1, ddof=1) / math.sqrt(k)
    a, b, p = fit_rb(m_list, means, sim.n)
    return RBCurve(np.asarray(m_list), means, sems, k, a, b, p, s)


def rb_run(sim: RBSimulator, m_list: Sequence[int], k_sequences: int, seed: int, interleaved: bool = True,
           map_fn=map) -> RBResult:
    """Reference run and (optionally) the interleaved run over the same random sequences."""
    ref = rb_curve(sim, m_list, k_sequences, seed, False, map_fn)
    inter = rb_curve(sim, m_list, k_sequences, seed, True, map_fn) if interleaved and sim.n == 2 else None
    return RBResult(ref, inter, seed)
