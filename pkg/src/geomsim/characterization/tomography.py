"""State and process tomography in the Pauli basis.

Process matrices follow E(rho) = sum_mn chi_mn P_m rho P_n^+ with the Pauli
strings ordered lexicographically over {I, X, Y, Z}, first qubit leftmost.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from ..quantum import LeakageWarning, computational_block

PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# readout assignment probabilities, rows = prepared level, columns = reported level
DEFAULT_CONFUSION = np.array([
    [0.96, 0.04, 0.00],
    [0.13, 0.85, 0.02],
    [0.04, 0.22, 0.74],
])

DEFAULT_SHOTS = 3000

# the single-qubit input quartet: |0>, (|0> - i|1>)/sqrt2, (|0> + |1>)/sqrt2, |1>
INPUT_QUARTET = (
    np.array([1, 0], dtype=complex),
    np.array([1, -1j], dtype=complex) / math.sqrt(2),
    np.array([1, 1], dtype=complex) / math.sqrt(2),
    np.array([0, 1], dtype=complex),
)


class TomographyError(ValueError):
    pass


def pauli_labels(n: int) -> list[str]:
    return ["".join(p) for p in itertools.product("IXYZ", repeat=n)]


def pauli_string(label: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for c in label:
        out = np.kron(out, PAULI_1Q[c])
    return out


def pauli_basis(n: int) -> np.ndarray:
    """Stack of the 4^n Pauli strings, shape (4^n, 2^n, 2^n)."""
    return np.array([pauli_string(lab) for lab in pauli_labels(n)])


# --------------------------------------------------------------------------
# measurement model


@dataclass(frozen=True)
class MeasurementModel:
    mode: Literal["exact", "sampled"] = "exact"
    shots: int = DEFAULT_SHOTS
    confusion: np.ndarray = field(default_factory=lambda: DEFAULT_CONFUSION.copy())
    correct_readout: bool = True
    project_psd: bool = False

    def __post_init__(self):
        if self.mode not in ("exact", "sampled"):
            raise ValueError(f"unknown measurement mode {self.mode!r}")
        c = np.asarray(self.confusion, dtype=float)
        if c.shape != (3, 3):
            raise ValueError("confusion matrix must be 3x3 (levels 0, 1, 2)")
        if np.any(c < 0) or np.max(np.abs(c.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("confusion rows must be probability vectors")
        object.__setattr__(self, "confusion", c)
        if self.mode == "sampled" and self.shots < 1:
            raise ValueError("sampled mode needs at least one shot")

    @classmethod
    def ideal_readout(cls, mode: str = "sampled", shots: int = DEFAULT_SHOTS) -> "MeasurementModel":
        return cls(mode=mode, shots=shots, confusion=np.eye(3))

    def register_confusion(self, n: int) -> np.ndarray:
        out = np.ones((1, 1))
        for _ in range(n):
            out = np.kron(out, self.confusion)
        return out

    def inverse_confusion(self, n: int) -> np.ndarray:
        c = self.confusion
        if abs(np.linalg.det(c)) < 1e-12 or np.linalg.cond(c) > 1e12:
            raise TomographyError("confusion matrix is singular; readout correction impossible")
        inv = np.linalg.inv(c)
        out = np.ones((1, 1))
        for _ in range(n):
            out = np.kron(out, inv)
        return out


def apply_confusion(probs: np.ndarray, model: MeasurementModel, n: int) -> np.ndarray:
    """True level distribution (length 3^n) -> reported distribution."""
    return probs @ model.register_confusion(n)


def correct_confusion(freqs: np.ndarray, model: MeasurementModel, n: int) -> np.ndarray:
    return freqs @ model.inverse_confusion(n)


# --------------------------------------------------------------------------
# state tomography


def _as_register_density(state, n: int) -> np.ndarray:
    m = np.asarray(state, dtype=complex)
    if m.ndim == 1:
        m = np.outer(m, m.conj())
    if m.shape not in ((2**n, 2**n), (3**n, 3**n)):
        raise TomographyError(f"state of shape {m.shape} does not fit {n} qubits")
    return m


def _qutrit_register(rho: np.ndarray, n: int) -> np.ndarray:
    """Embed a qubit-register density matrix into the qutrit register."""
    if rho.shape[0] == 3**n:
        return rho
    idx = np.array([int(np.ravel_multi_index(b, (3,) * n)) for b in np.ndindex(*(2,) * n)])
    out = np.zeros((3**n, 3**n), dtype=complex)
    out[np.ix_(idx, idx)] = rho
    return out


def project_block(state, n: int, warn_leakage: float = 0.1) -> tuple[np.ndarray, float]:
    """Computational-block density matrix (renormalized) and the weight that was outside it."""
    m = _as_register_density(state, n)
    if m.shape[0] == 2**n:
        tr = float(np.real(np.trace(m)))
        block, leak = m, 0.0
        if tr < 1.0:
            leak = 1.0 - tr
    else:
        block, leak = computational_block(m, n)
    if leak > warn_leakage:
        warnings.warn(f"leakage weight {leak:.3f} outside the computational block", LeakageWarning, stacklevel=3)
    return block / np.trace(block).real, leak


def nearest_psd(rho: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues and renormalize to unit trace."""
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise TomographyError("no positive weight left after eigenvalue clipping")
    return (v * (w / w.sum())) @ v.conj().T


_PRE_ROT = {
    # unitary mapping the measured Pauli eigenbasis onto Z before a level readout
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "Y": np.array([[1, -1j], [1, 1j]], dtype=complex) / math.sqrt(2),
    "Z": np.eye(2, dtype=complex),
}


def _setting_rotation(setting: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for c in setting:
        r = np.eye(3, dtype=complex)
        r[:2, :2] = _PRE_ROT[c]
        out = np.kron(out, r)
    return out


def _sampled_pauli_expectations(rho3: np.ndarray, n: int, model: MeasurementModel,
                                rng: np.random.Generator) -> dict[str, float]:
    """Estimate every Pauli expectation from simulated shots over the 3^n measurement settings."""
    levels = np.array(list(np.ndindex(*(3,) * n)))  # (3^n, n)
    comp = np.all(levels < 2, axis=1)
    sums: dict[str, list[float]] = {}
    for setting in itertools.product("XYZ", repeat=n):
        rot = _setting_rotation(setting)
        probs = np.clip(np.real(np.diag(rot @ rho3 @ rot.conj().T)), 0.0, None)
        probs = apply_confusion(probs / probs.sum(), model, n)
        counts = rng.multinomial(model.shots, probs / probs.sum())
        freqs = counts / model.shots
        if model.correct_readout:
            freqs = correct_confusion(freqs, model, n)
        p = freqs[comp]
        total = p.sum()
        if total <= 0:
            raise TomographyError("no shots landed in the computational block")
        p = p / total
        bits = levels[comp]
        # every Pauli string compatible with this setting (I on any subset)
        for mask in itertools.product((0, 1), repeat=n):
            label = "".join(setting[q] if mask[q] else "I" for q in range(n))
            sign = (-1.0) ** (bits @ np.array(mask))
            sums.setdefault(label, []).append(float(sign @ p))
    return {lab: float(np.mean(v)) for lab, v in sums.items()}


def qst(state, n_qubits: int, model: MeasurementModel | None = None,
        rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
    """Reconstruct the computational-block density matrix; returns (rho, leakage weight).

    Exact mode projects and renormalizes directly. Sampled mode simulates
    shot counts for every local Pauli setting, passes them through the
    readout confusion (and its inverse when correction is on) and rebuilds
    rho by linear inversion over the Pauli expectations.
    """
    model = model or MeasurementModel()
    n = n_qubits
    if model.mode == "exact":
        rho, leak = project_block(state, n)
        return (nearest_psd(rho) if model.project_psd else rho), leak
    if model.correct_readout:
        model.inverse_confusion(n)  # fail fast on a singular matrix
    rng = rng if rng is not None else np.random.default_rng()
    m = _as_register_density(state, n)
    leak = project_block(m, n, warn_leakage=np.inf)[1]
    m3 = _qutrit_register(m / np.trace(m).real, n)
    ev = _sampled_pauli_expectations(m3, n, model, rng)
    d = 2**n
    rho = np.zeros((d, d), dtype=complex)
    for lab in pauli_labels(n):
        e = 1.0 if lab == "I" * n else ev[lab]
        rho += e * pauli_string(lab)
    rho /= d
    if model.project_psd:
        rho = nearest_psd(rho)
    return rho, leak


# --------------------------------------------------------------------------
# process tomography


@dataclass(frozen=True)
class ChiMatrix:
    n_qubits: int
    matrix: np.ndarray
    tp_residual: float
    cp_min_eig: float

    def __post_init__(self):
        d = 4**self.n_qubits
        if self.matrix.shape != (d, d):
            raise ValueError(f"chi must be {d}x{d}")

    @property
    def labels(self) -> list[str]:
        return pauli_labels(self.n_qubits)

    @classmethod
    def from_matrix(cls, chi: np.ndarray, n: int) -> "ChiMatrix":
        chi = np.asarray(chi, dtype=complex)
        basis = pauli_basis(n)
        d = 2**n
        # sum_mn chi_mn P_n^+ P_m should be the identity for a trace-preserving map
        tp = np.einsum("mn,nij,mjk->ik", chi, np.conj(np.transpose(basis, (0, 2, 1))), basis)
        tp_res = float(np.linalg.norm(tp - np.eye(d)))
        cp = float(np.linalg.eigvalsh(0.5 * (chi + chi.conj().T))[0])
        return cls(n, chi, tp_res, cp)

    def to_dict(self, seed: int | None = None, config_hash: str | None = None) -> dict:
        out = {
            "n_qubits": self.n_qubits,
            "pauli_order": self.labels,
            "re": np.real(self.matrix).tolist(),
            "im": np.imag(self.matrix).tolist(),
            "tp_residual": self.tp_residual,
            "cp_min_eig": self.cp_min_eig,
        }
        if seed is not None:
            out["seed"] = int(seed)
        if config_hash is not None:
            out["config_hash"] = config_hash
        return out

    def to_json(self, path, **meta) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(**meta), fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "ChiMatrix":
        with open(path) as fh:
            d = json.load(fh)
        return cls.from_matrix(np.array(d["re"]) + 1j * np.array(d["im"]), int(d["n_qubits"]))


def chi_from_superoperator(sup: np.ndarray, n: int) -> np.ndarray:
    """chi from a row-stacked superoperator S (vec(A rho B) = (A kron B^T) vec(rho))."""
    d = 2**n
    # reshuffle so that A kron conj(B) becomes vec(A) vec(B)^+
    r = sup.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    v = pauli_basis(n).reshape(4**n, d * d).T  # columns are vec(P_m)
    return v.conj().T @ r @ v / d**2


def input_states(n: int) -> list[np.ndarray]:
    """All 4^n product kets from the single-qubit quartet, first qubit slowest."""
    out = []
    for combo in itertools.product(INPUT_QUARTET, repeat=n):
        k = np.ones(1, dtype=complex)
        for v in combo:
            k = np.kron(k, v)
        out.append(k)
    return out


def qpt(channel: Callable[[np.ndarray], np.ndarray], n_qubits: int, model: MeasurementModel | None = None,
        rng: np.random.Generator | None = None, map_fn=map) -> ChiMatrix:
    """Linear-inversion process tomography over the 4^n product inputs.

    `channel` maps a 2^n x 2^n input density matrix to an output on the
    qubit (2^n) or qutrit (3^n) register. `map_fn` lets callers fan the
    inputs out over a pool; results are consumed in input order.
    """
    model = model or MeasurementModel()
    n = n_qubits
    kets = input_states(n)
    rho_in = [np.outer(k, k.conj()) for k in kets]
    outs = list(map_fn(channel, rho_in))
    if model.mode == "sampled":
        rng = rng if rng is not None else np.random.default_rng()
        rho_out = [qst(o, n, model, child)[0] for o, child in zip(outs, rng.spawn(len(outs)))]
    else:
        rho_out = [qst(o, n, model)[0] for o in outs]
    a_in = np.array([r.ravel() for r in rho_in]).T  # columns vec(rho_in)
    a_out = np.array([r.ravel() for r in rho_out]).T
    cond = np.linalg.cond(a_in)
    if not np.isfinite(cond) or cond > 1e10:
        raise TomographyError(f"input set is not informationally complete (condition number {cond:.3g})")
    sup = a_out @ np.linalg.inv(a_in)
    return ChiMatrix.from_matrix(chi_from_superoperator(sup, n), n)


def ideal_chi(u: np.ndarray) -> ChiMatrix:
    """Rank-one chi of a unitary: v_m = Tr(P_m^+ U) / d."""
    u = np.asarray(u, dtype=complex)
    d = u.shape[0]
    n = int(round(math.log2(d)))
    if 2**n != d or u.shape != (d, d):
        raise ValueError("ideal_chi needs a 2^n x 2^n matrix")
    if np.max(np.abs(u.conj().T @ u - np.eye(d))) > 1e-10:
        raise ValueError("ideal_chi needs a unitary")
    v = np.einsum("mij,ij->m", pauli_basis(n).conj(), u) / d
    return ChiMatrix.from_matrix(np.outer(v, v.conj()), n)


def process_fidelity(chi_exp: ChiMatrix | np.ndarray, chi_id: ChiMatrix | np.ndarray) -> float:
    a = chi_exp.matrix if isinstance(chi_exp, ChiMatrix) else np.asarray(chi_exp)
    b = chi_id.matrix if isinstance(chi_id, ChiMatrix) else np.asarray(chi_id)
    if a.shape != b.shape:
        raise ValueError(f"chi shapes differ: {a.shape} vs {b.shape}")
    f = np.trace(b @ a)
    if abs(f.imag) > 1e-8:
        raise ValueError(f"process fidelity has an imaginary part {f.imag:.3g}")
    return float(f.real)


def basis_and_plus_states(n: int) -> list[np.ndarray]:
    """The 2^n computational kets followed by the uniform superposition |+...+>."""
    d = 2**n
    kets = [np.eye(d, dtype=complex)[i] for i in range(d)]
    kets.append(np.full(d, 1.0 / math.sqrt(d), dtype=complex))
    return kets


def average_state_fidelity(outputs: Sequence[np.ndarray], targets: Sequence[np.ndarray],
                           model: MeasurementModel | None = None,
                           rng: np.random.Generator | None = None) -> tuple[float, np.ndarray]:
    """Mean overlap <psi|rho|psi> between reconstructed outputs and target kets.

    Each output goes through `qst` under `model`, so exact mode projects onto
    the computational block and renormalizes exactly as process tomography does.
    """
    if len(outputs) != len(targets):
        raise ValueError("one target per output")
    model = model or MeasurementModel()
    n = int(round(math.log2(len(targets[0]))))
    children = rng.spawn(len(outputs)) if (model.mode == "sampled" and rng is not None) else [rng] * len(outputs)
    fids = np.empty(len(outputs))
    for i, (out, psi, child) in enumerate(zip(outputs, targets, children)):
        rho, _ = qst(out, n, model, child)
        fids[i] = float(np.real(np.vdot(psi, rho @ psi)))
    return float(fids.mean()), fids
