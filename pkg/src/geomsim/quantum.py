"""Dense tensor algebra on qutrit x resonator product spaces.

Every composite space in the package is an ordered product of three-level
qubits followed by a single truncated bosonic mode. States and operators are
thin wrappers around complex numpy arrays; all functions here are pure.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence, Union

import numpy as np

# tolerance hierarchy used across the package
ATOL_ALGEBRA = 1e-12
ATOL_HERMITIAN = 1e-10
ATOL_POSITIVE = 1e-8

QUBIT_DIM = 3


class LayoutError(ValueError):
    """Raised when operands live on incompatible Hilbert spaces."""


class TruncationWarning(UserWarning):
    pass


class LeakageWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered subsystem dimensions; qubits are qutrits, the resonator is a Fock ladder."""

    subsystem_dims: tuple[int, ...]
    resonator_index: int | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.subsystem_dims)
        object.__setattr__(self, "subsystem_dims", dims)
        if not dims:
            raise LayoutError("layout needs at least one subsystem")
        r = self.resonator_index
        if r is not None and not 0 <= r < len(dims):
            raise LayoutError(f"resonator index {r} out of range")
        for i, d in enumerate(dims):
            if i == r:
                if d < 2:
                    raise LayoutError(f"Fock truncation must be >= 2, got {d}")
            elif d != QUBIT_DIM:
                raise LayoutError(f"qubit subsystem {i} must have 3 levels, got {d}")

    @classmethod
    def with_resonator(cls, n_qubits: int, n_fock: int) -> "HilbertLayout":
        """Qubits in ascending label order, resonator last."""
        return cls((QUBIT_DIM,) * n_qubits + (n_fock,), resonator_index=n_qubits)

    @classmethod
    def qubits_only(cls, n_qubits: int) -> "HilbertLayout":
        return cls((QUBIT_DIM,) * n_qubits, resonator_index=None)

    @property
    def dim(self) -> int:
        return math.prod(self.subsystem_dims)

    @property
    def n_fock(self) -> int | None:
        if self.resonator_index is None:
            return None
        return self.subsystem_dims[self.resonator_index]

    @property
    def qubit_sites(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.subsystem_dims)) if i != self.resonator_index)

    @property
    def n_qubits(self) -> int:
        return len(self.qubit_sites)

    def index(self, levels: Sequence[int]) -> int:
        """Flat basis index of a product basis state (resonator level included)."""
        if len(levels) != len(self.subsystem_dims):
            raise LayoutError("one level per subsystem required")
        return int(np.ravel_multi_index(tuple(levels), self.subsystem_dims))

    def computational_indices(self) -> np.ndarray:
        """Flat indices of |s, 0_r> for s in {0,1}^n, in binary order (first qubit most significant)."""
        out = []
        for bits in np.ndindex(*(2,) * self.n_qubits):
            levels = list(bits)
            if self.resonator_index is not None:
                levels.insert(self.resonator_index, 0)
            out.append(self.index(levels))
        return np.array(out, dtype=int)

    def reduced(self, keep: Iterable[int]) -> "HilbertLayout":
        keep = sorted(keep)
        r = self.resonator_index
        new_r = keep.index(r) if r in keep else None
        return HilbertLayout(tuple(self.subsystem_dims[k] for k in keep), new_r)


def _check_square(m: np.ndarray, dim: int):
    if m.shape != (dim, dim):
        raise LayoutError(f"expected a {dim}x{dim} matrix, got {m.shape}")


@dataclass(frozen=True)
class Operator:
    layout: HilbertLayout
    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        _check_square(m, self.layout.dim)
        if self.hermitian and np.max(np.abs(m - m.conj().T), initial=0.0) > ATOL_ALGEBRA * max(1.0, np.max(np.abs(m))):
            raise ValueError("operator flagged Hermitian is not Hermitian")
        object.__setattr__(self, "matrix", m)

    def dag(self) -> "Operator":
        return Operator(self.layout, self.matrix.conj().T, self.hermitian)

    def __add__(self, other: "Operator") -> "Operator":
        _same_layout(self.layout, other.layout)
        return Operator(self.layout, self.matrix + other.matrix, self.hermitian and other.hermitian)

    def __matmul__(self, other: "Operator") -> "Operator":
        _same_layout(self.layout, other.layout)
        return Operator(self.layout, self.matrix @ other.matrix)

    def scaled(self, c: complex) -> "Operator":
        return Operator(self.layout, c * self.matrix, self.hermitian and np.isreal(c))


@dataclass(frozen=True)
class StateVector:
    layout: HilbertLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.amplitudes, dtype=complex).ravel()
        if v.shape[0] != self.layout.dim:
            raise LayoutError(f"state has {v.shape[0]} amplitudes, layout needs {self.layout.dim}")
        object.__setattr__(self, "amplitudes", v)

    @classmethod
    def normalized(cls, layout: HilbertLayout, amplitudes) -> "StateVector":
        v = np.asarray(amplitudes, dtype=complex).ravel()
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(layout, v / n)

    @classmethod
    def basis(cls, layout: HilbertLayout, levels: Sequence[int]) -> "StateVector":
        v = np.zeros(layout.dim, dtype=complex)
        v[layout.index(levels)] = 1.0
        return cls(layout, v)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_density(self) -> "DensityOperator":
        return DensityOperator(self.layout, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityOperator:
    layout: HilbertLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        _check_square(m, self.layout.dim)
        object.__setattr__(self, "matrix", m)

    def validate(self, trace_tol: float = 1e-8) -> "DensityOperator":
        """Check Hermiticity, unit trace and positivity; returns self."""
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > ATOL_HERMITIAN:
            raise ValueError("density operator is not Hermitian")
        if abs(np.trace(m) - 1.0) > trace_tol:
            raise ValueError(f"density operator trace {np.trace(m).real:.3g} != 1")
        if np.linalg.eigvalsh(m)[0] < -ATOL_POSITIVE:
            raise ValueError("density operator has a negative eigenvalue")
        return self

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))


StateLike = Union[StateVector, DensityOperator, np.ndarray]


def _same_layout(a: HilbertLayout, b: HilbertLayout):
    if a != b:
        raise LayoutError(f"layout mismatch: {a.subsystem_dims} vs {b.subsystem_dims}")


# --------------------------------------------------------------------------
# single-subsystem building blocks


def ladder(dim: int) -> np.ndarray:
    """Bare array form of the truncated lowering operator."""
    if dim < 2:
        raise LayoutError(f"ladder operator needs dim >= 2, got {dim}")
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def single_mode_layout(dim: int) -> HilbertLayout:
    return HilbertLayout((dim,), resonator_index=0)


def lowering_op(dim: int) -> Operator:
    """Truncated lowering operator with sqrt(m) on the first superdiagonal."""
    return Operator(single_mode_layout(dim), ladder(dim))


def number_op(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def projector(dim: int, level: int) -> np.ndarray:
    p = np.zeros((dim, dim), dtype=complex)
    p[level, level] = 1.0
    return p


def transition(dim: int, to: int, frm: int) -> np.ndarray:
    """|to><frm| on one subsystem."""
    t = np.zeros((dim, dim), dtype=complex)
    t[to, frm] = 1.0
    return t


def qubit_rotation(angle: float, axis: float = 0.0, dim: int = QUBIT_DIM) -> np.ndarray:
    """Rotation by `angle` about the xy-plane axis at angle `axis` from x, acting on {|0>,|1>}.

    exp(-i angle/2 (cos(axis) X + sin(axis) Y)); higher levels are untouched.
    """
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    r = np.eye(dim, dtype=complex)
    r[0, 0] = c
    r[1, 1] = c
    r[0, 1] = -1j * s * np.exp(-1j * axis)
    r[1, 0] = -1j * s * np.exp(1j * axis)
    return r


def phase_rotation(phi: float, dim: int = QUBIT_DIM) -> np.ndarray:
    """Z-type frame rotation exp(i phi n): |m> picks up exp(i m phi)."""
    return np.diag(np.exp(1j * phi * np.arange(dim)))


def embed(op, site: int, layout: HilbertLayout) -> Operator:
    """Place a single-subsystem operator at `site`, identity elsewhere."""
    m = op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    dims = layout.subsystem_dims
    if not 0 <= site < len(dims):
        raise LayoutError(f"site {site} out of range for {len(dims)} subsystems")
    if m.shape != (dims[site], dims[site]):
        raise LayoutError(f"operator of shape {m.shape} does not fit subsystem of dim {dims[site]}")
    left = math.prod(dims[:site])
    right = math.prod(dims[site + 1:])
    full = np.kron(np.kron(np.eye(left), m), np.eye(right))
    return Operator(layout, full)


def kron(*mats) -> np.ndarray:
    return reduce(np.kron, mats)


def coherent_state(alpha: complex, n_fock: int, warn_tail: float = 1e-3) -> StateVector:
    """Truncated coherent state on a lone resonator; the Poisson tail is reported.

    The discarded weight beyond ``n_fock`` levels is stored on the returned
    object's ``truncation_weight`` attribute and triggers a warning above
    ``warn_tail``.
    """
    if n_fock < 2:
        raise LayoutError(f"Fock truncation must be >= 2, got {n_fock}")
    layout = single_mode_layout(n_fock)
    n = np.arange(n_fock)
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    mag = abs(alpha)
    if mag == 0:
        amps = np.zeros(n_fock, dtype=complex)
        amps[0] = 1.0
        tail = 0.0
    else:
        amps = np.exp(n * math.log(mag) - 0.5 * log_fact) * np.exp(1j * np.angle(alpha) * n)
        kept = float(np.sum(np.exp(-mag**2) * np.abs(amps) ** 2))
        tail = max(0.0, 1.0 - kept)
    if tail > warn_tail:
        warnings.warn(f"coherent state |{mag:.3g}> loses {tail:.2e} beyond {n_fock} levels", TruncationWarning, stacklevel=2)
    state = StateVector.normalized(layout, amps)
    object.__setattr__(state, "truncation_weight", tail)
    return state


# --------------------------------------------------------------------------
# expectation values, reductions, metrics


def _as_matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)


def expectation(op, state: StateLike) -> complex:
    """<psi|O|psi> for kets, Tr(O rho) for density operators."""
    m = _as_matrix(op)
    if isinstance(op, Operator) and isinstance(state, (StateVector, DensityOperator)):
        _same_layout(op.layout, state.layout)
    if isinstance(state, StateVector):
        v = state.amplitudes
        return complex(np.vdot(v, m @ v))
    rho = state.matrix if isinstance(state, DensityOperator) else np.asarray(state, dtype=complex)
    if rho.ndim == 1:
        return complex(np.vdot(rho, m @ rho))
    if rho.shape != m.shape:
        raise LayoutError(f"operator {m.shape} and state {rho.shape} do not match")
    # Tr(O rho) without forming the product
    return complex(np.einsum("ij,ji->", m, rho))


def partial_trace(rho, keep: Iterable[int], layout: HilbertLayout | None = None) -> DensityOperator:
    """Reduced state on the subsystems in `keep` (ordering follows the layout)."""
    if isinstance(rho, DensityOperator):
        layout = rho.layout
        m = rho.matrix
    else:
        if layout is None:
            raise LayoutError("a layout is required for bare arrays")
        m = np.asarray(rho, dtype=complex)
    keep = sorted(set(keep))
    if not keep:
        raise LayoutError("partial trace needs at least one kept subsystem")
    dims = layout.subsystem_dims
    if keep[0] < 0 or keep[-1] >= len(dims):
        raise LayoutError(f"invalid subsystem indices {keep}")
    n = len(dims)
    t = m.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d = math.prod(dims[i] for i in keep)
    return DensityOperator(layout.reduced(keep), reduced.reshape(d, d))


def computational_block(rho: np.ndarray, n_qubits: int) -> tuple[np.ndarray, float]:
    """Project a qutrit-register density matrix onto {0,1}^n; returns (block, leakage weight)."""
    rho = np.asarray(rho, dtype=complex)
    idx = np.array([int(np.ravel_multi_index(b, (3,) * n_qubits)) for b in np.ndindex(*(2,) * n_qubits)])
    block = rho[np.ix_(idx, idx)]
    kept = float(np.real(np.trace(block)))
    total = float(np.real(np.trace(rho)))
    return block, total - kept


def _density_matrix(state) -> np.ndarray:
    if isinstance(state, DensityOperator):
        return state.matrix
    if isinstance(state, StateVector):
        v = state.amplitudes
        return np.outer(v, v.conj())
    m = np.asarray(state, dtype=complex)
    if m.ndim == 1:
        return np.outer(m, m.conj())
    return m


def _check_psd(m: np.ndarray, name: str):
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if w[0] < -ATOL_POSITIVE:
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {w[0]:.3g})")
    return w


_SIGMA_YY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


def concurrence(rho) -> float:
    """Wootters concurrence of a two-qubit state.

    Qutrit-pair inputs (9x9) are projected onto the {0,1} block and
    renormalized; a leakage weight above 0.1 emits a warning.
    """
    m = _density_matrix(rho)
    if m.shape == (9, 9):
        m, leak = computational_block(m, 2)
        if leak > 0.1:
            warnings.warn(f"leakage weight {leak:.3f} outside the qubit block", LeakageWarning, stacklevel=2)
        m = m / np.trace(m).real
    if m.shape != (4, 4):
        raise LayoutError(f"concurrence needs a two-qubit state, got shape {m.shape}")
    _check_psd(m, "rho")
    # lambda_i are the singular values of sqrt(rho) sqrt(rho~); the SVD keeps
    # the small ones accurate where the eigenvalues of rho rho~ would not
    root = _psd_sqrt(m)
    flipped_root = _SIGMA_YY @ root.conj() @ _SIGMA_YY
    lam = np.linalg.svd(root @ flipped_root, compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    # eigenvalues at round-off level are zeros; their square roots would not be
    w = np.where(w < 1e-14 * max(w[-1], 1e-300), 0.0, w)
    return (v * np.sqrt(w)) @ v.conj().T


def state_fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.

    Kets are accepted for either argument; a pure argument takes the
    <psi|rho|psi> shortcut.
    """
    if isinstance(rho, (StateVector, DensityOperator)) and isinstance(sigma, (StateVector, DensityOperator)):
        _same_layout(rho.layout, sigma.layout)
    for pure, mixed in ((sigma, rho), (rho, sigma)):
        v = pure.amplitudes if isinstance(pure, StateVector) else None
        if v is None and isinstance(pure, np.ndarray) and pure.ndim == 1:
            v = pure
        if v is not None:
            m = _density_matrix(mixed)
            _check_psd(m, "state")
            return float(np.clip(np.real(np.vdot(v, m @ v)), 0.0, 1.0))
    a = _density_matrix(rho)
    b = _density_matrix(sigma)
    if a.shape != b.shape:
        raise LayoutError(f"shape mismatch {a.shape} vs {b.shape}")
    _check_psd(a, "rho")
    _check_psd(b, "sigma")
    # Tr sqrt(sqrt(a) b sqrt(a)) is the nuclear norm of sqrt(a) sqrt(b)
    nuclear = np.sum(np.linalg.svd(_psd_sqrt(a) @ _psd_sqrt(b), compute_uv=False))
    return float(np.clip(nuclear**2, 0.0, 1.0))


def pure_state_fidelity_general(rho, psi: np.ndarray) -> float:
    """General Uhlmann path evaluated for a pure target; used to cross-check the shortcut."""
    return state_fidelity(_density_matrix(rho), np.outer(psi, np.conj(psi)))
