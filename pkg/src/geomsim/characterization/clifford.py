"""Single- and two-qubit Clifford groups built from X/Y primitives and CZ.

The two-qubit group is enumerated through four classes: two independent
single-qubit Cliffords followed by nothing (576 elements), one CZ plus an
S1 layer (CNOT-like, 5184), two CZs (iSWAP-like, 5184) or three CZs
(SWAP-like, 576). Every element carries its primitive decomposition so
that noisy simulations and gate tallies use the same circuit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

PRIMITIVES = ("I", "X", "Y", "X/2", "-X/2", "Y/2", "-Y/2")

_PRIM_ROT = {
    # (rotation angle, axis angle from x)
    "I": (0.0, 0.0),
    "X": (math.pi, 0.0),
    "Y": (math.pi, math.pi / 2),
    "X/2": (math.pi / 2, 0.0),
    "-X/2": (-math.pi / 2, 0.0),
    "Y/2": (math.pi / 2, math.pi / 2),
    "-Y/2": (-math.pi / 2, math.pi / 2),
}

# time-ordered primitive sequences for the 24 single-qubit Cliffords
C1 = (
    ("I",), ("X",), ("Y",), ("Y", "X"),
    ("X/2", "Y/2"), ("X/2", "-Y/2"), ("-X/2", "Y/2"), ("-X/2", "-Y/2"),
    ("Y/2", "X/2"), ("Y/2", "-X/2"), ("-Y/2", "X/2"), ("-Y/2", "-X/2"),
    ("X/2",), ("-X/2",), ("Y/2",), ("-Y/2",),
    ("-X/2", "Y/2", "X/2"), ("-X/2", "-Y/2", "X/2"),
    ("X", "Y/2"), ("X", "-Y/2"), ("Y", "X/2"), ("Y", "-X/2"),
    ("X/2", "Y/2", "X/2"), ("-X/2", "Y/2", "-X/2"),
)
S1 = (("I",), ("Y/2", "X/2"), ("-X/2", "-Y/2"))
S1_X2 = (("X/2",), ("X/2", "Y/2", "X/2"), ("-Y/2",))
S1_Y2 = (("Y/2",), ("-X/2", "-Y/2", "X/2"), ("Y", "X/2"))

N_CLIFFORD_1Q = 24
N_CLIFFORD_2Q = 11520

CZ_MATRIX = np.diag([1, 1, 1, -1]).astype(complex)


def primitive_unitary(name: str) -> np.ndarray:
    angle, axis = _PRIM_ROT[name]
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -1j * s * np.exp(-1j * axis)], [-1j * s * np.exp(1j * axis), c]])


def sequence_unitary(seq: Sequence[str]) -> np.ndarray:
    u = np.eye(2, dtype=complex)
    for name in seq:
        u = primitive_unitary(name) @ u
    return u


def phase_key(u: np.ndarray, decimals: int = 6) -> bytes:
    """Hashable fingerprint of a matrix up to global phase."""
    flat = u.ravel()
    k = int(np.argmax(np.abs(flat) > 1e-6))
    v = flat * np.exp(-1j * np.angle(flat[k]))
    v = np.round(v, decimals) + 0.0  # clear negative zeros
    return np.concatenate([v.real, v.imag]).tobytes()


# A layer is ("1q", seq_q0, seq_q1) or ("cz",); two-qubit circuits are tuples of layers.
Layer = tuple


@dataclass(frozen=True)
class Clifford:
    n_qubits: int
    index: int
    layers: tuple
    unitary: np.ndarray

    @property
    def n_single(self) -> int:
        """Primitive single-qubit gates, identities counted as idle slots."""
        total = 0
        for layer in self.layers:
            if layer[0] == "1q":
                total += sum(len(s) for s in layer[1:])
        return total

    @property
    def n_cz(self) -> int:
        return sum(1 for layer in self.layers if layer[0] == "cz")


def _layers_unitary(layers) -> np.ndarray:
    u = np.eye(4, dtype=complex)
    for layer in layers:
        if layer[0] == "cz":
            u = CZ_MATRIX @ u
        else:
            u = np.kron(sequence_unitary(layer[1]), sequence_unitary(layer[2])) @ u
    return u


def two_qubit_layers(index: int) -> tuple:
    """Primitive layers of two-qubit Clifford number `index` (0 <= index < 11520)."""
    if not 0 <= index < N_CLIFFORD_2Q:
        raise IndexError(index)
    a, rest = divmod(index, 480)
    b, cls = divmod(rest, 20)
    layers = [("1q", C1[a], C1[b])]
    if cls == 0:
        pass
    elif cls == 1:
        layers += [("cz",), ("1q", ("-Y/2",), ("Y/2",)), ("cz",), ("1q", ("Y/2",), ("-Y/2",)), ("cz",),
                   ("1q", (), ("Y/2",))]
    elif cls <= 10:
        i, j = divmod(cls - 2, 3)
        layers += [("cz",), ("1q", S1[i], S1_Y2[j])]
    else:
        i, j = divmod(cls - 11, 3)
        layers += [("cz",), ("1q", ("Y/2",), ("-X/2",)), ("cz",), ("1q", S1_Y2[i], S1_X2[j])]
    return tuple(layers)


@lru_cache(maxsize=2)
def clifford_table(n: int) -> tuple[Clifford, ...]:
    if n == 1:
        return tuple(Clifford(1, i, (("1q", seq),), sequence_unitary(seq)) for i, seq in enumerate(C1))
    if n == 2:
        out = []
        for i in range(N_CLIFFORD_2Q):
            layers = two_qubit_layers(i)
            out.append(Clifford(2, i, layers, _layers_unitary(layers)))
        return tuple(out)
    raise ValueError("Clifford tables exist for one and two qubits only")


@lru_cache(maxsize=2)
def _key_index(n: int) -> dict[bytes, int]:
    return {phase_key(c.unitary): c.index for c in clifford_table(n)}


def clifford_lookup(u: np.ndarray) -> Clifford:
    """The table element equal to `u` up to global phase."""
    n = {2: 1, 4: 2}.get(u.shape[0])
    if n is None:
        raise ValueError("not a one- or two-qubit matrix")
    try:
        return clifford_table(n)[_key_index(n)[phase_key(u)]]
    except KeyError:
        raise ValueError("matrix is not a Clifford in the table") from None


def clifford_inverse(u: np.ndarray) -> Clifford:
    return clifford_lookup(u.conj().T)


def clifford_sample(n: int, rng: np.random.Generator) -> Clifford:
    """Uniform draw from the n-qubit Clifford group (n = 1 or 2)."""
    table = clifford_table(n)
    return table[int(rng.integers(len(table)))]


def mean_primitive_counts(n: int = 2) -> tuple[float, float]:
    """Exact group averages of (single-qubit primitives, CZ gates) per Clifford."""
    table = clifford_table(n)
    return (float(np.mean([c.n_single for c in table])), float(np.mean([c.n_cz for c in table])))
