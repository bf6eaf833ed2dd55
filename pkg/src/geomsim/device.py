"""Physical model of transmon qutrits sharing one bus resonator.

Public signatures take ordinary frequencies in MHz and times in ns or us.
Hamiltonian matrices are returned in angular units (rad/ns); the single
conversion factor is :data:`MHZ_TO_RAD_PER_NS`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .quantum import HilbertLayout, Operator, embed, ladder, projector, transition

MHZ_TO_RAD_PER_NS = 2.0 * math.pi * 1e-3
DISPERSIVE_GUARD = 3.0
PERTURBATIVE_GUARD = 5.0
DEFAULT_N_FOCK = 8


def to_angular(f_mhz):
    return np.asarray(f_mhz, dtype=float) * MHZ_TO_RAD_PER_NS if np.ndim(f_mhz) else float(f_mhz) * MHZ_TO_RAD_PER_NS


def to_mhz(w_rad_per_ns):
    return np.asarray(w_rad_per_ns) / MHZ_TO_RAD_PER_NS if np.ndim(w_rad_per_ns) else float(w_rad_per_ns) / MHZ_TO_RAD_PER_NS


class DispersiveRegimeError(ValueError):
    pass


class PerturbativeValidityError(ValueError):
    pass


class CubicBranchError(RuntimeError):
    pass


class NoRootError(ValueError):
    def __init__(self, message, profile=None):
        super().__init__(message)
        self.profile = profile


# --------------------------------------------------------------------------
# parameter schema


@dataclass(frozen=True)
class QubitParams:
    label: str
    omega01_sweet: float
    anharmonicity: float
    g01: float
    t1: float
    t_phi: float
    t2_star: float | None = None
    crosstalk_k: float = 0.6
    crosstalk_phase: float = 0.0

    def __post_init__(self):
        if self.t1 <= 0 or self.t_phi <= 0:
            raise ValueError(f"{self.label}: coherence times must be positive")
        if self.t2_star is not None and self.t2_star <= 0:
            raise ValueError(f"{self.label}: t2_star must be positive")
        if self.g01 <= 0:
            raise ValueError(f"{self.label}: g01 must be positive")
        if self.anharmonicity <= 0:
            raise ValueError(f"{self.label}: anharmonicity must be positive")
        if self.crosstalk_k < 0:
            raise ValueError(f"{self.label}: crosstalk ratio must be non-negative")

    @property
    def g12(self) -> float:
        return math.sqrt(2.0) * self.g01

    _JSON_KEYS = {
        "label": "label",
        "omega01_sweet_mhz": "omega01_sweet",
        "anharmonicity_mhz": "anharmonicity",
        "g01_mhz": "g01",
        "t1_us": "t1",
        "t_phi_us": "t_phi",
        "t2_star_us": "t2_star",
        "crosstalk_k": "crosstalk_k",
        "crosstalk_phase_rad": "crosstalk_phase",
    }

    @classmethod
    def from_dict(cls, d: Mapping, path: str = "qubit") -> "QubitParams":
        unknown = set(d) - set(cls._JSON_KEYS)
        if unknown:
            raise KeyError(f"{path}: unknown keys {sorted(unknown)}")
        missing = {"label", "omega01_sweet_mhz", "anharmonicity_mhz", "g01_mhz", "t1_us", "t_phi_us"} - set(d)
        if missing:
            raise KeyError(f"{path}: missing keys {sorted(missing)}")
        return cls(**{cls._JSON_KEYS[k]: v for k, v in d.items()})

    def to_dict(self) -> dict:
        inv = {v: k for k, v in self._JSON_KEYS.items()}
        return {inv[k]: getattr(self, k) for k in inv if getattr(self, k) is not None}


@dataclass(frozen=True)
class DeviceSpec:
    qubits: tuple[QubitParams, ...]
    omega_rb: float
    resonator_t1: float

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))
        if not self.qubits:
            raise ValueError("device needs at least one qubit")
        labels = [q.label for q in self.qubits]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate qubit labels in {labels}")
        if self.omega_rb <= 0:
            raise ValueError("bus frequency must be positive")
        if self.resonator_t1 <= 0:
            raise ValueError("resonator T1 must be positive")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(q.label for q in self.qubits)

    def qubit(self, label: str) -> QubitParams:
        for q in self.qubits:
            if q.label == label:
                return q
        raise KeyError(f"no qubit labelled {label!r}")

    def with_qubit(self, label: str, **changes) -> "DeviceSpec":
        """Copy with one qubit's fields replaced (coherence overrides, k, ...)."""
        self.qubit(label)
        return replace(self, qubits=tuple(replace(q, **changes) if q.label == label else q for q in self.qubits))

    def ordered(self, labels: Sequence[str]) -> tuple[str, ...]:
        """Labels sorted into device order (the fixed subsystem ordering)."""
        for lab in labels:
            self.qubit(lab)
        return tuple(lab for lab in self.labels if lab in set(labels))

    @classmethod
    def from_dict(cls, d: Mapping, path: str = "device") -> "DeviceSpec":
        allowed = {"qubits", "omega_rb_mhz", "resonator_t1_us", "name", "notes"}
        unknown = set(d) - allowed
        if unknown:
            raise KeyError(f"{path}: unknown keys {sorted(unknown)}")
        for key in ("qubits", "omega_rb_mhz", "resonator_t1_us"):
            if key not in d:
                raise KeyError(f"{path}: missing key {key!r}")
        qubits = tuple(QubitParams.from_dict(q, f"{path}.qubits[{i}]") for i, q in enumerate(d["qubits"]))
        return cls(qubits, float(d["omega_rb_mhz"]), float(d["resonator_t1_us"]))

    def to_dict(self) -> dict:
        return {
            "omega_rb_mhz": self.omega_rb,
            "resonator_t1_us": self.resonator_t1,
            "qubits": [q.to_dict() for q in self.qubits],
        }


def load_device(path) -> DeviceSpec:
    """Read a device description; the file may wrap it under a "device" key."""
    data = json.loads(Path(path).read_text())
    if "device" in data:
        data = data["device"]
    return DeviceSpec.from_dict(data)


# --------------------------------------------------------------------------
# dispersive physics


def dispersive_shift(g01: float, omega01: float, omega_rb: float) -> float:
    """Signed dispersive pull g01^2 / (omega01 - omega_rb), MHz."""
    detuning = omega01 - omega_rb
    if abs(detuning) <= DISPERSIVE_GUARD * abs(g01):
        raise DispersiveRegimeError(f"|detuning| = {abs(detuning):.3g} MHz is within {DISPERSIVE_GUARD}*g01 = {DISPERSIVE_GUARD * g01:.3g} MHz")
    return g01**2 / detuning


@dataclass(frozen=True)
class GateOperatingPoint:
    active_qubits: tuple[str, ...]
    omega01_gate: tuple[float, ...]
    drive_omega: float
    drive_delta: float
    duration: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "active_qubits", tuple(self.active_qubits))
        object.__setattr__(self, "omega01_gate", tuple(float(w) for w in self.omega01_gate))
        if len(self.active_qubits) != len(self.omega01_gate):
            raise ValueError("one gate frequency per active qubit")
        if self.drive_delta == 0:
            raise ValueError("drive detuning must be nonzero")
        if self.duration is None:
            object.__setattr__(self, "duration", 1000.0 / abs(self.drive_delta))
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @classmethod
    def from_detunings(cls, device: DeviceSpec, labels: Sequence[str], detunings: Sequence[float],
                       drive_omega: float, drive_delta: float, duration: float | None = None) -> "GateOperatingPoint":
        """Place each qubit's 0-1 transition `detunings[i]` MHz above the all-ground resonator frequency.

        The all-ground frequency itself depends on the qubit frequencies
        through the dispersive pulls, so the pair is solved self-consistently.
        """
        if len(labels) != len(detunings):
            raise ValueError("one detuning per label")
        order = device.ordered(labels)
        det = dict(zip(labels, detunings))
        d = np.array([det[lab] for lab in order], dtype=float)
        g = np.array([device.qubit(lab).g01 for lab in order])
        w_r = device.omega_rb
        for _ in range(200):
            new = device.omega_rb - float(np.sum(g**2 / (w_r + d - device.omega_rb)))
            if abs(new - w_r) < 1e-13:
                w_r = new
                break
            w_r = new
        point = cls(order, tuple(w_r + d), drive_omega, drive_delta, duration)
        for lab, w in zip(order, point.omega01_gate):
            dispersive_shift(device.qubit(lab).g01, w, device.omega_rb)
            if w <= device.omega_rb:
                raise ValueError(f"{lab} must sit above the bus frequency")
        return point

    def with_drive(self, drive_omega: float | None = None, drive_delta: float | None = None,
                   duration: float | None = None) -> "GateOperatingPoint":
        return replace(
            self,
            drive_omega=self.drive_omega if drive_omega is None else drive_omega,
            drive_delta=self.drive_delta if drive_delta is None else drive_delta,
            duration=self.duration if duration is None else duration,
        )

    def frequency(self, label: str) -> float:
        return self.omega01_gate[self.active_qubits.index(label)]

    def shifts(self, device: DeviceSpec) -> dict[str, float]:
        return {lab: dispersive_shift(device.qubit(lab).g01, w, device.omega_rb)
                for lab, w in zip(self.active_qubits, self.omega01_gate)}

    def resonator_frequency(self, device: DeviceSpec) -> float:
        return device.omega_rb - sum(self.shifts(device).values())

    def drive_frequency(self, device: DeviceSpec) -> float:
        return self.resonator_frequency(device) + self.drive_delta

    def delta_prime(self, device: DeviceSpec, label: str, excited: Sequence[str] | None = None) -> float:
        """1-2 transition detuning from the resonator frequency conditioned on `excited` qubits in |1>."""
        excited = (label,) if excited is None else tuple(excited)
        lam = self.shifts(device)
        q = device.qubit(label)
        w12 = self.frequency(label) - q.anharmonicity
        return w12 - (self.resonator_frequency(device) + 2.0 * sum(lam[e] for e in excited))


def conditional_resonator_frequency(device: DeviceSpec, point: GateOperatingPoint, qubit_states: Sequence[int]) -> float:
    if len(qubit_states) != len(point.active_qubits):
        raise ValueError("one state per active qubit")
    lam = point.shifts(device)
    w = device.omega_rb - sum(lam.values())
    for lab, s in zip(point.active_qubits, qubit_states):
        if s not in (0, 1):
            raise ValueError("qubit states must be 0 or 1")
        w += 2.0 * s * lam[lab]
    return w


# --------------------------------------------------------------------------
# Hamiltonian


def device_layout(point: GateOperatingPoint, n_fock: int = DEFAULT_N_FOCK) -> HilbertLayout:
    return HilbertLayout.with_resonator(len(point.active_qubits), n_fock)


@dataclass(frozen=True)
class HamiltonianParts:
    """H = static + drive_omega_angular * drive, both in rad/ns (drive per unit angular amplitude)."""

    layout: HilbertLayout
    static: np.ndarray
    drive: np.ndarray

    def at(self, drive_omega_mhz: float) -> np.ndarray:
        return self.static + to_angular(drive_omega_mhz) * self.drive


def hamiltonian_parts(device: DeviceSpec, point: GateOperatingPoint, n_fock: int = DEFAULT_N_FOCK,
                      layout: HilbertLayout | None = None, couplings: bool = True,
                      drive_frequency: float | None = None) -> HamiltonianParts:
    """Static and per-unit-drive pieces of the drive-frame Hamiltonian.

    `drive_frequency` (MHz) overrides the frame placement implied by the
    operating point's detuning.
    """
    layout = device_layout(point, n_fock) if layout is None else layout
    n = len(point.active_qubits)
    if layout.n_qubits != n or layout.resonator_index != n:
        raise ValueError("layout must hold the active qubits followed by the resonator")
    r = layout.resonator_index
    nf = layout.subsystem_dims[r]
    w_d = point.drive_frequency(device) if drive_frequency is None else drive_frequency
    a = embed(ladder(nf), r, layout).matrix
    ad = a.conj().T
    static = (device.omega_rb - w_d) * (ad @ a)
    drive = a + ad
    for site, (lab, w01) in enumerate(zip(point.active_qubits, point.omega01_gate)):
        q = device.qubit(lab)
        static = static + embed((w01 - w_d) * projector(3, 1) + (2 * w01 - q.anharmonicity - 2 * w_d) * projector(3, 2), site, layout).matrix
        if couplings:
            up01 = embed(transition(3, 1, 0), site, layout).matrix
            up12 = embed(transition(3, 2, 1), site, layout).matrix
            ex = q.g01 * (a @ up01) + q.g12 * (a @ up12)
            static = static + ex + ex.conj().T
        if q.crosstalk_k:
            x = q.crosstalk_k * np.exp(1j * q.crosstalk_phase) * embed(transition(3, 2, 1), site, layout).matrix
            drive = drive + x + x.conj().T
    return HamiltonianParts(layout, to_angular(1.0) * static, drive)


def build_drive_frame_hamiltonian(device: DeviceSpec, point: GateOperatingPoint, n_fock: int = DEFAULT_N_FOCK,
                                  layout: HilbertLayout | None = None, couplings: bool = True) -> Operator:
    """Rotating-frame Hamiltonian at the drive frequency, rad/ns."""
    parts = hamiltonian_parts(device, point, n_fock, layout, couplings)
    h = parts.at(point.drive_omega)
    return Operator(parts.layout, 0.5 * (h + h.conj().T), hermitian=True)


def dressed_qubit_frequencies(device: DeviceSpec, point: GateOperatingPoint,
                              drive_frequency: float | None = None) -> np.ndarray:
    """Drive-frame 0-1 energies (MHz) of each qubit dressed by the bus, with the drive off.

    Exact eigenvalues of the single-excitation block; each is assigned to the
    qubit whose bare state has the largest weight in the eigenvector.
    """
    w_d = point.drive_frequency(device) if drive_frequency is None else drive_frequency
    n = len(point.active_qubits)
    m = np.zeros((n + 1, n + 1))
    for i, (lab, w) in enumerate(zip(point.active_qubits, point.omega01_gate)):
        m[i, i] = w - w_d
        m[i, n] = m[n, i] = device.qubit(lab).g01
    m[n, n] = device.omega_rb - w_d
    vals, vecs = np.linalg.eigh(m)
    out = np.empty(n)
    weights = np.abs(vecs[:n, :]) ** 2
    for i in range(n):
        out[i] = vals[int(np.argmax(weights[i]))]
    return out


# --------------------------------------------------------------------------
# dressed-state spectra


@dataclass(frozen=True)
class DressedPair:
    e_plus: float
    e_minus: float
    theta_mix: float
    delta_plus: float
    delta_minus: float

    def eigenvectors(self) -> np.ndarray:
        """Columns |phi_+>, |phi_-> in the basis {|2,0>, |1,1>}."""
        c, s = math.cos(self.theta_mix / 2), math.sin(self.theta_mix / 2)
        return np.array([[c, s], [s, -c]])


def dressed_pair(delta_prime: float, g12: float, delta: float = 0.0, lam: float = 0.0) -> DressedPair:
    """Dressed |2,0>/|1,1> doublet.

    Energies are offsets from the uncoupled |1,1> level (omega_r + 2 lam
    above |1,0>). `delta` is the drive detuning from the all-ground resonator
    frequency; it only enters the drive detunings delta_plus/delta_minus.
    """
    if g12 <= 0:
        raise ValueError("g12 must be positive")
    root = math.hypot(2.0 * g12, delta_prime)
    e_plus = 0.5 * (delta_prime + root)
    e_minus = 0.5 * (delta_prime - root)
    theta = math.atan2(2.0 * g12, delta_prime)
    return DressedPair(e_plus, e_minus, theta, delta - 2.0 * lam - e_plus, delta - 2.0 * lam - e_minus)


@dataclass(frozen=True)
class DressedTriple:
    e_k: tuple[float, float, float]
    weights: np.ndarray
    delta_k: tuple[float, float, float]
    p: float = field(default=0.0)
    q: float = field(default=0.0)

    def __hash__(self):
        return hash((self.e_k, self.delta_k))


def _cardano(c2: float, c1: float, c0: float) -> tuple[np.ndarray, float, float]:
    """Roots of E^3 + c2 E^2 + c1 E + c0 via the depressed-cubic construction."""
    shift = -c2 / 3.0
    p = c1 - c2**2 / 3.0
    q = 2.0 * c2**3 / 27.0 - c2 * c1 / 3.0 + c0
    disc = complex((q / 2.0) ** 2 + (p / 3.0) ** 3)
    lam = np.sqrt(disc)
    eta = complex(-0.5, math.sqrt(3.0) / 2.0)
    w = -q / 2.0 + lam
    if abs(w) < abs(-q / 2.0 - lam):
        w = -q / 2.0 - lam
    u = w ** (1.0 / 3.0) if w != 0 else 0.0
    # the second cube root is tied to the first through u v = -p/3
    v = -p / (3.0 * u) if u != 0 else 0.0
    roots = np.array([u + v, eta * u + eta.conjugate() * v, eta.conjugate() * u + eta * v]) + shift
    return roots, p, q


def dressed_triple(delta_prime_1: float, delta_prime_2: float, g1_12: float, g2_12: float,
                   delta: float = 0.0, lam_sum: float = 0.0) -> DressedTriple:
    """Dressed |21,0>/|12,0>/|11,1> triplet from the closed-form cubic.

    Energies are offsets from the uncoupled |11,1> level; eigenvalues are
    sorted ascending. The closed form is checked against a numeric
    eigensolve and a disagreement beyond 1e-9 (relative) raises.
    """
    if g1_12 <= 0 or g2_12 <= 0:
        raise ValueError("both couplings must be positive")
    d1, d2, g1, g2 = float(delta_prime_1), float(delta_prime_2), float(g1_12), float(g2_12)
    roots, p, q = _cardano(-(d1 + d2), d1 * d2 - g1**2 - g2**2, g1**2 * d2 + g2**2 * d1)
    scale = max(abs(d1), abs(d2), g1, g2)
    if np.max(np.abs(roots.imag)) > 1e-9 * scale:
        raise CubicBranchError(f"complex residue {np.max(np.abs(roots.imag)):.3g} in cubic roots")
    e = np.sort(roots.real)
    mat = np.array([[d1, 0.0, g1], [0.0, d2, g2], [g1, g2, 0.0]])
    numeric = np.linalg.eigvalsh(mat)
    if np.max(np.abs(e - numeric)) > 1e-9 * scale:
        raise CubicBranchError(f"closed-form roots {e} disagree with eigensolve {numeric}")
    x2 = (e * (e - d1) - g1**2) / (g1 * g2)
    x3 = (e - d1) / g1
    vecs = np.vstack([np.ones(3), x2, x3])
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    delta_k = tuple(float(delta - 2.0 * lam_sum - ek) for ek in e)
    return DressedTriple(tuple(float(x) for x in e), vecs, delta_k, p, q)


# --------------------------------------------------------------------------
# Stark shifts


def stark_shift_single(omega_drive: float, k: float, pair: DressedPair, check: bool = True) -> float:
    """Drive-induced shift of |1,0> through the dressed doublet, MHz."""
    if check:
        limit = PERTURBATIVE_GUARD * max(abs(omega_drive), abs(k * omega_drive))
        if min(abs(pair.delta_plus), abs(pair.delta_minus)) < limit:
            raise PerturbativeValidityError(
                f"drive detunings ({pair.delta_plus:.3g}, {pair.delta_minus:.3g}) MHz not >> {omega_drive:.3g} MHz")
    c, s = math.cos(pair.theta_mix / 2), math.sin(pair.theta_mix / 2)
    return omega_drive**2 * ((k * c + s) ** 2 / pair.delta_plus + (k * s - c) ** 2 / pair.delta_minus)


def stark_shift_double(omega_drive: float, k1: float, k2: float, triple: DressedTriple, check: bool = True) -> float:
    """Drive-induced shift of |11,0> through the dressed triplet, MHz."""
    if check:
        limit = PERTURBATIVE_GUARD * max(abs(omega_drive), abs(k1 * omega_drive), abs(k2 * omega_drive))
        if min(abs(d) for d in triple.delta_k) < limit:
            raise PerturbativeValidityError(f"drive detunings {triple.delta_k} MHz not >> {omega_drive:.3g} MHz")
    w = triple.weights
    amps = w[0] * k1 * omega_drive + w[1] * k2 * omega_drive + w[2] * omega_drive
    return float(np.sum(np.abs(amps) ** 2 / np.array(triple.delta_k)))


def pair_at_point(device: DeviceSpec, point: GateOperatingPoint, label: str, delta_prime: float | None = None) -> DressedPair:
    lam = point.shifts(device)[label]
    dp = point.delta_prime(device, label) if delta_prime is None else delta_prime
    return dressed_pair(dp, device.qubit(label).g12, point.drive_delta, lam)


def triple_at_point(device: DeviceSpec, point: GateOperatingPoint, label_1: str, label_2: str) -> DressedTriple:
    lam = point.shifts(device)
    pair = (label_1, label_2)
    return dressed_triple(point.delta_prime(device, label_1, pair), point.delta_prime(device, label_2, pair),
                          device.qubit(label_1).g12, device.qubit(label_2).g12,
                          point.drive_delta, lam[label_1] + lam[label_2])


def solve_zero_stark(device: DeviceSpec, point: GateOperatingPoint, qubit: str, k: float | None = None,
                     window: tuple[float, float] = (-20.0, 80.0), n_scan: int = 2001, tol: float = 1e-6) -> float:
    """1-2 detuning Delta' (MHz) at which the single-excitation Stark shift vanishes.

    The dispersive pull and drive detuning are held at the operating point's
    values while Delta' is scanned; the root with the smallest |Delta'| wins.
    """
    q = device.qubit(qubit)
    k = q.crosstalk_k if k is None else k
    lam = point.shifts(device)[qubit]
    omega = point.drive_omega if point.drive_omega else 1.0

    def eps(dp):
        pair = dressed_pair(dp, q.g12, point.drive_delta, lam)
        return stark_shift_single(omega, k, pair, check=False)

    def poles(dp):
        pair = dressed_pair(dp, q.g12, point.drive_delta, lam)
        return pair.delta_plus, pair.delta_minus

    grid = np.linspace(window[0], window[1], n_scan)
    vals = np.array([eps(x) for x in grid])
    brackets = []
    for i in range(n_scan - 1):
        if vals[i] == 0.0:
            brackets.append((grid[i], grid[i]))
            continue
        if np.sign(vals[i]) != np.sign(vals[i + 1]):
            pa, pb = poles(grid[i]), poles(grid[i + 1])
            if any(np.sign(x) != np.sign(y) for x, y in zip(pa, pb)):
                continue  # sign flip through a pole, not a zero
            brackets.append((grid[i], grid[i + 1]))
    if not brackets:
        raise NoRootError(f"no sign change of the Stark shift for {qubit} in {window} MHz",
                          profile=np.column_stack([grid, vals]))
    roots = []
    for a, b in brackets:
        fa = eps(a)
        while b - a > 1e-12 * max(1.0, abs(a)):
            m = 0.5 * (a + b)
            fm = eps(m)
            if fm == 0.0:
                a = b = m
                break
            if np.sign(fm) == np.sign(fa):
                a, fa = m, fm
            else:
                b = m
        r = 0.5 * (a + b)
        if abs(eps(r)) > tol:
            continue
        roots.append(r)
    if not roots:
        raise NoRootError("bisection did not reach the tolerance", profile=np.column_stack([grid, vals]))
    return float(min(roots, key=abs))


# --------------------------------------------------------------------------
# phases


def dynamical_phase(epsilon: float, duration: float) -> float:
    """theta_d = -eps T, with eps in MHz and T in ns."""
    return -MHZ_TO_RAD_PER_NS * epsilon * duration


def dynamical_phase_variance(theta_d: float, sigma: float, gamma: float, duration: float, omega_drive: float) -> float:
    """Variance of the dynamical phase under exponentially correlated amplitude noise.

    `gamma` is the noise bandwidth in 1/us, `duration` in ns; sigma and the
    drive amplitude share any frequency unit.
    """
    if omega_drive <= 0:
        raise ValueError("drive amplitude must be positive")
    x = gamma * duration * 1e-3
    if x < 1e-4:
        shape = 0.5 - x / 6.0 + x * x / 24.0
    else:
        shape = (x + math.expm1(-x)) / (x * x)
    return theta_d**2 * 8.0 * sigma**2 / omega_drive**2 * shape


def sample_dynamical_phase(theta_d: float, sigma: float, gamma: float, duration: float, omega_drive: float,
                           n_samples: int = 10_000, n_steps: int = 400, rng=None) -> np.ndarray:
    """Monte-Carlo draws of the dynamical-phase error under Ornstein-Uhlenbeck amplitude noise.

    Each realisation of dOmega(t) is a stationary OU path with standard
    deviation `sigma` and correlation exp(-gamma |t|), generated with the
    exact one-step update. Since the Stark shift scales as Omega^2, a small
    amplitude error shifts the phase by (2 theta_d / (Omega T)) times the
    integral of dOmega over the gate, integrated here with the trapezoid rule.
    """
    if omega_drive <= 0:
        raise ValueError("drive amplitude must be positive")
    rng = np.random.default_rng(rng)
    dt = duration / n_steps
    rate = gamma * 1e-3  # 1/us -> 1/ns
    decay = math.exp(-rate * dt)
    kick = sigma * math.sqrt(-math.expm1(-2.0 * rate * dt))
    x = sigma * rng.standard_normal(n_samples)
    area = 0.5 * x
    for _ in range(n_steps - 1):
        x = decay * x + kick * rng.standard_normal(n_samples)
        area += x
    x = decay * x + kick * rng.standard_normal(n_samples)
    area = (area + 0.5 * x) * dt
    return 2.0 * theta_d / (omega_drive * duration) * area
