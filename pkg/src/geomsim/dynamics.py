"""Time evolution under piecewise-constant drive-frame Hamiltonians.

Unitary segments are exponentiated exactly through a cached
eigendecomposition. Open-system evolution offers two integrators: an
adaptive eighth-order Dormand-Prince scheme (the reference) and a Strang
splitting that alternates exact unitary steps with a second-order
dissipator step. The splitting is trace preserving by construction and is
what the gate and benchmarking layers use for throughput.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import linear_sum_assignment

from .device import (
    DEFAULT_N_FOCK,
    DeviceSpec,
    GateOperatingPoint,
    dressed_qubit_frequencies,
    hamiltonian_parts,
    to_angular,
)
from .quantum import (
    ATOL_HERMITIAN,
    DensityOperator,
    HilbertLayout,
    LayoutError,
    Operator,
    StateVector,
    embed,
    ladder,
    number_op,
    phase_rotation,
    qubit_rotation,
)

US_TO_NS = 1e3


class StiffnessError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Rotation:
    """Instantaneous single-qubit operation on the {|0>,|1>} block.

    kind "xy": rotation by `angle` about the in-plane axis at
    `axis - frame_phase` (further shifted by any accumulated virtual-Z
    phase). kind "z": physical phase gate diag(1, e^{i angle}, e^{2i angle}).
    kind "virtual_z": no pulse; advances the qubit's frame by `angle`.
    """

    qubit: str
    angle: float
    axis: float = 0.0
    frame_phase: float = 0.0
    kind: Literal["xy", "z", "virtual_z"] = "xy"

    def __post_init__(self):
        if self.kind not in ("xy", "z", "virtual_z"):
            raise ValueError(f"unknown rotation kind {self.kind!r}")


@dataclass(frozen=True)
class ScheduleSegment:
    duration: float
    frequencies: tuple[float, ...]
    drive_omega: float = 0.0
    drive_frequency: float = 0.0
    rotations: tuple[Rotation, ...] = ()
    adiabatic: bool = False

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("segment duration must be non-negative")
        object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))
        object.__setattr__(self, "rotations", tuple(self.rotations))

    @classmethod
    def from_point(cls, device: DeviceSpec, point: GateOperatingPoint, rotations: Sequence[Rotation] = (),
                   adiabatic: bool = True) -> "ScheduleSegment":
        return cls(point.duration, point.omega01_gate, point.drive_omega, point.drive_frequency(device),
                   tuple(rotations), adiabatic)

    @classmethod
    def instant(cls, frequencies: Sequence[float], rotations: Sequence[Rotation]) -> "ScheduleSegment":
        return cls(0.0, tuple(frequencies), 0.0, 0.0, tuple(rotations))


@dataclass(frozen=True)
class PulseSchedule:
    labels: tuple[str, ...]
    layout: HilbertLayout
    segments: tuple[ScheduleSegment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.layout.n_qubits != len(self.labels) or self.layout.resonator_index is None:
            raise LayoutError("schedule layout must hold one qutrit per label plus the resonator")
        for seg in self.segments:
            if len(seg.frequencies) != len(self.labels):
                raise ValueError("each segment needs one frequency per qubit")
            for r in seg.rotations:
                if r.qubit not in self.labels:
                    raise ValueError(f"rotation on unknown qubit {r.qubit!r}")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def frame_phases(self) -> dict[str, float]:
        """Virtual-Z phase accumulated per qubit over the whole schedule."""
        acc = {lab: 0.0 for lab in self.labels}
        for seg in self.segments:
            for r in seg.rotations:
                if r.kind == "virtual_z":
                    acc[r.qubit] += r.angle
        return acc

    def then(self, *segments: ScheduleSegment) -> "PulseSchedule":
        return PulseSchedule(self.labels, self.layout, self.segments + tuple(segments))

    def prepend(self, *segments: ScheduleSegment) -> "PulseSchedule":
        return PulseSchedule(self.labels, self.layout, tuple(segments) + self.segments)

    @property
    def n_fock(self) -> int:
        return self.layout.n_fock


# --------------------------------------------------------------------------
# dissipators


@dataclass(frozen=True)
class CollapseSet:
    """Jump operators with rates in 1/us."""

    layout: HilbertLayout
    channels: tuple[tuple[Operator, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        for op, rate in self.channels:
            if rate < 0:
                raise ValueError("collapse rates must be non-negative")
            if op.layout != self.layout:
                raise LayoutError("collapse operator lives on a different layout")

    @classmethod
    def from_device(cls, device: DeviceSpec, labels: Sequence[str], layout: HilbertLayout,
                    relaxation: bool = True, dephasing: bool = True, resonator: bool = True) -> "CollapseSet":
        chans = []
        for site, lab in zip(layout.qubit_sites, labels):
            q = device.qubit(lab)
            if relaxation:
                chans.append((embed(ladder(3), site, layout), 1.0 / q.t1))
            if dephasing:
                chans.append((embed(number_op(3), site, layout), 2.0 / q.t_phi))
        if resonator and layout.resonator_index is not None:
            chans.append((embed(ladder(layout.n_fock), layout.resonator_index, layout), 1.0 / device.resonator_t1))
        return cls(layout, tuple(chans))

    @classmethod
    def empty(cls, layout: HilbertLayout) -> "CollapseSet":
        return cls(layout, ())

    def scaled(self, factor: float) -> "CollapseSet":
        return CollapseSet(self.layout, tuple((op, rate * factor) for op, rate in self.channels))


class _Dissipator:
    """Fast application of sum_j g_j (L rho L^+ - {L^+L, rho}/2) on stacks of matrices.

    Jump operators with at most one nonzero per column and injective row
    maps (ladder, number and projector monomials) take an O(d^2) scatter
    path; anything else falls back to dense products.
    """

    def __init__(self, collapse: CollapseSet):
        d = collapse.layout.dim
        self.dim = d
        self.mono = []
        self.dense = []
        k = np.zeros((d, d), dtype=complex)
        for op, rate_us in collapse.channels:
            g = rate_us / US_TO_NS
            if g == 0:
                continue
            m = op.matrix
            k += g * (m.conj().T @ m)
            nz_cols = np.nonzero(np.any(m != 0, axis=0))[0]
            rows = np.array([np.nonzero(m[:, j])[0] for j in nz_cols], dtype=object)
            if all(len(r) == 1 for r in rows) and len({int(r[0]) for r in rows}) == len(rows):
                r = np.array([int(x[0]) for x in rows], dtype=int)
                c = m[r, nz_cols] * math.sqrt(g)
                self.mono.append((r, nz_cols, c))
            else:
                self.dense.append(math.sqrt(g) * m)
        if np.count_nonzero(k - np.diag(np.diag(k))):
            self.k_diag = None
            self.k = k
        else:
            self.k_diag = np.real(np.diag(k)).copy()
            self.k = None

    @property
    def trivial(self) -> bool:
        return not self.mono and not self.dense

    def anticommutator_half(self, rho):
        if self.k_diag is not None:
            kd = self.k_diag
            return 0.5 * (kd[:, None] * rho + rho * kd[None, :])
        return 0.5 * (self.k @ rho + rho @ self.k)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = -self.anticommutator_half(rho)
        for r, cols, c in self.mono:
            sub = rho[..., cols[:, None], cols[None, :]]
            out[..., r[:, None], r[None, :]] += c[:, None] * sub * c.conj()[None, :]
        for m in self.dense:
            out += m @ rho @ m.conj().T
        return out


# --------------------------------------------------------------------------
# unitary propagation


def _matrix_key(m: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(m).view(np.uint8)).hexdigest()


class Propagator:
    """exp(-i H t) for many t from one Hermitian eigendecomposition."""

    def __init__(self, h: np.ndarray):
        h = np.asarray(h, dtype=complex)
        if np.max(np.abs(h - h.conj().T), initial=0.0) > ATOL_HERMITIAN * max(1.0, np.max(np.abs(h))):
            raise ValueError("Hamiltonian is not Hermitian")
        self.energies, self.vectors = np.linalg.eigh(0.5 * (h + h.conj().T))

    def unitary(self, t: float) -> np.ndarray:
        v = self.vectors
        return (v * np.exp(-1j * self.energies * t)) @ v.conj().T

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        v = self.vectors
        return v @ (np.exp(-1j * self.energies * t) * (v.conj().T @ psi))

    def trajectory(self, psi: np.ndarray, times: np.ndarray) -> np.ndarray:
        """States at each time as columns, shape (dim, len(times))."""
        c = self.vectors.conj().T @ psi
        phases = np.exp(-1j * np.outer(self.energies, times))
        return self.vectors @ (phases * c[:, None])


_PROPAGATORS: dict[str, Propagator] = {}
_PROPAGATOR_CACHE_LIMIT = 64


def _propagator_for(h: np.ndarray) -> Propagator:
    key = _matrix_key(h)
    prop = _PROPAGATORS.get(key)
    if prop is None:
        if len(_PROPAGATORS) >= _PROPAGATOR_CACHE_LIMIT:
            _PROPAGATORS.pop(next(iter(_PROPAGATORS)))
        prop = Propagator(h)
        _PROPAGATORS[key] = prop
    return prop


def propagate_unitary(h: Operator, duration: float, state: StateVector) -> StateVector:
    """exp(-i H t)|psi>, H in rad/ns and t in ns."""
    if h.layout != state.layout:
        raise LayoutError("Hamiltonian and state layouts differ")
    if duration == 0:
        return state
    return StateVector(state.layout, _propagator_for(h.matrix).apply(state.amplitudes, duration))


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    times: np.ndarray
    nbar: np.ndarray
    populations: np.ndarray  # (n_times, n_qubits, 3)
    alpha: np.ndarray
    final_state: StateVector | DensityOperator | None = None
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        pops = self.populations
        if pops.size:
            if np.min(pops) < -1e-8 or np.max(pops) > 1 + 1e-8:
                raise IntegrationError("populations left [0, 1]")

    def columns(self) -> list[str]:
        cols = ["t_ns", "nbar"]
        for i in range(self.populations.shape[1]):
            cols += [f"q{i}_p0", f"q{i}_p1", f"q{i}_p2"]
        return cols + ["re_alpha", "im_alpha"]

    def rows(self) -> np.ndarray:
        n_q = self.populations.shape[1]
        data = [self.times, self.nbar]
        for i in range(n_q):
            data += [self.populations[:, i, 0], self.populations[:, i, 1], self.populations[:, i, 2]]
        data += [self.alpha.real, self.alpha.imag]
        return np.column_stack(data)

    def to_csv(self, path) -> None:
        """Columns t_ns, nbar, q<i>_p0..p2 for each qubit site i (0-based), re_alpha, im_alpha."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([f"{x:.17g}" for x in row])

    @staticmethod
    def concatenate(parts: Sequence["Trajectory"]) -> "Trajectory":
        parts = [p for p in parts if len(p.times)]
        if not parts:
            raise ValueError("nothing to concatenate")
        return Trajectory(
            np.concatenate([p.times for p in parts]),
            np.concatenate([p.nbar for p in parts]),
            np.concatenate([p.populations for p in parts]),
            np.concatenate([p.alpha for p in parts]),
            parts[-1].final_state,
            parts[-1].labels,
        )


class _Observables:
    """Diagonal-only readout of <n_r>, per-qubit level populations and <a>."""

    def __init__(self, layout: HilbertLayout):
        self.layout = layout
        dims = layout.subsystem_dims
        self.dims = dims
        self.r = layout.resonator_index
        grids = np.indices(dims).reshape(len(dims), -1)
        self.n_r = grids[self.r].astype(float) if self.r is not None else np.zeros(layout.dim)
        self.qubit_levels = [grids[s] for s in layout.qubit_sites]
        if self.r is not None:
            a = embed(ladder(dims[self.r]), self.r, layout).matrix
            rows, cols = np.nonzero(a)
            self.a_rows, self.a_cols, self.a_vals = rows, cols, a[rows, cols]
        else:
            self.a_rows = self.a_cols = np.zeros(0, dtype=int)
            self.a_vals = np.zeros(0)

    def _from_diag(self, p: np.ndarray):
        p = np.clip(p.real, 0.0, None) if np.iscomplexobj(p) else p
        nbar = p @ self.n_r
        if not self.qubit_levels:
            return nbar, np.zeros(p.shape[:-1] + (0, 3))
        pops = np.stack([np.stack([p[..., lv == k].sum(axis=-1) for k in range(3)], axis=-1)
                         for lv in self.qubit_levels], axis=-2)
        return nbar, pops

    def from_kets(self, psis: np.ndarray):
        """psis: (dim, n_times)."""
        p = np.abs(psis.T) ** 2
        nbar, pops = self._from_diag(p)
        # <a> = sum_{ij} conj(psi_i) a_ij psi_j
        alpha = np.sum(psis.T[:, self.a_rows].conj() * self.a_vals * psis.T[:, self.a_cols], axis=1)
        return nbar, pops, alpha

    def from_rhos(self, rhos: np.ndarray):
        """rhos: (n_times, dim, dim)."""
        p = np.real(np.diagonal(rhos, axis1=-2, axis2=-1))
        nbar, pops = self._from_diag(p)
        alpha = np.sum(self.a_vals * rhos[:, self.a_cols, self.a_rows], axis=1)
        return nbar, pops, alpha


# --------------------------------------------------------------------------
# analytic oracle


def analytic_driven_cavity(omega_drive: float, delta: float, t):
    """Coherent amplitude and phase of a resonator driven off resonance.

    alpha(t) = (W/d)(1 - e^{i d t}), beta(t) = -(W^2/d)(t - sin(d t)/d) with
    W = 2 pi omega_drive and d = 2 pi delta in rad/ns. beta is also the phase
    of <0|psi(t)>.
    """
    if delta == 0:
        raise ValueError("detuning must be nonzero")
    w = to_angular(omega_drive)
    d = to_angular(delta)
    t = np.asarray(t, dtype=float)
    alpha = (w / d) * (1.0 - np.exp(1j * d * t))
    beta = -(w**2 / d) * (t - np.sin(d * t) / d)
    if alpha.ndim == 0:
        return complex(alpha), float(beta)
    return alpha, beta


# --------------------------------------------------------------------------
# Lindblad integration


def _lindblad_rhs(h: np.ndarray, diss: _Dissipator):
    def rhs(rho):
        out = -1j * (h @ rho - rho @ h)
        if not diss.trivial:
            out += diss(rho)
        return out
    return rhs


def _adaptive_evolve(h, diss, rho0, times, rtol, atol, first_step):
    d = rho0.shape[-1]
    rhs = _lindblad_rhs(h, diss)

    def f(_t, y):
        return rhs(y.reshape(d, d)).ravel()

    t0 = times[0]
    if len(times) == 1:
        return rho0[None]
    sol = solve_ivp(f, (t0, times[-1]), rho0.ravel().astype(complex), method="DOP853", t_eval=times,
                    rtol=rtol, atol=atol, first_step=first_step)
    if sol.status != 0:
        raise StiffnessError(f"adaptive integration failed: {sol.message}")
    return sol.y.T.reshape(len(times), d, d)


class SplitStepper:
    """Strang splitting: half dissipator step, exact unitary step, half dissipator step.

    The dissipator substep is the second-order Taylor polynomial of its
    generator, which keeps the trace exactly fixed. Works on stacks of
    arbitrary (not necessarily Hermitian) matrices.
    """

    def __init__(self, h: np.ndarray, collapse: CollapseSet, dt: float):
        self.prop = _propagator_for(h)
        self.diss = _Dissipator(collapse)
        self.dt = dt
        self._u_cache: dict[float, np.ndarray] = {}

    def _u(self, dt):
        key = round(dt, 12)
        u = self._u_cache.get(key)
        if u is None:
            u = self.prop.unitary(dt)
            self._u_cache[key] = u
        return u

    def _diss_step(self, rho, h):
        d1 = self.diss(rho)
        return rho + h * d1 + 0.5 * h * h * self.diss(d1)

    def step(self, rho, dt):
        u = self._u(dt)
        if not self.diss.trivial:
            rho = self._diss_step(rho, 0.5 * dt)
        rho = u @ rho @ u.conj().T
        if not self.diss.trivial:
            rho = self._diss_step(rho, 0.5 * dt)
        return rho

    def evolve(self, rho, duration: float):
        if duration <= 0:
            return rho
        n = max(1, math.ceil(duration / self.dt - 1e-9))
        dt = duration / n
        for _ in range(n):
            rho = self.step(rho, dt)
        return rho


DEFAULT_SPLIT_DT = 2.5


def lindblad_evolve(h: Operator, collapse: CollapseSet, rho0: DensityOperator, t_grid: Sequence[float],
                    method: Literal["adaptive", "split"] = "adaptive", rtol: float = 1e-8, atol: float = 1e-12,
                    first_step: float = 0.1, split_dt: float = DEFAULT_SPLIT_DT, labels: Sequence[str] = ()) -> Trajectory:
    """Integrate the master equation, recording observables at each time in `t_grid` (ns)."""
    if h.layout != rho0.layout or collapse.layout != rho0.layout:
        raise LayoutError("Hamiltonian, collapse set and state must share one layout")
    m = h.matrix
    if np.max(np.abs(m - m.conj().T)) > ATOL_HERMITIAN * max(1.0, np.max(np.abs(m))):
        raise ValueError("Hamiltonian is not Hermitian")
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or len(times) == 0 or np.any(np.diff(times) < 0):
        raise ValueError("time grid must be a non-empty ascending sequence")
    rho = rho0.matrix
    if method == "adaptive":
        rhos = _adaptive_evolve(m, _Dissipator(collapse), rho, times, rtol, atol, first_step)
    elif method == "split":
        stepper = SplitStepper(m, collapse, split_dt)
        rhos = np.empty((len(times),) + rho.shape, dtype=complex)
        cur, t_prev = rho, times[0]
        for i, t in enumerate(times):
            cur = stepper.evolve(cur, t - t_prev)
            t_prev = t
            rhos[i] = cur
    else:
        raise ValueError(f"unknown method {method!r}")
    traces = np.real(np.einsum("tii->t", rhos))
    drift = np.max(np.abs(traces - np.real(np.trace(rho))))
    if drift > 1e-6:
        raise IntegrationError(f"trace drifted by {drift:.3g}")
    obs = _Observables(rho0.layout)
    nbar, pops, alpha = obs.from_rhos(rhos)
    final = rhos[-1]
    final = 0.5 * (final + final.conj().T)
    return Trajectory(times, nbar, pops, alpha, DensityOperator(rho0.layout, final), tuple(labels))


# --------------------------------------------------------------------------
# schedule execution


@lru_cache(maxsize=256)
def _segment_model(device: DeviceSpec, labels: tuple, frequencies: tuple, drive_omega: float,
                   drive_frequency: float, n_fock: int):
    point = GateOperatingPoint(labels, frequencies, drive_omega, 1.0, 1.0)
    parts = hamiltonian_parts(device, point, n_fock, drive_frequency=drive_frequency)
    h = parts.at(drive_omega)
    h = 0.5 * (h + h.conj().T)
    nu = to_angular(dressed_qubit_frequencies(device, point, drive_frequency=drive_frequency))
    return h, nu


@lru_cache(maxsize=64)
def _dressing_map(device: DeviceSpec, labels: tuple, frequencies: tuple, drive_frequency: float, n_fock: int) -> np.ndarray:
    """Unitary W whose column j is the drive-off eigenstate adiabatically connected to bare state j.

    Bare states are matched to eigenvectors by maximum total overlap and
    each column's phase is fixed so that <j|W|j> is real and positive.
    """
    h0, _ = _segment_model(device, labels, frequencies, 0.0, drive_frequency, n_fock)
    # the undriven Hamiltonian conserves the excitation number; diagonalizing
    # each block separately keeps accidental cross-block degeneracies of the
    # rotating frame from mixing manifolds
    layout = HilbertLayout.with_resonator(len(labels), n_fock)
    excitations = np.indices(layout.subsystem_dims).reshape(len(layout.subsystem_dims), -1).sum(axis=0)
    w = np.zeros_like(h0)
    for n_exc in np.unique(excitations):
        idx = np.nonzero(excitations == n_exc)[0]
        _, vecs = np.linalg.eigh(h0[np.ix_(idx, idx)])
        _, cols = linear_sum_assignment(-np.abs(vecs) ** 2)
        w[np.ix_(idx, idx)] = vecs[:, cols]
    d = np.diagonal(w)
    return w * (np.abs(d) / np.where(d == 0, 1.0, d))


def segment_hamiltonian(device: DeviceSpec, schedule: PulseSchedule, segment: ScheduleSegment) -> np.ndarray:
    h, _ = _segment_model(device, schedule.labels, segment.frequencies, float(segment.drive_omega),
                          float(segment.drive_frequency), schedule.n_fock)
    return h


def _frame_diagonal(layout: HilbertLayout, nu: np.ndarray, t: float) -> np.ndarray:
    """Diagonal of exp(+i t sum_q nu_q n_q): moves each qubit into its own dressed frame."""
    grids = np.indices(layout.subsystem_dims).reshape(len(layout.subsystem_dims), -1)
    phase = np.zeros(layout.dim)
    for site, w in zip(layout.qubit_sites, nu):
        phase += w * grids[site]
    return np.exp(1j * t * phase)


def _z_diagonal(layout: HilbertLayout, phases: Sequence[float]) -> np.ndarray:
    grids = np.indices(layout.subsystem_dims).reshape(len(layout.subsystem_dims), -1)
    ph = np.zeros(layout.dim)
    for site, p in zip(layout.qubit_sites, phases):
        ph += p * grids[site]
    return np.exp(1j * ph)


def _rotation_matrix(layout: HilbertLayout, site: int, rot: Rotation, vz: float) -> np.ndarray | None:
    if rot.kind == "xy":
        local = qubit_rotation(rot.angle, rot.axis - rot.frame_phase - vz)
    elif rot.kind == "z":
        local = phase_rotation(rot.angle)
    else:
        return None
    return embed(local, site, layout).matrix


def _validate_schedule(schedule: PulseSchedule, initial) -> HilbertLayout:
    if initial.layout != schedule.layout:
        raise LayoutError("initial state layout does not match the schedule")
    return schedule.layout


class _ScheduleRunner:
    """Walks a schedule, applying rotations, segment evolution and frame corrections."""

    def __init__(self, schedule: PulseSchedule, device: DeviceSpec):
        self.schedule = schedule
        self.device = device
        self.layout = schedule.layout
        self.site = {lab: s for lab, s in zip(schedule.labels, self.layout.qubit_sites)}

    def ops(self):
        """Yield ('u', matrix), ('diag', vector) and ('seg', h, duration) operations in time order.

        An adiabatic segment is bracketed by the map from bare labels to
        the drive-off dressed states and its inverse; the qubit frame
        correction is applied afterwards on the bare labels.
        """
        vz = {lab: 0.0 for lab in self.schedule.labels}
        for seg in self.schedule.segments:
            for rot in seg.rotations:
                if rot.kind == "virtual_z":
                    vz[rot.qubit] += rot.angle
                    continue
                yield ("u", _rotation_matrix(self.layout, self.site[rot.qubit], rot, vz[rot.qubit]))
            if seg.duration > 0:
                h, nu = _segment_model(self.device, self.schedule.labels, seg.frequencies, float(seg.drive_omega),
                                       float(seg.drive_frequency), self.schedule.n_fock)
                w = None
                if seg.adiabatic:
                    w = _dressing_map(self.device, self.schedule.labels, seg.frequencies, float(seg.drive_frequency),
                                      self.schedule.n_fock)
                    yield ("u", w)
                yield ("seg", h, seg.duration)
                if w is not None:
                    yield ("u", w.conj().T)
                yield ("diag", _frame_diagonal(self.layout, nu, seg.duration))
        phases = [vz[lab] for lab in self.schedule.labels]
        if any(phases):
            yield ("diag", _z_diagonal(self.layout, phases))


def schedule_unitary(schedule: PulseSchedule, device: DeviceSpec) -> np.ndarray:
    """Full-space propagator of a schedule (rotations, segments, frames, final virtual-Z)."""
    runner = _ScheduleRunner(schedule, device)
    u = np.eye(schedule.layout.dim, dtype=complex)
    for op in runner.ops():
        if op[0] == "u":
            u = op[1] @ u
        elif op[0] == "seg":
            _, h, dur = op
            u = _propagator_for(h).unitary(dur) @ u
        else:
            u = op[1][:, None] * u
    return u


def evolve_density_batch(schedule: PulseSchedule, device: DeviceSpec, rhos: np.ndarray, collapse: CollapseSet,
                         split_dt: float = DEFAULT_SPLIT_DT) -> np.ndarray:
    """Push a stack of (possibly non-Hermitian) matrices through a schedule with the split integrator."""
    runner = _ScheduleRunner(schedule, device)
    rhos = np.array(rhos, dtype=complex, copy=True)
    for op in runner.ops():
        if op[0] == "u":
            u = op[1]
            rhos = u @ rhos @ u.conj().T
        elif op[0] == "seg":
            _, h, dur = op
            rhos = SplitStepper(h, collapse, split_dt).evolve(rhos, dur)
        else:
            f = op[1]
            rhos = f[:, None] * rhos * f.conj()[None, :]
    return rhos


def _replace_last(traj: Trajectory, obs: _Observables, state: np.ndarray, mode: str) -> Trajectory:
    if mode == "unitary":
        nbar, pops, alpha = obs.from_kets(state[:, None])
    else:
        nbar, pops, alpha = obs.from_rhos(state[None])
    traj.nbar = np.concatenate([traj.nbar[:-1], nbar])
    traj.populations = np.concatenate([traj.populations[:-1], pops])
    traj.alpha = np.concatenate([traj.alpha[:-1], alpha])
    return traj


def run_schedule(schedule: PulseSchedule, device: DeviceSpec, initial: StateVector | DensityOperator,
                 mode: Literal["unitary", "lindblad"] = "unitary", samples_per_segment: int = 0,
                 collapse: CollapseSet | None = None, method: Literal["adaptive", "split"] = "split",
                 split_dt: float = DEFAULT_SPLIT_DT):
    """Execute a schedule; returns (final state, Trajectory).

    `samples_per_segment` > 0 records observables on a uniform grid inside
    every timed segment; otherwise only the segment end points are recorded.
    """
    layout = _validate_schedule(schedule, initial)
    if mode == "unitary" and not isinstance(initial, StateVector):
        raise TypeError("unitary mode runs on a StateVector")
    if mode == "lindblad" and not isinstance(initial, DensityOperator):
        raise TypeError("lindblad mode runs on a DensityOperator")
    if mode not in ("unitary", "lindblad"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "lindblad" and collapse is None:
        collapse = CollapseSet.from_device(device, schedule.labels, layout)
    obs = _Observables(layout)
    runner = _ScheduleRunner(schedule, device)
    t0 = 0.0
    parts = []
    state = initial.amplitudes.copy() if mode == "unitary" else initial.matrix.copy()

    def record(times, states):
        if mode == "unitary":
            nbar, pops, alpha = obs.from_kets(states)
        else:
            nbar, pops, alpha = obs.from_rhos(states)
        parts.append(Trajectory(times, nbar, pops, alpha, None, schedule.labels))

    record(np.array([0.0]), state[:, None] if mode == "unitary" else state[None])
    dirty = False
    for op in runner.ops():
        dirty = op[0] != "seg"
        if op[0] == "u":
            u = op[1]
            state = u @ state if mode == "unitary" else u @ state @ u.conj().T
        elif op[0] == "diag":
            f = op[1]
            state = f * state if mode == "unitary" else f[:, None] * state * f.conj()[None, :]
        else:
            _, h, dur = op
            n = max(samples_per_segment, 1)
            local = np.linspace(0.0, dur, n + 1)[1:]
            if mode == "unitary":
                psis = _propagator_for(h).trajectory(state, local)
                record(t0 + local, psis)
                state = psis[:, -1]
            else:
                if method == "adaptive":
                    traj = lindblad_evolve(Operator(layout, h), collapse, DensityOperator(layout, state),
                                           np.concatenate([[0.0], local]), method="adaptive")
                    parts.append(Trajectory(t0 + local, traj.nbar[1:], traj.populations[1:], traj.alpha[1:], None,
                                            schedule.labels))
                    state = traj.final_state.matrix
                else:
                    stepper = SplitStepper(h, collapse, split_dt)
                    rhos = []
                    prev = 0.0
                    for t in local:
                        state = stepper.evolve(state, t - prev)
                        prev = t
                        rhos.append(state)
                    record(t0 + local, np.array(rhos))
            t0 += dur
    if dirty:
        # instantaneous operations after the last timed segment
        parts[-1] = _replace_last(parts[-1], obs, state, mode)
    final = StateVector(layout, state) if mode == "unitary" else DensityOperator(layout, 0.5 * (state + state.conj().T))
    traj = Trajectory.concatenate(parts)
    traj.final_state = final
    return final, traj


# --------------------------------------------------------------------------
# photon trajectories and truncation


def basis_ket(layout: HilbertLayout, bits: Sequence[int]) -> StateVector:
    levels = list(bits)
    levels.insert(layout.resonator_index, 0)
    return StateVector.basis(layout, levels)


def _parse_bits(bits, n: int) -> tuple[int, ...]:
    if isinstance(bits, str):
        bits = [int(c) for c in bits]
    bits = tuple(int(b) for b in bits)
    if len(bits) != n or any(b not in (0, 1) for b in bits):
        raise ValueError(f"expected {n} computational bits, got {bits}")
    return bits


def drive_schedule(device: DeviceSpec, point: GateOperatingPoint, n_fock: int = DEFAULT_N_FOCK) -> PulseSchedule:
    layout = HilbertLayout.with_resonator(len(point.active_qubits), n_fock)
    return PulseSchedule(point.active_qubits, layout, (ScheduleSegment.from_point(device, point),))


def photon_trajectory(device: DeviceSpec, point: GateOperatingPoint, computational_state, n_fock: int = DEFAULT_N_FOCK,
                      n_samples: int = 250) -> Trajectory:
    """Resonator occupation while the drive is on, for one computational input state."""
    sched = drive_schedule(device, point, n_fock)
    bits = _parse_bits(computational_state, len(point.active_qubits))
    _, traj = run_schedule(sched, device, basis_ket(sched.layout, bits), "unitary", samples_per_segment=n_samples)
    return traj


@dataclass(frozen=True)
class TruncationReport:
    max_deviation: float
    fidelity_deficit: float


def _pad_fock(psi: np.ndarray, layout: HilbertLayout, n_fock_new: int) -> np.ndarray:
    dims = layout.subsystem_dims
    t = psi.reshape(dims)
    pad = [(0, 0)] * len(dims)
    pad[layout.resonator_index] = (0, n_fock_new - dims[layout.resonator_index])
    return np.pad(t, pad).ravel()


def truncation_check(device: DeviceSpec, point: GateOperatingPoint, n_fock_a: int, n_fock_b: int,
                     n_samples: int = 50) -> TruncationReport:
    """Compare drive-segment dynamics at two Fock truncations.

    Every computational basis state and the uniform superposition are
    propagated; the report holds the largest observable difference and the
    worst final-state fidelity deficit.
    """
    if n_fock_b <= n_fock_a:
        raise ValueError("second truncation must be larger")
    n = len(point.active_qubits)
    inputs = [np.array(b) for b in np.ndindex(*(2,) * n)]
    worst_obs = 0.0
    worst_fid = 0.0
    results = {}
    for nf in (n_fock_a, n_fock_b):
        sched = drive_schedule(device, point, nf)
        lay = sched.layout
        states = [basis_ket(lay, b).amplitudes for b in inputs]
        states.append(sum(states) / math.sqrt(len(states)))
        results[nf] = []
        for psi in states:
            _, traj = run_schedule(sched, device, StateVector(lay, psi), "unitary", samples_per_segment=n_samples)
            results[nf].append((traj, traj.final_state.amplitudes, lay))
    for (ta, fa, la), (tb, fb, lb) in zip(results[n_fock_a], results[n_fock_b]):
        dev = max(np.max(np.abs(ta.nbar - tb.nbar)), np.max(np.abs(ta.populations - tb.populations)),
                  np.max(np.abs(ta.alpha - tb.alpha)))
        worst_obs = max(worst_obs, float(dev))
        padded = _pad_fock(fa, la, n_fock_b)
        worst_fid = max(worst_fid, 1.0 - float(abs(np.vdot(padded, fb)) ** 2))
    return TruncationReport(worst_obs, max(worst_fid, 0.0))
