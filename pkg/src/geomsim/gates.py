"""Geometric controlled-phase gates: schedules, phase tables, calibration, Ramsey scans.

Phase convention: the geometric phase lands on |0...0>, so the ideal
n-qubit gate is diag(exp(i pi prod_q (1 - s_q))).
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, replace
from typing import Literal, Mapping, Sequence

import numpy as np

from .device import DEFAULT_N_FOCK, DeviceSpec, GateOperatingPoint
from .dynamics import (
    CollapseSet,
    PulseSchedule,
    Rotation,
    ScheduleSegment,
    evolve_density_batch,
    schedule_unitary,
)
from .quantum import HilbertLayout, partial_trace, qubit_rotation

MIN_QUBIT_SEPARATION = 10.0
FREEZE_WINDOW = 60.0
LEAKAGE_LIMIT = 0.1

CompensationMode = Literal["physical_z", "virtual_z"]


class DetuningCollisionError(ValueError):
    pass


class FreezeConditionWarning(UserWarning):
    pass


class NonAdiabaticBreakdownError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    pass


class UnreliableFitError(ValueError):
    pass


def wrap_phase(x):
    """Map angles into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return float(y) if np.ndim(y) == 0 else y


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GateConfig:
    labels: tuple[str, ...]
    detunings: tuple[float, ...]
    drive_omega: float = 0.0
    drive_delta: float = 4.0
    duration: float | None = None
    compensation_mode: CompensationMode = "virtual_z"
    compensation: Mapping[str, float] | None = None
    n_fock: int = DEFAULT_N_FOCK
    min_separation: float = MIN_QUBIT_SEPARATION

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "detunings", tuple(float(d) for d in self.detunings))
        if len(self.labels) != len(self.detunings):
            raise ValueError("one detuning per qubit")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate qubit labels")
        if self.compensation_mode not in ("physical_z", "virtual_z"):
            raise ValueError(f"unknown compensation mode {self.compensation_mode!r}")
        if self.duration is None:
            object.__setattr__(self, "duration", 1000.0 / abs(self.drive_delta))
        if self.compensation is not None:
            object.__setattr__(self, "compensation", dict(self.compensation))
        for (la, da), (lb, db) in itertools.combinations(zip(self.labels, self.detunings), 2):
            if abs(da - db) < self.min_separation:
                raise DetuningCollisionError(f"{la} and {lb} sit {abs(da - db):.3g} MHz apart (< {self.min_separation})")

    @property
    def n(self) -> int:
        return len(self.labels)

    def point(self, device: DeviceSpec) -> GateOperatingPoint:
        return GateOperatingPoint.from_detunings(device, self.labels, self.detunings, self.drive_omega,
                                                 self.drive_delta, self.duration)

    def with_omega(self, drive_omega: float) -> "GateConfig":
        return replace(self, drive_omega=drive_omega)

    def with_compensation(self, phases: Mapping[str, float] | None, mode: CompensationMode | None = None) -> "GateConfig":
        return replace(self, compensation=None if phases is None else dict(phases),
                       compensation_mode=mode or self.compensation_mode)


def gate_layout(config: GateConfig) -> HilbertLayout:
    return HilbertLayout.with_resonator(config.n, config.n_fock)


def compensation_rotations(labels: Sequence[str], phases: Mapping[str, float], mode: CompensationMode) -> tuple[Rotation, ...]:
    kind = "z" if mode == "physical_z" else "virtual_z"
    return tuple(Rotation(lab, float(phases[lab]), kind=kind) for lab in labels if phases.get(lab, 0.0) != 0.0)


def build_cphase_schedule(device: DeviceSpec, config: GateConfig) -> PulseSchedule:
    """Frequency step in, constant drive for the gate time, compensation out."""
    point = config.point(device)
    order = point.active_qubits
    lam = point.shifts(device)
    for lab in order:
        d12 = point.delta_prime(device, lab) + 2.0 * lam[lab]
        if abs(d12) > FREEZE_WINDOW:
            warnings.warn(f"{lab}: 1-2 transition {d12:.1f} MHz from the resonator; excited states will not freeze it",
                          FreezeConditionWarning, stacklevel=2)
    layout = HilbertLayout.with_resonator(len(order), config.n_fock)
    freqs = point.omega01_gate
    segments = [ScheduleSegment.instant(freqs, ()), ScheduleSegment.from_point(device, point)]
    if config.compensation:
        segments.append(ScheduleSegment.instant(freqs, compensation_rotations(order, config.compensation, config.compensation_mode)))
    return PulseSchedule(order, layout, tuple(segments))


# --------------------------------------------------------------------------
# phase tables


def computational_indices(layout: HilbertLayout) -> np.ndarray:
    return layout.computational_indices()


def subset_masks(n: int) -> list[tuple[int, ...]]:
    return [tuple(int(b) for b in bits) for bits in itertools.product((0, 1), repeat=n)]


def moebius_coefficients(phases: np.ndarray, n: int) -> np.ndarray:
    """Coefficients c_T of phi_s = sum_{T subset s} c_T, indexed like the bitstrings.

    The inverse transform is exact (integer alternating sums) before
    wrapping into (-pi, pi].
    """
    c = np.array(phases, dtype=float).reshape((2,) * n)
    for axis in range(n):
        c = np.moveaxis(c, axis, 0)
        c = np.stack([c[0], c[1] - c[0]])
        c = np.moveaxis(c, 0, axis)
    return c.ravel()


def phases_from_coefficients(coeffs: np.ndarray, n: int) -> np.ndarray:
    c = np.array(coeffs, dtype=float).reshape((2,) * n)
    for axis in range(n):
        c = np.moveaxis(c, axis, 0)
        c = np.stack([c[0], c[0] + c[1]])
        c = np.moveaxis(c, 0, axis)
    return c.ravel()


@dataclass(frozen=True)
class PhaseTable:
    """Per-basis-state phases of a diagonal-ish gate on n qubits (first label = most significant bit)."""

    labels: tuple[str, ...]
    phases: np.ndarray
    leakage: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "phases", wrap_phase(np.asarray(self.phases, dtype=float)))
        object.__setattr__(self, "leakage", np.clip(np.asarray(self.leakage, dtype=float), 0.0, 1.0))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def coefficients(self) -> np.ndarray:
        return wrap_phase(moebius_coefficients(self.phases, self.n))

    @property
    def conditional_phase(self) -> float:
        return float(self.coefficients[-1])

    def residual_coefficients(self) -> np.ndarray:
        """Coefficients left after removing chi * prod(1 - s_q) for the measured conditional angle chi.

        prod(1 - s_q) carries coefficient (-1)^|T| on subset T, so an ideal
        gate of any angle has all residuals zero (global term aside).
        """
        n = self.n
        c = moebius_coefficients(self.phases, n)
        chi = (-1) ** n * c[-1]
        weights = np.array([sum(m) for m in subset_masks(n)])
        return wrap_phase(c - chi * (-1.0) ** weights)

    def single_qubit_coefficients(self) -> dict[str, float]:
        res = self.residual_coefficients()
        out = {}
        for q, lab in enumerate(self.labels):
            mask = tuple(1 if i == q else 0 for i in range(self.n))
            out[lab] = float(res[int(np.ravel_multi_index(mask, (2,) * self.n))])
        return out

    def to_dict(self) -> dict:
        keys = ["".join(map(str, m)) for m in subset_masks(self.n)]
        return {
            "labels": list(self.labels),
            "phases_rad": dict(zip(keys, map(float, self.phases))),
            "coefficients_rad": dict(zip(keys, map(float, self.coefficients))),
            "leakage": dict(zip(keys, map(float, self.leakage))),
            "conditional_phase_rad": self.conditional_phase,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def phase_table_from_unitary(u_block: np.ndarray, labels: Sequence[str], check_leakage: bool = True) -> PhaseTable:
    diag = np.diagonal(u_block)
    leak = 1.0 - np.abs(diag) ** 2
    if check_leakage and np.max(leak) > LEAKAGE_LIMIT:
        worst = int(np.argmax(leak))
        raise NonAdiabaticBreakdownError(f"basis state {worst} loses {leak[worst]:.3f} of its weight")
    return PhaseTable(tuple(labels), np.angle(diag), leak)


def computational_unitary(schedule: PulseSchedule, device: DeviceSpec) -> np.ndarray:
    """Propagator restricted to |s, 0_r> for s in {0,1}^n."""
    u = schedule_unitary(schedule, device)
    idx = schedule.layout.computational_indices()
    return u[np.ix_(idx, idx)]


def extract_conditional_phases(schedule: PulseSchedule, device: DeviceSpec, check_leakage: bool = True) -> PhaseTable:
    return phase_table_from_unitary(computational_unitary(schedule, device), schedule.labels, check_leakage)


def ideal_phase_gate(n: int, angle: float = math.pi) -> np.ndarray:
    """diag(exp(i angle prod_q (1 - s_q))): the phase sits on the all-ground state."""
    d = np.ones(2**n, dtype=complex)
    d[0] = np.exp(1j * angle)
    return np.diag(d)


def unitary_fidelity(u: np.ndarray, u_ideal: np.ndarray) -> float:
    """|Tr(U_id^+ U)|^2 / d^2 (insensitive to global phase)."""
    d = u_ideal.shape[0]
    return float(abs(np.trace(u_ideal.conj().T @ u)) ** 2 / d**2)


# --------------------------------------------------------------------------
# calibration


def naive_omega_sq(target: float, delta: float) -> float:
    """Omega^2 (MHz^2) that makes 2 pi (Omega/delta)^2 equal to `target`."""
    return target * delta**2 / (2.0 * math.pi)


def conditional_phase_at(device: DeviceSpec, config: GateConfig, omega_sq: float) -> PhaseTable:
    sched = build_cphase_schedule(device, config.with_omega(math.sqrt(max(omega_sq, 0.0))).with_compensation(None))
    return extract_conditional_phases(sched, device, check_leakage=False)


def calibrate_amplitude(device: DeviceSpec, config: GateConfig, target: float = math.pi, n_scan: int = 33,
                        tol: float = 1e-3, phase_fn=None) -> float:
    """Drive amplitude (MHz) whose conditional phase magnitude equals `target`.

    Omega^2 is scanned from 0 to four times the naive seed, the conditional
    phase is unwrapped along the scan, and the crossing nearest the seed is
    refined by bisection. `phase_fn(omega_sq)` may replace the full model.
    """
    seed = naive_omega_sq(target, config.drive_delta)
    if phase_fn is None:
        def phase_fn(w2):
            return conditional_phase_at(device, config, w2).conditional_phase
    grid = np.linspace(0.0, 4.0 * seed, n_scan)
    raw = np.array([phase_fn(w2) for w2 in grid])
    mag = np.abs(np.unwrap(raw))
    crossings = [i for i in range(n_scan - 1) if (mag[i] - target) * (mag[i + 1] - target) <= 0 and grid[i + 1] >= 0.25 * seed]
    if not crossings:
        raise CalibrationError(f"|conditional phase| never reaches {target:.4g} rad for Omega^2 in [0, {4 * seed:.3g}] MHz^2")
    i = min(crossings, key=lambda j: abs(0.5 * (grid[j] + grid[j + 1]) - seed))
    if not (np.all(np.diff(mag[: i + 2]) >= -1e-6) or np.all(np.diff(mag[i:i + 2]) >= 0)):
        raise CalibrationError("conditional phase is not monotone in Omega^2 over the bracket")
    lo, hi = grid[i], grid[i + 1]
    f_lo = mag[i] - target
    ref = np.unwrap(raw[: i + 1])[-1]

    def mag_at(w2):
        ph = phase_fn(w2)
        # continue the unwrapped branch from the bracket's lower end
        ph = ref + wrap_phase(ph - ref)
        return abs(ph)

    for _ in range(100):
        mid = 0.5 * (lo + hi)
        f_mid = mag_at(mid) - target
        if abs(f_mid) < tol and hi - lo < 1e-6 * max(seed, 1.0):
            break
        if f_mid == 0:
            lo = hi = mid
            break
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    w2 = 0.5 * (lo + hi)
    if abs(mag_at(w2) - target) > tol:
        raise CalibrationError("bisection did not reach the phase tolerance")
    return math.sqrt(w2)


def calibrate_compensation(table: PhaseTable, mode: CompensationMode = "virtual_z") -> dict[str, float]:
    """Per-qubit Z angles that cancel the single-qubit part of the phase table."""
    if mode not in ("physical_z", "virtual_z"):
        raise ValueError(f"unknown compensation mode {mode!r}")
    return {lab: float(wrap_phase(-c)) for lab, c in table.single_qubit_coefficients().items()}


@dataclass(frozen=True)
class CalibratedGate:
    device: DeviceSpec
    config: GateConfig
    schedule: PulseSchedule
    table: PhaseTable
    raw_table: PhaseTable

    @property
    def omega_sq(self) -> float:
        return self.config.drive_omega**2

    def unitary_block(self) -> np.ndarray:
        return computational_unitary(self.schedule, self.device)

    def unitary_fidelity(self) -> float:
        return unitary_fidelity(self.unitary_block(), ideal_phase_gate(self.config.n))


def calibrate_gate(device: DeviceSpec, config: GateConfig, recalibrate_amplitude: bool = True,
                   mode: CompensationMode | None = None) -> CalibratedGate:
    """Amplitude calibration to a pi conditional phase, then full local-phase compensation."""
    mode = mode or config.compensation_mode
    if recalibrate_amplitude or not config.drive_omega:
        config = config.with_omega(calibrate_amplitude(device, config))
    config = config.with_compensation(None, mode)
    raw = extract_conditional_phases(build_cphase_schedule(device, config), device)
    config = config.with_compensation(calibrate_compensation(raw, mode), mode)
    sched = build_cphase_schedule(device, config)
    return CalibratedGate(device, config, sched, extract_conditional_phases(sched, device), raw)


# --------------------------------------------------------------------------
# open-system channels


def register_dims(n: int, levels: int) -> int:
    return levels**n


def _register_indices(layout: HilbertLayout, levels: int) -> np.ndarray:
    """Full-space indices of |s, 0_r> with each qubit level < `levels`."""
    out = []
    for lv in itertools.product(range(levels), repeat=layout.n_qubits):
        full = list(lv)
        full.insert(layout.resonator_index, 0)
        out.append(layout.index(full))
    return np.array(out, dtype=int)


def _qubit_marginal(rhos: np.ndarray, layout: HilbertLayout) -> np.ndarray:
    """Trace out the resonator (last subsystem) from a stack of full-space matrices."""
    dq = 3**layout.n_qubits
    nf = layout.n_fock
    return np.einsum("biaja->bij", rhos.reshape(-1, dq, nf, dq, nf))


def register_superoperator(schedule: PulseSchedule, device: DeviceSpec, collapse: CollapseSet | None,
                           levels: int = 2, split_dt: float = 1.0, chunk: int = 32, map_fn=map) -> np.ndarray:
    """Superoperator (row-stacked vec) of the schedule on the qubit register, resonator starting empty.

    `levels` = 2 keeps the computational block; 3 keeps the full qutrit
    register so leakage is carried between gates. Without a collapse set the
    map is built from the unitary directly. Open-system columns are evolved
    in chunks; `map_fn` may fan the chunks out over a pool.
    """
    layout = schedule.layout
    reg_in = _register_indices(layout, levels)
    # indices of the kept register levels inside the qutrit register (resonator traced out)
    keep = np.array([int(np.ravel_multi_index(lv, (3,) * layout.n_qubits))
                     for lv in itertools.product(range(levels), repeat=layout.n_qubits)])
    D = len(reg_in)
    sup = np.zeros((D * D, D * D), dtype=complex)
    if collapse is None:
        u = schedule_unitary(schedule, device)
        # u restricted to register inputs, all full-space outputs
        cols = u[:, reg_in]
        for a in range(D):
            for b in range(D):
                out = np.outer(cols[:, a], cols[:, b].conj())
                red = _qubit_marginal(out[None], layout)[0]
                sup[:, a * D + b] = red[np.ix_(keep, keep)].ravel()
        return sup
    units = [(a, b) for a in range(D) for b in range(D)]
    blocks = [units[start:start + chunk] for start in range(0, len(units), chunk)]

    def run(block):
        stack = np.zeros((len(block), layout.dim, layout.dim), dtype=complex)
        for i, (a, b) in enumerate(block):
            stack[i, reg_in[a], reg_in[b]] = 1.0
        out = evolve_density_batch(schedule, device, stack, collapse, split_dt)
        return _qubit_marginal(out, layout)[:, keep][:, :, keep]

    for block, red in zip(blocks, map_fn(run, blocks)):
        for i, (a, b) in enumerate(block):
            sup[:, a * D + b] = red[i].ravel()
    return sup


def evolve_register_states(schedule: PulseSchedule, device: DeviceSpec, kets: Sequence[np.ndarray],
                           collapse: CollapseSet | None, split_dt: float = 1.0, map_fn=map) -> list[np.ndarray]:
    """Run qubit-register kets (2^n amplitudes) through the schedule, resonator starting empty.

    Returns qutrit-register density matrices with the resonator traced out,
    one per input, in input order.
    """
    layout = schedule.layout
    reg_in = _register_indices(layout, 2)
    full = np.zeros((len(kets), layout.dim), dtype=complex)
    for i, k in enumerate(kets):
        k = np.asarray(k, dtype=complex)
        if k.shape != (len(reg_in),):
            raise ValueError(f"ket {i} has shape {k.shape}, expected ({len(reg_in)},)")
        full[i, reg_in] = k
    if collapse is None:
        psi = full @ schedule_unitary(schedule, device).T
        return list(_qubit_marginal(np.einsum("bi,bj->bij", psi, psi.conj()), layout))

    def run(psi):
        rho = np.outer(psi, psi.conj())[None]
        return _qubit_marginal(evolve_density_batch(schedule, device, rho, collapse, split_dt), layout)[0]

    return list(map_fn(run, list(full)))


def apply_superoperator(sup: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[-1]
    return (sup @ rho.reshape(-1)).reshape(d, d)


# --------------------------------------------------------------------------
# Ramsey interferometry


def _ramsey_core(device: DeviceSpec, config: GateConfig, test_qubit: str, control_state, omega: float,
                 mode: str, collapse: CollapseSet | None, split_dt: float):
    cfg = config.with_omega(omega)
    sched = build_cphase_schedule(device, cfg)
    labels = sched.labels
    if test_qubit not in labels:
        raise ValueError(f"{test_qubit} is not part of the gate")
    controls = [lab for lab in labels if lab != test_qubit]
    bits = control_state
    if isinstance(bits, str):
        bits = [int(c) for c in bits]
    bits = list(bits)
    if len(bits) != len(controls):
        raise ValueError(f"need {len(controls)} control bits")
    freqs = sched.segments[0].frequencies
    prep = [Rotation(test_qubit, math.pi / 2)]
    prep += [Rotation(lab, math.pi) for lab, b in zip(controls, bits) if b]
    sched = sched.prepend(ScheduleSegment.instant(freqs, prep))
    layout = sched.layout
    ground = np.zeros(layout.dim, dtype=complex)
    ground[layout.index([0] * layout.n_qubits + [0])] = 1.0
    site = labels.index(test_qubit)
    if mode == "unitary":
        psi = schedule_unitary(sched, device) @ ground
        rho = np.outer(psi, psi.conj())
    elif mode == "lindblad":
        if collapse is None:
            collapse = CollapseSet.from_device(device, labels, layout)
        rho = evolve_density_batch(sched, device, np.outer(ground, ground)[None], collapse, split_dt)[0]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return partial_trace(rho, [layout.qubit_sites[site]], layout).matrix


def ramsey_experiment(device: DeviceSpec, config: GateConfig, test_qubit: str, control_state,
                      omega_sq_grid: Sequence[float], theta_grid: Sequence[float],
                      mode: Literal["unitary", "lindblad"] = "unitary", collapse: CollapseSet | None = None,
                      split_dt: float = 1.0) -> np.ndarray:
    """Test-qubit P1 after X_pi/2, drive, optional compensation and a pi/2 pulse about axis theta.

    Returns an array of shape (len(omega_sq_grid), len(theta_grid)).
    """
    omega_sq_grid = np.asarray(omega_sq_grid, dtype=float)
    theta_grid = np.asarray(theta_grid, dtype=float)
    if omega_sq_grid.size == 0 or theta_grid.size == 0:
        raise ValueError("grids must be non-empty")
    rots = [qubit_rotation(math.pi / 2, th) for th in theta_grid]
    surface = np.empty((omega_sq_grid.size, theta_grid.size))
    for i, w2 in enumerate(omega_sq_grid):
        if w2 < 0:
            raise ValueError("Omega^2 must be non-negative")
        rho_t = _ramsey_core(device, config, test_qubit, control_state, math.sqrt(w2), mode, collapse, split_dt)
        for j, r in enumerate(rots):
            surface[i, j] = float(np.real((r @ rho_t @ r.conj().T)[1, 1]))
    return surface


def ramsey_csv_rows(omega_sq_grid, theta_grid, surface):
    for i, w2 in enumerate(omega_sq_grid):
        for j, th in enumerate(theta_grid):
            yield (float(w2), float(th), float(surface[i, j]))


def fit_ramsey_phase(theta: Sequence[float], p1: Sequence[float], min_contrast: float = 0.05) -> tuple[float, float]:
    """Least-squares fit of A + C cos(beta + theta); returns (beta in (-pi, pi], C/A)."""
    theta = np.asarray(theta, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if theta.size < 4:
        raise UnreliableFitError("need at least four theta samples")
    if np.ptp(theta) < math.pi - 1e-12:
        raise UnreliableFitError("theta samples must span at least pi")
    design = np.column_stack([np.ones_like(theta), np.cos(theta), np.sin(theta)])
    (a, b, c), *_ = np.linalg.lstsq(design, p1, rcond=None)
    amp = math.hypot(b, c)
    contrast = amp / a if a > 0 else 0.0
    if contrast < min_contrast:
        raise UnreliableFitError(f"contrast {contrast:.3g} below {min_contrast}")
    beta = wrap_phase(math.atan2(-c, b))
    return beta, float(min(contrast, 1.0))


def fit_ramsey_family(omega_sq_grid: Sequence[float], theta: Sequence[float], surface: np.ndarray) -> np.ndarray:
    """Fitted phases along an Omega^2 family, unwrapped by nearest-branch continuity."""
    order = np.argsort(omega_sq_grid)
    betas = np.array([fit_ramsey_phase(theta, surface[i])[0] for i in order])
    out = np.empty_like(betas)
    out[order] = np.unwrap(betas)
    return out


# --------------------------------------------------------------------------
# fidelity of open-system gates and operating-point search


def ideal_superoperator(u: np.ndarray) -> np.ndarray:
    """Row-stacked superoperator of rho -> U rho U^+."""
    return np.kron(u, u.conj())


def superoperator_fidelity(sup: np.ndarray, u_ideal: np.ndarray) -> float:
    """Process fidelity Re Tr(S_id^+ S) / d^2; leakage out of the block counts as error."""
    d = u_ideal.shape[0]
    return float(np.real(np.trace(ideal_superoperator(u_ideal).conj().T @ sup)) / d**2)


def gate_collapse(gate: CalibratedGate, relaxation: bool = True, dephasing: bool = True,
                  resonator: bool = True) -> CollapseSet:
    return CollapseSet.from_device(gate.device, gate.config.labels, gate.schedule.layout,
                                   relaxation=relaxation, dephasing=dephasing, resonator=resonator)


def gate_process_fidelity(gate: CalibratedGate, collapse: CollapseSet | None = None, split_dt: float = 1.0) -> float:
    """Computational-block process fidelity of a calibrated gate, with or without decoherence."""
    if collapse is None:
        return gate.unitary_fidelity()
    sup = register_superoperator(gate.schedule, gate.device, collapse, levels=2, split_dt=split_dt)
    return superoperator_fidelity(sup, ideal_phase_gate(gate.config.n))


def tune_detunings(device: DeviceSpec, config: GateConfig, step: float = 5.0, span: int = 2,
                   rounds: int = 3) -> tuple[GateConfig, float]:
    """Coordinate search of the per-qubit detunings for the best calibrated unitary fidelity.

    Each qubit is moved in turn over `2 span + 1` points spaced by `step`
    MHz while the others stay put; the sweep repeats until no move helps or
    `rounds` passes are done. Points that fail to calibrate are skipped.
    """
    def score(cfg):
        try:
            return calibrate_gate(device, cfg).unitary_fidelity()
        except (CalibrationError, NonAdiabaticBreakdownError, DetuningCollisionError):
            return -1.0

    best_cfg, best = config, score(config)
    for _ in range(rounds):
        moved = False
        for q in range(config.n):
            for j in range(-span, span + 1):
                if j == 0:
                    continue
                det = list(best_cfg.detunings)
                det[q] += j * step
                try:
                    cand = replace(best_cfg, detunings=tuple(det))
                except DetuningCollisionError:
                    continue
                f = score(cand)
                if f > best + 1e-9:
                    best_cfg, best, moved = cand, f, True
        if not moved:
            break
    return best_cfg, best
