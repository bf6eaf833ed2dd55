"""Bell-state preparation with the geometric CZ."""
from __future__ import annotations

import math

import numpy as np

from ..dynamics import CollapseSet
from ..gates import CalibratedGate, apply_superoperator, gate_collapse, ideal_phase_gate, register_superoperator
from ..quantum import concurrence, state_fidelity
from .tomography import MeasurementModel, qst


def _ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


PREPARE = np.kron(_ry(math.pi / 2), _ry(math.pi / 2))  # |00> -> |++>
# diag(-1,1,1,1)|++> = (|1>|+> - |0>|->)/sqrt2; Ry(-pi/2) on the second qubit gives (|01> + |10>)/sqrt2
ANALYZE = np.kron(np.eye(2), _ry(-math.pi / 2))
BELL_TARGET = np.array([0, 1, 1, 0], dtype=complex) / math.sqrt(2)


def bell_from_superoperator(sup: np.ndarray, model: MeasurementModel | None = None,
                            rng: np.random.Generator | None = None) -> tuple[float, float]:
    """(fidelity to (|01> + |10>)/sqrt2, concurrence) for a two-qubit gate superoperator."""
    psi = PREPARE[:, 0]
    rho = apply_superoperator(sup, np.outer(psi, psi.conj()))
    rho, _ = qst(rho, 2, model or MeasurementModel(), rng)
    rho = ANALYZE @ rho @ ANALYZE.conj().T
    return state_fidelity(rho, np.outer(BELL_TARGET, BELL_TARGET.conj())), concurrence(rho)


def bell_state_metrics(gate: CalibratedGate, collapse: CollapseSet | None = None, noisy: bool = True,
                       split_dt: float = 1.0, model: MeasurementModel | None = None,
                       rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Bell fidelity and concurrence produced by a calibrated two-qubit gate.

    With `noisy` the gate runs under the device's T1/T_phi channels (or an
    explicit collapse set); otherwise the unitary propagator is used.
    """
    if gate.config.n != 2:
        raise ValueError("Bell metrics need a two-qubit gate")
    if noisy:
        collapse = collapse or gate_collapse(gate)
    else:
        collapse = None
    sup = register_superoperator(gate.schedule, gate.device, collapse, levels=2, split_dt=split_dt)
    return bell_from_superoperator(sup, model, rng)


def ideal_bell_metrics() -> tuple[float, float]:
    u = ideal_phase_gate(2)
    return bell_from_superoperator(np.kron(u, u.conj()))
