#!/usr/bin/env python
# coding: utf-8

# # Calibrating and characterizing the two-qubit gate
#
# Steps: find the drive strength that makes the conditional phase pi,
# cancel the leftover single-qubit phases with virtual Z rotations, then run
# process tomography and a Bell-state preparation with T1/T_phi switched on.
# About ten seconds on one core.

# %%

import numpy as np

from geomsim.characterization import bell_from_superoperator, ideal_chi, process_fidelity, qpt
from geomsim.config import data_path, load_device_file
from geomsim.gates import (
    apply_superoperator,
    calibrate_gate,
    gate_collapse,
    ideal_phase_gate,
    register_superoperator,
)

chip = load_device_file(data_path("device_five_qubit.json"))
op = chip.point("cz")
device = op.device(chip.device)

gate = calibrate_gate(device, op.gate_config())
print(f"calibrated Omega^2 = {gate.omega_sq:.3f} MHz^2")

# ## Phase tables before and after compensation
#
# Raw phases are dominated by |00>, the only input that moves the resonator.

# %%

for name, table in (("raw", gate.raw_table), ("compensated", gate.table)):
    print(name, np.round(table.phases, 4), "conditional", round(table.conditional_phase, 4))
print("leakage per input", np.round(gate.table.leakage, 4))
print(f"computational-block unitary fidelity {gate.unitary_fidelity():.4f}")

# ## Process tomography with decoherence
#
# The 16 product inputs go through the open-system superoperator; chi comes
# from linear inversion and is compared to the ideal phase gate.

# %%

sup = register_superoperator(gate.schedule, gate.device, gate_collapse(gate), levels=2)
chi = qpt(lambda rho: apply_superoperator(sup, rho), 2)
print(f"process fidelity {process_fidelity(chi, ideal_chi(ideal_phase_gate(2))):.4f}")
big = np.argsort(-np.abs(np.diag(chi.matrix)))[:4]
for i in big:
    print(f"  chi[{chi.labels[i]},{chi.labels[i]}] = {chi.matrix[i, i].real:.4f}")

# ## Bell state

# %%

fid, conc = bell_from_superoperator(sup)
print(f"Bell fidelity {fid:.4f}, concurrence {conc:.4f}")
