#!/usr/bin/env python
# coding: utf-8

# # A design with larger anharmonicity
#
# With anharmonicities near 1 GHz the qubits can sit far from the resonator
# while g01 = 38 MHz keeps the dressed |1,n>/|2,n-1> splitting large. The
# gate is recalibrated for each g01 in a +-10% window to see how sensitive
# the fidelity is to fabrication spread.

# %%

from geomsim.characterization import ideal_chi, process_fidelity, qpt
from geomsim.config import data_path, load_device_file
from geomsim.gates import apply_superoperator, calibrate_gate, gate_collapse, ideal_phase_gate, register_superoperator

design = load_device_file(data_path("device_improved.json"))
op = design.point("cz")
device = op.device(design.device)
gate = calibrate_gate(device, op.gate_config())


def fidelity(collapse):
    sup = register_superoperator(gate.schedule, gate.device, collapse, levels=2)
    return process_fidelity(qpt(lambda r: apply_superoperator(sup, r), 2), ideal_chi(ideal_phase_gate(2)))


print(f"CZ without decoherence {fidelity(None):.4f}")
print(f"CZ with 100 us T1/T_phi {fidelity(gate_collapse(gate)):.4f}")

# ## g01 robustness
#
# Same as `geomsim sweep --device .../device_improved.json --n 2
# --param device.qubits.*.g01_mhz --relative --values 0.9:1.1:0.05`.

# %%

import copy

from geomsim.device import DeviceSpec

for scale in (0.9, 0.95, 1.0, 1.05, 1.1):
    doc = copy.deepcopy(design.device.to_dict())
    for q in doc["qubits"]:
        q["g01_mhz"] *= scale
    g = calibrate_gate(op.device(DeviceSpec.from_dict(doc)), op.gate_config())
    print(f"g01 x {scale:4.2f}:  Omega^2 {g.omega_sq:6.3f}  unitary fidelity {g.unitary_fidelity():.4f}")
