#!/usr/bin/env python
# coding: utf-8

# # Interleaved randomized benchmarking
#
# Random two-qubit Cliffords are built from single-qubit primitives and CZs.
# Single-qubit layers are ideal rotations followed by 20 ns of idle
# decoherence; the CZ is the simulated gate's full superoperator on two
# qutrits, so leakage is carried through the sequence. The short sequence set
# below keeps the runtime near a minute.

# %%

import numpy as np

from geomsim.characterization import RBSimulator, mean_primitive_counts, rb_run
from geomsim.config import data_path, load_device_file
from geomsim.gates import calibrate_gate

single, cz = mean_primitive_counts(2)
print(f"per Clifford: {single:.2f} single-qubit primitives, {cz:.2f} CZ")

# ## Noiseless check
#
# Every sequence ends with its exact inverse, so survival is 1.

# %%

clean = rb_run(RBSimulator.noiseless(2), [1, 5, 10], 4, seed=1)
print(f"noiseless: p_ref {clean.p_ref:.6f}, interleaved fidelity {clean.fidelity:.6f}")

# ## With the device's decoherence
#
# Eight sequences per length is a small sample, and F drifts by a few
# percent between seeds here. `geomsim rb` uses m up to 15 with 20
# sequences per length, which is what the acceptance suite runs.

# %%

chip = load_device_file(data_path("device_five_qubit.json"))
op = chip.point("cz")
gate = calibrate_gate(op.device(chip.device), op.gate_config())
sim = RBSimulator.from_gate(gate)
res = rb_run(sim, [1, 3, 6, 10], 8, seed=1234)
for m, a, b in zip(res.reference.lengths, res.reference.means, res.interleaved.means):
    print(f"m = {m:2d}   reference {a:.4f}   interleaved {b:.4f}")
print(f"p_ref {res.p_ref:.4f}  p_CZ {res.p_interleaved:.4f}  F = {res.fidelity:.4f}")
print("sequence spread (sem) at the longest length:", np.round(res.reference.sems[-1], 4))
