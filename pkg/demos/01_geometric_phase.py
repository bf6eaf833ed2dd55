#!/usr/bin/env python
# coding: utf-8

# # Geometric phase from a driven bus resonator
#
# A resonator driven off resonance by delta traces a closed circle in phase
# space and comes back to the vacuum after T = 1/delta. The enclosed area
# leaves a phase of -2*pi*(Omega/delta)^2 on the state. If any qubit sits in
# |1>, the strongly hybridized |1,n>/|2,n-1> ladder detunes the resonator
# and the circle never opens, so the phase is conditional.
#
# Run with `python demos/01_geometric_phase.py`; it takes a few seconds.

# %%

import math

import numpy as np

from geomsim.config import data_path, load_device_file
from geomsim.dynamics import analytic_driven_cavity, photon_trajectory
from geomsim.gates import fit_ramsey_family, ramsey_experiment

chip = load_device_file(data_path("device_five_qubit.json"))

# ## The bare circle
#
# The closed-form amplitude alpha(t) and phase beta(t) of a driven cavity.

# %%

for t in (0.0, 62.5, 125.0, 187.5, 250.0):
    alpha, beta = analytic_driven_cavity(2.0, 4.0, t)
    print(f"t = {t:6.1f} ns   |alpha|^2 = {abs(alpha)**2:5.3f}   beta = {beta:+.4f} rad")

# ## Ramsey on one qubit
#
# Q3 sits 284 MHz above the resonator with its 1-2 transition +39 MHz away.
# A pi/2 pulse, the drive, then a second pi/2 about an axis at angle theta.
# The phase of the resulting fringe is the geometric phase.

# %%

single = chip.point("single")
dev, cfg = single.device(chip.device), single.gate_config()
w2 = np.arange(0.0, 8.01, 1.0)
theta = np.linspace(0.0, 2 * math.pi, 25, endpoint=False)
surface = ramsey_experiment(dev, cfg, "Q3", "", w2, theta)
minus_beta = -fit_ramsey_family(w2, theta, surface)
for x, y in zip(w2, minus_beta):
    print(f"Omega^2 = {x:4.1f} MHz^2   -beta = {y:7.4f} rad   toy law {2 * math.pi * x / 16:7.4f}")

slope = np.polyfit(w2, minus_beta, 1)[0]
print(f"slope / (2 pi / delta^2) = {slope / (2 * math.pi / 16):.4f}")

# ## Photons only for |00>
#
# Two qubits at the CZ arrangement, drive amplitude 2 MHz. Only the all-ground
# input pumps the resonator; the others stay below a few percent of a photon.

# %%

cz = chip.point("cz")
dev2 = cz.device(chip.device)
point = cz.gate_config().with_omega(2.0).point(dev2)
for bits in ("00", "01", "10", "11"):
    tr = photon_trajectory(dev2, point, bits, n_samples=101)
    k = int(np.argmax(tr.nbar))
    print(f"|{bits}>  peak <n> = {tr.nbar[k]:.4f} at {tr.times[k]:6.1f} ns   final {tr.nbar[-1]:.2e}")
