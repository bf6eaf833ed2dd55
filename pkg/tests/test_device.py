import math

import numpy as np
import pytest

from geomsim.device import (
    MHZ_TO_RAD_PER_NS,
    DeviceSpec,
    DispersiveRegimeError,
    GateOperatingPoint,
    NoRootError,
    PerturbativeValidityError,
    QubitParams,
    build_drive_frame_hamiltonian,
    conditional_resonator_frequency,
    dispersive_shift,
    dressed_pair,
    dressed_triple,
    dynamical_phase,
    dynamical_phase_variance,
    hamiltonian_parts,
    pair_at_point,
    sample_dynamical_phase,
    solve_zero_stark,
    stark_shift_double,
    stark_shift_single,
    to_angular,
    to_mhz,
    triple_at_point,
)
from geomsim.quantum import embed, number_op


def qubit(label, w, a, g, t1=15.0, k=0.6):
    return QubitParams(label, w, a, g, t1, 15.0, crosstalk_k=k)


@pytest.fixture
def cz_device():
    return DeviceSpec([qubit("Q1", 6031, 245, 20.9), qubit("Q5", 6036, 244, 19.8)], 5585.0, 13.0)


# ---------------------------------------------------------------- schema and units

def test_unit_round_trip():
    for f in (0.0, 1.0, 284.0, -3.5):
        assert to_mhz(to_angular(f)) == pytest.approx(f, abs=1e-12)
    assert MHZ_TO_RAD_PER_NS == pytest.approx(2 * math.pi * 1e-3)


def test_qubit_invariants():
    q = qubit("Q", 6000, 245, 20.0)
    assert q.g12 == pytest.approx(math.sqrt(2) * 20.0)
    for bad in (dict(t1=0), dict(g01=-1), dict(anharmonicity=0), dict(t_phi=-2)):
        kw = dict(label="Q", omega01_sweet=6000, anharmonicity=245, g01=20, t1=10, t_phi=10)
        kw.update(bad)
        with pytest.raises(ValueError):
            QubitParams(**kw)


def test_device_invariants():
    with pytest.raises(ValueError):
        DeviceSpec([], 5585, 13)
    q = qubit("Q", 6000, 245, 20.0)
    with pytest.raises(ValueError):
        DeviceSpec([q, q], 5585, 13)
    with pytest.raises(ValueError):
        DeviceSpec([q], -1, 13)


def test_device_dict_round_trip(cz_device):
    again = DeviceSpec.from_dict(cz_device.to_dict())
    assert again == cz_device
    bad = cz_device.to_dict()
    bad["qubits"][0]["typo_mhz"] = 1.0
    with pytest.raises(KeyError):
        DeviceSpec.from_dict(bad)


def test_operating_point_defaults(cz_device):
    p = GateOperatingPoint.from_detunings(cz_device, ["Q5", "Q1"], [285, 264], 2.0, 4.0)
    assert p.active_qubits == ("Q1", "Q5")  # device order, not argument order
    assert p.duration == pytest.approx(250.0)
    # the detunings are measured from the all-ground resonator frequency
    w_r = p.resonator_frequency(cz_device)
    assert p.frequency("Q1") - w_r == pytest.approx(264.0, abs=1e-9)
    assert p.frequency("Q5") - w_r == pytest.approx(285.0, abs=1e-9)
    with pytest.raises(ValueError):
        GateOperatingPoint(("Q1",), (6000.0,), 1.0, 0.0)


# ---------------------------------------------------------------- dispersive physics

def test_dispersive_shift_values():
    assert dispersive_shift(20.1, 5869.0, 5585.0) == pytest.approx(20.1**2 / 284.0, rel=1e-12)
    assert dispersive_shift(20.1, 5869.0, 5585.0) == pytest.approx(1.4226, abs=1e-4)
    assert dispersive_shift(1e-9, 5869.0, 5585.0) == pytest.approx(0.0, abs=1e-15)
    assert dispersive_shift(20.1, 5585.0 - 284.0, 5585.0) == pytest.approx(-20.1**2 / 284.0)


def test_dispersive_guard():
    with pytest.raises(DispersiveRegimeError):
        dispersive_shift(20.0, 5600.0, 5585.0)


def test_conditional_resonator_frequency(cz_device):
    p = GateOperatingPoint.from_detunings(cz_device, ["Q1", "Q5"], [264, 285], 2.0, 4.0)
    lam = p.shifts(cz_device)
    w_r = conditional_resonator_frequency(cz_device, p, [0, 0])
    assert w_r == pytest.approx(5585.0 - sum(lam.values()), abs=1e-12)
    assert conditional_resonator_frequency(cz_device, p, [1, 0]) == pytest.approx(w_r + 2 * lam["Q1"], abs=1e-12)
    assert conditional_resonator_frequency(cz_device, p, [1, 1]) == pytest.approx(
        w_r + 2 * lam["Q1"] + 2 * lam["Q5"], abs=1e-12)


# ---------------------------------------------------------------- Hamiltonian

def test_hamiltonian_hermitian_and_excitation_conserving(cz_device):
    p = GateOperatingPoint.from_detunings(cz_device, ["Q1", "Q5"], [264, 285], 2.0, 4.0)
    h = build_drive_frame_hamiltonian(cz_device, p, n_fock=6).matrix
    assert np.max(np.abs(h - h.conj().T)) < 1e-12
    parts = hamiltonian_parts(cz_device, p, n_fock=6)
    lay = parts.layout
    n_tot = embed(number_op(6), 2, lay).matrix
    for site in (0, 1):
        n_tot = n_tot + embed(np.diag([0.0, 1.0, 2.0]), site, lay).matrix
    h0 = parts.at(0.0)
    assert np.max(np.abs(h0 @ n_tot - n_tot @ h0)) < 1e-12


def test_hamiltonian_diagonal_without_couplings(cz_device):
    p = GateOperatingPoint.from_detunings(cz_device, ["Q1"], [264], 0.0, 4.0)
    dev = DeviceSpec([qubit("Q1", 6031, 245, 20.9, k=0.0)], 5585.0, 13.0)
    parts = hamiltonian_parts(dev, p, n_fock=4, couplings=False)
    h = parts.at(0.0)
    assert np.allclose(h, np.diag(np.diag(h)))
    w_d = p.drive_frequency(dev)
    w01 = p.frequency("Q1")
    lay = parts.layout
    assert h[lay.index([1, 0]), lay.index([1, 0])] == pytest.approx(to_angular(w01 - w_d))
    assert h[lay.index([2, 0]), lay.index([2, 0])] == pytest.approx(to_angular(2 * w01 - 245 - 2 * w_d))
    assert h[lay.index([0, 1]), lay.index([0, 1])] == pytest.approx(to_angular(5585.0 - w_d))


# ---------------------------------------------------------------- dressed spectra

def test_dressed_pair_resonant_and_decoupled():
    pr = dressed_pair(0.0, 10.0)
    assert pr.e_plus - pr.e_minus == pytest.approx(20.0)
    assert pr.theta_mix == pytest.approx(math.pi / 2)
    pr = dressed_pair(30.0, 1e-9)
    assert pr.e_plus == pytest.approx(30.0, abs=1e-9)
    assert pr.theta_mix == pytest.approx(0.0, abs=1e-9)


def test_dressed_pair_matches_eigensolve_on_random_draws():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        dp = rng.uniform(-100, 100)
        g = rng.uniform(0.1, 60)
        pr = dressed_pair(dp, g)
        numeric = np.linalg.eigvalsh(np.array([[dp, g], [g, 0.0]]))
        scale = max(abs(dp), g)
        assert abs(pr.e_minus - numeric[0]) <= 1e-12 * scale
        assert abs(pr.e_plus - numeric[1]) <= 1e-12 * scale
        v = pr.eigenvectors()
        assert np.allclose(v.T @ v, np.eye(2), atol=1e-12)
        assert 0 < pr.theta_mix < math.pi


def test_dressed_pair_at_the_cz_point(cz_device):
    p = GateOperatingPoint.from_detunings(cz_device, ["Q1", "Q5"], [264, 285], math.sqrt(7), 4.0)
    pr = pair_at_point(cz_device, p, "Q5")
    dp = p.delta_prime(cz_device, "Q5")
    g = math.sqrt(2) * 19.8
    numeric = np.linalg.eigvalsh(np.array([[dp, g], [g, 0.0]]))
    assert pr.e_minus == pytest.approx(numeric[0], rel=1e-12)
    assert pr.e_plus == pytest.approx(numeric[1], rel=1e-12)


def test_dressed_triple_special_cases():
    t = dressed_triple(0.0, 0.0, 3.0, 4.0)
    assert np.allclose(t.e_k, [-5.0, 0.0, 5.0], atol=1e-12)
    pr = dressed_pair(20.0, 25.0)
    t = dressed_triple(20.0, 7.0, 25.0, 1e-7)
    assert np.allclose(sorted(t.e_k), sorted([pr.e_minus, pr.e_plus, 7.0]), atol=1e-6)


def test_dressed_triple_matches_eigensolve_on_random_draws():
    rng = np.random.default_rng(21)
    for _ in range(1000):
        d1, d2 = rng.uniform(-100, 100, 2)
        g1, g2 = rng.uniform(0.1, 60, 2)
        t = dressed_triple(d1, d2, g1, g2)
        mat = np.array([[d1, 0, g1], [0, d2, g2], [g1, g2, 0.0]])
        numeric = np.linalg.eigvalsh(mat)
        scale = max(abs(d1), abs(d2), g1, g2)
        assert np.max(np.abs(np.array(t.e_k) - numeric)) <= 1e-9 * scale
        w = t.weights
        assert np.allclose(w.T @ w, np.eye(3), atol=1e-9)
        assert np.allclose(mat @ w, w * np.array(t.e_k), atol=1e-9 * scale)


def test_dressed_triple_at_the_cz_point(cz_device):
    p = GateOperatingPoint.from_detunings(cz_device, ["Q1", "Q5"], [264, 285], math.sqrt(7), 4.0)
    t = triple_at_point(cz_device, p, "Q1", "Q5")
    assert len(t.e_k) == 3 and t.e_k[0] <= t.e_k[1] <= t.e_k[2]


# ---------------------------------------------------------------- Stark shifts

def test_stark_single_reductions():
    pr = dressed_pair(0.0, 25.0, delta=-60.0)
    om = 2.0
    expect = om**2 * (0.5 / pr.delta_plus + 0.5 / pr.delta_minus)
    assert stark_shift_single(om, 0.0, pr) == pytest.approx(expect, rel=1e-14)
    assert stark_shift_single(0.0, 0.6, pr) == 0.0


def test_stark_single_formula_by_independent_arithmetic():
    rng = np.random.default_rng(22)
    for _ in range(200):
        dp, g, k, om = rng.uniform(-80, 80), rng.uniform(5, 40), rng.uniform(0, 1), rng.uniform(0, 3)
        pr = dressed_pair(dp, g, delta=rng.uniform(-5, 5), lam=rng.uniform(0, 2))
        # tan(theta) = 2 g / dp  -> half-angle functions without trig calls
        r = math.hypot(2 * g, dp)
        c = math.sqrt((1 + dp / r) / 2)
        s = math.sqrt((1 - dp / r) / 2)
        ref = om**2 * ((k * c + s) ** 2 / pr.delta_plus + (k * s - c) ** 2 / pr.delta_minus)
        assert stark_shift_single(om, k, pr, check=False) == pytest.approx(ref, rel=1e-12, abs=1e-14)


def test_stark_guard():
    pr = dressed_pair(0.0, 25.0, delta=-20.0)
    with pytest.raises(PerturbativeValidityError):
        stark_shift_single(10.0, 0.6, pr)


def _adiabatic_shift(device, point, bits, omega):
    """Energy shift (MHz) of the eigenstate continuously connected to |bits, 0> as the drive turns on."""
    parts = hamiltonian_parts(device, point, n_fock=8)
    lay = parts.layout
    target = lay.index(list(bits) + [0])
    energies = []
    vec = None
    for om in np.linspace(0.0, omega, 21):
        w, v = np.linalg.eigh(parts.at(om))
        if vec is None:
            j = int(np.argmax(np.abs(v[target]) ** 2))
        else:
            j = int(np.argmax(np.abs(v.conj().T @ vec)))
        vec = v[:, j]
        energies.append(w[j])
    return to_mhz(energies[-1] - energies[0])


def test_stark_single_against_full_hamiltonian():
    # Q1 alone at its CZ detuning; near the zero-Stark root (Q5 at 285 MHz) the two
    # doublet terms cancel to ~15% of their size and a relative comparison is meaningless
    dev = DeviceSpec([qubit("Q1", 6031, 245, 20.9)], 5585.0, 13.0)
    p = GateOperatingPoint.from_detunings(dev, ["Q1"], [264], 1.0, 4.0)
    eps = stark_shift_single(1.0, 0.6, pair_at_point(dev, p, "Q1"))
    full = _adiabatic_shift(dev, p, [1], 1.0)
    assert full == pytest.approx(eps, rel=0.10)


def test_stark_double_reductions():
    t = dressed_triple(20.0, 50.0, 25.0, 1e-7, delta=-40.0)
    pr = dressed_pair(20.0, 25.0, delta=-40.0)
    assert stark_shift_double(0.0, 0.6, 0.6, t) == 0.0
    assert stark_shift_double(1.0, 0.0, 0.0, t) == pytest.approx(stark_shift_single(1.0, 0.0, pr), rel=1e-6)


def test_stark_double_against_full_hamiltonian(cz_device):
    p = GateOperatingPoint.from_detunings(cz_device, ["Q1", "Q5"], [264, 285], 1.0, 4.0)
    eps2 = stark_shift_double(1.0, 0.6, 0.6, triple_at_point(cz_device, p, "Q1", "Q5"))
    full = _adiabatic_shift(cz_device, p, [1, 1], 1.0)
    assert full == pytest.approx(eps2, rel=0.10)


# ---------------------------------------------------------------- zero-Stark design

@pytest.fixture
def q3_setup():
    dev = DeviceSpec([qubit("Q3", 6039, 245, 20.1)], 5585.0, 13.0)
    return dev, GateOperatingPoint.from_detunings(dev, ["Q3"], [284], 2.0, 4.0)


def test_zero_stark_root_and_grid_oracle(q3_setup):
    dev, p = q3_setup
    lam = p.shifts(dev)["Q3"]
    g12 = dev.qubit("Q3").g12

    def eps(dp):
        return stark_shift_single(2.0, 0.6, dressed_pair(dp, g12, p.drive_delta, lam), check=False)

    root = solve_zero_stark(dev, p, "Q3", 0.6)
    assert abs(eps(root)) < 1e-6
    # dense-grid oracle: sign changes of eps away from its poles
    grid = np.arange(-20.0, 80.0, 0.01)
    vals = np.array([eps(x) for x in grid])
    flips = [i for i in range(len(grid) - 1) if np.sign(vals[i]) != np.sign(vals[i + 1])
             and abs(vals[i]) + abs(vals[i + 1]) < 1.0]
    nearest = min(flips, key=lambda i: abs(grid[i]))
    assert abs(root - grid[nearest]) <= 0.01 + 1e-9


def test_zero_stark_is_continuous_in_k(q3_setup):
    dev, p = q3_setup
    assert abs(solve_zero_stark(dev, p, "Q3", 0.6) - solve_zero_stark(dev, p, "Q3", 0.59)) < 1.0


def test_zero_stark_without_root(q3_setup):
    dev, p = q3_setup
    with pytest.raises(NoRootError) as info:
        solve_zero_stark(dev, p, "Q3", 0.6, window=(60.0, 80.0))
    assert info.value.profile is not None


# ---------------------------------------------------------------- phases and noise

def test_dynamical_phase_units():
    assert dynamical_phase(0.0, 250.0) == 0.0
    assert dynamical_phase(1.0, 250.0) == pytest.approx(-math.pi / 2)
    assert dynamical_phase(2.0, 250.0) == pytest.approx(2 * dynamical_phase(1.0, 250.0))
    assert dynamical_phase(1.0, 500.0) == pytest.approx(2 * dynamical_phase(1.0, 250.0))


def test_phase_variance_limits():
    th, sig, om, T = 0.5, 0.05, 2.0, 250.0
    slow = 4 * th**2 * sig**2 / om**2
    assert dynamical_phase_variance(th, sig, 0.04, T, om) == pytest.approx(slow, rel=0.01)  # Gamma T = 0.01
    assert dynamical_phase_variance(th, sig, 1e9, T, om) < 1e-8 * slow
    with pytest.raises(ValueError):
        dynamical_phase_variance(th, sig, 1.0, T, 0.0)


def test_phase_variance_decreases_with_bandwidth():
    vals = [dynamical_phase_variance(0.3, 0.1, g, 250.0, 2.0) for g in np.logspace(-4, 4, 60)]
    assert np.all(np.diff(vals) < 0)


def test_phase_variance_series_branch_is_continuous():
    a = dynamical_phase_variance(0.3, 0.1, 0.39999, 0.25, 2.0)
    b = dynamical_phase_variance(0.3, 0.1, 0.40001, 0.25, 2.0)
    assert a == pytest.approx(b, rel=1e-4)


@pytest.mark.parametrize("gamma", [0.04, 1.0, 4.0, 40.0])
def test_phase_variance_against_monte_carlo(gamma):
    th, sig, om, T = 0.4, 0.05, 2.0, 250.0
    draws = sample_dynamical_phase(th, sig, gamma, T, om, n_samples=10_000, rng=np.random.default_rng(7))
    assert np.var(draws) == pytest.approx(dynamical_phase_variance(th, sig, gamma, T, om), rel=0.05)
