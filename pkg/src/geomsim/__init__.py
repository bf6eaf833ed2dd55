"""Pulse-level simulation and calibration of resonator-mediated geometric phase gates."""
from .device import (
    DeviceSpec,
    GateOperatingPoint,
    QubitParams,
    build_drive_frame_hamiltonian,
    conditional_resonator_frequency,
    dispersive_shift,
    dressed_pair,
    dressed_triple,
    dynamical_phase,
    dynamical_phase_variance,
    load_device,
    solve_zero_stark,
    stark_shift_double,
    stark_shift_single,
)
from .dynamics import (
    CollapseSet,
    PulseSchedule,
    Rotation,
    ScheduleSegment,
    Trajectory,
    analytic_driven_cavity,
    lindblad_evolve,
    photon_trajectory,
    propagate_unitary,
    run_schedule,
    truncation_check,
)
from .gates import (
    CalibratedGate,
    GateConfig,
    PhaseTable,
    build_cphase_schedule,
    calibrate_amplitude,
    calibrate_compensation,
    calibrate_gate,
    extract_conditional_phases,
    fit_ramsey_phase,
    ramsey_experiment,
)
from .quantum import (
    DensityOperator,
    HilbertLayout,
    Operator,
    StateVector,
    coherent_state,
    concurrence,
    embed,
    expectation,
    lowering_op,
    partial_trace,
    state_fidelity,
)

__version__ = "0.1.0"
