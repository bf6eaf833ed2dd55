"""Tomography, randomized benchmarking and Bell-state metrics."""
from .bell import bell_from_superoperator, bell_state_metrics, ideal_bell_metrics
from .benchmarking import RBCurve, RBFitError, RBResult, RBSimulator, fit_rb, rb_curve, rb_run, run_sequence
from .clifford import Clifford, clifford_inverse, clifford_lookup, clifford_sample, clifford_table, mean_primitive_counts
from .tomography import (
    ChiMatrix,
    MeasurementModel,
    TomographyError,
    chi_from_superoperator,
    ideal_chi,
    input_states,
    pauli_labels,
    process_fidelity,
    qpt,
    qst,
)
