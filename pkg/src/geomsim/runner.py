"""Scenario execution: one function per experiment kind, shared output handling.

Every experiment computes into memory first. Files are written only after
the whole computation succeeded, so a failed run leaves no partial output.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .characterization import (
    MeasurementModel,
    RBSimulator,
    bell_from_superoperator,
    ideal_chi,
    process_fidelity,
    qpt,
    rb_run,
)
from .characterization.tomography import average_state_fidelity, basis_and_plus_states
from .config import (
    ConfigError,
    DeviceFile,
    OperatingPoint,
    RunManifest,
    ScenarioConfig,
    _json_default,
    load_acceptance,
    load_device_file,
    now,
)
from .device import DeviceSpec, dynamical_phase_variance, sample_dynamical_phase
from .dynamics import DEFAULT_SPLIT_DT, photon_trajectory
from .gates import (
    CalibrationError,
    CalibratedGate,
    GateConfig,
    apply_superoperator,
    calibrate_gate,
    evolve_register_states,
    fit_ramsey_family,
    gate_collapse,
    ideal_phase_gate,
    ramsey_experiment,
    register_superoperator,
    superoperator_fidelity,
)

log = logging.getLogger(__name__)

POINT_BY_SIZE = {1: "single", 2: "cz", 3: "ccz", 4: "cccz"}
RB_LENGTHS = (1, 3, 6, 10, 15)


# --------------------------------------------------------------------------
# small helpers


def parse_range(values) -> list[float]:
    """'a:b:step' (inclusive of b within rounding), a single number, or a list."""
    if isinstance(values, (list, tuple)):
        return [float(x) for x in values]
    if isinstance(values, (int, float)):
        return [float(values)]
    parts = str(values).split(":")
    if len(parts) == 1:
        return [float(x) for x in parts[0].split(",") if x.strip()]
    if len(parts) != 3:
        raise ConfigError(f"range {values!r} must look like start:stop:step")
    a, b, step = map(float, parts)
    if step <= 0:
        raise ConfigError(f"range {values!r}: step must be positive")
    if b < a:
        raise ConfigError(f"range {values!r}: stop is below start")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return [a + i * step for i in range(n)]


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for row in rows:
        w.writerow([f"{x:.17g}" if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n"


@contextmanager
def job_pool(jobs: int | None):
    """A `map` callable backed by a thread pool, or the builtin when one job is asked for."""
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        yield ex.map


class RunContext:
    """What every experiment sees: resolved device, point, overrides and the output buffer."""

    def __init__(self, config: ScenarioConfig, device_file: DeviceFile, map_fn: Callable):
        self.config = config
        self.device_file = device_file
        self.map = map_fn
        self.files: dict[str, str] = {}
        self.results: dict[str, Any] = {}
        self.params = dict(config.params)

    @property
    def split_dt(self) -> float:
        return float(self.config.integrator.get("split_dt_ns", DEFAULT_SPLIT_DT))

    def emit(self, name: str, text: str) -> None:
        if name in self.files:
            raise RuntimeError(f"output {name} emitted twice")
        self.files[name] = text

    def point(self, default: str | None = None) -> OperatingPoint:
        name = self.config.operating_point or default
        if name is None:
            raise ConfigError("scenario.operating_point: required for this experiment")
        return self.device_file.point(name)

    def device_for(self, point: OperatingPoint) -> DeviceSpec:
        return point.device(self.device_file.device)

    def gate_config(self, point: OperatingPoint) -> GateConfig:
        g = self.config.gate
        kw: dict[str, Any] = {}
        if "detunings_mhz" in g:
            kw["detunings"] = tuple(float(x) for x in g["detunings_mhz"])
        if "drive_omega_sq_mhz2" in g:
            kw["drive_omega"] = math.sqrt(float(g["drive_omega_sq_mhz2"]))
        if "drive_delta_mhz" in g:
            kw["drive_delta"] = float(g["drive_delta_mhz"])
            if "duration_ns" not in g and point.duration is None:
                kw["duration"] = None
        if "duration_ns" in g:
            kw["duration"] = float(g["duration_ns"])
        if "compensation_mode" in g:
            kw["compensation_mode"] = g["compensation_mode"]
        if "n_fock" in g:
            kw["n_fock"] = int(g["n_fock"])
        return point.gate_config(**kw)

    def calibrated(self, point: OperatingPoint) -> CalibratedGate:
        recal = bool(self.config.gate.get("recalibrate", True))
        return calibrate_gate(self.device_for(point), self.gate_config(point), recalibrate_amplitude=recal)

    def measurement(self) -> MeasurementModel:
        m = self.config.measurement
        kw: dict[str, Any] = {}
        for key in ("mode", "shots", "correct_readout", "project_psd"):
            if key in m:
                kw[key] = m[key]
        if "confusion" in m:
            kw["confusion"] = np.asarray(m["confusion"], dtype=float)
        return MeasurementModel(**kw)

    def rng(self, *path: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.config.seed, spawn_key=tuple(path)))


# --------------------------------------------------------------------------
# experiments


def _ramsey(ctx: RunContext) -> None:
    point = ctx.point("single")
    device = ctx.device_for(point)
    cfg = ctx.gate_config(point).with_compensation(None)
    qubit = ctx.params.get("qubit", cfg.labels[0])
    n_controls = cfg.n - 1
    control = str(ctx.params.get("control_state", "0" * n_controls))
    omega_sq = parse_range(ctx.params.get("omega_sq", "0:8:0.5"))
    theta = parse_range(ctx.params.get("theta", "0:6.283:0.26"))
    surface = ramsey_experiment(device, cfg, qubit, control, omega_sq, theta)
    ctx.emit("ramsey_surface.csv", csv_text(
        ("omega_sq_mhz2", "theta_rad", "p1"),
        ((w2, th, surface[i, j]) for i, w2 in enumerate(omega_sq) for j, th in enumerate(theta))))
    phases = fit_ramsey_family(omega_sq, theta, surface)
    minus_beta = -(phases - phases[0])
    theory = 2.0 * math.pi / cfg.drive_delta**2
    ctx.emit("ramsey_phase.csv", csv_text(
        ("omega_sq_mhz2", "minus_beta_rad", "theory_rad"),
        ((w2, mb, theory * w2) for w2, mb in zip(omega_sq, minus_beta))))
    if len(omega_sq) >= 2:
        slope = float(np.polyfit(omega_sq, minus_beta, 1)[0])
        ctx.results.update(slope_rad_per_mhz2=slope, slope_theory=theory, slope_ratio=slope / theory)


def _trajectory(ctx: RunContext) -> None:
    point = ctx.point("cz")
    device = ctx.device_for(point)
    cfg = ctx.gate_config(point)
    omega = float(ctx.params.get("omega_mhz", 2.0))
    gp = cfg.with_omega(omega).point(device)
    n = cfg.n
    states = ctx.params.get("states") or ["".join(map(str, b)) for b in np.ndindex(*(2,) * n)]
    states = ["".join(map(str, s)) if not isinstance(s, str) else s for s in states]
    samples = int(ctx.params.get("samples", 250))
    trajs = list(ctx.map(lambda s: photon_trajectory(device, gp, s, cfg.n_fock, samples), states))
    rows = []
    excited_max = 0.0
    for s, tr in zip(states, trajs):
        rows += [(s, float(t), float(nb)) for t, nb in zip(tr.times, tr.nbar)]
        if "1" in s:
            excited_max = max(excited_max, float(np.max(tr.nbar)))
        else:
            k = int(np.argmax(tr.nbar))
            ctx.results.update(ground_peak_photons=float(tr.nbar[k]), ground_peak_time_ns=float(tr.times[k]),
                               ground_final_photons=float(tr.nbar[-1]))
    if any("1" in s for s in states):
        ctx.results["excited_max_photons"] = excited_max
    ctx.emit("trajectory.csv", csv_text(("state", "t_ns", "nbar"), rows))


def _gate_metrics(ctx: RunContext, gate: CalibratedGate, full_qpt: bool) -> None:
    """Process tomography (or the basis-plus-superposition fast path) under decoherence."""
    n = gate.config.n
    u_id = ideal_phase_gate(n)
    model = ctx.measurement()
    collapse = None if ctx.params.get("decoherence", True) is False else gate_collapse(gate)
    if n <= 3 or full_qpt:
        sup = register_superoperator(gate.schedule, gate.device, collapse, levels=2, split_dt=ctx.split_dt,
                                     map_fn=ctx.map)
        chi = qpt(lambda r: apply_superoperator(sup, r), n, model, ctx.rng(0))
        f = process_fidelity(chi, ideal_chi(u_id))
        ctx.results.update(process_fidelity=f, block_process_fidelity=superoperator_fidelity(sup, u_id),
                           tp_residual=chi.tp_residual, cp_min_eig=chi.cp_min_eig)
        ctx.emit("chi.json", json_text(chi.to_dict(seed=ctx.config.seed, config_hash=ctx.config.config_hash())))
        if n == 2:
            bf, conc = bell_from_superoperator(sup, model, ctx.rng(1))
            ctx.results.update(bell_fidelity=bf, concurrence=conc)
    else:
        kets = basis_and_plus_states(n)
        outs = evolve_register_states(gate.schedule, gate.device, kets, collapse, ctx.split_dt, ctx.map)
        f, per = average_state_fidelity(outs, [u_id @ k for k in kets], model, ctx.rng(0))
        ctx.results["average_state_fidelity"] = f
        labels = ["".join(map(str, b)) for b in np.ndindex(*(2,) * n)] + ["+" * n]
        ctx.emit("state_fidelities.csv", csv_text(("input", "fidelity"), zip(labels, map(float, per))))


def _gate(ctx: RunContext) -> None:
    point = ctx.point()
    gate = ctx.calibrated(point)
    table = gate.table
    ctx.results.update(
        qubits=list(gate.config.labels),
        drive_omega_sq_mhz2=gate.omega_sq,
        conditional_phase_rad=table.conditional_phase,
        unitary_fidelity=gate.unitary_fidelity(),
        max_leakage=float(np.max(table.leakage)),
        compensation_rad=dict(gate.config.compensation or {}),
    )
    ctx.emit("phase_table.json", json_text({"calibrated": table.to_dict(), "uncompensated": gate.raw_table.to_dict()}))
    if ctx.params.get("tomography", True):
        _gate_metrics(ctx, gate, bool(ctx.params.get("full_qpt", False)))


def _qpt(ctx: RunContext) -> None:
    ctx.params.setdefault("full_qpt", True)
    _gate(ctx)


def _rb(ctx: RunContext) -> None:
    point = ctx.point("cz")
    m_list = [int(x) for x in parse_range(ctx.params.get("lengths", list(RB_LENGTHS)))]
    k = int(ctx.params.get("sequences", 20))
    if ctx.params.get("noiseless", False):
        sim = RBSimulator.noiseless(2)
    else:
        gate = ctx.calibrated(point)
        sim = RBSimulator.from_gate(gate, split_dt=ctx.split_dt)
    res = rb_run(sim, m_list, k, ctx.config.seed, interleaved=True, map_fn=ctx.map)
    ctx.emit("rb_reference.csv", csv_text(*_split_rows(res.reference.csv_rows())))
    ctx.emit("rb_interleaved.csv", csv_text(*_split_rows(res.interleaved.csv_rows())))
    ctx.results.update(p_reference=res.p_ref, p_interleaved=res.p_interleaved, interleaved_fidelity=res.fidelity)


def _split_rows(rows):
    rows = list(rows)
    return rows[0], rows[1:]


def _noise_variance(ctx: RunContext) -> None:
    p = ctx.params
    theta_d = float(p.get("theta_d_rad", 0.5))
    sigma = float(p.get("sigma_mhz", 0.05))
    omega = float(p.get("omega_mhz", 2.0))
    duration = float(p.get("duration_ns", 250.0))
    gammas = parse_range(p.get("gamma_per_us", [0.04, 0.4, 4.0, 40.0]))
    samples = int(p.get("samples", 10_000))
    rows = []
    worst = 1.0
    for i, g in enumerate(gammas):
        formula = dynamical_phase_variance(theta_d, sigma, g, duration, omega)
        mc = float(np.var(sample_dynamical_phase(theta_d, sigma, g, duration, omega, samples, rng=ctx.rng(i))))
        slow = 4.0 * theta_d**2 * sigma**2 / omega**2
        rows.append((g, g * duration * 1e-3, formula, mc, mc / formula, slow))
        if abs(mc / formula - 1.0) > abs(worst - 1.0):
            worst = mc / formula
    ctx.emit("noise_variance.csv", csv_text(
        ("gamma_per_us", "gamma_t", "formula_rad2", "monte_carlo_rad2", "ratio", "slow_limit_rad2"), rows))
    ctx.results["monte_carlo_ratio"] = worst


# --------------------------------------------------------------------------
# sweeps


def _set_path(doc: dict, path: str, fn: Callable[[float], float]) -> None:
    """Apply `fn` to the numeric value(s) at a dotted path of a device-file document.

    Paths start at `device` or `point`; a qubit is addressed by label and
    `*` matches every qubit, e.g. `device.qubits.*.g01_mhz`.
    """
    parts = path.split(".")
    if parts[0] == "device":
        node: Any = doc["device"]
    elif parts[0] == "point":
        node = doc["point"]
    else:
        raise ConfigError(f"sweep path {path!r} must start with 'device' or 'point'")
    targets = [node]
    for key in parts[1:-1]:
        nxt = []
        for t in targets:
            if isinstance(t, list):
                if key == "*":
                    nxt += t
                elif key.isdigit():
                    nxt.append(t[int(key)])
                else:
                    hit = [q for q in t if isinstance(q, dict) and q.get("label") == key]
                    if not hit:
                        raise ConfigError(f"sweep path {path!r}: no element {key!r}")
                    nxt += hit
            elif isinstance(t, dict) and key in t:
                nxt.append(t[key])
            else:
                raise ConfigError(f"sweep path {path!r}: no key {key!r}")
        targets = nxt
    last = parts[-1]
    for t in targets:
        if isinstance(t, list) and last.isdigit():
            t[int(last)] = fn(float(t[int(last)]))
        elif isinstance(t, dict) and isinstance(t.get(last), (int, float)):
            t[last] = fn(float(t[last]))
        else:
            raise ConfigError(f"sweep path {path!r} does not address a numeric field")


def _sweep_point(ctx: RunContext, point: OperatingPoint, path: str, value: float, relative: bool):
    doc = {"device": copy.deepcopy(ctx.device_file.device.to_dict()), "point": point.to_dict()}
    _set_path(doc, path, (lambda v: v * value) if relative else (lambda v: value))
    device = DeviceSpec.from_dict(doc["device"])
    pt = OperatingPoint.from_dict(point.name, doc["point"], "sweep.point")
    pt = OperatingPoint(pt.name, pt.labels, pt.detunings, pt.drive_omega_sq, pt.drive_delta, pt.duration,
                        pt.n_fock, pt.min_separation, point.coherence)
    g = dict(ctx.config.gate)
    cfg = pt.gate_config(**({"n_fock": int(g["n_fock"])} if "n_fock" in g else {}))
    recal = bool(g.get("recalibrate", True))
    gate = calibrate_gate(pt.device(device), cfg, recalibrate_amplitude=recal)
    return gate


def _sweep(ctx: RunContext) -> None:
    point = ctx.point()
    path = ctx.params.get("parameter")
    if not path:
        raise ConfigError("scenario.params.parameter: required for a sweep")
    values = parse_range(ctx.params.get("values", []))
    relative = bool(ctx.params.get("relative", False))
    if not values:
        values = [1.0] if relative else []
    if not values:
        raise ConfigError("scenario.params.values: empty sweep")
    # validate the path once before spending time on calibrations
    _set_path({"device": ctx.device_file.device.to_dict(), "point": point.to_dict()}, path, lambda v: v)

    def one(v):
        try:
            gate = _sweep_point(ctx, point, path, v, relative)
            return (v, gate.unitary_fidelity(), gate.table.conditional_phase, float(np.max(gate.table.leakage)),
                    gate.omega_sq, "")
        except (CalibrationError, ValueError, RuntimeError) as exc:
            log.warning("sweep point %s failed: %s", v, exc)
            return (v, math.nan, math.nan, math.nan, math.nan, f"{type(exc).__name__}: {exc}")

    rows = list(ctx.map(one, values))
    ctx.emit("sweep.csv", csv_text(
        ("param_value", "fidelity", "conditional_phase", "leakage", "omega_sq_mhz2", "error"), rows))
    fids = np.array([r[1] for r in rows])
    ok = fids[np.isfinite(fids)]
    ctx.results.update(parameter=path, relative=relative, points=len(rows), failed=int(np.sum(~np.isfinite(fids))))
    if ok.size:
        ctx.results.update(fidelity_min=float(ok.min()), fidelity_max=float(ok.max()),
                           fidelity_spread=float(ok.max() - ok.min()))


EXPERIMENTS: dict[str, Callable[[RunContext], None]] = {
    "ramsey": _ramsey,
    "trajectory": _trajectory,
    "gate": _gate,
    "qpt": _qpt,
    "rb": _rb,
    "sweep": _sweep,
    "noise-variance": _noise_variance,
}


# --------------------------------------------------------------------------
# checks and the entry point


def evaluate_checks(experiment: str, point: str | None, results: Mapping, acceptance: Mapping) -> dict:
    """Compare results against the [low, high] bands shipped for this experiment (and point)."""
    bands = acceptance.get(experiment, {})
    if point is not None and isinstance(bands.get(point), Mapping):
        bands = bands[point]
    checks = {}
    for key, band in bands.items():
        if not isinstance(band, list) or key not in results or results[key] is None:
            continue
        lo, hi = band
        v = float(results[key])
        ok = (lo is None or v >= lo) and (hi is None or v <= hi) and math.isfinite(v)
        checks[key] = {"value": v, "band": band, "passed": bool(ok)}
    return checks


def run_scenario(config: ScenarioConfig, jobs: int | None = None, check: bool = False,
                 acceptance: Mapping | None = None) -> RunManifest:
    """Run one scenario, write its outputs plus `manifest.json`, and return the manifest."""
    started = now()
    device_file = load_device_file(config.device)
    if config.operating_point is not None:
        device_file.point(config.operating_point)
    if config.experiment not in EXPERIMENTS:
        raise ConfigError(f"scenario.experiment: unknown kind {config.experiment!r}")
    if check and acceptance is None:
        acceptance = load_acceptance()
    with job_pool(jobs) as map_fn:
        ctx = RunContext(config, device_file, map_fn)
        EXPERIMENTS[config.experiment](ctx)
    manifest = RunManifest(config.to_dict(), __version__, device_file.sha256, started)
    manifest.results = ctx.results
    if check:
        manifest.checks = evaluate_checks(config.experiment, config.operating_point, ctx.results, acceptance)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(ctx.files.items()):
        (out / name).write_text(text, newline="")
        manifest.outputs.append(name)
    manifest.finished = now()
    manifest.write(out / "manifest.json")
    return manifest
