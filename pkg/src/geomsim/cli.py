"""Command-line front end: `geomsim <experiment> [options]`.

Each subcommand turns its flags into a scenario and hands it to
`run_scenario`; `geomsim scenario file.json` runs a scenario file as is.
Exit status is 0 on success, 1 when `--check` finds a value outside its
band, and 2 on configuration or runtime errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, data_path, load_acceptance
from .runner import POINT_BY_SIZE, run_scenario

DEFAULT_DEVICE = "device_five_qubit.json"


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--device", help="device file (default: the shipped five-qubit description)")
    p.add_argument("--point", help="named operating point in the device file")
    p.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    p.add_argument("--seed", type=int, default=None, help="root seed; GEOMSIM_SEED overrides it")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--split-dt", type=float, default=None, help="split-step size in ns")
    p.add_argument("--check", action="store_true", help="compare results with the acceptance bands")
    p.add_argument("--acceptance", help="acceptance band file (default: the shipped one)")
    p.add_argument("--n-fock", type=int, default=None, help="resonator truncation override")


def _measurement(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sampled", action="store_true", help="simulate finite-shot tomography")
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--no-readout-correction", action="store_true")
    p.add_argument("--psd", action="store_true", help="project reconstructed states onto PSD matrices")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geomsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ramsey", help="Ramsey phase surface versus drive strength and analysis angle")
    _common(p)
    p.add_argument("--qubit")
    p.add_argument("--control-state", default=None, help="bitstring for the other qubits of the point")
    p.add_argument("--omega-sq", default="0:8:0.5", help="start:stop:step in MHz^2")
    p.add_argument("--theta", default="0:6.283:0.26", help="start:stop:step in rad")

    p = sub.add_parser("trajectory", help="resonator photon number for each computational input")
    _common(p)
    p.add_argument("--omega", type=float, default=2.0, help="drive amplitude in MHz")
    p.add_argument("--states", nargs="*", help="bitstrings (default: all)")
    p.add_argument("--samples", type=int, default=250)

    for name, helptext in (("gate", "calibrate a controlled-phase gate and characterize it"),
                           ("qpt", "full process tomography of a calibrated gate")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _measurement(p)
        p.add_argument("--n", type=int, choices=sorted(POINT_BY_SIZE), default=2, help="number of qubits")
        p.add_argument("--unitary", action="store_true", help="skip decoherence")
        p.add_argument("--no-recalibrate", action="store_true", help="keep the operating point's drive amplitude")
        p.add_argument("--compensation", choices=("virtual_z", "physical_z"))
        if name == "gate":
            p.add_argument("--full-qpt", action="store_true", help="full tomography for four qubits too")
            p.add_argument("--no-tomography", action="store_true", help="calibration and unitary metrics only")

    p = sub.add_parser("rb", help="reference and interleaved randomized benchmarking of the CZ")
    _common(p)
    p.add_argument("--lengths", default="1,3,6,10,15")
    p.add_argument("--sequences", type=int, default=20)
    p.add_argument("--noiseless", action="store_true")

    p = sub.add_parser("sweep", help="recalibrate the gate over a parameter grid")
    _common(p)
    p.add_argument("--n", type=int, choices=sorted(POINT_BY_SIZE), default=2)
    p.add_argument("--param", required=True, help="dotted path, e.g. device.qubits.*.g01_mhz")
    p.add_argument("--values", required=True, help="start:stop:step or comma list")
    p.add_argument("--relative", action="store_true", help="values multiply the nominal parameter")
    p.add_argument("--no-recalibrate", action="store_true")

    p = sub.add_parser("noise-variance", help="phase variance under correlated amplitude noise")
    _common(p)
    p.add_argument("--theta-d", type=float, default=0.5, help="dynamical phase in rad")
    p.add_argument("--sigma", type=float, default=0.05, help="noise s.d. in MHz")
    p.add_argument("--omega", type=float, default=2.0, help="drive amplitude in MHz")
    p.add_argument("--duration", type=float, default=250.0, help="gate time in ns")
    p.add_argument("--gamma", default="0.04,0.4,4,40", help="noise bandwidths in 1/us")
    p.add_argument("--samples", type=int, default=10_000)

    p = sub.add_parser("scenario", help="run a scenario file")
    p.add_argument("file")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--check", action="store_true")
    p.add_argument("--acceptance")
    return parser


def scenario_from_args(args: argparse.Namespace) -> dict:
    """Translate subcommand flags into a scenario dictionary."""
    cmd = args.command
    device = args.device or str(data_path(DEFAULT_DEVICE))
    scen: dict = {"device": device, "experiment": cmd, "output_dir": args.out, "params": {}, "gate": {},
                  "measurement": {}, "integrator": {}}
    if args.seed is not None:
        scen["seed"] = args.seed
    if args.split_dt is not None:
        scen["integrator"]["split_dt_ns"] = args.split_dt
    if args.n_fock is not None:
        scen["gate"]["n_fock"] = args.n_fock
    params = scen["params"]
    point = args.point
    if cmd == "ramsey":
        params.update(omega_sq=args.omega_sq, theta=args.theta)
        if args.qubit:
            params["qubit"] = args.qubit
        if args.control_state is not None:
            params["control_state"] = args.control_state
    elif cmd == "trajectory":
        params.update(omega_mhz=args.omega, samples=args.samples)
        if args.states:
            params["states"] = args.states
    elif cmd in ("gate", "qpt"):
        point = point or POINT_BY_SIZE[args.n]
        if args.unitary:
            params["decoherence"] = False
        if args.no_recalibrate:
            scen["gate"]["recalibrate"] = False
        if args.compensation:
            scen["gate"]["compensation_mode"] = args.compensation
        if args.sampled:
            scen["measurement"]["mode"] = "sampled"
        if args.shots is not None:
            scen["measurement"]["shots"] = args.shots
        if args.no_readout_correction:
            scen["measurement"]["correct_readout"] = False
        if args.psd:
            scen["measurement"]["project_psd"] = True
        if cmd == "gate":
            params["full_qpt"] = args.full_qpt
            params["tomography"] = not args.no_tomography
    elif cmd == "rb":
        params.update(lengths=args.lengths, sequences=args.sequences, noiseless=args.noiseless)
    elif cmd == "sweep":
        point = point or POINT_BY_SIZE[args.n]
        params.update(parameter=args.param, values=args.values, relative=args.relative)
        if args.no_recalibrate:
            scen["gate"]["recalibrate"] = False
    elif cmd == "noise-variance":
        params.update(theta_d_rad=args.theta_d, sigma_mhz=args.sigma, omega_mhz=args.omega,
                      duration_ns=args.duration, gamma_per_us=args.gamma, samples=args.samples)
    if point is not None:
        scen["operating_point"] = point
    return scen


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    config = None
    try:
        if args.command == "scenario":
            config = ScenarioConfig.load(args.file)
        else:
            config = ScenarioConfig.from_dict(scenario_from_args(args), Path.cwd())
        acceptance = load_acceptance(args.acceptance) if args.check else None
        manifest = run_scenario(config, jobs=args.jobs, check=args.check, acceptance=acceptance)
    except ConfigError as exc:
        print(f"geomsim: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # downstream failures: report with the module they came from
        mod = type(exc).__module__
        what = config.experiment if config is not None else args.command
        print(f"geomsim: {what} failed in {mod}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"results": manifest.results, "outputs": manifest.outputs}, indent=1, default=str))
    if args.check:
        for key, c in manifest.checks.items():
            status = "PASS" if c["passed"] else "FAIL"
            print(f"{status} {key} = {c['value']:.6g} in {c['band']}")
        return 0 if manifest.passed else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
