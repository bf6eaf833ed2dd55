"""Configuration files: device descriptions, named operating points, scenarios and run manifests.

Every reader here is strict: unknown keys raise before any computation,
and errors name the offending key path.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .device import DeviceSpec
from .gates import MIN_QUBIT_SEPARATION, GateConfig

SEED_ENV = "GEOMSIM_SEED"
DEFAULT_SEED = 1234
EXPERIMENT_KINDS = ("ramsey", "trajectory", "gate", "qpt", "rb", "sweep", "noise-variance")


class ConfigError(ValueError):
    pass


def _strict(d: Any, allowed: set[str], path: str, required: set[str] = frozenset()) -> Mapping:
    if not isinstance(d, Mapping):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")
    return d


def data_path(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files("geomsim") / "data" / name))


# --------------------------------------------------------------------------
# operating points


@dataclass(frozen=True)
class OperatingPoint:
    """A named gate arrangement: which qubits, where they sit, how they are driven."""

    name: str
    labels: tuple[str, ...]
    detunings: tuple[float, ...]
    drive_omega_sq: float
    drive_delta: float = 4.0
    duration: float | None = None
    n_fock: int = 8
    min_separation: float = MIN_QUBIT_SEPARATION
    coherence: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    _KEYS = {"qubits", "detunings_mhz", "drive_omega_sq_mhz2", "drive_delta_mhz", "duration_ns", "n_fock",
             "min_separation_mhz", "coherence"}

    @classmethod
    def from_dict(cls, name: str, d: Mapping, path: str) -> "OperatingPoint":
        _strict(d, cls._KEYS, path, {"qubits", "detunings_mhz", "drive_omega_sq_mhz2"})
        coh = {}
        for lab, c in d.get("coherence", {}).items():
            _strict(c, {"t1_us", "t_phi_us"}, f"{path}.coherence.{lab}")
            coh[lab] = {k: float(v) for k, v in c.items()}
        return cls(name, tuple(d["qubits"]), tuple(float(x) for x in d["detunings_mhz"]),
                   float(d["drive_omega_sq_mhz2"]), float(d.get("drive_delta_mhz", 4.0)),
                   None if d.get("duration_ns") is None else float(d["duration_ns"]),
                   int(d.get("n_fock", 8)), float(d.get("min_separation_mhz", MIN_QUBIT_SEPARATION)), coh)

    def to_dict(self) -> dict:
        out = {"qubits": list(self.labels), "detunings_mhz": list(self.detunings),
               "drive_omega_sq_mhz2": self.drive_omega_sq, "drive_delta_mhz": self.drive_delta,
               "n_fock": self.n_fock, "min_separation_mhz": self.min_separation}
        if self.duration is not None:
            out["duration_ns"] = self.duration
        if self.coherence:
            out["coherence"] = {k: dict(v) for k, v in self.coherence.items()}
        return out

    @property
    def drive_omega(self) -> float:
        return math.sqrt(self.drive_omega_sq)

    def device(self, base: DeviceSpec) -> DeviceSpec:
        """The base device with this arrangement's simulation coherence times."""
        dev = base
        for lab, c in self.coherence.items():
            changes = {}
            if "t1_us" in c:
                changes["t1"] = c["t1_us"]
            if "t_phi_us" in c:
                changes["t_phi"] = c["t_phi_us"]
            dev = dev.with_qubit(lab, **changes)
        return dev

    def gate_config(self, **overrides) -> GateConfig:
        kw = dict(labels=self.labels, detunings=self.detunings, drive_omega=self.drive_omega,
                  drive_delta=self.drive_delta, duration=self.duration, n_fock=self.n_fock,
                  min_separation=self.min_separation)
        kw.update(overrides)
        return GateConfig(**kw)


@dataclass(frozen=True)
class DeviceFile:
    path: Path
    device: DeviceSpec
    points: Mapping[str, OperatingPoint]
    sha256: str

    def point(self, name: str) -> OperatingPoint:
        try:
            return self.points[name]
        except KeyError:
            raise ConfigError(f"{self.path}: no operating point {name!r} (have {sorted(self.points)})") from None


def load_device_file(path) -> DeviceFile:
    """Read a device file: either a bare device object or {"device": ..., "operating_points": ...}."""
    path = Path(path)
    try:
        raw = path.read_bytes()
        data = json.loads(raw)
    except FileNotFoundError:
        raise ConfigError(f"device file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(data, Mapping) and "device" in data:
        _strict(data, {"device", "operating_points"}, str(path))
        dev_raw, pts_raw = data["device"], data.get("operating_points", {})
    else:
        dev_raw, pts_raw = data, {}
    try:
        device = DeviceSpec.from_dict(dev_raw, f"{path}:device")
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc).strip('"')) from None
    points = {name: OperatingPoint.from_dict(name, p, f"{path}:operating_points.{name}") for name, p in pts_raw.items()}
    for p in points.values():
        for lab in p.labels:
            try:
                device.qubit(lab)
            except KeyError:
                raise ConfigError(f"{path}:operating_points.{p.name}: unknown qubit {lab!r}") from None
    return DeviceFile(path, device, points, hashlib.sha256(raw).hexdigest())


def load_acceptance(path=None) -> dict:
    path = Path(path) if path is not None else data_path("acceptance.json")
    return json.loads(path.read_text())


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    device: Path
    experiment: str
    operating_point: str | None = None
    gate: Mapping[str, Any] = field(default_factory=dict)
    measurement: Mapping[str, Any] = field(default_factory=dict)
    integrator: Mapping[str, Any] = field(default_factory=dict)
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    output_dir: Path = Path("out")

    _KEYS = {"device", "experiment", "operating_point", "gate", "measurement", "integrator", "params", "seed",
             "output_dir"}
    _GATE_KEYS = {"detunings_mhz", "drive_omega_sq_mhz2", "drive_delta_mhz", "duration_ns", "compensation_mode",
                  "n_fock", "recalibrate"}
    _MEAS_KEYS = {"mode", "shots", "confusion", "correct_readout", "project_psd"}
    _INT_KEYS = {"split_dt_ns"}

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | None = None, env: Mapping[str, str] | None = None) -> "ScenarioConfig":
        _strict(d, cls._KEYS, "scenario", {"device", "experiment"})
        if d["experiment"] not in EXPERIMENT_KINDS:
            raise ConfigError(f"scenario.experiment: {d['experiment']!r} is not one of {EXPERIMENT_KINDS}")
        _strict(d.get("gate", {}), cls._GATE_KEYS, "scenario.gate")
        _strict(d.get("measurement", {}), cls._MEAS_KEYS, "scenario.measurement")
        _strict(d.get("integrator", {}), cls._INT_KEYS, "scenario.integrator")
        params = d.get("params", {})
        if not isinstance(params, Mapping):
            raise ConfigError("scenario.params: expected an object")
        base_dir = base_dir or Path.cwd()
        dev = Path(d["device"])
        if not dev.is_absolute():
            dev = base_dir / dev
        if not dev.exists():
            raise ConfigError(f"scenario.device: file {dev} does not exist")
        seed = resolve_seed(d.get("seed", DEFAULT_SEED), env)
        return cls(dev, d["experiment"], d.get("operating_point"), dict(d.get("gate", {})),
                   dict(d.get("measurement", {})), dict(d.get("integrator", {})), dict(params), seed,
                   Path(d.get("output_dir", "out")))

    @classmethod
    def load(cls, path, env: Mapping[str, str] | None = None) -> "ScenarioConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent, env)

    def to_dict(self) -> dict:
        return {
            "device": str(self.device), "experiment": self.experiment, "operating_point": self.operating_point,
            "gate": dict(self.gate), "measurement": dict(self.measurement), "integrator": dict(self.integrator),
            "params": dict(self.params), "seed": self.seed, "output_dir": str(self.output_dir),
        }

    def config_hash(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_dict().items() if k != "output_dir"}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def resolve_seed(seed, env: Mapping[str, str] | None = None) -> int:
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        seed = env[SEED_ENV]
    try:
        s = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed {seed!r} is not an integer") from None
    if not 0 <= s < 2**64:
        raise ConfigError("seed must fit in 64 unsigned bits")
    return s


# --------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    config: dict
    version: str
    device_sha256: str
    started: float
    finished: float | None = None
    outputs: list[str] = field(default_factory=list)
    results: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "artifact_version": self.version,
            "device_sha256": self.device_sha256,
            "wall_clock": {"started": self.started, "finished": self.finished,
                           "elapsed_s": None if self.finished is None else self.finished - self.started},
            "host": {"python": platform.python_version(), "numpy": np.__version__},
            "outputs": list(self.outputs),
            "results": self.results,
            "checks": self.checks,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, default=_json_default))

    @property
    def passed(self) -> bool:
        return all(c.get("passed", True) for c in self.checks.values())


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def now() -> float:
    return time.time()
