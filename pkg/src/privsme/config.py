"""Scenario configuration loaded from YAML.

Every section is a mapping with a fixed set of keys; anything else is
rejected. Per-sensor scalars may be given once and are broadcast. Matrices
are nested lists; a bare number is read as a 1x1 matrix.

Plants and sensors come either from the built-in ``ship`` schedules or as
constant matrices (``model: constant``).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from .ellipsoid import Ellipsoid, cholesky_lower
from .errors import ConfigError, PrivSmeError
from .estimator import SIGN_MODES, BOUNDED_PRIVACY, EstimatorState
from .network import SensorParams, Topology, ship_sensor
from .sdp import BACKENDS
from .system import MatrixSchedule, PlantParams, PrivacyNoiseParams, ship_plant
from .trigger import TriggerParams

NOISE_MODES = ("uniform", "boundary", "zero")
PRIVACY_SAMPLING = ("clipped", "unclipped", "zero")
OBJECTIVES = ("trace", "feasibility")

_SECTIONS = {
    "horizon", "seeds", "output_dir", "plant", "sensors", "topology",
    "trigger", "privacy", "estimator", "noise",
}
_REQUIRED = {"horizon", "plant", "sensors", "topology", "trigger", "privacy", "estimator"}
_KEYS = {
    "plant": {"model", "x0", "R", "C", "F"},
    "sensors": {"model", "count", "Q", "nodes"},
    "sensor_node": {"H", "D", "Q"},
    "topology": {"adjacency", "include_self"},
    "trigger": {"sigma", "rho", "theta", "delta0"},
    "privacy": {"mode", "b", "c", "q", "kappa", "sampling"},
    "estimator": {"xhat0", "U0", "beta", "sign_mode", "objective", "backend"},
    "noise": {"measurement", "process"},
}


@dataclass(frozen=True)
class ScenarioConfig:
    plant: PlantParams
    sensors: List[SensorParams]
    topology: Topology
    triggers: List[TriggerParams]
    kappa: float
    privacy_sampling: str
    sign_mode: str
    xhat0: List[np.ndarray]
    U0: List[np.ndarray]
    beta: np.ndarray
    horizon: int
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "out"
    objective: str = "trace"
    backend: str = "native"
    measurement_noise: str = "uniform"
    process_noise: str = "uniform"

    @property
    def n_sensors(self):
        return len(self.sensors)

    def initial_estimator(self):
        return EstimatorState(self.xhat0, self.U0, self.beta)


def _check_keys(d, allowed, where, required=()):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {sorted(missing)}")


def _matrix(v, where):
    try:
        M = np.atleast_2d(np.asarray(v, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} is not a numeric matrix") from exc
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ConfigError(f"{where} must be a finite 2-D matrix")
    return M


def _vector(v, where):
    try:
        x = np.atleast_1d(np.asarray(v, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} is not a numeric vector") from exc
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ConfigError(f"{where} must be a finite vector")
    return x


def _per_sensor(v, n, where):
    x = _vector(v, where)
    if x.size == 1:
        return np.full(n, float(x[0]))
    if x.size != n:
        raise ConfigError(f"{where} needs 1 or {n} entries, got {x.size}")
    return x


def _choice(v, options, where):
    if v not in options:
        raise ConfigError(f"{where} must be one of {list(options)}, got {v!r}")
    return v


def _spd_ellipsoid(P, where):
    try:
        return Ellipsoid(np.zeros(P.shape[0]), P, 1.0)
    except PrivSmeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _privacy(d):
    _check_keys(d, _KEYS["privacy"], "privacy", {"mode"})
    mode = d["mode"]
    try:
        if mode == "constant":
            params = PrivacyNoiseParams.constant_scale(d.get("b", 1.0))
        elif mode == "decaying":
            if "c" not in d or "q" not in d:
                raise ConfigError("decaying privacy noise needs c and q")
            params = PrivacyNoiseParams.decaying(d["c"], d["q"])
        else:
            raise ConfigError(f"privacy.mode must be 'constant' or 'decaying', got {mode!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"privacy: {exc}") from exc
    kappa = float(d.get("kappa", 9.0))
    if not kappa > 0.0:
        raise ConfigError("privacy.kappa must be positive")
    sampling = _choice(d.get("sampling", "clipped"), PRIVACY_SAMPLING, "privacy.sampling")
    return params, kappa, sampling


def _plant(d, privacy):
    _check_keys(d, _KEYS["plant"], "plant", {"model", "x0", "R"})
    x0 = _vector(d["x0"], "plant.x0")
    R = _matrix(d["R"], "plant.R")
    if d["model"] == "ship":
        if "C" in d or "F" in d:
            raise ConfigError("the ship plant takes no C or F")
        if x0.size != 2 or R.shape != (1, 1):
            raise ConfigError("the ship plant has a 2-D state and scalar process noise")
        _spd_ellipsoid(R, "plant.R")
        return ship_plant(x0, float(R[0, 0]), privacy)
    if d["model"] != "constant":
        raise ConfigError(f"plant.model must be 'ship' or 'constant', got {d['model']!r}")
    if "C" not in d or "F" not in d:
        raise ConfigError("a constant plant needs C and F")
    noise = _spd_ellipsoid(R, "plant.R")
    try:
        return PlantParams(
            MatrixSchedule.constant(_matrix(d["C"], "plant.C")),
            MatrixSchedule.constant(_matrix(d["F"], "plant.F")),
            noise, privacy, x0,
        )
    except PrivSmeError as exc:
        raise ConfigError(f"plant: {exc}") from exc


def _sensors(d, n_x):
    _check_keys(d, _KEYS["sensors"], "sensors", {"model"})
    if d["model"] == "ship":
        if "nodes" in d:
            raise ConfigError("ship sensors take no per-node matrices")
        n = int(d.get("count", 5))
        if n < 1:
            raise ConfigError("sensors.count must be positive")
        Q = _per_sensor(d.get("Q", 0.2), n, "sensors.Q")
        if np.any(Q <= 0.0):
            raise ConfigError("sensors.Q must be positive")
        return [ship_sensor(i + 1, float(q)) for i, q in enumerate(Q)]
    if d["model"] != "constant":
        raise ConfigError(f"sensors.model must be 'ship' or 'constant', got {d['model']!r}")
    nodes = d.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise ConfigError("constant sensors need a nonempty 'nodes' list")
    out = []
    for i, node in enumerate(nodes):
        where = f"sensors.nodes[{i}]"
        _check_keys(node, _KEYS["sensor_node"], where, {"H", "D", "Q"})
        H = _matrix(node["H"], f"{where}.H")
        if H.shape[1] != n_x:
            raise ConfigError(f"{where}.H must have {n_x} columns")
        noise = _spd_ellipsoid(_matrix(node["Q"], f"{where}.Q"), f"{where}.Q")
        try:
            out.append(SensorParams(
                MatrixSchedule.constant(H), MatrixSchedule.constant(_matrix(node["D"], f"{where}.D")), noise))
        except PrivSmeError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return out


def _triggers(d, n):
    _check_keys(d, _KEYS["trigger"], "trigger", _KEYS["trigger"])
    cols = [_per_sensor(d[key], n, f"trigger.{key}") for key in ("sigma", "rho", "theta", "delta0")]
    out = []
    for i, (s, r, t, d0) in enumerate(zip(*cols)):
        try:
            out.append(TriggerParams(float(s), float(r), float(t), float(d0)))
        except ValueError as exc:
            raise ConfigError(f"trigger, sensor {i}: {exc}") from exc
    return out


def _estimator(d, n, n_x):
    _check_keys(d, _KEYS["estimator"], "estimator", {"xhat0", "U0"})
    xhat0 = _matrix(d["xhat0"], "estimator.xhat0")
    if xhat0.shape != (n, n_x):
        raise ConfigError(f"estimator.xhat0 must be {n} rows of length {n_x}")
    try:
        U = np.asarray(d["U0"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError("estimator.U0 is not numeric") from exc
    if U.ndim < 2:
        U = U.reshape(1, 1) if U.size == 1 else U
    if U.ndim == 2:
        U = np.broadcast_to(U, (n,) + U.shape)
    if U.shape != (n, n_x, n_x):
        raise ConfigError(f"estimator.U0 must be one {n_x}x{n_x} matrix or one per sensor")
    beta = _per_sensor(d.get("beta", 1.0), n, "estimator.beta")
    if np.any(beta <= 0.0):
        raise ConfigError("estimator.beta must be positive")
    try:
        for u in U:
            cholesky_lower(u)
    except PrivSmeError as exc:
        raise ConfigError(f"estimator.U0: {exc}") from exc
    return (
        [x.copy() for x in xhat0], [np.array(u) for u in U], beta,
        _choice(d.get("sign_mode", BOUNDED_PRIVACY), SIGN_MODES, "estimator.sign_mode"),
        _choice(d.get("objective", "trace"), OBJECTIVES, "estimator.objective"),
        _choice(d.get("backend", "native"), sorted(BACKENDS), "estimator.backend"),
    )


def config_from_dict(d):
    _check_keys(d, _SECTIONS, "config", _REQUIRED)
    horizon = d["horizon"]
    if not isinstance(horizon, int) or isinstance(horizon, bool) or horizon < 1:
        raise ConfigError("horizon must be a positive integer")
    seeds = d.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a nonnegative integer or a nonempty list of them")

    privacy, kappa, sampling = _privacy(d["privacy"])
    plant = _plant(d["plant"], privacy)
    sensors = _sensors(d["sensors"], plant.n_x)
    n = len(sensors)
    if len({s.n_y for s in sensors}) != 1:
        raise ConfigError("all sensors must share the measurement dimension")

    topo = d["topology"]
    _check_keys(topo, _KEYS["topology"], "topology", {"adjacency"})
    A = _matrix(topo["adjacency"], "topology.adjacency")
    if A.shape != (n, n):
        raise ConfigError(f"topology.adjacency must be {n}x{n}")
    try:
        topology = Topology(A, bool(topo.get("include_self", False)))
    except (PrivSmeError, ValueError) as exc:
        raise ConfigError(f"topology: {exc}") from exc

    triggers = _triggers(d["trigger"], n)
    xhat0, U0, beta, sign_mode, objective, backend = _estimator(d["estimator"], n, plant.n_x)

    noise = d.get("noise", {})
    _check_keys(noise, _KEYS["noise"], "noise")
    return ScenarioConfig(
        plant=plant, sensors=sensors, topology=topology, triggers=triggers,
        kappa=kappa, privacy_sampling=sampling, sign_mode=sign_mode,
        xhat0=xhat0, U0=U0, beta=beta, horizon=horizon, seeds=list(seeds),
        output_dir=str(d.get("output_dir", "out")), objective=objective, backend=backend,
        measurement_noise=_choice(noise.get("measurement", "uniform"), NOISE_MODES, "noise.measurement"),
        process_noise=_choice(noise.get("process", "uniform"), NOISE_MODES, "noise.process"),
    )


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)
