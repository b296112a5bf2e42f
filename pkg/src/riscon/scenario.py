"""Scenario configuration: schema validation, sampling, and resolution.

A scenario is described by a single JSON document. Every knob has a
default; unknown keys are rejected. Randomly specified parts (plant
coefficients, node placement) are resolved into explicit values when the
scenario is generated, and the resolved document is itself a valid
configuration, which is how run manifests stay re-ingestable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelStatistics
from .process import ProcessModel
from .sdp import SolverConfig

SCENARIO_STREAM = 101

POLICY_NAMES = ("sdp_lookahead", "random_phase", "dp_oracle")
COV_UPDATE_MODES = ("markov_bound", "true_pe")


class ConfigError(ValueError):
    pass


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _check_keys(section, allowed, where):
    unknown = set(section) - set(allowed)
    _require(not unknown, f"unknown keys in {where}: {sorted(unknown)}")


def _as_float(value, where):
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"{where} must be a number, got {value!r}")
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             f"{where} must be a number")
    return float(value)


def _as_int(value, where, minimum=None):
    _require(isinstance(value, int) and not isinstance(value, bool),
             f"{where} must be an integer")
    if minimum is not None:
        _require(value >= minimum, f"{where} must be >= {minimum}")
    return value


def _as_range(value, where):
    _require(isinstance(value, (list, tuple)) and len(value) == 2,
             f"{where} must be a [low, high] pair")
    lo, hi = (_as_float(v, where) for v in value)
    _require(lo <= hi, f"{where} must satisfy low <= high")
    return [lo, hi]


DEFAULTS = {
    "K": 2,
    "M": 32,
    "T": 30,
    "seed": 0,
    "replications": 200,
    "policies": ["sdp_lookahead", "random_phase"],
    "plants": {
        "n": 1,
        "m": 1,
        "p": 1,
        "a_range": [0.5, 10.0],
        "B": 1.0, "C": 1.0, "W": 1.0, "V": 1.0, "D": 1.0, "E": 1.0, "P0": 1.0,
    },
    "geometry": {
        "sensor_distance_range": [5.0, 20.0],
        "controller_distance_range": [30.0, 70.0],
    },
    "channel": {
        "rician_k": 2.0,
        "alpha_direct": 3.5,
        "alpha_ris": 2.2,
        "reference_gain": 1.0,
        "moment_samples": 20000,
        "gamma_samples": 20000,
        "gamma_margin": 0.1,
    },
    "rates": 1.0,
    "noise_power": 1e-3,
    "solver": {"tolerance": 1e-6, "max_iterations": 5000},
    "randomization_trials": 100,
    "cov_update": "markov_bound",
    "true_pe_samples": 2000,
    "literal_loss_propagation": False,
    "oracle": {"grid_points": 8, "outage_samples": 20000},
}

_TOP_KEYS = tuple(DEFAULTS) + ("meta",)
_PLANT_KEYS = tuple(DEFAULTS["plants"]) + ("models",)
_GEOMETRY_KEYS = tuple(DEFAULTS["geometry"]) + ("sensors", "controllers")
_CHANNEL_KEYS = tuple(DEFAULTS["channel"])
_SOLVER_KEYS = tuple(DEFAULTS["solver"])
_ORACLE_KEYS = tuple(DEFAULTS["oracle"])
_MODEL_KEYS = ("A", "B", "C", "W", "V", "D", "E", "P0")


def _broadcast(value, rows, cols, where):
    """Scalar -> value * eye(rows, cols); nested lists -> exact matrix."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value) * np.eye(rows, cols)
    arr = np.asarray(value, dtype=float)
    if arr.shape != (rows, cols):
        raise ConfigError(f"{where} must be {rows}x{cols}, got shape {arr.shape}")
    return arr


@dataclass
class Scenario:
    """Fully resolved experiment description."""

    K: int
    M: int
    T: int
    models: list
    stats: ChannelStatistics
    rates: np.ndarray
    noise_power: float
    policies: list
    seed: int
    replications: int
    solver_config: SolverConfig
    randomization_trials: int
    cov_update: str
    true_pe_samples: int
    literal_loss_propagation: bool
    moment_samples: int
    gamma_samples: int
    gamma_margin: float
    oracle_grid_points: int
    oracle_outage_samples: int
    resolved_config: dict = field(repr=False)


def validate_config(config: dict) -> dict:
    """Schema-check a configuration; returns it merged with defaults."""
    _require(isinstance(config, dict), "configuration must be a JSON object")
    _check_keys(config, _TOP_KEYS, "configuration")

    merged = json.loads(json.dumps(DEFAULTS))
    for key, value in config.items():
        if key in ("plants", "geometry", "channel", "solver", "oracle"):
            _require(isinstance(value, dict), f"{key} must be an object")
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value

    _check_keys(merged["plants"], _PLANT_KEYS, "plants")
    _check_keys(merged["geometry"], _GEOMETRY_KEYS, "geometry")
    _check_keys(merged["channel"], _CHANNEL_KEYS, "channel")
    _check_keys(merged["solver"], _SOLVER_KEYS, "solver")
    _check_keys(merged["oracle"], _ORACLE_KEYS, "oracle")

    K = _as_int(merged["K"], "K", 1)
    _as_int(merged["M"], "M", 1)
    _as_int(merged["T"], "T", 1)
    _as_int(merged["seed"], "seed")
    _as_int(merged["replications"], "replications", 1)

    policies = merged["policies"]
    _require(isinstance(policies, list) and policies, "policies must be a nonempty list")
    for p in policies:
        _require(p in POLICY_NAMES, f"unknown policy {p!r}; choose from {POLICY_NAMES}")

    plants = merged["plants"]
    for dim in ("n", "m", "p"):
        _as_int(plants[dim], f"plants.{dim}", 1)
    _as_range(plants["a_range"], "plants.a_range")
    if "models" in plants:
        models = plants["models"]
        _require(isinstance(models, list) and len(models) == K,
                 f"plants.models must list exactly K={K} entries")
        for i, entry in enumerate(models):
            _require(isinstance(entry, dict), f"plants.models[{i}] must be an object")
            _check_keys(entry, _MODEL_KEYS, f"plants.models[{i}]")
            _require("A" in entry, f"plants.models[{i}] must define A")

    geometry = merged["geometry"]
    _as_range(geometry["sensor_distance_range"], "geometry.sensor_distance_range")
    _as_range(geometry["controller_distance_range"], "geometry.controller_distance_range")
    for side in ("sensors", "controllers"):
        if side in geometry:
            pts = geometry[side]
            _require(isinstance(pts, list) and len(pts) == K,
                     f"geometry.{side} must list exactly K={K} points")
            for pt in pts:
                _require(isinstance(pt, (list, tuple)) and len(pt) == 2,
                         f"geometry.{side} entries must be [x, y] points")

    channel = merged["channel"]
    _require(_as_float(channel["rician_k"], "channel.rician_k") >= 0,
             "channel.rician_k must be nonnegative")
    _as_float(channel["alpha_direct"], "channel.alpha_direct")
    _as_float(channel["alpha_ris"], "channel.alpha_ris")
    _require(_as_float(channel["reference_gain"], "channel.reference_gain") >= 0,
             "channel.reference_gain must be nonnegative")
    _as_int(channel["moment_samples"], "channel.moment_samples", 1)
    _as_int(channel["gamma_samples"], "channel.gamma_samples", 1)
    _require(_as_float(channel["gamma_margin"], "channel.gamma_margin") >= 0,
             "channel.gamma_margin must be nonnegative")

    rates = merged["rates"]
    if isinstance(rates, list):
        _require(len(rates) == K, f"rates must be a scalar or a list of K={K} values")
        for r in rates:
            _require(_as_float(r, "rates") > 0, "rates must be positive")
    else:
        _require(_as_float(rates, "rates") > 0, "rates must be positive")

    _require(_as_float(merged["noise_power"], "noise_power") > 0,
             "noise_power must be positive")
    _require(_as_float(merged["solver"]["tolerance"], "solver.tolerance") > 0,
             "solver.tolerance must be positive")
    _as_int(merged["solver"]["max_iterations"], "solver.max_iterations", 1)
    _as_int(merged["randomization_trials"], "randomization_trials", 1)
    _require(merged["cov_update"] in COV_UPDATE_MODES,
             f"cov_update must be one of {COV_UPDATE_MODES}")
    _as_int(merged["true_pe_samples"], "true_pe_samples", 1)
    _require(isinstance(merged["literal_loss_propagation"], bool), "literal_loss_propagation must be a boolean")
    _as_int(merged["oracle"]["grid_points"], "oracle.grid_points", 1)
    _as_int(merged["oracle"]["outage_samples"], "oracle.outage_samples", 1)
    return merged


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return validate_config(raw)


def _sample_positions(rng, count, dist_range, angle_range):
    pts = []
    for _ in range(count):
        d = rng.uniform(*dist_range)
        a = rng.uniform(*angle_range)
        pts.append([d * math.cos(a), d * math.sin(a)])
    return pts


def generate_scenario(config: dict) -> Scenario:
    """Resolve a validated configuration into a concrete scenario.

    Sampling (plant coefficients, placement) is driven entirely by the
    configuration seed, so regeneration is reproducible; explicit values
    in the configuration take precedence over sampling ranges.
    """
    cfg = validate_config(config)
    K, M, T = cfg["K"], cfg["M"], cfg["T"]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg["seed"], SCENARIO_STREAM)))

    plants = cfg["plants"]
    n, m, p = plants["n"], plants["m"], plants["p"]
    model_entries = plants.get("models")
    if model_entries is None:
        draws = [rng.uniform(*plants["a_range"]) for _ in range(K)]
        model_entries = [{"A": float(a)} for a in draws]

    models = []
    for i, entry_spec in enumerate(model_entries):
        where = f"plants.models[{i}]"
        defaults = {key: plants[key] for key in ("B", "C", "W", "V", "D", "E", "P0")}
        entry = {**defaults, **entry_spec}
        try:
            models.append(ProcessModel(
                A=_broadcast(entry["A"], n, n, f"{where}.A"),
                B=_broadcast(entry["B"], n, m, f"{where}.B"),
                C=_broadcast(entry["C"], p, n, f"{where}.C"),
                W=_broadcast(entry["W"], n, n, f"{where}.W"),
                V=_broadcast(entry["V"], p, p, f"{where}.V"),
                D=_broadcast(entry["D"], n, n, f"{where}.D"),
                E=_broadcast(entry["E"], m, m, f"{where}.E"),
                P0=_broadcast(entry["P0"], n, n, f"{where}.P0"),
            ))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    geometry = cfg["geometry"]
    sensors = geometry.get("sensors")
    if sensors is None:
        sensors = _sample_positions(rng, K, geometry["sensor_distance_range"],
                                    (0.0, math.pi / 2.0))
    controllers = geometry.get("controllers")
    if controllers is None:
        controllers = _sample_positions(rng, K, geometry["controller_distance_range"],
                                        (math.pi / 2.0, math.pi))

    channel = cfg["channel"]
    try:
        stats = ChannelStatistics(
            sensor_positions=np.asarray(sensors, dtype=float),
            controller_positions=np.asarray(controllers, dtype=float),
            M=M,
            rician_k=_as_float(channel["rician_k"], "channel.rician_k"),
            alpha_direct=channel["alpha_direct"],
            alpha_ris=channel["alpha_ris"],
            reference_gain=channel["reference_gain"],
        )
    except ValueError as exc:
        raise ConfigError(f"geometry/channel: {exc}") from exc

    rates = cfg["rates"]
    rates = np.asarray(rates if isinstance(rates, list) else [rates] * K, dtype=float)

    resolved = json.loads(json.dumps(cfg))
    resolved["plants"]["models"] = [
        {"A": mdl.A.tolist(), "B": mdl.B.tolist(), "C": mdl.C.tolist(),
         "W": mdl.W.tolist(), "V": mdl.V.tolist(), "D": mdl.D.tolist(),
         "E": mdl.E.tolist(), "P0": mdl.P0.tolist()}
        for mdl in models
    ]
    resolved["geometry"]["sensors"] = np.asarray(sensors, dtype=float).tolist()
    resolved["geometry"]["controllers"] = np.asarray(controllers, dtype=float).tolist()
    resolved["rates"] = rates.tolist()
    if math.isinf(_as_float(channel["rician_k"], "channel.rician_k")):
        resolved["channel"]["rician_k"] = "inf"

    return Scenario(
        K=K, M=M, T=T,
        models=models,
        stats=stats,
        rates=rates,
        noise_power=float(cfg["noise_power"]),
        policies=list(cfg["policies"]),
        seed=cfg["seed"],
        replications=cfg["replications"],
        solver_config=SolverConfig(
            tolerance=float(cfg["solver"]["tolerance"]),
            max_iterations=cfg["solver"]["max_iterations"],
        ),
        randomization_trials=cfg["randomization_trials"],
        cov_update=cfg["cov_update"],
        true_pe_samples=cfg["true_pe_samples"],
        literal_loss_propagation=cfg["literal_loss_propagation"],
        moment_samples=cfg["channel"]["moment_samples"],
        gamma_samples=cfg["channel"]["gamma_samples"],
        gamma_margin=float(cfg["channel"]["gamma_margin"]),
        oracle_grid_points=cfg["oracle"]["grid_points"],
        oracle_outage_samples=cfg["oracle"]["outage_samples"],
        resolved_config=resolved,
    )
