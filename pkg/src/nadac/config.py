"""Run-configuration schema: validation and object construction.

Configs are plain JSON.  Validation reports the dotted field path of the
first violated constraint; construction happens only after validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import control, estimator, maps, metrics, simulate

__all__ = ["ConfigError", "validate_config", "build_run", "load_config", "RunObjects"]


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    # a manifest echoes its config under "config"; accept either form
    if "config" in cfg and "plant" not in cfg:
        cfg = cfg["config"]
    return cfg


def _require(cfg, key, path, typ=None):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}", "missing required field")
    val = cfg[key]
    if typ is not None and not isinstance(val, typ):
        raise ConfigError(f"{path}.{key}", f"expected {typ}, got {type(val).__name__}")
    return val


@dataclass
class RunObjects:
    mode: str
    plant: simulate.PlantSpec
    pset: object
    mech: object | None
    probe: control.ProbingSignal | None
    input_policy: object | None
    noise: simulate.NoiseSpec
    horizon: int
    seed: int
    delta: float
    theta0: np.ndarray
    gamma: float
    eig_stride: int
    log_stride: int


def validate_config(cfg):
    """Validate and construct; returns RunObjects or raises ConfigError."""
    mode = cfg.get("mode", "closed_loop")
    if mode not in ("closed_loop", "open_loop"):
        raise ConfigError("mode", f"must be closed_loop or open_loop, got {mode!r}")

    plant_cfg = _require(cfg, "plant", "", dict)
    n = int(_require(plant_cfg, "n", "plant"))
    m = int(_require(plant_cfg, "m", "plant"))
    if n < 1 or m < 1:
        raise ConfigError("plant.n", "dimensions must be positive")
    try:
        link = maps.link_from_config(_require(plant_cfg, "link", "plant", dict), n)
    except ValueError as exc:
        raise ConfigError("plant.link", str(exc)) from exc
    theta_star = np.asarray(_require(plant_cfg, "theta_star", "plant", list), dtype=float)
    if theta_star.shape != (n + m, n):
        raise ConfigError(
            "plant.theta_star", f"expected shape ({n + m}, {n}), got {theta_star.shape}"
        )
    x0 = np.asarray(plant_cfg.get("x0", np.zeros(n).tolist()), dtype=float)
    if x0.shape != (n,):
        raise ConfigError("plant.x0", f"expected length {n}")

    try:
        pset = estimator.parameter_set_from_config(_require(cfg, "parameter_set", "", dict))
    except ValueError as exc:
        raise ConfigError("parameter_set", str(exc)) from exc
    if not pset.contains(theta_star, shrunk=True):
        raise ConfigError(
            "plant.theta_star", "must lie strictly inside the shrunken parameter set"
        )

    est_cfg = cfg.get("estimator", {})
    delta = float(est_cfg.get("delta", 0.5))
    if delta <= 0:
        raise ConfigError("estimator.delta", "must be positive")
    theta0 = np.asarray(
        est_cfg.get("theta0", np.zeros((n + m, n)).tolist()), dtype=float
    )
    if theta0.shape != (n + m, n):
        raise ConfigError("estimator.theta0", f"expected shape ({n + m}, {n})")
    if not pset.contains(theta0):
        raise ConfigError("estimator.theta0", "must lie in the parameter set")

    noise_cfg = _require(cfg, "noise", "", dict)
    try:
        noise = simulate.noise_from_config(noise_cfg, n)
    except (KeyError, ValueError) as exc:
        raise ConfigError("noise", str(exc)) from exc
    if link.bounded and not noise.bounded:
        raise ConfigError("noise.kind", "Gaussian noise is not allowed with bounded links")

    mech = None
    probe = None
    input_policy = None
    if mode == "closed_loop":
        try:
            mech = control.policy_from_config(_require(cfg, "policy", "", dict), n, m)
        except ValueError as exc:
            raise ConfigError("policy", str(exc)) from exc
        try:
            probe = control.probe_from_config(cfg.get("probe", {"b": 0.0, "bound_eps": 0.0}), mech.raw_dim)
        except ValueError as exc:
            raise ConfigError("probe", str(exc)) from exc
    else:
        ip_cfg = cfg.get("input_policy", {"kind": "zero"})
        kind = ip_cfg.get("kind", "zero")
        if kind == "zero":
            input_policy = "zero"
        elif kind == "iid_uniform":
            input_policy = ("iid_uniform", float(ip_cfg.get("half_width", 1.0)))
        elif kind == "state_feedback":
            K = np.asarray(_require(ip_cfg, "K", "input_policy"), dtype=float)
            if K.shape != (m, n):
                raise ConfigError("input_policy.K", f"expected shape ({m}, {n})")
            input_policy = ("state_feedback", K)
        else:
            raise ConfigError("input_policy.kind", f"unknown kind {kind!r}")

    met_cfg = cfg.get("metrics", {})
    gamma = float(met_cfg.get("gamma", 4.0))
    if met_cfg.get("rate_probes", False):
        if gamma <= 2:
            raise ConfigError("metrics.gamma", "rate probes need gamma > 2")
        b = float(cfg.get("probe", {}).get("b", 0.0))
        try:
            metrics.eta_default(b, gamma)
        except ValueError as exc:
            raise ConfigError("metrics.gamma", str(exc)) from exc

    horizon = int(cfg.get("horizon", 10_000))
    if horizon < 1:
        raise ConfigError("horizon", "must be >= 1")

    return RunObjects(
        mode=mode,
        plant=simulate.PlantSpec(theta_star=theta_star, link=link, n=n, m=m, x0=x0),
        pset=pset,
        mech=mech,
        probe=probe,
        input_policy=input_policy,
        noise=noise,
        horizon=horizon,
        seed=int(cfg.get("seed", 0)),
        delta=delta,
        theta0=theta0,
        gamma=gamma,
        eig_stride=int(met_cfg.get("eig_stride", 100)),
        log_stride=int(cfg.get("log_stride", 1)),
    )


def build_run(cfg):
    """Validate a config dict and execute the described run."""
    ro = validate_config(cfg)
    if ro.mode == "closed_loop":
        return simulate.run_closed_loop(
            ro.plant,
            ro.pset,
            ro.mech,
            ro.probe,
            ro.noise,
            ro.horizon,
            ro.seed,
            theta0=ro.theta0,
            delta=ro.delta,
            gamma=ro.gamma,
            eig_stride=ro.eig_stride,
        )
    return simulate.run_open_loop_id(
        ro.plant,
        ro.pset,
        ro.input_policy,
        ro.noise,
        ro.horizon,
        ro.seed,
        theta0=ro.theta0,
        delta=ro.delta,
        gamma=ro.gamma,
        eig_stride=ro.eig_stride,
    )


def set_field(cfg, dotted, value):
    """Set a nested scalar config field by dotted path (sweep axis)."""
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(dotted, "unknown sweep field")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(dotted, "unknown sweep field")
    node[parts[-1]] = value
