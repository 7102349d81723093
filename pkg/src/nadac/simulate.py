"""Closed-loop simulation engine.

Co-simulates the adaptive loop and the oracle reference trajectory on a
shared noise stream, advancing the estimator once per step.  Step order at
time t: probe -> input -> plant -> estimator update -> metrics; the
controller always sees the estimate that was current one update ago.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import control, estimator, metrics

__all__ = [
    "PlantSpec",
    "NoiseSpec",
    "RunRecord",
    "RunAbort",
    "plant_step",
    "noise_sample",
    "spawn_streams",
    "run_closed_loop",
    "run_open_loop_id",
]

DIVERGENCE_CEILING = 1e9


class RunAbort(RuntimeError):
    """Simulation aborted; carries the failing step and the partial record."""

    def __init__(self, message, step, record=None):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.record = record


@dataclass(frozen=True)
class PlantSpec:
    theta_star: np.ndarray  # (n+m, n)
    link: object
    n: int
    m: int
    x0: np.ndarray

    @property
    def a_matrix(self):
        return self.theta_star[: self.n].T

    @property
    def b_matrix(self):
        return self.theta_star[self.n :].T


def plant_step(spec, x, u, w):
    """x_{t+1} = f(A x + B u) + w."""
    x_next = spec.link.eval(spec.a_matrix @ x + spec.b_matrix @ u) + w
    if not np.all(np.isfinite(x_next)):
        raise ValueError("plant produced a non-finite state")
    return x_next


@dataclass(frozen=True)
class NoiseSpec:
    """i.i.d. zero-mean noise; bounded kinds are required with bounded links.

    kinds: "uniform_cube" (uniform on [-half_width, half_width]^n),
    "truncated_gaussian" (N(0, sigma^2) clipped to [-trunc, trunc], which
    keeps the samples symmetric and hence zero-mean), "gaussian".
    """

    kind: str
    n: int
    half_width: float = 0.1
    sigma: float = 1.0
    trunc: float = np.inf

    def __post_init__(self):
        if self.kind not in ("uniform_cube", "truncated_gaussian", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "truncated_gaussian" and not np.isfinite(self.trunc):
            raise ValueError("truncated_gaussian needs a finite truncation radius")

    @property
    def bounded(self):
        return self.kind != "gaussian"

    def to_config(self):
        cfg = {"kind": self.kind}
        if self.kind == "uniform_cube":
            cfg["half_width"] = self.half_width
        else:
            cfg["sigma"] = self.sigma
            if self.kind == "truncated_gaussian":
                cfg["trunc"] = self.trunc
        return cfg


def noise_sample(spec, rng):
    if spec.kind == "uniform_cube":
        return rng.uniform(-spec.half_width, spec.half_width, size=spec.n)
    w = rng.standard_normal(spec.n) * spec.sigma
    if spec.kind == "truncated_gaussian":
        return np.clip(w, -spec.trunc, spec.trunc)
    return w


def noise_from_config(cfg, n):
    kind = cfg["kind"]
    return NoiseSpec(
        kind=kind,
        n=n,
        half_width=float(cfg.get("half_width", 0.1)),
        sigma=float(cfg.get("sigma", 1.0)),
        trunc=float(cfg.get("trunc", np.inf)),
    )


def spawn_streams(seed):
    """Four independent substreams off one root seed; toggling the probe or
    test sampling never perturbs the plant noise realization."""
    root = np.random.SeedSequence(seed)
    names = ("noise", "probe", "policy", "test")
    return dict(zip(names, (np.random.Generator(np.random.PCG64(s)) for s in root.spawn(4))))


@dataclass
class RunRecord:
    """Full per-step log of one simulation plus manifest metadata."""

    n: int
    m: int
    x: np.ndarray  # (T+1, n)
    u: np.ndarray  # (T, m)
    v: np.ndarray  # (T, m)
    w: np.ndarray  # (T, n)
    x_star: np.ndarray  # (T+1, n) or nan for open-loop runs
    u_star: np.ndarray  # (T, m)
    param_err: np.ndarray  # (T,)
    j_t: np.ndarray
    lambda_t: np.ndarray
    v_lyap: np.ndarray
    d_t: np.ndarray
    mu_t: np.ndarray
    a_t: np.ndarray
    projected: np.ndarray
    manifest: dict = field(default_factory=dict)
    acc: metrics.MetricAccumulator | None = None
    final_state: estimator.EstimatorState | None = None
    steps_completed: int = 0

    def csv_header(self):
        cols = ["t"]
        cols += [f"x{i}" for i in range(self.n)]
        cols += [f"u{i}" for i in range(self.m)]
        cols += [f"v{i}" for i in range(self.m)]
        cols += [f"w{i}" for i in range(self.n)]
        cols += [f"xstar{i}" for i in range(self.n)]
        cols += [f"ustar{i}" for i in range(self.m)]
        cols += ["param_err", "J_t", "lambda_t", "V_t", "d_t", "mu_t", "a_t", "projected"]
        return cols

    def write_csv(self, path, stride=1):
        with open(path, "w") as fh:
            fh.write(",".join(self.csv_header()) + "\n")
            for t in range(0, self.steps_completed, stride):
                row = [str(t)]
                for arr in (self.x[t], self.u[t], self.v[t], self.w[t], self.x_star[t], self.u_star[t]):
                    row += [repr(float(z)) for z in arr]
                row += [
                    repr(float(self.param_err[t])),
                    repr(float(self.j_t[t])),
                    repr(float(self.lambda_t[t])),
                    repr(float(self.v_lyap[t])),
                    repr(float(self.d_t[t])),
                    repr(float(self.mu_t[t])),
                    repr(float(self.a_t[t])),
                    str(int(self.projected[t])),
                ]
                fh.write(",".join(row) + "\n")

    def summary(self):
        last = self.steps_completed - 1
        out = {
            "steps": self.steps_completed,
            "final_param_err": float(self.param_err[last]),
            "final_tracking_error": float(self.j_t[last]),
            "final_lambda_min": float(self.lambda_t[last]),
            "projections": int(self.final_state.projection_count) if self.final_state else 0,
        }
        if self.acc is not None:
            out["empirical_gain_ratio"] = metrics.empirical_gain_ratio(self.acc)
            if self.acc.sum_sign_mismatch or self.acc.sum_track_sq:
                out["sign_regret"] = metrics.sign_regret(self.acc)
            out["prediction_regret"] = (
                self.acc.sum_pred_regret if self.acc.theta_star is not None else None
            )
        return out


def _alloc_record(T, n, m):
    nan = float("nan")
    return RunRecord(
        n=n,
        m=m,
        x=np.full((T + 1, n), nan),
        u=np.full((T, m), nan),
        v=np.zeros((T, m)),
        w=np.full((T, n), nan),
        x_star=np.full((T + 1, n), nan),
        u_star=np.full((T, m), nan),
        param_err=np.full(T, nan),
        j_t=np.full(T, nan),
        lambda_t=np.full(T, nan),
        v_lyap=np.full(T, nan),
        d_t=np.full(T, nan),
        mu_t=np.full(T, nan),
        a_t=np.full(T, nan),
        projected=np.zeros(T, dtype=bool),
    )


def run_closed_loop(
    plant,
    pset,
    mech,
    probe,
    noise,
    horizon,
    seed,
    theta0=None,
    delta=0.5,
    gamma=4.0,
    eig_stride=100,
    stage_cost=None,
    divergence_ceiling=DIVERGENCE_CEILING,
    collect_metrics=True,
):
    """Adaptive closed loop plus oracle reference on a shared noise stream."""
    n, m = plant.n, plant.m
    if not pset.contains(plant.theta_star, shrunk=True):
        raise ValueError("theta_star must lie strictly inside the shrunken set")
    if not noise.bounded and plant.link.bounded:
        raise ValueError("bounded links require almost-surely bounded noise")

    theta0 = np.zeros((n + m, n)) if theta0 is None else np.asarray(theta0, dtype=float)
    state = estimator.new_estimator(theta0, pset, delta, plant.link)
    streams = spawn_streams(seed)
    rng_noise, rng_probe = streams["noise"], streams["probe"]

    # reference mechanism gets its own Riccati cache so warm starts do not
    # leak between the theta* solve and the moving theta_hat solves
    ref_mech = _fresh_mechanism(mech)

    rec = _alloc_record(horizon, n, m)
    acc = metrics.MetricAccumulator(
        n=n, m=m, theta_star=plant.theta_star, stage_cost=stage_cost
    )
    rec.acc = acc

    x = np.asarray(plant.x0, dtype=float).copy()
    x_star = x.copy()
    theta_ctrl = state.theta_hat.copy()  # theta_hat_{t-1} as seen by the controller
    rec.x[0] = x
    rec.x_star[0] = x_star
    lam = 0.0
    tic = time.perf_counter()

    for t in range(horizon):
        u, v = control.adaptive_input(mech, theta_ctrl, x, probe, t, rng_probe)
        u_star = control.policy_eval(ref_mech, plant.theta_star, x_star)
        w = noise_sample(noise, rng_noise)

        try:
            x_next = plant_step(plant, x, u, w)
            x_star_next = plant_step(plant, x_star, u_star, w)
        except ValueError as exc:
            rec.steps_completed = t
            raise RunAbort(str(exc), t, rec) from exc
        if np.linalg.norm(x_next) > divergence_ceiling:
            rec.steps_completed = t
            raise RunAbort(
                f"state norm {np.linalg.norm(x_next):.3e} exceeded the divergence ceiling",
                t,
                rec,
            )

        phi = np.concatenate([x, u])
        theta_prev = state.theta_hat
        try:
            state_next, diag = estimator.estimator_step(state, phi, x_next, plant.link, pset)
        except estimator.NumericalAbort as exc:
            rec.steps_completed = t
            raise RunAbort(str(exc), t, rec) from exc

        if collect_metrics:
            acc.update(
                phi,
                x,
                x_next,
                v,
                w,
                diag,
                plant.link,
                theta_hat=theta_prev,
                theta_hat_next=state_next.theta_hat,
                x_star=x_star,
                u=u,
                u_star=u_star,
                gamma=gamma,
            )
            if t % eig_stride == 0 or t == horizon - 1:
                lam = metrics.lambda_min_normalized(acc)

        rec.u[t] = u
        rec.v[t] = v
        rec.w[t] = w
        rec.u_star[t] = u_star
        rec.x[t + 1] = x_next
        rec.x_star[t + 1] = x_star_next
        rec.param_err[t] = np.linalg.norm(plant.theta_star - state_next.theta_hat)
        rec.j_t[t] = acc.sum_track_sq / (t + 1) if collect_metrics else float("nan")
        rec.lambda_t[t] = lam
        rec.v_lyap[t] = acc.lyapunov_v if collect_metrics else float("nan")
        rec.d_t[t] = diag.d_gain
        rec.mu_t[t] = diag.mu_weight
        rec.a_t[t] = diag.a_weight
        rec.projected[t] = diag.projected

        theta_ctrl = theta_prev  # controller at t+1 uses theta_hat_t
        state = state_next
        x = x_next
        x_star = x_star_next

    rec.steps_completed = horizon
    rec.final_state = state
    rec.manifest["wall_time_s"] = time.perf_counter() - tic
    rec.manifest["seed"] = seed
    return rec


def _fresh_mechanism(mech):
    if isinstance(mech, control.RiccatiFeedback):
        return control.RiccatiFeedback(
            Q=mech.Q,
            R=mech.R,
            lift_kind=mech.lift_kind,
            lipschitz_L=mech.lipschitz_L,
            param_lipschitz_L1=mech.param_lipschitz_L1,
            dare_tol=mech.dare_tol,
            dare_max_iter=mech.dare_max_iter,
        )
    return mech


def run_open_loop_id(
    plant,
    pset,
    input_policy,
    noise,
    horizon,
    seed,
    theta0=None,
    delta=0.5,
    gamma=4.0,
    eig_stride=100,
    divergence_ceiling=DIVERGENCE_CEILING,
):
    """Identification-only run under an exogenous input policy.

    ``input_policy``: "zero", ("iid_uniform", half_width), or
    ("state_feedback", K) with u = K x.  The estimator observes the loop but
    never closes it.
    """
    n, m = plant.n, plant.m
    if not noise.bounded and plant.link.bounded:
        raise ValueError("bounded links require almost-surely bounded noise")
    theta0 = np.zeros((n + m, n)) if theta0 is None else np.asarray(theta0, dtype=float)
    state = estimator.new_estimator(theta0, pset, delta, plant.link)
    streams = spawn_streams(seed)
    rng_noise, rng_input = streams["noise"], streams["probe"]

    rec = _alloc_record(horizon, n, m)
    acc = metrics.MetricAccumulator(n=n, m=m, theta_star=plant.theta_star)
    rec.acc = acc

    x = np.asarray(plant.x0, dtype=float).copy()
    rec.x[0] = x
    lam = 0.0
    tic = time.perf_counter()

    for t in range(horizon):
        if input_policy == "zero":
            u = np.zeros(m)
        elif isinstance(input_policy, tuple) and input_policy[0] == "iid_uniform":
            u = rng_input.uniform(-input_policy[1], input_policy[1], size=m)
        elif isinstance(input_policy, tuple) and input_policy[0] == "state_feedback":
            u = np.asarray(input_policy[1]) @ x
        else:
            raise ValueError(f"unknown input policy {input_policy!r}")

        w = noise_sample(noise, rng_noise)
        try:
            x_next = plant_step(plant, x, u, w)
        except ValueError as exc:
            rec.steps_completed = t
            raise RunAbort(str(exc), t, rec) from exc
        if np.linalg.norm(x_next) > divergence_ceiling:
            rec.steps_completed = t
            raise RunAbort("state exceeded the divergence ceiling", t, rec)

        phi = np.concatenate([x, u])
        theta_prev = state.theta_hat
        state_next, diag = estimator.estimator_step(state, phi, x_next, plant.link, pset)
        acc.update(
            phi,
            x,
            x_next,
            np.zeros(m),
            w,
            diag,
            plant.link,
            theta_hat=theta_prev,
            theta_hat_next=state_next.theta_hat,
            gamma=gamma,
        )
        if t % eig_stride == 0 or t == horizon - 1:
            lam = metrics.lambda_min_normalized(acc)

        rec.u[t] = u
        rec.w[t] = w
        rec.x[t + 1] = x_next
        rec.param_err[t] = np.linalg.norm(plant.theta_star - state_next.theta_hat)
        rec.lambda_t[t] = lam
        rec.v_lyap[t] = acc.lyapunov_v
        rec.d_t[t] = diag.d_gain
        rec.mu_t[t] = diag.mu_weight
        rec.a_t[t] = diag.a_weight
        rec.projected[t] = diag.projected

        state = state_next
        x = x_next

    rec.steps_completed = horizon
    rec.final_state = state
    rec.manifest["wall_time_s"] = time.perf_counter() - tic
    rec.manifest["seed"] = seed
    return rec
