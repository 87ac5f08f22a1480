"""Closed-loop simulation of plant, sensors, triggers and estimator.

Per step k:

1. design the gains (this also yields the trigger weights Psi_k),
2. measure, form residuals and run every sensor's trigger test,
3. predict with the latest transmitted residuals and move to U_{k+1},
4. advance the plant.

Randomness comes from three independent streams spawned from the seed
(measurement, privacy, process), so changing how one noise is drawn does not
shift the others.
"""

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .ellipsoid import contains, sample_boundary, sample_uniform
from .errors import PrivSmeError
from .estimator import StepContext, design_gains, update_confidence
from .network import measure, residual
from .system import privacy_second_moment, sample_privacy_noise, step_plant
from .trigger import TriggerState, trigger_step


@dataclass
class StepRecord:
    """State at time k; the trigger and gain fields describe the step k -> k+1
    and are None on the final record."""

    k: int
    x: np.ndarray
    xhat: List[np.ndarray]
    U: List[np.ndarray]
    contained: np.ndarray
    fired: Optional[np.ndarray] = None
    delta: Optional[np.ndarray] = None
    l_used: Optional[np.ndarray] = None
    trace_U_next: Optional[float] = None
    eps: Optional[np.ndarray] = None
    lmi_residual: Optional[float] = None


@dataclass
class SimulationLog:
    seed: int
    records: List[StepRecord] = field(default_factory=list)
    A_hat: List[List[np.ndarray]] = field(default_factory=list)

    @property
    def n_sensors(self):
        return len(self.records[0].xhat)

    @property
    def steps(self):
        return [r for r in self.records if r.fired is not None]

    def fired_matrix(self):
        return np.array([r.fired for r in self.steps], dtype=bool).reshape(-1, self.n_sensors)

    def delta_matrix(self):
        return np.array([r.delta for r in self.steps], dtype=float).reshape(-1, self.n_sensors)

    def containment_matrix(self):
        return np.array([r.contained for r in self.records], dtype=bool)

    def error_norms(self):
        """||x_k - xhat_k^i|| with shape (records, sensors)."""
        return np.array([[np.linalg.norm(r.x - xh) for xh in r.xhat] for r in self.records])


def _draw(E, mode, rng):
    if mode == "zero":
        return np.array(E.center)
    if mode == "boundary":
        return sample_boundary(E, rng)
    return sample_uniform(E, rng)


def _privacy_draw(cfg, k, rng):
    n = cfg.plant.n_x
    if cfg.privacy_sampling == "zero":
        return np.zeros(n)
    kappa = cfg.kappa if cfg.privacy_sampling == "clipped" else None
    return sample_privacy_noise(cfg.plant.privacy, k, n, rng, kappa)


def _containment(est, x):
    return np.array([contains(est.ellipsoid(i), x) for i in range(est.n_sensors)])


def step_context(cfg, k, est, trig):
    plant, sensors = cfg.plant, cfg.sensors
    return StepContext(
        k=k, C=plant.C(k), F=plant.F(k),
        H=[s.H(k) for s in sensors], D=[s.D(k) for s in sensors],
        R=plant.process_noise.shape, Q=[s.measurement_noise.shape for s in sensors],
        second_moment=privacy_second_moment(plant.privacy, k),
        xhat=est.xhat, L=est.L, beta=est.beta,
        delta=np.array([t.delta for t in trig]),
        sigma=np.array([p.sigma for p in cfg.triggers]),
        theta=np.array([p.theta for p in cfg.triggers]),
        weights=cfg.topology.weights, kappa=cfg.kappa, sign_mode=cfg.sign_mode,
    )


def run_simulation(cfg, seed=None, horizon=None, stop_at=None):
    """Run the closed loop and return its log.

    ``stop_at`` ends the run right before the gain design of that step and
    returns ``(log, StepContext)`` for inspection.

    Package errors raised mid-run carry ``step`` and ``partial_log``.
    """
    seed = cfg.seeds[0] if seed is None else int(seed)
    horizon = cfg.horizon if horizon is None else int(horizon)
    rng_meas, rng_priv, rng_proc = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    W = cfg.topology.weights

    x = cfg.plant.x0.copy()
    est = cfg.initial_estimator()
    trig = [TriggerState.initial(p, s.n_y) for p, s in zip(cfg.triggers, cfg.sensors)]
    log = SimulationLog(seed)
    k = 0
    try:
        for k in range(horizon):
            rec = StepRecord(k, x.copy(), [np.array(v) for v in est.xhat],
                             [np.array(u) for u in est.U], _containment(est, x))
            log.records.append(rec)
            ctx = step_context(cfg, k, est, trig)
            if stop_at is not None and k == stop_at:
                return log, ctx
            gains = design_gains(ctx, cfg.objective, backend=cfg.backend)

            outcomes = []
            for i, s in enumerate(cfg.sensors):
                v = _draw(s.measurement_noise, cfg.measurement_noise, rng_meas)
                y = measure(s, k, x, v)
                out = trigger_step(trig[i], cfg.triggers[i], residual(s, k, y, est.xhat[i]), gains.Psi[i], k)
                trig[i] = out.state
                outcomes.append(out)
            est = update_confidence(est, gains, W, [t.last_tx_residual for t in trig])

            eta = _privacy_draw(cfg, k, rng_priv)
            w = _draw(cfg.plant.process_noise, cfg.process_noise, rng_proc)
            x = step_plant(cfg.plant, x, k, eta, w)

            rec.fired = np.array([o.fired for o in outcomes])
            rec.delta = np.array([o.state.delta for o in outcomes])
            rec.l_used = np.array([o.l_used for o in outcomes])
            rec.trace_U_next = gains.trace_U_next
            rec.eps = np.array(gains.eps)
            rec.lmi_residual = gains.residual
            log.A_hat.append([np.array(a) for a in gains.A_hat])
        k = horizon
        log.records.append(StepRecord(k, x.copy(), [np.array(v) for v in est.xhat],
                                      [np.array(u) for u in est.U], _containment(est, x)))
    except PrivSmeError as exc:
        if getattr(exc, "step", None) is None:
            exc.step = k
        exc.partial_log = log
        raise
    if stop_at is not None:
        raise ValueError(f"stop_at={stop_at} lies beyond the horizon {horizon}")
    return log


def _run_one(args):
    cfg, seed, horizon = args
    return run_simulation(cfg, seed, horizon)


def run_batch(cfg, seeds=None, horizon=None, workers=1):
    """Independent runs, one per seed, returned in seed order."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    jobs = [(cfg, s, horizon) for s in seeds]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


# --- metrics ---------------------------------------------------------------

def trigger_statistics(fired):
    """Rate and mean inter-event interval of one boolean firing sequence.

    The interval is NaN with fewer than two fires.
    """
    fired = np.asarray(fired, dtype=bool)
    times = np.flatnonzero(fired)
    rate = float(times.size / fired.size) if fired.size else float("nan")
    gaps = np.diff(times)
    return rate, float(gaps.mean()) if gaps.size else float("nan"), gaps


@dataclass(frozen=True)
class SensorSummary:
    containment_rate: float
    trigger_rate: float
    mean_interval: float
    mean_error: float
    max_error: float


@dataclass(frozen=True)
class Summary:
    sensors: List[SensorSummary]
    overall: SensorSummary
    violations: int
    error_norms: np.ndarray


def metrics(log):
    if not log.records:
        raise ValueError("empty log")
    cont = log.containment_matrix()
    fired = log.fired_matrix()
    err = log.error_norms()
    rows, all_gaps = [], []
    for i in range(log.n_sensors):
        rate, interval, gaps = trigger_statistics(fired[:, i])
        all_gaps.append(gaps)
        rows.append(SensorSummary(float(cont[:, i].mean()), rate, interval,
                                  float(err[:, i].mean()), float(err[:, i].max())))
    gaps = np.concatenate(all_gaps)
    overall = SensorSummary(
        float(cont.mean()),
        float(fired.mean()) if fired.size else float("nan"),
        float(gaps.mean()) if gaps.size else float("nan"),
        float(err.mean()), float(err.max()),
    )
    return Summary(rows, overall, int((~cont).sum()), err)


# --- CSV output -----------------------------------------------------------

def fmt(x):
    return format(float(x), ".17g")


def _flag(b):
    return "1" if b else "0"


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)


def write_csvs(log, out_dir):
    """Write states, triggers, ellipsoids, gains and summary CSVs.

    Sensors are numbered from 1.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    N = log.n_sensors
    n_x = log.records[0].x.size

    header = ["k"] + [f"x{j + 1}" for j in range(n_x)]
    header += [f"xhat{i + 1}_{j + 1}" for i in range(N) for j in range(n_x)]
    _write(out / "states.csv", header, (
        [r.k] + [fmt(v) for v in r.x] + [fmt(v) for xh in r.xhat for v in xh] for r in log.records))

    _write(out / "triggers.csv", ["k", "sensor", "fired", "delta", "l_used"], (
        [r.k, i + 1, _flag(r.fired[i]), fmt(r.delta[i]), fmt(r.l_used[i])]
        for r in log.steps for i in range(N)))

    u_cols = [f"U{a + 1}{b + 1}" for a in range(n_x) for b in range(n_x)]
    _write(out / "ellipsoids.csv", ["k", "sensor"] + u_cols + ["contained"], (
        [r.k, i + 1] + [fmt(v) for v in r.U[i].ravel()] + [_flag(r.contained[i])]
        for r in log.records for i in range(N)))

    _write(out / "gains.csv", ["k", "trace_U_next", "eps1", "eps2", "eps3", "eps4", "lmi_residual"], (
        [r.k, fmt(r.trace_U_next)] + [fmt(e) for e in r.eps] + [fmt(r.lmi_residual)] for r in log.steps))

    s = metrics(log)
    cols = ["containment_rate", "trigger_rate", "mean_interval", "mean_error", "max_error"]
    rows = [[str(i + 1)] + [fmt(getattr(row, c)) for c in cols] for i, row in enumerate(s.sensors)]
    rows.append(["all"] + [fmt(getattr(s.overall, c)) for c in cols])
    _write(out / "summary.csv", ["sensor"] + cols, rows)
    return out
