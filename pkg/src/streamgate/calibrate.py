"""Monte Carlo calibration of the non-adaptive deactivation thresholds.

As the ensemble grows, the adaptive procedure's per-time cutoff (the
largest retained posterior) converges to a deterministic sequence; a
detector can then simply keep streams whose posterior is at or below the
precomputed threshold.  No closed form exists for the thresholds, so they
are estimated by running the production adaptive detector on a large
simulated homogeneous ensemble and recording, at each time,

* the largest retained posterior (the plug-in threshold estimate,
  reported as 1.0 at steps where nothing was deactivated),
* the surviving fraction of streams, and
* the mean retained posterior (the realized LFNR).

In this large-ensemble limit the realized LFNR has a closed form: below a
critical time ``log(1-alpha)/log(1-theta)`` no deactivation is needed and
the LFNR is just the prior change probability ``1-(1-theta)^t``; beyond
it the procedure pins the LFNR at ``alpha``.  :func:`lfnr_limit` and
:func:`critical_time` expose those reference quantities.
"""

from __future__ import annotations

import math

import numpy as np

from .detector import AdaptiveDetector, ThresholdTable
from .model import GeometricPrior, IIDModel

CSV_HEADER = "t,lambda,survival_frac,retained_mean"


def critical_time(theta: float, alpha: float) -> float:
    """Time before which the mean posterior stays under alpha with no deactivation."""
    if not (0.0 < theta < 1.0):
        raise ValueError(f"theta must lie in (0, 1), got {theta!r}")
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha must lie in [0, 1), got {alpha!r}")
    return math.log1p(-alpha) / math.log1p(-theta)


def lfnr_limit(theta: float, alpha: float, t: int) -> float:
    """Large-ensemble realized LFNR of the adaptive procedure at time t."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if t < critical_time(theta, alpha):
        return 1.0 - (1.0 - theta) ** t
    return alpha


def calibrate_thresholds(theta: float, obs_model, alpha: float, n_streams: int,
                         horizon: int, seed: int) -> ThresholdTable:
    """Estimate per-time thresholds by driving the adaptive detector.

    Runs the production detector (no separate code path) on ``n_streams``
    simulated homogeneous streams for ``horizon`` steps.  Deterministic
    given the seed.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n_streams < 1:
        raise ValueError("n_streams must be >= 1")
    model = IIDModel(GeometricPrior(theta), obs_model)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    tau = model.sample_change_points(n_streams, rng)
    det = AdaptiveDetector(model, alpha, n_streams)

    lam = np.empty(horizon)
    survival = np.empty(horizon)
    retained = np.empty(horizon)
    for t in range(1, horizon + 1):
        x = model.sample_step(t, tau, rng)
        det.observe(x[det.active])
        dropped = det.deactivate()
        if dropped.size == 0:
            lam[t - 1] = 1.0
        elif det.n_active:
            lam[t - 1] = det.w[det.active].max()
        else:
            lam[t - 1] = 0.0
        survival[t - 1] = det.n_active / n_streams
        retained[t - 1] = det.w[det.active].mean() if det.n_active else 0.0
    return ThresholdTable(
        thresholds=lam,
        theta=theta,
        alpha=alpha,
        n_streams=n_streams,
        seed=seed,
        model_fingerprint=model.fingerprint(),
        survival_frac=survival,
        retained_mean=retained,
    )


def write_threshold_table(table: ThresholdTable, path) -> None:
    """Persist a threshold table as CSV with a self-describing metadata block."""
    lines = [
        f"# theta={table.theta!r} alpha={table.alpha!r} n={table.n_streams} "
        f"seed={table.seed}",
        f"# model={table.model_fingerprint}",
        CSV_HEADER,
    ]
    for i in range(table.horizon):
        surv = "" if table.survival_frac is None else repr(float(table.survival_frac[i]))
        rmean = "" if table.retained_mean is None else repr(float(table.retained_mean[i]))
        lines.append(f"{i + 1},{float(table.thresholds[i])!r},{surv},{rmean}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_threshold_table(path) -> ThresholdTable:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    meta: dict[str, str] = {}
    rows = []
    for ln in lines:
        if not ln:
            continue
        if ln.startswith("#"):
            for tok in ln[1:].strip().split(" "):
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    meta[key] = val
        elif ln != CSV_HEADER:
            rows.append(ln.split(","))
    if not rows:
        raise ValueError(f"no threshold rows found in {path}")
    lam = np.array([float(r[1]) for r in rows])
    surv = np.array([float(r[2]) for r in rows]) if rows[0][2] else None
    rmean = np.array([float(r[3]) for r in rows]) if rows[0][3] else None
    return ThresholdTable(
        thresholds=lam,
        theta=float(meta["theta"]),
        alpha=float(meta["alpha"]),
        n_streams=int(meta["n"]),
        seed=int(meta["seed"]),
        model_fingerprint=meta["model"],
        survival_frac=surv,
        retained_mean=rmean,
    )
