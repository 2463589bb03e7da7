"""Change-point priors and observation models for parallel data streams.

Each of K streams carries a change point ``tau`` taking values in
``{0, 1, 2, ...}`` or infinity (the stream never changes).  The time
convention is: observations at times ``1..tau`` follow the pre-change
density ``p`` and observations at times ``tau+1, tau+2, ...`` follow the
post-change density ``q``; ``tau = 0`` means every observation is
post-change.  Infinity is represented by the float ``inf`` sentinel, never
by a large integer, so "never changes" is exact.

Three ensemble variants are provided:

* :class:`IIDModel` -- i.i.d. geometric change points with a common
  observation model across streams (the homogeneous model the optimality
  theory targets).
* :class:`PartialDepModel` -- a shared geometric change time ``tau0``;
  each stream independently changes at ``tau0`` with probability ``eta``
  and otherwise never changes.  ``eta = 1`` makes all streams change
  together.
* :class:`TabularModel` -- per-stream finite-support priors and
  per-stream observation models (heterogeneous streams).

Model objects are immutable after construction and safe to share across
threads; all sampling takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

INF = math.inf


def _check_prob(value: float, name: str, *, open_left: bool = False,
                open_right: bool = False) -> None:
    lo_ok = value > 0.0 if open_left else value >= 0.0
    hi_ok = value < 1.0 if open_right else value <= 1.0
    if not (math.isfinite(value) and lo_ok and hi_ok):
        lo = "(" if open_left else "["
        hi = ")" if open_right else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")


@dataclass(frozen=True)
class GeometricPrior:
    """Geometric change-point prior: P(tau = m) = theta (1-theta)^m, m >= 0."""

    theta: float

    def __post_init__(self) -> None:
        _check_prob(self.theta, "theta", open_left=True, open_right=True)

    def mass(self, m) -> np.ndarray | float:
        m = np.asarray(m, dtype=float)
        out = np.where(m >= 0, self.theta * (1.0 - self.theta) ** m, 0.0)
        return out if out.ndim else float(out)

    def tail(self, t) -> np.ndarray | float:
        """P(tau >= t) = (1-theta)^t."""
        t = np.asarray(t, dtype=float)
        out = (1.0 - self.theta) ** t
        return out if out.ndim else float(out)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        # numpy's geometric counts trials to first success, support {1, 2, ...}
        return rng.geometric(self.theta, size=size).astype(float) - 1.0


@dataclass(frozen=True)
class GaussianShift:
    """Gaussian mean-shift observations: N(0, sigma^2) before, N(mu, sigma^2) after."""

    mu: float
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and self.mu != 0.0):
            raise ValueError(f"mu must be finite and nonzero, got {self.mu!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")

    def sample(self, post: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one observation per entry of the boolean post-change mask."""
        post = np.asarray(post, dtype=bool)
        z = rng.standard_normal(post.shape)
        return self.sigma * z + self.mu * post

    def log_lr(self, x) -> np.ndarray | float:
        """log q(x)/p(x) = (mu*x - mu^2/2) / sigma^2."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("log_lr requires finite observations")
        out = (self.mu * x - 0.5 * self.mu * self.mu) / (self.sigma * self.sigma)
        return out if out.ndim else float(out)

    def fingerprint(self) -> str:
        return f"gauss(mu={self.mu!r},sigma={self.sigma!r})"


@dataclass(frozen=True)
class BernoulliPair:
    """Bernoulli observations: success probability p0 before, p1 after."""

    p0: float
    p1: float

    def __post_init__(self) -> None:
        _check_prob(self.p0, "p0", open_left=True, open_right=True)
        _check_prob(self.p1, "p1", open_left=True, open_right=True)
        if self.p0 == self.p1:
            raise ValueError("p0 and p1 must differ")

    def sample(self, post: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        post = np.asarray(post, dtype=bool)
        u = rng.random(post.shape)
        return (u < np.where(post, self.p1, self.p0)).astype(float)

    def log_lr(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("log_lr requires finite observations")
        if not np.all((x == 0.0) | (x == 1.0)):
            raise ValueError("Bernoulli observations must be 0 or 1")
        out = np.where(
            x == 1.0,
            math.log(self.p1 / self.p0),
            math.log((1.0 - self.p1) / (1.0 - self.p0)),
        )
        return out if out.ndim else float(out)

    def fingerprint(self) -> str:
        return f"bern(p0={self.p0!r},p1={self.p1!r})"


@dataclass(frozen=True)
class IIDModel:
    """Homogeneous ensemble: i.i.d. geometric change points, common densities."""

    prior: GeometricPrior
    obs: GaussianShift | BernoulliPair

    def sample_change_points(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if k < 1:
            raise ValueError("need at least one stream")
        return self.prior.sample(k, rng)

    def log_lr(self, x, stream: int | None = None):
        return self.obs.log_lr(x)

    def log_lr_rows(self, x: np.ndarray, streams: np.ndarray) -> np.ndarray:
        return self.obs.log_lr(x)

    def sample_step(self, t: int, tau: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One observation per stream at time t (full row, fixed stream order)."""
        return self.obs.sample(tau < t, rng)

    def fingerprint(self) -> str:
        return f"iid(theta={self.prior.theta!r},obs={self.obs.fingerprint()})"


@dataclass(frozen=True)
class PartialDepModel:
    """Shared change time tau0; streams change with it w.p. eta, else never."""

    tau0: GeometricPrior
    eta: float
    obs: GaussianShift | BernoulliPair

    def __post_init__(self) -> None:
        _check_prob(self.eta, "eta")

    def sample_change_points(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if k < 1:
            raise ValueError("need at least one stream")
        tau0 = self.tau0.sample(1, rng)[0]
        follows = rng.random(k) < self.eta
        return np.where(follows, tau0, INF)

    def log_lr(self, x, stream: int | None = None):
        return self.obs.log_lr(x)

    def log_lr_rows(self, x: np.ndarray, streams: np.ndarray) -> np.ndarray:
        return self.obs.log_lr(x)

    def sample_step(self, t: int, tau: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.obs.sample(tau < t, rng)

    def fingerprint(self) -> str:
        return (f"partial(theta={self.tau0.theta!r},eta={self.eta!r},"
                f"obs={self.obs.fingerprint()})")


@dataclass(frozen=True)
class TabularModel:
    """Heterogeneous ensemble: finite-support prior table and observation model per stream."""

    supports: tuple[tuple[int, ...], ...]
    masses: tuple[tuple[float, ...], ...]
    obs: tuple[GaussianShift | BernoulliPair, ...]

    def __post_init__(self) -> None:
        if not (len(self.supports) == len(self.masses) == len(self.obs) >= 1):
            raise ValueError("supports, masses and obs must align, one entry per stream")
        for k, (sup, mas) in enumerate(zip(self.supports, self.masses)):
            if len(sup) != len(mas) or len(sup) == 0:
                raise ValueError(f"stream {k}: support/mass length mismatch")
            if any(m < sup[i] for i, m in enumerate(sup[1:])) or len(set(sup)) != len(sup):
                raise ValueError(f"stream {k}: support must be strictly increasing")
            if any(s < 0 for s in sup):
                raise ValueError(f"stream {k}: change times must be >= 0")
            if any(p < 0.0 for p in mas):
                raise ValueError(f"stream {k}: negative prior mass")
            if abs(math.fsum(mas) - 1.0) > 1e-12:
                raise ValueError(f"stream {k}: prior masses must sum to 1")

    @property
    def n_streams(self) -> int:
        return len(self.supports)

    def sample_change_points(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if k != self.n_streams:
            raise ValueError(f"model defines {self.n_streams} streams, got k={k}")
        tau = np.empty(k)
        for i in range(k):
            u = rng.random()
            acc = 0.0
            tau[i] = self.supports[i][-1]
            for m, p in zip(self.supports[i], self.masses[i]):
                acc += p
                if u < acc:
                    tau[i] = m
                    break
        return tau

    def log_lr(self, x, stream: int | None = None):
        if stream is None:
            raise ValueError("tabular models need the stream index for log_lr")
        return self.obs[stream].log_lr(x)

    def log_lr_rows(self, x: np.ndarray, streams: np.ndarray) -> np.ndarray:
        out = np.empty(len(streams))
        for j, k in enumerate(streams):
            out[j] = self.obs[int(k)].log_lr(x[j])
        return out

    def sample_step(self, t: int, tau: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        post = tau < t
        u = rng.random(self.n_streams)
        x = np.empty(self.n_streams)
        for k, om in enumerate(self.obs):
            if isinstance(om, BernoulliPair):
                p = om.p1 if post[k] else om.p0
                x[k] = 1.0 if u[k] < p else 0.0
            else:
                # uniform -> normal via inverse CDF keeps one innovation per (t, k)
                x[k] = om.sigma * ndtri(u[k]) + (om.mu if post[k] else 0.0)
        return x

    def fingerprint(self) -> str:
        rows = ";".join(
            ",".join(f"{m}:{p!r}" for m, p in zip(sup, mas)) + "|" + om.fingerprint()
            for sup, mas, om in zip(self.supports, self.masses, self.obs)
        )
        return f"tabular({rows})"


EnsembleModel = IIDModel | PartialDepModel | TabularModel


def sample_change_points(model: EnsembleModel, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one change point per stream (entries in {0,1,...} or inf)."""
    return model.sample_change_points(k, rng)


def sample_observation(model: EnsembleModel, stream: int, t: int, tau: float,
                       rng: np.random.Generator) -> float:
    """Draw a single observation for one stream at time t given its change point."""
    if t < 1:
        raise ValueError("time index starts at 1")
    obs = model.obs[stream] if isinstance(model, TabularModel) else model.obs
    return float(obs.sample(np.asarray([tau < t]), rng)[0])


def conflicting_priors_model() -> TabularModel:
    """Four Bernoulli(0.5 -> 0.51) streams with two-point priors chosen so that
    no single deactivation procedure maximizes stream utilization at every time.
    """
    return TabularModel(
        supports=((0, 3), (0, 1), (0, 1), (0, 3)),
        masses=((0.1, 0.9), (0.4, 0.6), (0.43, 0.57), (0.55, 0.45)),
        obs=tuple(BernoulliPair(0.5, 0.51) for _ in range(4)),
    )
