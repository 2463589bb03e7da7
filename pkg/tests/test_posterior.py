import math

import numpy as np
import pytest
from scipy.special import logsumexp

from streamgate.model import GaussianShift, GeometricPrior
from streamgate.posterior import (DependentPosteriorState, PartialDepPosterior,
                                  PosteriorState, TabularPosteriorState,
                                  inclusive_change_prob, posterior_partial_dep,
                                  prob_from_log_odds, reference_posterior_path,
                                  reference_posterior_paths, update_dependent,
                                  update_posterior, update_tabular)
from streamgate.verify import brute_force_posterior


def _run_recursion(theta, llr):
    state = PosteriorState.initial(1)
    for value in llr:
        state = update_posterior(state, theta, [value], [0])
    return state.w[0]


def test_single_update_known_value():
    # theta=0.5, W=0, likelihood ratio 1: posterior lands at 1/2
    state = update_posterior(PosteriorState.initial(1), 0.5, [0.0], [0])
    assert state.w[0] == pytest.approx(0.5, abs=1e-15)


def test_w_one_is_absorbing():
    state = PosteriorState(t=3, log_odds=np.array([math.inf]),
                           frozen=np.array([False]))
    for llr in (-50.0, 0.0, 17.0):
        state = update_posterior(state, 0.3, [llr], [0])
        assert state.w[0] == 1.0


def test_recursion_matches_brute_force():
    rng = np.random.default_rng(0)
    for theta in (0.01, 0.05, 0.3):
        for _ in range(20):
            t = int(rng.integers(1, 26))
            llr = rng.normal(0.0, 1.2, size=t)
            assert _run_recursion(theta, llr) == pytest.approx(
                brute_force_posterior(theta, llr), abs=1e-10)


def test_update_monotone_in_likelihood_ratio():
    rng = np.random.default_rng(1)
    for _ in range(200):
        w0 = rng.random()
        theta = rng.uniform(0.01, 0.9)
        llr = rng.normal()
        base = PosteriorState(t=0, log_odds=np.array(
            [math.log(w0) - math.log1p(-w0)]), frozen=np.array([False]))
        lo = update_posterior(base, theta, [llr], [0]).w[0]
        hi = update_posterior(base, theta, [llr + 1e-6], [0]).w[0]
        assert hi >= lo


def test_permutation_equivariance():
    rng = np.random.default_rng(2)
    llr = rng.normal(size=6)
    state = update_posterior(PosteriorState.initial(6), 0.1, llr, np.arange(6))
    perm = rng.permutation(6)
    state_p = update_posterior(PosteriorState.initial(6), 0.1, llr[perm],
                               np.arange(6))
    assert np.allclose(state.w[perm], state_p.w, atol=0, rtol=0)


def test_frozen_streams_never_change():
    rng = np.random.default_rng(3)
    state = update_posterior(PosteriorState.initial(3), 0.2,
                             rng.normal(size=3), np.arange(3))
    pinned = state.w[1]
    state = state.freeze([1])
    for _ in range(5):
        state = update_posterior(state, 0.2, rng.normal(size=2), [0, 2])
    assert state.w[1] == pinned
    with pytest.raises(ValueError):
        update_posterior(state, 0.2, [0.0], [1])


def test_update_rejects_misaligned_inputs():
    with pytest.raises(ValueError):
        update_posterior(PosteriorState.initial(3), 0.1, [0.0, 0.0], [0])


def test_inclusive_change_prob():
    assert inclusive_change_prob(0.3, 0.0) == pytest.approx(0.3, abs=1e-15)
    assert inclusive_change_prob(0.3, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert inclusive_change_prob(0.05, 0.2) == pytest.approx(0.24, abs=1e-15)
    with pytest.raises(ValueError):
        inclusive_change_prob(0.3, 1.2)


# ---------------------------------------------------------------------------
# shared-change-time posterior
# ---------------------------------------------------------------------------

def _dependent_oracle(theta, llr):
    """Direct Bayes sum over the shared change time (tail collapsed)."""
    k, t = llr.shape
    col = llr.sum(axis=0)
    cum = np.concatenate([[0.0], np.cumsum(col)])
    m = np.arange(t)
    terms = np.log(theta) + m * np.log1p(-theta) + (cum[t] - cum[m])
    tail = t * np.log1p(-theta)
    return float(np.exp(logsumexp(terms) - logsumexp(np.append(terms, tail))))


def test_dependent_single_step():
    state = update_dependent(DependentPosteriorState.initial(), 0.5, 0.0)
    assert state.log_rho == pytest.approx(0.0, abs=1e-15)  # rho = 1
    assert state.w == pytest.approx(0.5, abs=1e-15)


def test_dependent_saturates():
    state = update_dependent(DependentPosteriorState.initial(), 0.5, 1e6)
    assert state.w == 1.0


def test_dependent_matches_enumeration():
    rng = np.random.default_rng(4)
    for trial in range(20):
        t = int(rng.integers(1, 9))
        llr = rng.normal(0, 1, size=(3, t))
        state = DependentPosteriorState.initial()
        for s in range(t):
            state = update_dependent(state, 0.2, llr[:, s].sum())
        assert state.w == pytest.approx(_dependent_oracle(0.2, llr), abs=1e-10)


# ---------------------------------------------------------------------------
# partially dependent posterior
# ---------------------------------------------------------------------------

def _partial_oracle(theta, eta, llr, trunc=600):
    """Joint enumeration over the shared time and per-stream change flags."""
    k, t = llr.shape
    cum = np.concatenate([np.zeros((k, 1)), np.cumsum(llr, axis=1)], axis=1)
    num = np.zeros(k)
    den = 0.0
    for m in range(trunc):
        pm = theta * (1 - theta) ** m
        for flags in range(2 ** k):
            pf = 1.0
            lik = 1.0
            changed = np.zeros(k, dtype=bool)
            for j in range(k):
                if flags >> j & 1:
                    pf *= eta
                    lik *= math.exp(cum[j, t] - cum[j, min(m, t)])
                    changed[j] = m < t
                else:
                    pf *= 1.0 - eta
            weight = pm * pf * lik
            den += weight
            num += weight * changed
    return num / den


def test_partial_dep_matches_joint_enumeration():
    rng = np.random.default_rng(5)
    prior = GeometricPrior(0.3)
    for _ in range(8):
        t = int(rng.integers(1, 7))
        llr = rng.normal(0, 1, size=(3, t))
        got = posterior_partial_dep(prior, 0.5, llr)
        want = _partial_oracle(0.3, 0.5, llr)
        assert np.abs(got - want).max() <= 1e-10


def test_partial_dep_eta_edges():
    rng = np.random.default_rng(6)
    llr = rng.normal(size=(4, 5))
    prior = GeometricPrior(0.2)
    assert np.all(posterior_partial_dep(prior, 0.0, llr) == 0.0)
    w1 = posterior_partial_dep(prior, 1.0, llr)
    state = DependentPosteriorState.initial()
    for s in range(5):
        state = update_dependent(state, 0.2, llr[:, s].sum())
    assert np.abs(w1 - state.w).max() <= 1e-12
    assert np.ptp(w1) == 0.0  # every stream identical when eta = 1


def test_partial_dep_streaming_backend_tracks_exact_posterior():
    rng = np.random.default_rng(7)
    llr = rng.normal(size=(3, 6))
    live = PartialDepPosterior(0.3, 0.5, 3)
    for s in range(6):
        live.advance(llr[:, s], [0, 1, 2])
        want = posterior_partial_dep(GeometricPrior(0.3), 0.5, llr[:, :s + 1])
        assert np.abs(live.w - want).max() <= 1e-12


def test_partial_dep_streaming_backend_with_deactivation():
    # a stream dropped after two steps contributes only its observed data
    rng = np.random.default_rng(8)
    llr = rng.normal(size=(3, 6))
    live = PartialDepPosterior(0.3, 0.5, 3)
    live.advance(llr[:, 0], [0, 1, 2])
    live.advance(llr[:, 1], [0, 1, 2])
    pinned = live.w[1]
    live.freeze([1])
    for s in range(2, 6):
        live.advance(llr[[0, 2], s], [0, 2])
    observed = llr.copy()
    observed[1, 2:] = 0.0  # no data after the stop: zero log-likelihood-ratio
    want = _partial_oracle(0.3, 0.5, observed)
    assert np.abs(live.w[[0, 2]] - want[[0, 2]]).max() <= 1e-10
    assert live.w[1] == pinned


# ---------------------------------------------------------------------------
# reference (never-deactivated) posterior paths
# ---------------------------------------------------------------------------

def test_reference_path_starts_at_zero():
    path = reference_posterior_path(0.05, GaussianShift(1.0), 5,
                                    np.random.default_rng(9))
    assert path[0] == 0.0
    assert np.all((path >= 0.0) & (path <= 1.0))


def test_reference_paths_mean_matches_prior():
    rng = np.random.default_rng(10)
    paths = reference_posterior_paths(0.05, GaussianShift(1.0), 1, 100_000, rng)
    assert abs(paths[:, 1].mean() - 0.05) <= 0.003
    rng = np.random.default_rng(11)
    paths = reference_posterior_paths(0.01, GaussianShift(1.0), 3, 100_000, rng)
    assert abs(paths[:, 3].mean() - 0.029701) <= 0.003


# ---------------------------------------------------------------------------
# finite-support posteriors
# ---------------------------------------------------------------------------

def _table_oracle(support, masses, p0, p1, xs):
    """Per-stream finite-prior Bayes by direct summation."""
    t = len(xs)
    post = []
    for m, pm in zip(support, masses):
        lik = 1.0
        for s, x in enumerate(xs, start=1):
            p = p1 if s > m else p0
            lik *= p if x else 1.0 - p
        post.append(pm * lik)
    z = sum(post)
    return sum(p for m, p in zip(support, post) if m <= t - 1) / z


def test_tabular_posterior_matches_direct_bayes():
    supports = ((0, 3), (0, 1))
    masses = ((0.1, 0.9), (0.4, 0.6))
    rng = np.random.default_rng(12)
    for _ in range(20):
        xs = rng.integers(0, 2, size=4)
        state = TabularPosteriorState.initial(supports, masses)
        llr1 = np.log(np.where(xs == 1, 0.51 / 0.5, 0.49 / 0.5))
        for s in range(4):
            state = update_tabular(state, [llr1[s], llr1[s]], [0, 1])
            for k in range(2):
                want = _table_oracle(supports[k], masses[k], 0.5, 0.51,
                                     xs[:s + 1])
                assert state.w[k] == pytest.approx(want, abs=1e-12)


def test_tabular_posterior_freeze():
    state = TabularPosteriorState.initial(((0, 2),), ((0.3, 0.7),))
    state = update_tabular(state, [0.4], [0])
    state = state.freeze([0])
    with pytest.raises(ValueError):
        update_tabular(state, [0.4], [0])


def test_prob_log_odds_round_trip():
    w = np.array([0.0, 1e-12, 0.25, 0.5, 0.999, 1.0])
    from streamgate.posterior import log_odds_from_prob
    back = prob_from_log_odds(log_odds_from_prob(w))
    assert np.allclose(back, w, atol=1e-15)
