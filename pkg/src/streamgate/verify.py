"""Brute-force oracles and exact desk-scale optimality checks.

Everything here exists to validate the production code paths against an
independent route:

* :func:`brute_force_posterior` recomputes the change posterior by direct
  summation over candidate change times (quadratic in t) instead of the
  streaming recursion.
* :func:`brute_force_max_subset` searches all 2^n index subsets for the
  largest one whose mean posterior fits the budget, instead of sorting
  and scanning prefixes.
* The ordered-vector utilities (:func:`ordered_leq`,
  :func:`feasible_prefix_size`, :func:`feasible_prefix`) mirror the
  selection rule on sorted vectors, together with randomized checks of
  the monotonicity property that drives the optimality theory.
* The exact-arithmetic engines (`fractions.Fraction` throughout) compute,
  for tiny Bernoulli instances, the supremum of expected stream
  utilization over *all* LFNR-controlling procedures by exhaustive
  dynamic programming over the observation tree, alongside the proposed
  procedure's exact performance.  :func:`conflicting_priors_enumeration`
  reproduces the four-stream instance in which the time-2 and time-4
  optima are incompatible, so no uniformly optimal procedure exists.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp

MAX_SUBSET_DIM = 20


# ---------------------------------------------------------------------------
# float-side oracles
# ---------------------------------------------------------------------------

def brute_force_posterior(theta: float, log_lrs) -> float:
    """Change posterior by direct summation over candidate change times.

    Given per-observation log likelihood ratios through time t, returns
    P(change strictly before t | data) for a geometric(theta) change time:
    the weighted likelihood-ratio sum over change times 0..t-1 against the
    never-changed-yet tail, stabilized by log-sum-exp.
    """
    llr = np.asarray(log_lrs, dtype=float)
    t = llr.size
    if t == 0:
        return 0.0
    # suffix[m] = sum of log ratios after a change at m; summed right-to-left
    # so a -inf ratio (zero likelihood) propagates without inf - inf
    suffix = np.cumsum(llr[::-1])[::-1]
    m = np.arange(t)
    terms = math.log(theta) + m * math.log1p(-theta) + suffix
    tail = t * math.log1p(-theta)
    return float(np.exp(logsumexp(terms) - logsumexp(np.append(terms, tail))))


def brute_force_max_subset(w, alpha: float) -> int:
    """Largest subset size with mean at most alpha, by exhaustive search.

    Sums use exactly rounded summation so boundary ties are decided the
    same way regardless of subset enumeration order.
    """
    w = np.asarray(w, dtype=float)
    n = w.size
    if n > MAX_SUBSET_DIM:
        raise ValueError(f"exhaustive search capped at {MAX_SUBSET_DIM} streams, got {n}")
    best = 0
    for size in range(n, 0, -1):
        for combo in itertools.combinations(range(n), size):
            if math.fsum(w[list(combo)]) <= alpha * size:
                best = size
                break
        if best:
            break
    return best


# ---------------------------------------------------------------------------
# ordered vectors: the sorted-posterior state space and its partial order
# ---------------------------------------------------------------------------

def _check_sorted(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ValueError("ordered vectors are one-dimensional")
    if u.size and (np.any((u < 0.0) | (u > 1.0)) or np.any(np.diff(u) < 0.0)):
        raise ValueError("entries must be nondecreasing probabilities")
    return u


def ordered_leq(u, v) -> bool:
    """Partial order on sorted vectors: u <= v iff u has at least as many
    entries and is entrywise at most v on v's length.  Every vector is <=
    the empty vector."""
    u = _check_sorted(u)
    v = _check_sorted(v)
    if v.size == 0:
        return True
    if u.size < v.size:
        return False
    return bool(np.all(u[:v.size] <= v))


def feasible_prefix_size(u, alpha: float) -> int:
    """Largest n with u_1 + ... + u_n <= alpha * n for a sorted vector."""
    u = _check_sorted(u)
    best = 0
    for n in range(1, u.size + 1):
        if math.fsum(u[:n]) <= alpha * n:
            best = n
    return best


def feasible_prefix(u, alpha: float) -> np.ndarray:
    """The retained prefix itself (empty array when nothing fits)."""
    u = _check_sorted(u)
    return u[: feasible_prefix_size(u, alpha)].copy()


def random_ordered_pair(rng: np.random.Generator, max_dim: int = 8
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Sample (u, v) with u <= v in the partial order.

    Draw v first, then lower its entries and append extras: order
    statistics preserve the entrywise domination, and added entries only
    shift early order statistics down.
    """
    dim_v = int(rng.integers(0, max_dim + 1))
    v = np.sort(rng.random(dim_v))
    lowered = v * rng.random(dim_v)
    extras = rng.random(int(rng.integers(0, max_dim + 1)))
    u = np.sort(np.concatenate([lowered, extras]))
    return u, v


def monotone_selection_check(n_trials: int, alpha: float,
                             rng: np.random.Generator):
    """Randomized check that the retained-prefix map is order preserving.

    Samples pairs u <= v and asserts feasible_prefix(u) <= feasible_prefix(v);
    returns (True, None) or (False, (u, v)) with the first counterexample.
    """
    for _ in range(n_trials):
        u, v = random_ordered_pair(rng)
        if not ordered_leq(feasible_prefix(u, alpha), feasible_prefix(v, alpha)):
            return False, (u, v)
    return True, None


def partial_order_axioms_check(n_trials: int, rng: np.random.Generator):
    """Randomized reflexivity / antisymmetry / transitivity checks.

    Transitivity is exercised on constructed chains u <= v <= w;
    antisymmetry on equal-dimension pairs.  Returns (True, None) or
    (False, description).
    """
    for _ in range(n_trials):
        v, w = random_ordered_pair(rng)
        # build u <= v by lowering v and padding, as in random_ordered_pair
        lowered = v * rng.random(v.size)
        extras = rng.random(int(rng.integers(0, 4)))
        u = np.sort(np.concatenate([lowered, extras]))
        if not ordered_leq(v, v):
            return False, f"reflexivity failed for {v}"
        if not (ordered_leq(u, v) and ordered_leq(v, w)):
            return False, f"chain construction broken for {u}, {v}, {w}"
        if not ordered_leq(u, w):
            return False, f"transitivity failed for {u} <= {v} <= {w}"
        if v.size == w.size and ordered_leq(v, w) and ordered_leq(w, v) \
                and not np.array_equal(v, w):
            return False, f"antisymmetry failed for {v}, {w}"
    return True, None


# ---------------------------------------------------------------------------
# exact-arithmetic streams (Bernoulli observations, Fraction probabilities)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _GeomStream:
    """Exact posterior state of one stream under the geometric prior."""

    theta: Fraction
    p0: Fraction
    p1: Fraction
    w: Fraction = Fraction(0)
    t: int = 0

    def predictive_one(self) -> Fraction:
        delta = self.theta + (1 - self.theta) * self.w
        return delta * self.p1 + (1 - delta) * self.p0

    def advance(self, x: int) -> "_GeomStream":
        lr = self.p1 / self.p0 if x else (1 - self.p1) / (1 - self.p0)
        num = lr * (self.theta + (1 - self.theta) * self.w)
        den = (1 - self.theta) * (1 - self.w)
        return _GeomStream(self.theta, self.p0, self.p1,
                           num / (num + den), self.t + 1)

    def key(self):
        return self.w


@dataclass(frozen=True)
class _TableStream:
    """Exact posterior state of one stream with a finite change-time prior."""

    support: tuple[int, ...]
    post: tuple[Fraction, ...]
    p0: Fraction
    p1: Fraction
    t: int = 0

    @property
    def w(self) -> Fraction:
        return sum((p for m, p in zip(self.support, self.post) if m <= self.t - 1),
                   Fraction(0))

    def predictive_one(self) -> Fraction:
        return sum((p * (self.p1 if m <= self.t else self.p0)
                    for m, p in zip(self.support, self.post)), Fraction(0))

    def advance(self, x: int) -> "_TableStream":
        t1 = self.t + 1
        liks = []
        for m in self.support:
            post_change = m < t1
            p = self.p1 if post_change else self.p0
            liks.append(p if x else 1 - p)
        raw = [p * lik for p, lik in zip(self.post, liks)]
        z = sum(raw, Fraction(0))
        return _TableStream(self.support, tuple(r / z for r in raw),
                            self.p0, self.p1, t1)

    def key(self):
        return self.post


def _proposed_retention(items: list[tuple[int, Fraction]], alpha: Fraction
                        ) -> tuple[int, ...]:
    """One-step rule on (stream id, w) pairs with index tie-breaking, exact."""
    ranked = sorted(items, key=lambda kv: (kv[1], kv[0]))
    best, acc = 0, Fraction(0)
    for n, (_, w) in enumerate(ranked, start=1):
        acc += w
        if acc <= alpha * n:
            best = n
    return tuple(sorted(k for k, _ in ranked[:best]))


def _feasible_retentions(items: list[tuple[int, Fraction]], alpha: Fraction
                         ) -> list[tuple[int, ...]]:
    out = [()]
    for size in range(1, len(items) + 1):
        for combo in itertools.combinations(items, size):
            if sum((w for _, w in combo), Fraction(0)) <= alpha * size:
                out.append(tuple(k for k, _ in combo))
    return out


def _threshold_retention(items: list[tuple[int, Fraction]], alpha: Fraction
                         ) -> tuple[int, ...]:
    """Keep-everything-under-alpha baseline (always LFNR-feasible)."""
    return tuple(sorted(k for k, w in items if w <= alpha))


class _ExactEngine:
    """Expected-performance evaluation over the exact observation tree.

    ``policy``: 'supremum' maximizes over every feasible retention at each
    step (the optimal-procedure value); 'proposed' forces the one-step
    rule; 'baseline' keeps streams with posterior <= alpha; 'switch1'
    plays the baseline for the first selection, then the one-step rule.
    ``objective``: 'util' accumulates active counts through t*;
    'runlength' accumulates sum(1 - w) over active streams; 'active'
    scores the active count at t* only.  ``restrict_first_to_max`` keeps
    only maximal-size feasible first selections (used for checking whether
    different-time optima are jointly attainable).
    """

    def __init__(self, alpha: Fraction, tstar: int, objective: str, policy: str,
                 restrict_first_to_max: bool = False, node_budget: int = 2_000_000,
                 exchangeable: bool = False):
        self.alpha = alpha
        self.tstar = tstar
        self.objective = objective
        self.policy = policy
        self.restrict_first = restrict_first_to_max
        self.memo: dict = {}
        self.nodes = 0
        self.node_budget = node_budget
        # identical streams: values depend on the posterior multiset only,
        # so memoize without stream identity and the tree collapses
        self.exchangeable = exchangeable
        self.first_choices: set[tuple[int, ...]] = set()

    def _contrib(self, streams: dict, t: int) -> Fraction:
        if self.objective == "util":
            return Fraction(len(streams))
        if self.objective == "runlength":
            return sum((1 - s.w for s in streams.values()), Fraction(0))
        return Fraction(len(streams) if t == self.tstar else 0)

    def _retentions(self, streams: dict, t: int) -> list[tuple[int, ...]]:
        items = sorted((k, s.w) for k, s in streams.items())
        if self.policy == "proposed":
            return [_proposed_retention(items, self.alpha)]
        if self.policy == "baseline":
            return [_threshold_retention(items, self.alpha)]
        if self.policy == "switch1":
            if t == 1:
                return [_threshold_retention(items, self.alpha)]
            return [_proposed_retention(items, self.alpha)]
        subs = _feasible_retentions(items, self.alpha)
        if self.restrict_first and t == 1:
            top = max(len(s) for s in subs)
            subs = [s for s in subs if len(s) == top]
        return subs

    def _outcomes(self, streams: dict, kept: tuple[int, ...]):
        dists = [(k, streams[k].predictive_one()) for k in kept]
        combos = [(Fraction(1), {})]
        for k, p1 in dists:
            nxt = []
            for prob, assign in combos:
                if p1 > 0:
                    nxt.append((prob * p1, {**assign, k: 1}))
                if p1 < 1:
                    nxt.append((prob * (1 - p1), {**assign, k: 0}))
            combos = nxt
        return combos

    def value(self, t: int, streams: dict) -> Fraction:
        if self.exchangeable:
            key = (t, tuple(sorted(s.key() for s in streams.values())))
        else:
            key = (t, tuple(sorted((k, s.key()) for k, s in streams.items())))
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        self.nodes += 1
        if self.nodes > self.node_budget:
            raise ValueError("instance too large: observation-tree budget exceeded")
        here = self._contrib(streams, t)
        if t < self.tstar:
            best = None
            for kept in self._retentions(streams, t):
                if t == 1:
                    self.first_choices.add(kept)
                ev = Fraction(0)
                for prob, assign in self._outcomes(streams, kept):
                    nxt = {k: streams[k].advance(assign[k]) for k in kept}
                    ev += prob * self.value(t + 1, nxt)
                if best is None or ev > best:
                    best = ev
            here += best
        self.memo[key] = here
        return here

    def root_value(self, fresh_streams: dict) -> Fraction:
        """Expectation over the first observations of every stream."""
        total = Fraction(0)
        for prob, assign in self._outcomes(fresh_streams, tuple(sorted(fresh_streams))):
            streams = {k: fresh_streams[k].advance(assign[k]) for k in fresh_streams}
            total += prob * self.value(1, streams)
        return total


def _exact_value(fresh_streams: dict, alpha: Fraction, tstar: int, objective: str,
                 policy: str, restrict_first_to_max: bool = False) -> Fraction:
    kinds = {(type(s), s.key(), getattr(s, "theta", None),
              getattr(s, "support", None), s.p0, s.p1)
             for s in fresh_streams.values()}
    eng = _ExactEngine(alpha, tstar, objective, policy, restrict_first_to_max,
                       exchangeable=len(kinds) == 1 and not restrict_first_to_max)
    return eng.root_value(fresh_streams)


# ---------------------------------------------------------------------------
# desk-scale optimality reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimalityRow:
    """Exact expected performance at one time point, proposed vs supremum."""

    t: int
    util_supremum: Fraction
    util_proposed: Fraction
    util_switch_after_one: Fraction
    util_baseline: Fraction
    runlength_supremum: Fraction
    runlength_proposed: Fraction
    max_expected_active: Fraction
    expected_active_proposed: Fraction


def _exact_fraction(x, name: str) -> Fraction:
    if isinstance(x, float):
        raise TypeError(f"{name} must be exact (Fraction, int, or string), not float")
    return Fraction(x)


def dp_optimality_report(theta, p0, p1, alpha, n_streams: int,
                         horizon: int) -> list[OptimalityRow]:
    """Exact comparison of the proposed procedure against the supremum over
    all LFNR-controlling procedures, for a homogeneous Bernoulli instance.

    Also reports two reference procedures: the keep-under-alpha baseline
    and the procedure that plays the baseline once before switching to the
    one-step rule (their utilizations sandwich between baseline and
    proposed).  Exhaustive over the observation tree; instances beyond a
    few streams and steps are rejected.  Parameters must be exact
    (Fractions or strings like "3/10"), never floats.
    """
    if n_streams > 3 or horizon > 4:
        raise ValueError("exact search is limited to n_streams <= 3, horizon <= 4")
    theta = _exact_fraction(theta, "theta")
    p0 = _exact_fraction(p0, "p0")
    p1 = _exact_fraction(p1, "p1")
    alpha = _exact_fraction(alpha, "alpha")
    fresh = {k: _GeomStream(theta, p0, p1) for k in range(n_streams)}
    rows = []
    for t in range(1, horizon + 1):
        rows.append(OptimalityRow(
            t=t,
            util_supremum=_exact_value(fresh, alpha, t, "util", "supremum"),
            util_proposed=_exact_value(fresh, alpha, t, "util", "proposed"),
            util_switch_after_one=_exact_value(fresh, alpha, t, "util", "switch1"),
            util_baseline=_exact_value(fresh, alpha, t, "util", "baseline"),
            runlength_supremum=_exact_value(fresh, alpha, t, "runlength", "supremum"),
            runlength_proposed=_exact_value(fresh, alpha, t, "runlength", "proposed"),
            max_expected_active=_exact_value(fresh, alpha, t, "active", "supremum"),
            expected_active_proposed=_exact_value(fresh, alpha, t, "active", "proposed"),
        ))
    return rows


_CONFLICTING_PRIORS = (
    ((0, 3), (Fraction(1, 10), Fraction(9, 10))),
    ((0, 1), (Fraction(4, 10), Fraction(6, 10))),
    ((0, 1), (Fraction(43, 100), Fraction(57, 100))),
    ((0, 3), (Fraction(55, 100), Fraction(45, 100))),
)
_CONFLICT_P0 = Fraction(1, 2)
_CONFLICT_P1 = Fraction(51, 100)
_CONFLICT_ALPHA = Fraction(34, 100)


def _conflicting_streams() -> dict:
    return {
        k: _TableStream(sup, mas, _CONFLICT_P0, _CONFLICT_P1)
        for k, (sup, mas) in enumerate(_CONFLICTING_PRIORS)
    }


@dataclass(frozen=True)
class ConflictingPriorsReport:
    """Exact utilization suprema for the four-stream counterexample.

    The time-2 and time-4 optima require different first retentions, so
    ``jointly_attainable`` is False: no procedure is uniformly optimal.
    """

    util_sup_t2: Fraction
    util_sup_t4: Fraction
    util_t4_among_t2_optimal: Fraction
    jointly_attainable: bool
    optimal_first_retention_t2: tuple[tuple[int, ...], ...]
    optimal_first_retention_t4: tuple[tuple[int, ...], ...]
    util_t2_proposed: Fraction
    util_t4_proposed: Fraction


def _optimal_first_choices(fresh: dict, alpha: Fraction, tstar: int) -> tuple:
    """First retentions that appear in some optimal continuation."""
    eng = _ExactEngine(alpha, tstar, "util", "supremum")
    best = eng.root_value(fresh)
    winners = set()
    for kept in {c for c in eng.first_choices}:
        eng2 = _ExactEngine(alpha, tstar, "util", "supremum")
        total = Fraction(0)
        for prob, assign in eng2._outcomes(fresh, tuple(sorted(fresh))):
            streams = {k: fresh[k].advance(assign[k]) for k in fresh}
            here = eng2._contrib(streams, 1)
            ev = Fraction(0)
            for p2, a2 in eng2._outcomes(streams, kept):
                nxt = {k: streams[k].advance(a2[k]) for k in kept}
                ev += p2 * eng2.value(2, nxt)
            total += prob * (here + ev)
        if total == best:
            winners.add(kept)
    return tuple(sorted(winners))


def conflicting_priors_enumeration() -> ConflictingPriorsReport:
    """Exhaustively enumerate the four-stream counterexample instance.

    Returns the exact suprema of expected utilization at times 2 and 4,
    the best time-4 value attainable by any procedure that is optimal at
    time 2, and whether a single procedure attains both suprema.
    """
    fresh = _conflicting_streams()
    alpha = _CONFLICT_ALPHA
    u2 = _exact_value(fresh, alpha, 2, "util", "supremum")
    u4 = _exact_value(fresh, alpha, 4, "util", "supremum")
    # optimality at time 2 means a maximal-size feasible first retention
    u4_constrained = _exact_value(fresh, alpha, 4, "util", "supremum",
                                  restrict_first_to_max=True)
    return ConflictingPriorsReport(
        util_sup_t2=u2,
        util_sup_t4=u4,
        util_t4_among_t2_optimal=u4_constrained,
        jointly_attainable=u4_constrained == u4,
        optimal_first_retention_t2=_optimal_first_choices(fresh, alpha, 2),
        optimal_first_retention_t4=_optimal_first_choices(fresh, alpha, 4),
        util_t2_proposed=_exact_value(fresh, alpha, 2, "util", "proposed"),
        util_t4_proposed=_exact_value(fresh, alpha, 4, "util", "proposed"),
    )


def conflicting_priors_w_ranges() -> dict[tuple[int, int], tuple[Fraction, Fraction]]:
    """Exact min/max posterior per (stream, time<=3) over all data paths."""
    out = {}
    for k, (sup, mas) in enumerate(_CONFLICTING_PRIORS):
        level = [_TableStream(sup, mas, _CONFLICT_P0, _CONFLICT_P1)]
        for t in range(1, 4):
            level = [s.advance(x) for s in level for x in (0, 1)]
            ws = [s.w for s in level]
            out[(k, t)] = (min(ws), max(ws))
    return out
