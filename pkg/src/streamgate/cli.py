"""Command-line surface: detect, simulate, calibrate, verify.

Subcommands
-----------
detect      run a detector over observation rows from a file or stdin
simulate    replication study of a configured ensemble, metrics CSV out
calibrate   Monte Carlo estimation of the non-adaptive threshold table
verify      run the brute-force oracle suites, machine-readable report

Configuration may come from an INI-style file (``--config``): an optional
``[model]`` section plus one section per subcommand, flat ``key=value``
entries; command-line flags override file values.  Model keys: ``model``
(iid | partial | tabular), ``theta``, ``eta``, ``mu``, ``sigma``, ``p0``,
``p1``, and for tabular models one ``prior.<stream>`` row per stream,
e.g. ``prior.1 = 0:0.1,3:0.9``.

Observation input for ``detect`` is NDJSON (``{"t":1,"stream":1,"x":0.3}``
per line), long CSV (``t,stream,x`` header), or wide CSV (``t`` column
followed by one column per stream id).  Rows must be sorted by time with
no gaps; observations for deactivated streams are discarded with a note.
``detect`` writes the per-stream stopping-time table (``--out``;
``censored=1`` marks streams still active when input ended) and
optionally a per-step report (``--report``) with columns
``t,n_active,lfnr,w_min,w_max,dropped``: the active set at any time is
recoverable from the initial universe and the cumulative ``dropped``
ids.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
failure.  All randomness flows from ``--seed``; per-replication substreams
are spawned from it.  ``--threads`` caps worker parallelism (the
``STREAMGATE_THREADS`` environment variable overrides the default of 1);
outputs are byte-identical for every thread count.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from fractions import Fraction

import numpy as np

from . import calibrate as calibrate_mod
from . import simulate as simulate_mod
from . import verify as verify_mod
from .detector import (AdaptiveDetector, CheckpointError, DependentDetector,
                       ThresholdDetector, checkpoint_state, restore_state)
from .model import (BernoulliPair, GaussianShift, GeometricPrior, IIDModel,
                    PartialDepModel, TabularModel)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_MODEL_KEYS = ("model", "theta", "eta", "mu", "sigma", "p0", "p1")


def _load_config(path: str | None, section: str) -> dict[str, str]:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise UsageError(f"config file not found: {path}")
    merged: dict[str, str] = {}
    for sec in ("model", section):
        if parser.has_section(sec):
            merged.update(parser.items(sec))
    return merged


def _resolved(args, cfg: dict[str, str], key: str, cast=str, default=None):
    val = getattr(args, key.replace(".", "_"), None)
    if val is None:
        val = cfg.get(key)
    if val is None:
        return default
    try:
        return cast(val)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {key}: {val!r} ({exc})") from exc


def _build_obs(cfg_get):
    mu = cfg_get("mu", float)
    p0 = cfg_get("p0", float)
    p1 = cfg_get("p1", float)
    if mu is not None and (p0 is not None or p1 is not None):
        raise UsageError("give either mu/sigma (gaussian) or p0/p1 (bernoulli), not both")
    if mu is not None:
        return GaussianShift(mu=mu, sigma=cfg_get("sigma", float) or 1.0)
    if p0 is not None and p1 is not None:
        return BernoulliPair(p0=p0, p1=p1)
    raise UsageError("observation model missing: set mu (gaussian) or p0 and p1")


def _parse_prior_rows(cfg: dict[str, str]) -> tuple[tuple, tuple]:
    rows = sorted((key for key in cfg if key.startswith("prior.")),
                  key=lambda key: int(key.split(".", 1)[1]))
    if not rows:
        raise UsageError("tabular model needs prior.<stream> rows in the config file")
    supports, masses = [], []
    for key in rows:
        sup, mas = [], []
        for cell in cfg[key].split(","):
            m, p = cell.split(":")
            sup.append(int(m))
            mas.append(float(p))
        supports.append(tuple(sup))
        masses.append(tuple(mas))
    return tuple(supports), tuple(masses)


def _build_model(args, cfg: dict[str, str]):
    def cfg_get(key, cast=str, default=None):
        return _resolved(args, cfg, key, cast, default)

    kind = cfg_get("model", str, "iid").lower()
    if kind in ("iid", "ms"):
        theta = cfg_get("theta", float)
        if theta is None:
            raise UsageError("iid model needs theta")
        return IIDModel(GeometricPrior(theta), _build_obs(cfg_get))
    if kind in ("partial", "dependent"):
        theta = cfg_get("theta", float)
        eta = cfg_get("eta", float, 1.0)
        if theta is None:
            raise UsageError("partial model needs theta")
        return PartialDepModel(GeometricPrior(theta), eta, _build_obs(cfg_get))
    if kind == "tabular":
        if cfg_get("builtin", str) == "conflicting":
            from .model import conflicting_priors_model
            return conflicting_priors_model()
        supports, masses = _parse_prior_rows(cfg)
        obs = _build_obs(cfg_get)
        return TabularModel(supports=supports, masses=masses,
                            obs=tuple(obs for _ in supports))
    raise UsageError(f"unknown model kind {kind!r}")


def _default_threads() -> int:
    raw = os.environ.get("STREAMGATE_THREADS")
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# observation ingestion
# ---------------------------------------------------------------------------

def _iter_rows(path: str):
    """Yield (row_no, t, stream_id, x) from NDJSON, long CSV, or wide CSV."""
    fh = sys.stdin if path == "-" else open(path)
    try:
        first = fh.readline()
        if not first.strip():
            raise DataError("no observations")
        row_no = 1
        if first.lstrip().startswith("{"):
            for line in [first] + fh.readlines():
                line = line.strip()
                if not line:
                    row_no += 1
                    continue
                try:
                    rec = json.loads(line)
                    yield row_no, int(rec["t"]), int(rec["stream"]), float(rec["x"])
                except (KeyError, ValueError, TypeError) as exc:
                    raise DataError(f"row {row_no}: bad NDJSON record ({exc})") from exc
                row_no += 1
            return
        header = [h.strip() for h in first.strip().split(",")]
        if header == ["t", "stream", "x"]:
            for line in fh:
                row_no += 1
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise DataError(f"row {row_no}: expected t,stream,x")
                try:
                    yield row_no, int(parts[0]), int(parts[1]), float(parts[2])
                except ValueError as exc:
                    raise DataError(f"row {row_no}: {exc}") from exc
            return
        if header[0] != "t" or len(header) < 2:
            raise DataError("unrecognized input header; expected NDJSON, "
                            "'t,stream,x', or wide 't,<id>,...'")
        ids = []
        for h in header[1:]:
            try:
                ids.append(int(h))
            except ValueError as exc:
                raise DataError(f"bad stream id {h!r} in wide header") from exc
        for line in fh:
            row_no += 1
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(ids) + 1:
                raise DataError(f"row {row_no}: expected {len(ids) + 1} columns")
            t = int(parts[0])
            for sid, cell in zip(ids, parts[1:]):
                if cell != "":
                    yield row_no, t, sid, float(cell)
    finally:
        if fh is not sys.stdin:
            fh.close()


def _group_by_time(rows):
    """Yield (t, {stream_id: x}, row_no) groups; times must be nondecreasing."""
    current_t = None
    group: dict[int, float] = {}
    group_row = 0
    for row_no, t, sid, x in rows:
        if current_t is None:
            current_t, group_row = t, row_no
        if t < current_t:
            raise DataError(f"row {row_no}: input not sorted by time "
                            f"({t} after {current_t})")
        if t > current_t:
            yield current_t, group, group_row
            current_t, group, group_row = t, {}, row_no
        if sid in group:
            raise DataError(f"row {row_no}: duplicate observation for stream {sid} "
                            f"at t={t}")
        group[sid] = x
    if current_t is not None:
        yield current_t, group, group_row


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_detect(args) -> int:
    cfg = _load_config(args.config, "detect")
    model = _build_model(args, cfg)
    alpha = _resolved(args, cfg, "alpha", float)
    if alpha is None:
        raise UsageError("detect needs alpha")
    mode = _resolved(args, cfg, "mode", str, "adaptive")
    table = None
    if mode == "threshold":
        table_path = _resolved(args, cfg, "table", str)
        if table_path is None:
            raise UsageError("threshold mode needs --table")
        table = calibrate_mod.read_threshold_table(table_path)

    groups = _group_by_time(_iter_rows(args.input))
    try:
        first_t, first_obs, first_row = next(groups)
    except StopIteration:
        raise DataError("no observations")

    det = None
    ids = None
    discarded = 0
    if args.checkpoint and os.path.exists(args.checkpoint):
        with open(args.checkpoint) as fh:
            blob = fh.read()
        try:
            meta = json.loads(blob)
            ids = sorted(int(s) for s in meta["external_ids"])
            state = meta["state"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"unreadable checkpoint file: {exc}") from exc
        det = restore_state(state, model, len(ids), table=table)
    if det is None:
        if first_t != 1:
            raise DataError(f"row {first_row}: input must start at t=1, got t={first_t}")
        ids = sorted(first_obs)
        k = len(ids)
        if mode == "adaptive":
            det = AdaptiveDetector(model, alpha, k)
        elif mode == "threshold":
            det = ThresholdDetector(model, alpha, k, table)
        elif mode == "dependent":
            det = DependentDetector(model, alpha, k)
        else:
            raise UsageError(f"unknown mode {mode!r}")

    id_pos = {sid: i for i, sid in enumerate(ids)}
    report_rows = []

    def process(t, obs, row_no):
        nonlocal discarded
        expected = det.t + 1
        if t != expected:
            raise DataError(f"row {row_no}: time gap, expected t={expected}, got t={t}")
        unknown = set(obs) - set(id_pos)
        if unknown:
            raise DataError(f"row {row_no}: unknown stream id(s) {sorted(unknown)}")
        active_ids = [ids[i] for i in det.active]
        missing = [sid for sid in active_ids if sid not in obs]
        if missing:
            raise DataError(f"row {row_no}: missing observation for active "
                            f"stream(s) {missing} at t={t}")
        discarded += len([sid for sid in obs if sid not in active_ids])
        det.observe(np.asarray([obs[sid] for sid in active_ids]))
        w_active = det.w[det.active]
        dropped = det.deactivate()
        report_rows.append((
            t, det.n_active,
            float(det.trace().realized_lfnr[-1]),
            float(w_active.min()) if w_active.size else math.nan,
            float(w_active.max()) if w_active.size else math.nan,
            " ".join(str(ids[i]) for i in dropped),
        ))

    process(first_t, first_obs, first_row)
    for t, obs, row_no in groups:
        process(t, obs, row_no)

    meta_lines = [
        f"# mode={det.kind} alpha={det.alpha!r} k={det.k} t_final={det.t}",
        f"# model={model.fingerprint()}",
    ]
    trace = det.trace()
    with open(args.out, "w") as fh:
        fh.write("\n".join(meta_lines) + "\n")
        fh.write("stream,t_stop,censored\n")
        for i, sid in enumerate(ids):
            stopped = trace.t_stop[i]
            if stopped < 0:
                fh.write(f"{sid},{trace.t_final},1\n")
            else:
                fh.write(f"{sid},{stopped},0\n")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write("\n".join(meta_lines) + "\n")
            fh.write("t,n_active,lfnr,w_min,w_max,dropped\n")
            for row in report_rows:
                fh.write(f"{row[0]},{row[1]},{row[2]!r},{row[3]!r},{row[4]!r},"
                         f"{row[5]}\n")
    if args.checkpoint:
        payload = {"external_ids": ids, "state": checkpoint_state(det)}
        with open(args.checkpoint, "w") as fh:
            json.dump(payload, fh, indent=1)
    if discarded:
        print(f"note: discarded {discarded} observation(s) for deactivated streams",
              file=sys.stderr)
    print(f"detect: processed t=1..{det.t}, {det.n_active}/{det.k} streams "
          f"still active")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config, "simulate")
    model = _build_model(args, cfg)
    k = _resolved(args, cfg, "k", int)
    alpha = _resolved(args, cfg, "alpha", float)
    horizon = _resolved(args, cfg, "horizon", int)
    reps = _resolved(args, cfg, "reps", int)
    seed = _resolved(args, cfg, "seed", int, 0)
    procedure = _resolved(args, cfg, "procedure", str, "adaptive")
    threads = args.threads
    if horizon is None and isinstance(model, IIDModel):
        # long enough to cover the full decay of the active count
        horizon = 200 if model.prior.theta >= 0.05 else 600
    if None in (k, alpha, horizon, reps):
        raise UsageError("simulate needs k, alpha, horizon, and reps")
    table = None
    if procedure == "threshold":
        table_path = _resolved(args, cfg, "table", str)
        if table_path is None:
            raise UsageError("threshold procedure needs --table")
        table = calibrate_mod.read_threshold_table(table_path)
    try:
        config = simulate_mod.SimConfig(model=model, k=k, alpha=alpha,
                                        horizon=horizon, replications=reps,
                                        procedure=procedure, seed=seed,
                                        table=table, threads=threads)
        frame = simulate_mod.run_experiment(config)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    simulate_mod.write_metrics_csv(frame, args.out, metadata={
        "model": model.fingerprint(),
        "k": k, "alpha": repr(alpha), "horizon": horizon,
        "procedure": procedure, "seed": seed,
    })
    print(f"simulate: wrote {args.out} ({reps} replications, horizon {horizon})")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _load_config(args.config, "calibrate")
    theta = _resolved(args, cfg, "theta", float)
    alpha = _resolved(args, cfg, "alpha", float)
    n = _resolved(args, cfg, "n", int)
    horizon = _resolved(args, cfg, "horizon", int)
    seed = _resolved(args, cfg, "seed", int, 0)
    if None in (theta, alpha, n, horizon):
        raise UsageError("calibrate needs theta, alpha, n, and horizon")
    if n < 1000:
        raise UsageError(f"n={n} is below the calibration floor of 1000 streams")

    def cfg_get(key, cast=str, default=None):
        return _resolved(args, cfg, key, cast, default)

    obs = _build_obs(cfg_get)
    table = calibrate_mod.calibrate_thresholds(theta, obs, alpha, n, horizon, seed)
    calibrate_mod.write_threshold_table(table, args.out)
    print(f"calibrate: wrote {args.out} (n={n}, horizon {horizon})")
    return 0


def _verify_posterior(trials: int, rng) -> tuple[bool, str]:
    from .posterior import PosteriorState, update_posterior

    worst = 0.0
    for _ in range(trials):
        theta = rng.choice([0.01, 0.05, 0.3])
        t = int(rng.integers(1, 26))
        llr = rng.normal(0.0, 1.5, size=t)
        state = PosteriorState.initial(1)
        for value in llr:
            state = update_posterior(state, theta, [value], [0])
        worst = max(worst, abs(state.w[0]
                               - verify_mod.brute_force_posterior(theta, llr)))
    return worst <= 1e-10, f"max_abs_diff={worst:.3e}"


def _verify_selection(trials: int, rng) -> tuple[bool, str]:
    from .detector import one_step_rule

    for _ in range(trials):
        n = int(rng.integers(0, 13))
        w = rng.random(n)
        alpha = float(rng.random())
        kept = one_step_rule(w, alpha)
        size = verify_mod.brute_force_max_subset(w, alpha)
        if len(kept) != size:
            return False, f"size mismatch for w={w!r} alpha={alpha!r}"
        if len(kept) != verify_mod.feasible_prefix_size(np.sort(w), alpha):
            return False, f"prefix mismatch for w={w!r} alpha={alpha!r}"
    return True, f"{trials} random instances"


def _verify_ordering(trials: int, rng) -> tuple[bool, str]:
    ok, bad = verify_mod.monotone_selection_check(trials, 0.05, rng)
    if not ok:
        return False, f"monotonicity counterexample {bad!r}"
    ok, bad = verify_mod.partial_order_axioms_check(trials, rng)
    if not ok:
        return False, str(bad)
    return True, f"{trials} monotonicity + axiom trials"


def _verify_counterexample(*_args) -> tuple[bool, str]:
    rep = verify_mod.conflicting_priors_enumeration()
    line = (f"U2={rep.util_sup_t2} U4={rep.util_sup_t4} "
            f"coexist={'true' if rep.jointly_attainable else 'false'}")
    print(line)
    ok = (rep.util_sup_t2 == 7 and rep.util_sup_t4 == 10
          and not rep.jointly_attainable)
    return ok, line


def _verify_optimality(*_args) -> tuple[bool, str]:
    rows = verify_mod.dp_optimality_report(
        Fraction(3, 10), Fraction(1, 5), Fraction(4, 5), Fraction(3, 10),
        n_streams=2, horizon=3)
    for row in rows:
        if row.util_proposed != row.util_supremum:
            return False, f"utilization gap at t={row.t}"
        if row.runlength_proposed != row.runlength_supremum:
            return False, f"run-length gap at t={row.t}"
        if row.expected_active_proposed != row.max_expected_active:
            return False, f"active-count gap at t={row.t}"
    return True, f"proposed matches supremum at t=1..{len(rows)}"


_SUITES = {
    "posterior": _verify_posterior,
    "selection": _verify_selection,
    "ordering": _verify_ordering,
    "counterexample": _verify_counterexample,
    "optimality": _verify_optimality,
}
_SUITE_ALIASES = {"example3": "counterexample"}


def _cmd_verify(args) -> int:
    name = _SUITE_ALIASES.get(args.suite, args.suite)
    if name == "all":
        names = list(_SUITES)
    elif name in _SUITES:
        names = [name]
    else:
        raise UsageError(f"unknown suite {args.suite!r}; choose from "
                         f"{', '.join(list(_SUITES) + ['all'])}")
    rng = np.random.default_rng(args.seed)
    failures = 0
    for suite in names:
        ok, detail = _SUITES[suite](args.trials, rng)
        print(f"{'PASS' if ok else 'FAIL'} {suite} {detail}")
        failures += 0 if ok else 1
    return 3 if failures else 0


# ---------------------------------------------------------------------------

def _add_model_flags(sub) -> None:
    sub.add_argument("--model", help="iid | partial | tabular")
    sub.add_argument("--theta", help="geometric change-rate parameter")
    sub.add_argument("--eta", help="per-stream change probability (partial model)")
    sub.add_argument("--mu", help="post-change mean (gaussian observations)")
    sub.add_argument("--sigma", help="common standard deviation (gaussian)")
    sub.add_argument("--p0", help="pre-change success probability (bernoulli)")
    sub.add_argument("--p1", help="post-change success probability (bernoulli)")


def build_parser() -> _Parser:
    parser = _Parser(prog="streamgate",
                     description="compound sequential change detection "
                                 "with local FNR control")
    subs = parser.add_subparsers(dest="command", required=True)

    det = subs.add_parser("detect", help="run a detector over observation rows")
    det.add_argument("--config", "-c")
    det.add_argument("--input", "-i", required=True, help="file or - for stdin")
    det.add_argument("--out", "-o", required=True, help="stopping-time table CSV")
    det.add_argument("--report", help="per-step report CSV")
    det.add_argument("--checkpoint", help="resume from / save to this path")
    det.add_argument("--alpha")
    det.add_argument("--mode", help="adaptive | threshold | dependent")
    det.add_argument("--table", help="threshold table CSV (threshold mode)")
    _add_model_flags(det)
    det.set_defaults(func=_cmd_detect)

    sim = subs.add_parser("simulate", help="replication study, metrics CSV out")
    sim.add_argument("--config", "-c")
    sim.add_argument("--out", "-o", required=True)
    sim.add_argument("--k")
    sim.add_argument("--alpha")
    sim.add_argument("--horizon")
    sim.add_argument("--reps")
    sim.add_argument("--seed")
    sim.add_argument("--procedure", help="adaptive | threshold | dependent")
    sim.add_argument("--table", help="threshold table CSV (threshold procedure)")
    sim.add_argument("--threads", type=int, default=_default_threads())
    _add_model_flags(sim)
    sim.set_defaults(func=_cmd_simulate)

    cal = subs.add_parser("calibrate", help="estimate the threshold table")
    cal.add_argument("--config", "-c")
    cal.add_argument("--out", "-o", required=True)
    cal.add_argument("--theta")
    cal.add_argument("--alpha")
    cal.add_argument("--n", help="simulated streams (>= 1000)")
    cal.add_argument("--horizon")
    cal.add_argument("--seed")
    cal.add_argument("--mu")
    cal.add_argument("--sigma")
    cal.add_argument("--p0")
    cal.add_argument("--p1")
    cal.set_defaults(func=_cmd_calibrate)

    ver = subs.add_parser("verify", help="run oracle suites")
    ver.add_argument("suite", nargs="?", default="all",
                     help="posterior | selection | ordering | counterexample "
                          "| optimality | all")
    ver.add_argument("--trials", type=int, default=200)
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
