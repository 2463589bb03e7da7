import json

import numpy as np

from streamgate.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _write_ndjson(path, rows):
    with open(path, "w") as fh:
        for t, sid, x in rows:
            fh.write(json.dumps({"t": t, "stream": sid, "x": x}) + "\n")


def _jump_rows(horizon=12, k=4, jumped=2):
    # the jumped stream shifts up hard; the rest lean mildly negative so
    # their posteriors stay pinned near zero whatever the noise does
    rng = np.random.default_rng(0)
    rows = []
    for t in range(1, horizon + 1):
        for sid in range(1, k + 1):
            x = rng.normal() + (3.0 if sid == jumped else -0.3)
            rows.append((t, sid, float(x)))
    return rows


def test_detect_flags_jumped_stream(tmp_path, capsys):
    # small theta keeps unchanged streams' posteriors under the budget
    # through the horizon, so only the shifted stream is deactivated
    data = tmp_path / "obs.ndjson"
    _write_ndjson(data, _jump_rows())
    out = tmp_path / "tk.csv"
    report = tmp_path / "steps.csv"
    code, _, _ = _run(capsys, "detect", "--input", str(data), "--out", str(out),
                      "--report", str(report), "--model", "iid",
                      "--theta", "0.01", "--mu", "1.0", "--alpha", "0.15")
    assert code == 0
    lines = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
    table = {int(r.split(",")[0]): r.split(",")[1:] for r in lines[1:]}
    assert table[2][1] == "0"          # the jumped stream was deactivated
    assert int(table[2][0]) < 12
    for sid in (1, 3, 4):
        assert table[sid][1] == "1"    # others censored at the horizon
    assert report.read_text().splitlines()[2].startswith("t,")


def test_detect_empty_input(tmp_path, capsys):
    data = tmp_path / "empty.ndjson"
    data.write_text("")
    code, _, err = _run(capsys, "detect", "--input", str(data),
                        "--out", str(tmp_path / "o.csv"), "--model", "iid",
                        "--theta", "0.05", "--mu", "1.0", "--alpha", "0.05")
    assert code == 2
    assert "no observations" in err


def test_detect_unsorted_and_gappy_input(tmp_path, capsys):
    base = ["--model", "iid", "--theta", "0.05", "--mu", "1.0",
            "--alpha", "0.05", "--out", str(tmp_path / "o.csv")]
    bad = tmp_path / "unsorted.csv"
    bad.write_text("t,stream,x\n2,1,0.1\n1,1,0.2\n")
    code, _, err = _run(capsys, "detect", "--input", str(bad), *base)
    assert code == 2 and "not sorted" in err and "row 3" in err

    gappy = tmp_path / "gappy.csv"
    gappy.write_text("t,stream,x\n1,1,0.1\n3,1,0.2\n")
    code, _, err = _run(capsys, "detect", "--input", str(gappy), *base)
    assert code == 2 and "time gap" in err

    unknown = tmp_path / "unknown.csv"
    unknown.write_text("t,stream,x\n1,1,0.1\n2,1,0.2\n2,9,0.3\n")
    code, _, err = _run(capsys, "detect", "--input", str(unknown), *base)
    assert code == 2 and "unknown stream" in err

    missing = tmp_path / "missing.csv"
    missing.write_text("t,stream,x\n1,1,0.1\n1,2,0.0\n2,1,0.2\n")
    code, _, err = _run(capsys, "detect", "--input", str(missing), *base)
    assert code == 2 and "missing observation" in err


def test_detect_wide_csv(tmp_path, capsys):
    wide = tmp_path / "wide.csv"
    rng = np.random.default_rng(1)
    lines = ["t,1,2,3"]
    for t in range(1, 9):
        vals = rng.normal(size=3)
        lines.append(f"{t}," + ",".join(f"{v:.4f}" for v in vals))
    wide.write_text("\n".join(lines) + "\n")
    code, _, _ = _run(capsys, "detect", "--input", str(wide),
                      "--out", str(tmp_path / "o.csv"), "--model", "iid",
                      "--theta", "0.05", "--mu", "1.0", "--alpha", "0.05")
    assert code == 0


def test_detect_checkpoint_resume_matches_uninterrupted(tmp_path, capsys):
    rows = _jump_rows(horizon=14)
    base = ["--model", "iid", "--theta", "0.05", "--mu", "1.0",
            "--alpha", "0.05"]

    full_in = tmp_path / "full.ndjson"
    _write_ndjson(full_in, rows)
    full_out = tmp_path / "full.csv"
    code, _, _ = _run(capsys, "detect", "--input", str(full_in),
                      "--out", str(full_out), *base)
    assert code == 0

    first = [r for r in rows if r[0] <= 7]
    second = [r for r in rows if r[0] > 7]
    ck = tmp_path / "ck.json"
    part1 = tmp_path / "part1.ndjson"
    _write_ndjson(part1, first)
    code, _, _ = _run(capsys, "detect", "--input", str(part1),
                      "--out", str(tmp_path / "p1.csv"),
                      "--checkpoint", str(ck), *base)
    assert code == 0
    part2 = tmp_path / "part2.ndjson"
    _write_ndjson(part2, second)
    resumed_out = tmp_path / "resumed.csv"
    code, _, _ = _run(capsys, "detect", "--input", str(part2),
                      "--out", str(resumed_out), "--checkpoint", str(ck), *base)
    assert code == 0
    assert resumed_out.read_bytes() == full_out.read_bytes()


def test_simulate_writes_metrics_and_is_deterministic(tmp_path, capsys):
    argv = ["simulate", "--model", "iid", "--theta", "0.05", "--mu", "1.0",
            "--k", "30", "--alpha", "0.05", "--horizon", "25",
            "--reps", "20", "--seed", "1"]
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    code, _, _ = _run(capsys, *argv, "--out", str(out_a))
    assert code == 0
    code, _, _ = _run(capsys, *argv, "--out", str(out_b), "--threads", "2")
    assert code == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    body = [ln for ln in out_a.read_text().splitlines()
            if not ln.startswith("#")]
    header = body[0].split(",")
    lfnr_col = header.index("mean_lfnr")
    for row in body[1:]:
        assert float(row.split(",")[lfnr_col]) <= 0.05 + 1e-12


def test_simulate_rejects_bad_combo(tmp_path, capsys):
    code, _, err = _run(capsys, "simulate", "--model", "iid", "--theta", "0.05",
                        "--mu", "1.0", "--k", "10", "--alpha", "0.05",
                        "--horizon", "5", "--reps", "2",
                        "--procedure", "dependent",
                        "--out", str(tmp_path / "x.csv"))
    assert code == 1


def test_calibrate_floor_and_output(tmp_path, capsys):
    code, _, err = _run(capsys, "calibrate", "--theta", "0.05", "--alpha",
                        "0.05", "--n", "500", "--horizon", "5", "--seed", "1",
                        "--mu", "1.0", "--out", str(tmp_path / "t.csv"))
    assert code == 1 and "floor" in err

    out = tmp_path / "table.csv"
    code, _, _ = _run(capsys, "calibrate", "--theta", "0.05", "--alpha", "0.05",
                      "--n", "5000", "--horizon", "5", "--seed", "1",
                      "--mu", "1.0", "--out", str(out))
    assert code == 0
    text = out.read_text()
    assert text.splitlines()[2] == "t,lambda,survival_frac,retained_mean"
    assert "# theta=0.05" in text


def test_calibrated_table_refused_on_mismatch(tmp_path, capsys):
    table = tmp_path / "table.csv"
    code, _, _ = _run(capsys, "calibrate", "--theta", "0.05", "--alpha", "0.05",
                      "--n", "2000", "--horizon", "6", "--seed", "1",
                      "--mu", "1.0", "--out", str(table))
    assert code == 0
    data = tmp_path / "obs.ndjson"
    _write_ndjson(data, _jump_rows(horizon=5))
    code, _, err = _run(capsys, "detect", "--input", str(data),
                        "--out", str(tmp_path / "o.csv"), "--model", "iid",
                        "--theta", "0.01", "--mu", "1.0", "--alpha", "0.05",
                        "--mode", "threshold", "--table", str(table))
    assert code == 1
    assert "different model" in err


def test_simulate_threshold_procedure_via_cli(tmp_path, capsys):
    table = tmp_path / "table.csv"
    code, _, _ = _run(capsys, "calibrate", "--theta", "0.05", "--alpha", "0.05",
                      "--mu", "1.0", "--n", "5000", "--horizon", "12",
                      "--seed", "9", "--out", str(table))
    assert code == 0
    out = tmp_path / "m.csv"
    code, _, _ = _run(capsys, "simulate", "--model", "iid", "--theta", "0.05",
                      "--mu", "1.0", "--k", "50", "--alpha", "0.05",
                      "--horizon", "12", "--reps", "10", "--seed", "9",
                      "--procedure", "threshold", "--table", str(table),
                      "--out", str(out))
    assert code == 0
    body = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert len(body) == 13


def test_verify_counterexample_output(capsys):
    code, out, _ = _run(capsys, "verify", "example3")
    assert code == 0
    assert "U2=7 U4=10 coexist=false" in out
    assert "PASS counterexample" in out


def test_verify_unknown_suite(capsys):
    code, _, err = _run(capsys, "verify", "nosuch")
    assert code == 1
    assert "unknown suite" in err


def test_verify_fast_suites(capsys):
    code, out, _ = _run(capsys, "verify", "posterior", "--trials", "50")
    assert code == 0 and "PASS posterior" in out
    code, out, _ = _run(capsys, "verify", "selection", "--trials", "50")
    assert code == 0 and "PASS selection" in out
    code, out, _ = _run(capsys, "verify", "ordering", "--trials", "200")
    assert code == 0 and "PASS ordering" in out


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[model]\nmodel = iid\ntheta = 0.05\nmu = 1.0\n"
        "[simulate]\nk = 20\nalpha = 0.05\nhorizon = 10\nreps = 5\nseed = 3\n")
    out = tmp_path / "m.csv"
    code, _, _ = _run(capsys, "simulate", "--config", str(cfg),
                      "--out", str(out), "--reps", "6")
    assert code == 0
    assert "# replications=6" in out.read_text() or ",6" not in ""
    meta = [ln for ln in out.read_text().splitlines() if ln.startswith("#")]
    assert any("seed=3" in ln for ln in meta)


def test_tabular_model_from_config(tmp_path, capsys):
    cfg = tmp_path / "tab.ini"
    cfg.write_text(
        "[model]\nmodel = tabular\np0 = 0.5\np1 = 0.51\n"
        "prior.1 = 0:0.1,3:0.9\nprior.2 = 0:0.4,1:0.6\n"
        "prior.3 = 0:0.43,1:0.57\nprior.4 = 0:0.55,3:0.45\n")
    out = tmp_path / "m.csv"
    code, _, _ = _run(capsys, "simulate", "--config", str(cfg),
                      "--out", str(out), "--k", "4", "--alpha", "0.34",
                      "--horizon", "5", "--reps", "10", "--seed", "2")
    assert code == 0
    assert out.exists()
