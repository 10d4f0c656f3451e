import json

import numpy as np
import pytest

from logbo import cli, oracles
from logbo import surrogate as sg


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help_lists_registry(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "hartmann6" in out and "qlogehvi" in out


def test_bench_writes_csv_and_echoes_config(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code, stdout, _ = run(["bench", "--problem", "sum_of_squares2", "--acq", "logei", "--iters", "1",
                           "--reps", "1", "--restarts", "2", "--raw-candidates", "8", "--out", str(out)], capsys)
    assert code == 0
    assert '"acquisition": "logei"' in stdout
    assert out.read_text().startswith("replicate,iteration,phase,x0,x1,y0,best")


def test_bench_config_file_with_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"problem": "sum_of_squares2", "acquisition": "ei", "iterations": 1,
                               "optim": {"n_restarts": 2, "raw_candidates": 8}}))
    code, stdout, _ = run(["bench", "--config", str(cfg), "--acq", "pi"], capsys)
    assert code == 0
    echoed = json.loads(stdout.split("\nreplicate")[0])
    assert echoed["acquisition"] == "pi"
    assert echoed["optim"]["n_restarts"] == 2


@pytest.mark.parametrize("argv", [
    ["bench", "--problem", "ackley2", "--acq", "nosuch"],
    ["bench", "--problem", "nosuch", "--acq", "logei"],
    ["bench", "--problem", "ackley2", "--acq", "logei", "--q", "2"],
    ["bench", "--acq", "logei"],
    ["verify-oracles", "--fixture", "/nonexistent/table.tsv"],
])
def test_usage_errors_exit_2(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert "error" in err


def test_unknown_acquisition_lists_valid(capsys):
    _, _, err = run(["bench", "--problem", "ackley2", "--acq", "nosuch"], capsys)
    assert "qlogei" in err


def test_verify_oracles(capsys, tmp_path):
    code, out, _ = run(["verify-oracles"], capsys)
    assert code == 0
    assert "0 offending" in out
    lines = oracles.default_fixture_path().read_text().splitlines()
    header = [i for i, l in enumerate(lines) if not l.startswith("#")][0]
    row = lines[header + 1].split("\t")
    row[2] = repr(float(row[2]) * 1.001 + 1e-3)
    bad = tmp_path / "bad.tsv"
    bad.write_text("\n".join(lines[: header + 1] + ["\t".join(row)]) + "\n")
    code, out, _ = run(["verify-oracles", "--fixture", str(bad)], capsys)
    assert code == 1
    assert "MISMATCH" in out


def test_acq_eval_floor_warning(tmp_path, capsys):
    X = np.array([[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]])
    y = np.array([0.0, 1.0, -1.0])
    hp = sg.GPHyperparams(np.full(2, 0.3), 1.0, 1e-6, 0.0)
    m = sg.GPModel(hp, X, y)
    path = tmp_path / "m.json"
    path.write_text(sg.models_to_json([m]))
    code, out, err = run(["acq-eval", "--model", str(path), "--acq", "logei", "--x", "0.4,0.6"], capsys)
    assert code == 0
    res = json.loads(out)
    assert np.isfinite(res["value"]) and len(res["grad"][0]) == 2
    # noise-free model evaluated at a training input: variance cancels to zero
    hp0 = sg.GPHyperparams(np.full(2, 0.3), 1.0, 0.0, 0.0)
    path.write_text(sg.models_to_json([sg.GPModel(hp0, X, y)]))
    code, out, err = run(["acq-eval", "--model", str(path), "--acq", "ei", "--x", "0.1,0.2"], capsys)
    assert code == 0
    assert "floored" in err


def test_gradfrac_and_summarize(tmp_path, capsys):
    out = tmp_path / "g.csv"
    code, _, _ = run(["gradfrac", "--d", "2", "--n", "10", "--n-test", "50", "--out", str(out)], capsys)
    assert code == 0
    assert out.read_text().splitlines()[0] == "d,n,acq,fraction,threshold,replicates,clamped_points"
    res = tmp_path / "r.csv"
    run(["bench", "--problem", "sum_of_squares2", "--acq", "ei", "--iters", "2", "--reps", "2",
         "--restarts", "2", "--raw-candidates", "8", "--out", str(res)], capsys)
    code, out, _ = run(["summarize", str(res), "--last", "1"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "file,iteration,n,mean,median,lo,hi"
    assert lines[1].split(",")[1:3] == ["2", "2"]
