import json
from pathlib import Path

import numpy as np
import pytest

from otrep import __version__, cli

FIX = Path(__file__).parent / "fixtures"


def run(*argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------- CSV parsing


def test_parse_dense_csv():
    M = cli.parse_dense_csv("1,2\n3,4\n\n")
    np.testing.assert_array_equal(M, [[1, 2], [3, 4]])


@pytest.mark.parametrize(
    "text, where",
    [
        ("0,1\n1,x\n", "line 2, column 2"),
        ("0,1\n1\n", "line 2, column 2"),
        ("", "line 1, column 1"),
        ("1,inf\n", "line 1, column 2"),
    ],
)
def test_parse_errors_name_line_and_column(text, where):
    with pytest.raises(cli.InputError, match=where):
        cli.parse_dense_csv(text)


def test_dense_csv_round_trip(rng):
    M = rng.random((3, 4))
    np.testing.assert_array_equal(cli.parse_dense_csv(cli.dense_csv_text(M)), M)


# ---------------------------------------------------------------- solve


def test_solve_single_atom(tmp_path, capsys):
    assert run("solve", FIX / "one.csv", "--out", tmp_path) == 0
    assert "cost 5.0" in capsys.readouterr().out
    assert cli.parse_dense_csv((tmp_path / "plan.csv").read_text())[0, 0] == 1.0


def test_solve_swap_cost(tmp_path):
    assert run("solve", FIX / "swap.csv", "--method", "exact", "--out", tmp_path) == 0
    report = cli.read_manifest(tmp_path / "report.txt")
    assert float(report["cost"]) == 0.0
    assert report["converged"] == "true"


def test_solve_methods_agree(tmp_path):
    costs = {}
    for method in ("exact", "ipot"):
        out = tmp_path / method
        assert run("solve", FIX / "random6.csv", "--method", method, "--out", out, "--quiet") == 0
        costs[method] = float(cli.read_manifest(out / "report.txt")["cost"])
    assert costs["ipot"] == pytest.approx(costs["exact"], rel=1e-5)


def test_solve_with_marginals(tmp_path):
    assert run("solve", FIX / "swap.csv", "--mu", FIX / "mu_two.csv", "--nu", FIX / "mu_two.csv",
               "--out", tmp_path, "--quiet") == 0


@pytest.mark.parametrize("name", ["bad_cell.csv", "ragged.csv", "empty.csv", "nan_cell.csv"])
def test_solve_malformed_cost_exits_2(tmp_path, capsys, name):
    assert run("solve", FIX / name, "--out", tmp_path) == 2
    assert "line" in capsys.readouterr().err
    assert not (tmp_path / "plan.csv").exists()


def test_solve_bad_marginal_exits_2(tmp_path):
    assert run("solve", FIX / "swap.csv", "--mu", FIX / "mu_bad_sum.csv", "--out", tmp_path) == 2


def test_solve_non_convergence_exits_3_with_partial_report(tmp_path):
    code = run("solve", FIX / "random6.csv", "--outer", 1, "--inner", 1, "--out", tmp_path, "--quiet")
    assert code == 3
    assert (tmp_path / "plan.csv").exists()
    assert cli.read_manifest(tmp_path / "report.txt")["converged"] == "false"


def test_plain_domain_underflow_exits_3(tmp_path):
    code = run("solve", FIX / "random6.csv", "--beta", 1e-4, "--plain-domain", "--out", tmp_path, "--quiet")
    assert code == 3


def test_missing_file_exits_4(tmp_path):
    assert run("solve", tmp_path / "nope.csv", "--out", tmp_path) == 4
    assert run("finetune", "--config", tmp_path / "nope.json", "--out", tmp_path) == 4


def test_unwritable_output_exits_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("solve", FIX / "swap.csv", "--out", blocker / "sub", "--quiet") == 4


def test_usage_error_exits_2():
    assert run("solve") == 2
    assert run("finetune", "--method", "simplex", "--config", FIX / "tiny.json") == 2


# ---------------------------------------------------------------- configs


@pytest.mark.parametrize(
    "name, field",
    [
        ("bad_batch_size.json", "train.batch_size"),
        ("wrong_version.json", "schema_version"),
        ("bad_generator.json", "source.generator"),
        ("broken_syntax.json", "line 2"),
    ],
)
def test_config_errors_exit_2_with_field_path(tmp_path, capsys, name, field):
    assert run("finetune", "--config", FIX / name, "--out", tmp_path) == 2
    assert field in capsys.readouterr().err


def test_identity_coupling_with_mismatched_widths_exits_2(tmp_path, capsys):
    assert run("compress", "--config", FIX / "omega_i_mismatch.json", "--out", tmp_path) == 2
    assert "same width" in capsys.readouterr().err


def test_divergence_exits_3(tmp_path):
    assert run("compress", "--config", FIX / "diverging.json", "--out", tmp_path, "--quiet") == 3


def test_overrides_are_validated():
    args = cli.build_parser().parse_args(["finetune", "--config", "x", "--batch-size", "0"])
    with pytest.raises(cli.ConfigError, match="train.batch_size"):
        cli.apply_overrides({"schema_version": 1}, args)


def test_seed_override_shifts_seeds():
    cfg = cli._train_config({"seeds": [0, 1, 2]}, base_seed=10)
    assert cfg.seeds == (10, 11, 12) and cfg.seed == 10


# ---------------------------------------------------------------- experiments


def test_finetune_outputs_and_manifest(tmp_path):
    assert run("finetune", "--config", FIX / "tiny.json", "--out", tmp_path, "--quiet") == 0
    manifest = cli.read_manifest(tmp_path / "manifest.txt")
    assert manifest["artifact_version"] == __version__
    assert len(manifest["config_sha256"]) == 64
    assert set(manifest["files"].split(",")) == {"results.csv", "results_summary.csv", "traces.csv"}
    header = (tmp_path / "traces.csv").read_text().splitlines()[0]
    assert header == "run_id,task,layer_or_iteration,trace_ratio,batch_size"
    rows = (tmp_path / "results.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2  # header + arms x seeds


@pytest.mark.parametrize("command", ["finetune", "compress", "transfer-compress"])
def test_identical_invocations_are_byte_identical(tmp_path, command):
    outs = []
    for k in range(2):
        out = tmp_path / str(k)
        assert run(command, "--config", FIX / "tiny.json", "--out", out, "--quiet") == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]


def test_seed_override_changes_results(tmp_path):
    run("finetune", "--config", FIX / "tiny.json", "--out", tmp_path / "a", "--quiet")
    run("finetune", "--config", FIX / "tiny.json", "--out", tmp_path / "b", "--quiet", "--seed", 5)
    a = cli.read_manifest(tmp_path / "a" / "manifest.txt")
    b = cli.read_manifest(tmp_path / "b" / "manifest.txt")
    assert a["config_sha256"] != b["config_sha256"] and b["seed"] == "5"


def test_sweep_has_one_summary_row_per_batch_size(tmp_path):
    cfg = json.loads((FIX / "tiny.json").read_text())
    cfg["arms"] = ["none"]
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(cfg))
    assert run("sweep", "--config", path, "--out", tmp_path / "o", "--quiet") == 0
    lines = (tmp_path / "o" / "results_summary.csv").read_text().splitlines()
    sizes = [int(line.split(",")[2]) for line in lines[1:]]
    assert sizes == [16, 32, 64, 96, 128]


def test_train_teacher_and_analyze_checkpoints(tmp_path):
    assert run("train-teacher", "--config", FIX / "tiny.json", "--out", tmp_path, "--quiet") == 0
    ckpt = tmp_path / "teacher.npz"
    out = tmp_path / "an"
    assert run("analyze", "--config", FIX / "tiny.json", "--out", out,
               "--before", ckpt, "--after", ckpt, "--quiet") == 0
    lines = (out / "traces.csv").read_text().splitlines()[1:]
    assert [float(line.split(",")[3]) for line in lines] == [1.0, 1.0]


def test_analyze_plot_data(tmp_path):
    assert run("analyze", "--config", FIX / "tiny.json", "--out", tmp_path, "--plot-data", 4, "--quiet") == 0
    binned = (tmp_path / "plot_data_l1.csv").read_text().splitlines()
    assert binned[0] == "bin_start,bin_end,mean,min,max,count"
    assert len(binned) == 5
    assert sum(int(r.split(",")[-1]) for r in binned[1:]) == 15


def test_version_mismatch_warns(tmp_path, caplog):
    run("solve", FIX / "swap.csv", "--out", tmp_path, "--quiet")
    m = tmp_path / "manifest.txt"
    m.write_text(m.read_text().replace(f"artifact_version={__version__}", "artifact_version=0.0.1"))
    with caplog.at_level("WARNING", logger="otrep"):
        assert run("solve", FIX / "swap.csv", "--out", tmp_path, "--quiet") == 0
    assert "0.0.1" in caplog.text


def test_selftest_passes(capsys):
    assert run("selftest") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "11/11" in out


def test_selftest_failure_is_nonzero(monkeypatch):
    monkeypatch.setitem(cli.selftest.CHECKS, "always fails", lambda: (False, "forced"))
    assert run("selftest", "--quiet") != 0
