import filecmp
import json
import os

import pytest

from difflab.cli import main


def run(tmp_path, *argv):
    out = tmp_path / "out"
    return main([*argv, "--out-dir", str(out)]), out


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_no_subcommand_is_usage_error(tmp_path, capsys):
    assert main([]) == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error(tmp_path):
    assert main(["frobnicate"]) == 1


def test_unknown_override_field_is_usage_error(tmp_path):
    code, _ = run(tmp_path, "make-instance", "--set", "no_such_field=3")
    assert code == 1


def test_malformed_override_is_usage_error(tmp_path):
    code, _ = run(tmp_path, "make-instance", "--set", "V")
    assert code == 1


def test_print_defaults(capsys):
    assert main(["make-instance", "--print-defaults"]) == 0
    defaults = json.loads(capsys.readouterr().out)
    assert set(defaults) == {
        "make-instance", "schedule-optimal", "schedule-learn", "loss-curves",
        "info-curves", "sample", "likelihood", "train", "scaling-fit",
        "verify"}
    assert defaults["make-instance"]["V"] == 6


def test_make_instance_outputs_and_manifest(tmp_path):
    code, out = run(tmp_path, "make-instance", "--seed", "3")
    assert code == 0
    inst = read_json(out / "instance.json")
    assert inst["V"] == 6 and inst["L"] == 3
    man = read_json(out / "manifest.json")
    assert man["command"] == "make-instance"
    assert man["seed"] == 3
    assert "config_hash" in man and "versions" in man
    assert man["wall_time_s"] >= 0


def test_make_instance_override_changes_output(tmp_path):
    code, out = run(tmp_path, "make-instance", "--set", "V=4",
                    "--set", "kind=\"factorized\"")
    assert code == 0
    inst = read_json(out / "instance.json")
    assert inst["V"] == 4
    assert inst["data"]["kind"] == "factorized"


def test_config_file_does_not_get_mutated(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"V": 5}))
    before = cfg_path.read_text()
    code, out = run(tmp_path, "make-instance", "--config", str(cfg_path))
    assert code == 0
    assert cfg_path.read_text() == before
    assert read_json(out / "instance.json")["V"] == 5


def test_reruns_are_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    args = ["schedule-optimal", "--seed", "1", "--set", "grid_n=64",
            "--set", "n_mc=500"]
    assert main(args + ["--out-dir", str(a)]) == 0
    assert main(args + ["--out-dir", str(b)]) == 0
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    for name in names:
        if name == "manifest.json":   # wall time differs by design
            continue
        assert filecmp.cmp(a / name, b / name, shallow=False), name


def test_schedule_optimal_outputs(tmp_path):
    code, out = run(tmp_path, "schedule-optimal", "--set", "grid_n=64",
                    "--set", "n_mc=500")
    assert code == 0
    res = read_json(out / "results.json")
    assert res["kappa"] > 0
    assert (out / "schedule.json").exists()
    assert any(p.suffix == ".svg" for p in out.iterdir())
    assert any(p.suffix == ".csv" for p in out.iterdir())


def test_schedule_learn_outputs(tmp_path):
    code, out = run(tmp_path, "schedule-learn", "--set", "n_knots=8",
                    "--set", "steps=5", "--set", "n_mc=256",
                    "--set", "reference_grid_n=64",
                    "--set", "reference_n_mc=500")
    assert code == 0
    res = read_json(out / "results.json")
    assert res["sup_norm_gamma"] >= 0
    assert (out / "objective_history.csv").exists()


def test_loss_curves_outputs(tmp_path):
    code, out = run(tmp_path, "loss-curves", "--set", "n_t=5",
                    "--set", "n_mc=500")
    assert code == 0
    assert (out / "loss_curves.csv").exists()


def test_info_curves_outputs(tmp_path):
    code, out = run(tmp_path, "info-curves", "--set", "n_t=3",
                    "--set", "n_mc=500")
    assert code == 0
    assert (out / "info_curves.csv").exists()


def test_sample_outputs(tmp_path):
    code, out = run(tmp_path, "sample", "--set", "T=8",
                    "--set", "n_samples=200",
                    "--set", 'samplers=["ancestral","ddim"]')
    assert code == 0
    res = read_json(out / "results.json")
    assert set(res["nfe"]) == {"ancestral", "ddim"}
    assert set(res["worst_tv"]) == {"ancestral", "ddim"}
    assert all(v > 0 for v in res["nfe"].values())
    assert all(0 <= v <= 1 for v in res["worst_tv"].values())


def test_likelihood_outputs(tmp_path):
    code, out = run(tmp_path, "likelihood", "--set", "k_sweep=[1,2]",
                    "--set", "repeats=2", "--set", "steps=16",
                    "--set", "chain_states=2")
    assert code == 0
    assert (out / "iwae_sweep.csv").exists()
    assert (out / "sensitivity_sweep.csv").exists()
    assert (out / "chain_rule.csv").exists()
    res = read_json(out / "results.json")
    assert res["chain_max_abs_residual"] < 1e-3


def test_train_outputs(tmp_path):
    code, out = run(tmp_path, "train", "--set", "train.steps=20",
                    "--set", "train.B=16", "--set", "train.n_sched_knots=8",
                    "--set", "train.width=16", "--set", "eval_n_t=3",
                    "--set", "eval_n_mc=500")
    assert code == 0
    assert (out / "checkpoint.json").exists()
    assert (out / "training_curve.csv").exists()
    assert (out / "trained_ce.csv").exists()


def test_scaling_fit_demo_outputs(tmp_path):
    code, out = run(tmp_path, "scaling-fit", "--set", "demo.budgets=4",
                    "--set", "demo.points_per_budget=5")
    assert code == 0
    fits = read_json(out / "scaling_fits.json")
    assert fits["loss_power_law"]["alpha"] < 0
    assert (out / "frontier.csv").exists()


def test_scaling_fit_reads_input_csv(tmp_path):
    table = tmp_path / "runs.csv"
    rows = ["C,N,loss"]
    import numpy as np
    for C in (1e12, 1e13, 1e14):
        for N in np.logspace(3, 5, 5):
            loss = float(np.exp(0.05 * (np.log(N) - 0.3 * np.log(C)) ** 2)
                         * C ** -0.2)
            rows.append(f"{C},{N},{loss}")
    table.write_text("\n".join(rows) + "\n")
    code, out = run(tmp_path, "scaling-fit", "--set",
                    f'input="{table}"')
    assert code == 0
    fits = read_json(out / "scaling_fits.json")
    assert fits["loss_power_law"]["alpha"] == pytest.approx(-0.2, abs=0.02)


def test_numerical_failure_exit_code(tmp_path, capsys):
    # concave isoFLOP bowls leave no minima, so no power law can be fit
    code, out = run(tmp_path, "scaling-fit", "--set", "demo.curvature=-0.5")
    assert code == 2
    assert "numerical failure" in capsys.readouterr().err
