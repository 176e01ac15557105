import json
import math

import numpy as np
import pytest

from tensorsgd.cli import ExperimentConfig, ConfigError, fmt, load_config, main, read_csv, validation_table, write_csv


def run(tmp_path, *args):
    return main(["--out", str(tmp_path), *args])


def test_fmt_seventeen_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(3) == "3" and fmt(None) == "" and fmt(True) == "true"


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((20, 4)) * 10.0 ** rng.integers(-12, 12, size=(20, 4))
    write_csv(tmp_path / "x.csv", ["a", "b", "c", "d"], data)
    header, back = read_csv(tmp_path / "x.csv")
    assert header == ["a", "b", "c", "d"]
    assert np.array_equal(back, data)


def test_config_file_and_overrides(tmp_path):
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text("# comment\nsource = rademacher\ndim = 4\nbeta = 1e-3, 5e-4\n")
    cfg = load_config(str(cfg_file), ["dim=5"], seed=9)
    assert (cfg.source, cfg.dim, cfg.seed, cfg.beta) == ("rademacher", 5, 9, (1e-3, 5e-4))
    again = ExperimentConfig.from_pairs(
        dict(line.split(" = ") for line in cfg.resolved().strip().splitlines())
    )
    assert again == cfg


@pytest.mark.parametrize(
    "pairs, key",
    [
        ({"beta": ""}, "beta"),
        ({"beta": "1e-4 1e-3"}, "beta"),
        ({"beta": "0.1"}, "beta"),
        ({"dim": "x"}, "dim"),
        ({"threepoint_a": "0.5"}, "threepoint_a"),
        ({"source": "cauchy"}, "source"),
        ({"delta": "0.7"}, "delta"),
        ({"wibble": "1"}, "wibble"),
        ({"mixing": "random"}, "mixing"),
    ],
)
def test_invalid_config_names_key(pairs, key):
    with pytest.raises(ConfigError, match=repr(key)):
        ExperimentConfig.from_pairs(pairs)


def test_usage_errors_exit_nonzero(tmp_path, capsys):
    assert run(tmp_path, "simulate", "beta=") == 2
    assert "beta" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run(tmp_path, "simulate", "notapair")
    with pytest.raises(SystemExit):
        run(tmp_path, "frobnicate")


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["--out", str(out), "--dry-run", "--seed", "5", "phases", "dim=4"]) == 0
    text = capsys.readouterr().out
    assert "seed = 5" in text and "dim = 4" in text
    assert not out.exists()


def test_moments_json(tmp_path):
    assert run(tmp_path, "moments", "source=rademacher", "dim=3") == 0
    m = json.loads((tmp_path / "moments.json").read_text())
    assert m["Q1"] == 183 and m["Q2"] == 182 and m["lambda_sq"] == "8/9"
    assert (tmp_path / "config.resolved").exists()


def test_degenerate_diffusion_warns(tmp_path):
    with pytest.warns(RuntimeWarning, match="Lambda"):
        run(tmp_path, "moments", "source=rademacher", "dim=2")


SIM = ["simulate", "replicates=3", "max_iters=6000", "beta=1e-3", "record_stride=100"]


def test_simulate_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "--seed", "4", *SIM]) == 0
    assert main(["--out", str(b), "--seed", "4", *SIM]) == 0
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    header, data = read_csv(a / "trajectory_b0_r0001.csv")
    assert header == ["n", "t", "v1", "v2", "v3", "sin2"]
    assert np.allclose(np.sum(data[:, 2:5] ** 2, axis=1), 1.0)
    summ = json.loads((a / "summary.json").read_text())
    assert len(summ) == 3 and set(summ[0]) >= {"seed", "d", "beta", "source", "N1", "N2", "N3", "runs_used", "final_sin2"}


def test_worker_count_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "--workers", "1", *SIM]) == 0
    assert main(["--out", str(b), "--workers", "2", *SIM]) == 0
    for name in ("summary.json", "trajectory_b0_r0002.csv", "config.resolved"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_ode_and_traverse_json(tmp_path):
    assert run(tmp_path, "ode", "init=gapped", "dim=4", "horizon=6") == 0
    header, data = read_csv(tmp_path / "ode.csv")
    assert header == ["t", "V1", "V2", "V3", "V4"]
    tr = json.loads((tmp_path / "traverse.json").read_text())
    assert tr["pass"] is True and tr["T0"] / 2 <= tr["T"] <= tr["T0"]


@pytest.mark.parametrize("kind", ["stable", "unstable"])
def test_sde(tmp_path, kind):
    assert run(tmp_path, "sde", f"sde_kind={kind}", "horizon=3", "paths=4000") == 0
    header, data = read_csv(tmp_path / "sde.csv")
    assert header == ["t", "x"] and data[0, 0] == 0
    assert json.loads((tmp_path / "sde_check.json").read_text())["pass"] is True


def test_phases_ensemble_csv_and_checks(tmp_path):
    args = ["phases", "beta=4e-3 2e-3 1e-3", "replicates=20", "max_iters=40000"]
    assert run(tmp_path, *args) == 0
    header, data = read_csv(tmp_path / "ensemble.csv")
    assert header == ["beta", "replicate", "N1", "N2", "N3"] and data.shape == (60, 5)
    assert json.loads((tmp_path / "cutoff.json").read_text())["betas"] == [4e-3, 2e-3, 1e-3]
    # at such coarse steps the asymptotic phase lengths are far off
    assert run(tmp_path, *args, "checks=true") == 1


def test_collect(tmp_path):
    assert run(tmp_path, "collect", "source=rademacher", "dim=3", "beta=1e-3", "max_iters=15000", "collections=3") == 0
    header, data = read_csv(tmp_path / "outcomes.csv")
    assert header == ["collection", "run", "component", "sign"]
    assert set(np.unique(data[:, 3])) <= {-1.0, 1.0}
    s = json.loads((tmp_path / "collect_summary.json").read_text())
    assert s["complete"] == 3 and s["expected_runs"] == pytest.approx(5.5)


def test_plotdata(tmp_path):
    assert run(tmp_path, "plotdata", "replicates=30", "max_iters=40000", "beta=1e-3") == 0
    with open(tmp_path / "plotdata.csv") as fh:
        rows = [line.rstrip("\n").split(",") for line in fh]
    assert rows[0] == ["n", "t", "mean_objective", "mean_sin2", "phase_label"]
    assert float(rows[1][2]) == pytest.approx(3 + 1 / 3)
    labels = [r[4] for r in rows[1:]]
    order = ["escape", "traverse", "convergence", "stationary"]
    idx = [order.index(x) for x in labels]
    assert idx == sorted(idx) and idx[0] == 0
    rep_n = [int(r[0]) for r in rows[1:]]
    first_traverse = rep_n[labels.index("traverse")]
    assert first_traverse > 0
    assert float(rows[-1][3]) < 2 * 1e-3 * 2 * 16 / 2


def test_validate_all_pass_and_flags(tmp_path, capsys):
    assert run(tmp_path, "validate", "validate_dmax=4") == 0
    out = capsys.readouterr().out
    assert "0 failed" in out
    rows = validation_table(4)
    flagged = {r[0]: r for r in rows if r[4] == "FLAG"}
    q1 = flagged["printed Q1, rademacher d=4"]
    assert (q1[1], q1[2]) == (544, 634)
    assert all(r[4] == "PASS" for r in rows if r[0].startswith("Lambda^2 >= 0"))
