import json

import pytest

from multiscale_kmc import cli


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def out(tmp_path):
    return tmp_path / "out"


def body(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


# -- derive ------------------------------------------------------------------

def test_derive_two_macro_m20(capsys, out):
    code, text, _ = run(["derive", "--preset", "two-macro-s2.3", "--m", "20", "--out", str(out)], capsys)
    assert code == 0
    rates = dict(line.split(" = ") for line in text.splitlines() if line.startswith("lambda"))
    assert float(rates["lambda0"]) == pytest.approx(0.1, abs=1e-12)
    doc = json.loads("".join(line for line in (out / "derive_two-macro-s2.3.json").read_text().splitlines(True)
                             if not line.startswith("//")))
    assert doc["lambda1"] == pytest.approx(0.1)


def test_derive_ring(capsys, out):
    code, text, _ = run(["derive", "--preset", "ring-s3.2", "--out", str(out)], capsys)
    rates = dict(line.split(" = ") for line in text.splitlines() if line.startswith("lambda"))
    assert code == 0
    assert float(rates["lambda_l"]) == pytest.approx(0.2) and float(rates["lambda_r"]) == pytest.approx(0.4)


def test_derive_energy(capsys, out):
    code, text, _ = run(["derive", "--preset", "energy-s4.3", "--total-energy", "1", "--out", str(out)], capsys)
    assert code == 0
    assert "B(1,0) = 0.5454545454545454" in text


def test_derive_reports_reducible_block(capsys, tmp_path, out):
    model = tmp_path / "bad.toml"
    model.write_text(
        'kind = "two-macro"\nepsilon = 1.0\n[matrices]\nm = 2\n'
        "Q0 = [[0, 1], [1, 0]]\nQ1 = [[0, 0], [0, 0]]\n"
        "C01 = [[0, 1], [0, 0]]\nC10 = [[0, 1], [0, 0]]\n"
    )
    code, _, err = run(["derive", "--model", str(model), "--out", str(out)], capsys)
    assert code == 2 and "Q1" in err


def test_sparse_model_file(capsys, tmp_path, out):
    model = tmp_path / "sparse.toml"
    model.write_text(
        'kind = "ring"\nepsilon = 0.5\n[matrices]\nm = 3\n'
        "Q = [[0, 1, 0], [1, 0, 1], [0, 1, 0]]\n"
        "Cl = { size = 3, triplets = [[0, 2, 0.3]] }\n"
        "Cr = { size = 3, triplets = [[2, 0, 0.6]] }\n"
    )
    code, text, _ = run(["derive", "--model", str(model), "--out", str(out)], capsys)
    assert code == 0 and "lambda_l = 0.1" in text


# -- simulate ----------------------------------------------------------------

def test_simulate_horizon_zero_single_row(capsys, out):
    code, _, _ = run(["simulate", "--preset", "two-macro-s2.3", "--horizon", "0", "--out", str(out)], capsys)
    assert code == 0
    assert body(out / "trajectory.csv") == ["t,state_index,label", '0,0,"(0,0)"']


def test_simulate_absorbing_energy(capsys, out):
    code, text, _ = run(["simulate", "--preset", "energy-s4.3", "--x", "0", "--z", "0", "--out", str(out)], capsys)
    assert code == 0 and "absorbing" in text


def test_simulate_byte_identical(capsys, tmp_path):
    args = ["simulate", "--preset", "ring-s3.2", "--epsilon", "0.05", "--seed", "4", "--horizon", "5"]
    run(args + ["--out", str(tmp_path / "a")], capsys)
    run(args + ["--out", str(tmp_path / "b")], capsys)
    assert (tmp_path / "a/trajectory.csv").read_bytes() == (tmp_path / "b/trajectory.csv").read_bytes()


def test_simulate_budget_exit_code(capsys, out):
    code, _, err = run(["simulate", "--preset", "two-macro-s2.3", "--epsilon", "1e-3", "--horizon", "100",
                        "--max-events", "10", "--out", str(out)], capsys)
    assert code == 3 and "budget" in err


# -- sweep -------------------------------------------------------------------

def test_sweep_outputs_and_trend(capsys, out):
    code, text, _ = run(["sweep", "--preset", "two-macro-s2.3", "--epsilons", "1e3", "1", "1e-3",
                         "--replicas", "4000", "--seed", "5", "--out", str(out)], capsys)
    assert code == 0
    rows = body(out / "sweep.csv")
    cols = rows[0].split(",")
    means = {float(r.split(",")[0]): float(r.split(",")[cols.index("mean")]) for r in rows[1:]}
    assert abs(means[1e-3] - 2.5) < abs(means[1e3] - 2.5)
    assert {p.name for p in out.iterdir()} >= {"sweep.csv", "plot_sweep.gp", "hist_eps=1000.csv",
                                               "hist_eps=1.csv", "hist_eps=0.001.csv"}
    assert "limit exit rate 0.4" in text


@pytest.mark.slow
def test_sweep_ring_p_right(capsys, out):
    code, _, _ = run(["sweep", "--preset", "ring-s3.2", "--epsilons", "1e-5", "--replicas", "600",
                      "--seed", "6", "--out", str(out)], capsys)
    rows = body(out / "sweep.csv")
    cols = rows[0].split(",")
    p = float(rows[1].split(",")[cols.index("p_right")])
    assert code == 0 and abs(p - 2 / 3) < 4 * (2 / 9 / 600) ** 0.5


def test_sweep_empty_epsilons(capsys, out):
    code, _, _ = run(["sweep", "--preset", "two-macro-s2.3", "--epsilons", "--out", str(out)], capsys)
    assert code == 2


def test_sweep_failure_fraction_exit_code(capsys, out):
    code, _, _ = run(["sweep", "--preset", "two-macro-s2.3", "--epsilons", "1e-3", "--replicas", "50",
                      "--max-events", "100", "--out", str(out)], capsys)
    assert code == 4
    cols = body(out / "sweep.csv")[0].split(",")
    assert float(body(out / "sweep.csv")[1].split(",")[cols.index("fail_frac")]) > 0.01


def test_rerun_reproduces_bytes(capsys, tmp_path):
    first = tmp_path / "first"
    run(["sweep", "--preset", "ring-s3.2", "--epsilons", "1", "0.1", "--replicas", "300", "--seed", "2",
         "--out", str(first)], capsys)
    second = tmp_path / "second"
    code, _, _ = run(["rerun", str(first / "sweep.csv"), "--out", str(second)], capsys)
    assert code == 0
    for name in ("sweep.csv", "hist_eps=1.csv", "hist_eps=0.1.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    code, _, _ = run(["simulate", "--preset", "ring-s3.2", "--horizon", "3", "--out", str(first)], capsys)
    code, _, _ = run(["rerun", str(first / "trajectory.csv"), "--out", str(second)], capsys)
    assert (first / "trajectory.csv").read_bytes() == (second / "trajectory.csv").read_bytes()


def test_rerun_without_header(capsys, tmp_path):
    f = tmp_path / "plain.csv"
    f.write_text("a,b\n1,2\n")
    assert run(["rerun", str(f)], capsys)[0] == 2


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('model = "ring-s3.2"\nepsilons = [1.0]\nreplicas = 100\nseed = 3\n[params]\nc_r = 4.0\n')
    out = tmp_path / "o"
    code, text, _ = run(["sweep", "--config", str(cfg), "--replicas", "50", "--out", str(out)], capsys)
    assert code == 0
    rows = body(out / "sweep.csv")
    assert rows[1].split(",")[1] == "50"
    # limit rate (c_l + c_r) / m with the config's c_r
    assert "limit exit rate 1" in text


def test_unknown_config_key(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("replcas = 3\n")
    assert run(["sweep", "--config", str(cfg)], capsys)[0] == 2


def test_output_dir_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("MSKMC_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["simulate", "--preset", "two-macro-s2.3", "--horizon", "1"], capsys)[0] == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()


def test_parameter_flag_rejected_for_matrix_model(capsys, tmp_path):
    model = tmp_path / "m.toml"
    model.write_text('kind = "ring"\nepsilon = 1.0\n[matrices]\nm = 2\nQ = [[0, 1], [1, 0]]\n'
                     "Cl = [[0, 0], [0, 0]]\nCr = [[0, 1], [0, 0]]\n")
    assert run(["derive", "--model", str(model), "--m", "3", "--out", str(tmp_path)], capsys)[0] == 2


# -- validate ----------------------------------------------------------------

def test_validate_subset_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    code, text, _ = run(["validate", "--only", "1,10", "--out", str(a)], capsys)
    assert code == 0 and text.count("[PASS]") == 2
    run(["validate", "--only", "1,10", "--out", str(b)], capsys)
    assert (a / "validation.json").read_bytes() == (b / "validation.json").read_bytes()


def test_validate_corrupted_preset(capsys, tmp_path):
    from importlib import resources

    presets = tmp_path / "presets"
    presets.mkdir()
    for name in ("two-macro-s2.3", "ring-s3.2", "energy-s4.3"):
        text = resources.files("multiscale_kmc").joinpath("presets", f"{name}.toml").read_text()
        if name == "two-macro-s2.3":
            text = text.replace("c = 1.0", "c = -1.0")
        (presets / f"{name}.toml").write_text(text)
    code, text, _ = run(["validate", "--presets-dir", str(presets), "--only", "1", "--out", str(tmp_path)], capsys)
    assert code == 1
    assert "[FAIL] #0" in text and "NegativeRate" in text
