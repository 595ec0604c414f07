import json
from pathlib import Path

import pandas as pd
import pytest

import main
from main import parse_floats

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

FIRST_ORDER_LOOP = {
    "plant": {"num": [1.0], "den": [1.0, 1.0]},
    "nominal": {"num": [1.0], "den": [1.0, 1.0]},
    "controller": {"num": [2.0], "den": [1.0]},
    "qfilter": {"nu": 1, "a": [1.0], "tau": 0.1},
}


def write_json(path: Path, data: dict) -> str:
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def test_parse_floats_accepts_lists_and_log_ranges():
    assert parse_floats("1e-1,1e-2") == [0.1, 0.01]
    assert parse_floats("1e-1:1e-4:log10") == pytest.approx([1e-1, 1e-2, 1e-3, 1e-4])
    assert parse_floats("") == []


def test_design_q_echoes_a0_for_degenerate_gains(tmp_path):
    out = tmp_path / "q.json"
    code = main.main(
        ["design-q", "--nu", "2", "--a-tail", "1.0", "--gains", "1,1,1", "--a0-initial", "0.7", "--out", str(out)]
    )
    assert code == 0
    report = json.loads(out.read_text())
    assert report["a0"] == 0.7
    assert report["a"] == [0.7, 1.0]


def test_missing_gain_field_is_named_on_stderr(tmp_path, capsys):
    config = write_json(tmp_path / "cfg.json", {"nu": 1, "gains": {"g_upper": 2.0, "g_star": 1.0}})
    code = main.main(["design-q", "--config", config])
    assert code == 1
    assert "g_lower" in capsys.readouterr().err


def test_unknown_benchmark_and_missing_file(tmp_path, capsys):
    assert main.main(["design-q", "--benchmark", "Z9"]) == 1
    assert "unknown benchmark" in capsys.readouterr().err
    assert main.main(["design-q", "--config", str(tmp_path / "absent.json")]) == 1
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize(
    "fixture",
    ["analyze_unstable_nominal.json", "analyze_nonminimum_phase.json", "analyze_fast_unstable.json"],
)
def test_failing_families_exit_with_condition_code(fixture, tmp_path, capsys):
    out = tmp_path / "report.json"
    code = main.main(["analyze", "--config", str(FIXTURES / fixture), "--out", str(out)])
    assert code == 3
    assert "fail" in capsys.readouterr().err
    report = json.loads(out.read_text())
    assert report["certifiedOnGrid"] is False


def test_b1_analysis_passes_and_writes_loci(tmp_path):
    out = tmp_path / "report.json"
    loci = tmp_path / "poles.csv"
    code = main.main(
        [
            "analyze", "--config", str(FIXTURES / "b1_analyze.json"), "--samples", "5",
            "--out", str(out), "--poles-out", str(loci),
        ]
    )
    assert code == 0
    report = json.loads(out.read_text())
    assert report["certifiedOnGrid"] is True
    frame = pd.read_csv(loci)
    assert {"sample_id", "tau", "re", "im"} <= set(frame.columns)
    assert sorted(frame.tau.unique(), reverse=True) == pytest.approx([1e-1, 1e-2, 1e-3, 1e-4])


def test_empty_tau_grid_is_rejected(capsys):
    code = main.main(["analyze", "--benchmark", "B1", "--tau-grid", ""])
    assert code == 1
    assert "tau_grid" in capsys.readouterr().err


def test_poles_writes_one_row_per_eigenvalue(tmp_path):
    out = tmp_path / "poles.csv"
    assert main.main(["poles", "--benchmark", "B1", "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    # 2n + m + nu = 6 eigenvalues at each of 4 taus
    assert len(frame) == 24


def test_simulate_with_zero_inputs_stays_at_rest(tmp_path):
    loop = write_json(tmp_path / "loop.json", FIRST_ORDER_LOOP)
    out = tmp_path / "trace.csv"
    code = main.main(["simulate", "--loop", loop, "--t-end", "1", "--dt", "1e-3", "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out)
    assert len(frame) == 1001
    assert (frame.y == 0).all()


def test_simulate_refuses_a_coarse_step(tmp_path, capsys):
    loop = write_json(tmp_path / "loop.json", FIRST_ORDER_LOOP)
    code = main.main(["simulate", "--loop", loop, "--t-end", "1", "--dt", "0.01"])
    assert code == 1
    assert "step too large" in capsys.readouterr().err


def test_emitted_config_reproduces_the_run(tmp_path):
    emitted = tmp_path / "resolved.json"
    first, second = tmp_path / "first.json", tmp_path / "second.json"
    assert main.main(["design-q", "--benchmark", "B1", "--emit-config", str(emitted), "--out", str(first)]) == 0
    resolved = json.loads(emitted.read_text())
    assert resolved["gains"] == {"g_lower": 0.8, "g_upper": 1.25, "g_star": 1.025}
    assert main.main(["design-q", "--config", str(emitted), "--out", str(second)]) == 0
    assert json.loads(first.read_text()) == json.loads(second.read_text())
    # nu = 1 passes structurally, so the first a0 is kept
    assert json.loads(first.read_text())["a0"] == 1.0


@pytest.mark.slow
def test_compare_transient_writes_sweep_table(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main.main(
        [
            "compare-transient", "--config", str(FIXTURES / "n1_compare_transient.json"),
            "--tau-sweep", "1e-2,3e-3", "--t-end", "0.2", "--s-phi-samples", "2000", "--out", str(out),
        ]
    )
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["tau", "sup_dev", "sup_u_err", "max_abs_u", "z_max"]
    assert frame.tau.tolist() == [1e-2, 3e-3]
    assert frame.sup_dev.is_monotonic_decreasing
    assert frame.sup_dev.iloc[1] < frame.sup_dev.iloc[0]


def test_design_failure_exits_with_code_two(capsys):
    # a0 stays far above the Routh limit a0 < 6 / g for every allowed halving
    code = main.main(
        ["design-q", "--nu", "3", "--a-tail", "2,3", "--gains", "0.25,4,1", "--a0-initial", "1e30"]
    )
    assert code == 2
    assert "too wide" in capsys.readouterr().err


def test_diverging_nonlinear_run_exits_with_code_four(tmp_path, capsys):
    gains = {"g_lower": 1.0, "g_upper": 2.0, "g_star": 1.5}
    docs = {
        "plant": {"nu": 1, "n": 1, "g": {"terms": [{"coeff": 1.5}]}, "gain": gains},
        "nominal": {"g_n": {"terms": [{"coeff": 1.5}]}},
        # e = r - y, so D < 0 feeds y back positively: x' = 3 x
        "controller": {"D": -2.0},
        "params": {
            "qspec": {"nu": 1, "a": [1.0], "tau": 0.05},
            "g_star": 1.5,
            "sat_x_levels": [[-1e6, 1e6]],
            "sat_phi_interval": [-1e6, 1e6],
        },
        "envelope": {"U_x": [[-10.0, 10.0]], "S0": [[-1.0, 1.0]]},
    }
    argv = ["simulate-nl"]
    for name, doc in docs.items():
        argv += [f"--{name}", write_json(tmp_path / f"{name}.json", doc)]
    argv += ["--x0", "1", "--t-end", "10", "--dt", "2.5e-3"]
    assert main.main(argv) == 4
    assert "divergence" in capsys.readouterr().err


def test_subcommand_help_names_the_checked_property(capsys):
    with pytest.raises(SystemExit):
        main.main(["--help"])
    out = " ".join(capsys.readouterr().out.split())
    assert "Hurwitz over the gain interval" in out
    assert "minimum phase" in out
