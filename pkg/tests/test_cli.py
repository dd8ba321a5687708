import json
import subprocess
import sys

import numpy as np
import pytest

from gunshape import cli, optim
from gunshape.iga import FieldmapData, FieldmapGrid, write_fieldmap

QUICK = ["--set", "optimizer.local.max_evals=30", "--set", "fieldmap.nz=41",
         "--set", "fieldmap.nr=6", "--set", "discretization.n_sub=8"]


def run(tmp_path, *args, name="run"):
    out = tmp_path / name
    code = cli.main([*args, "-o", str(out)])
    return code, out


def load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def test_solve_writes_outputs(tmp_path):
    code, out = run(tmp_path, "solve", *QUICK)
    assert code == cli.EXIT_OK
    doc = load(out / "solve.json")
    assert 11e6 < doc["max_field"] < 13e6
    assert doc["config_hash"] == cli.config_hash(load(out / "config.resolved.json")["config"])
    for name in ("profile_gamma_d1.csv", "profile_insulator.csv", "fieldmap.txt",
                 "fieldmap.txt.mask", "fieldmap.meta.json"):
        assert (out / name).is_file()
    assert (out / "profile_insulator.csv").read_text().startswith("# ")


def test_voltage_scaling_through_the_config(tmp_path):
    _, a = run(tmp_path, "solve", *QUICK, name="a")
    _, b = run(tmp_path, "solve", *QUICK, "--set", "voltages.gamma_d1=-600000",
               "--set", "voltages.gamma_d2=2000", name="b")
    fa, fb = load(a / "solve.json")["max_field"], load(b / "solve.json")["max_field"]
    assert fb == pytest.approx(2 * fa, rel=1e-9)


def test_sphere_config(tmp_path):
    code, out = run(tmp_path, "solve", "--set", 'model.kind="sphere"')
    assert code == cli.EXIT_OK
    doc = load(out / "solve.json")
    assert doc["analytic_max_field"] == pytest.approx(12e6, rel=1e-12)
    assert doc["relative_error"] < 5e-3


def test_fit_builtin_and_outline(tmp_path):
    code, out = run(tmp_path, "fit", name="flat")
    assert code == cli.EXIT_OK
    assert load(out / "fit.json")["curve"]["kv"]["degree"] == 7
    t = np.linspace(0, np.pi / 2, 40)
    outline = tmp_path / "arc.csv"
    np.savetxt(outline, np.column_stack([0.05 * np.cos(t), 0.05 * np.sin(t)]),
               delimiter=",", header="rho,z")
    code, out = run(tmp_path, "fit", "--outline", str(outline), "--degree", "5", name="arc")
    assert code == cli.EXIT_OK
    doc = load(out / "fit.json")
    assert doc["curve"]["kv"]["degree"] == 5 and doc["residual_max"] < 1e-6


def test_optimize_resume_reproduces_the_trace(tmp_path):
    args = ("optimize", "--skip-global", *QUICK)
    code, full = run(tmp_path, *args, name="full")
    assert code == cli.EXIT_OK
    lines = (full / "trace.jsonl").read_text().splitlines()
    # interrupt: keep the header and the first dozen evaluations plus half a line
    cut = tmp_path / "cut"
    cut.mkdir()
    (cut / "trace.jsonl").write_text("\n".join(lines[:14]) + "\n" + lines[14][:40])
    code = cli.main([*args, "--resume", "-o", str(cut)])
    assert code == cli.EXIT_OK
    _, a, _ = optim.read_trace(full / "trace.jsonl")
    _, b, _ = optim.read_trace(cut / "trace.jsonl")
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.x, rb.x)
        assert (ra.f, ra.stage, ra.index) == (rb.f, rb.stage, rb.index)
    assert load(cut / "result.json")["replayed"] >= 10
    assert load(full / "result.json")["design"] == load(cut / "result.json")["design"]


def test_resume_with_another_config_is_refused(tmp_path):
    code, out = run(tmp_path, "optimize", "--skip-global", *QUICK)
    assert code == cli.EXIT_OK
    code = cli.main(["optimize", "--skip-global", *QUICK, "--resume", "--seed", "7",
                     "-o", str(out)])
    assert code == cli.EXIT_CONFIG


def test_optimize_with_global_stage(tmp_path):
    code, out = run(tmp_path, "optimize", *QUICK, "--set", "optimizer.isres.max_evals=260")
    assert code == cli.EXIT_OK
    doc = load(out / "result.json")
    assert doc["stopped"]["isres"] == "max_evals"
    _, recs, events = optim.read_trace(out / "trace.jsonl")
    assert {r.stage for r in recs} == {"initial", "isres", "local"}
    assert [e["name"] for e in events if e["type"] == "stage"] == ["isres", "local"]
    assert doc["final"]["f"] <= doc["initial"]["f"]


def test_report_is_idempotent(tmp_path):
    code, out = run(tmp_path, "optimize", "--skip-global", *QUICK)
    assert code == cli.EXIT_OK
    assert cli.main(["report", str(out)]) == cli.EXIT_OK
    first = (out / "report.txt").read_text()
    assert cli.main(["report", str(out)]) == cli.EXIT_OK
    assert (out / "report.txt").read_text() == first
    rep = load(out / "report.json")
    assert rep["final"]["f"] < rep["initial"]["f"]
    assert "E_max [MV/m]" in first


def test_report_without_trace(tmp_path):
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_CONFIG


def test_infeasible_result_exit_code(tmp_path):
    code, out = run(tmp_path, "optimize", "--skip-global", *QUICK,
                    "--set", "constraints.v_cap=1e-6", "--set", "optimizer.local.max_evals=15")
    assert code == cli.EXIT_INFEASIBLE
    assert (out / "result.json").is_file()


@pytest.mark.parametrize("bad", ["schema=2", 'model.kind="cube"', 'seed="x"',
                                 'design_file="/no/such/file.json"'])
def test_bad_config_exit_code(tmp_path, bad):
    code, _ = run(tmp_path, "solve", "--set", bad)
    assert code == cli.EXIT_CONFIG


def test_unreadable_override(tmp_path):
    code, _ = run(tmp_path, "solve", "--set", "no_equals_sign")
    assert code == cli.EXIT_CONFIG


def test_locked_output_dir(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / ".lock").write_text("12345")
    assert cli.main(["solve", "-o", str(out)]) == cli.EXIT_CONFIG


def gap_fieldmap(path, ez):
    grid = FieldmapGrid(9, 5, 0.0, 0.08, 0.0, 0.01)
    write_fieldmap(path, FieldmapData(grid, np.full((9, 5), ez), np.zeros((9, 5)),
                                      np.ones((9, 5), bool)))


def test_track_on_a_given_fieldmap(tmp_path):
    fm = tmp_path / "gap.txt"
    gap_fieldmap(fm, -300e3 / 0.08)
    code, out = run(tmp_path, "track", "--set", f'tracking.fieldmap_file="{fm}"',
                    "--set", "tracking.n_particles=128", "--set", "tracking.n_planes=8")
    assert code == cli.EXIT_OK
    doc = load(out / "tracking.json")
    assert doc["exit"]["mean_energy_ev"] == pytest.approx(300e3, rel=1e-3)
    assert doc["exit"]["lost"] == 0
    # the spread in energy is round-off here, so only the sizes are compared
    for k in ("x_rms", "y_rms", "z_rms"):
        assert doc["delta"][k] < 1e-3
    assert (out / "tracking.csv").is_file() and (out / "tracking_refined.csv").is_file()


def test_track_with_nothing_reaching_the_exit(tmp_path):
    fm = tmp_path / "zero.txt"
    gap_fieldmap(fm, 0.0)
    code, _ = run(tmp_path, "track", "--set", f'tracking.fieldmap_file="{fm}"',
                  "--set", "tracking.n_particles=16", "--set", "tracking.max_time=1e-10")
    assert code == cli.EXIT_NUMERICAL


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "gunshape.cli", "--help"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    for sub in ("fit", "solve", "optimize", "refine-study", "track", "report"):
        assert sub in res.stdout
