import json
import subprocess
import sys

import numpy as np
import pytest

from configs import BASE, SWEEP, doc
from qbmsim import cli
from qbmsim.master import read_rho_dump


def _write(tmp_path, document, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


def _run(tmp_path, command, document=BASE, *extra, out="run"):
    config = _write(tmp_path, document)
    return cli.main([command, "--config", config, "--out-dir", str(tmp_path / out), *extra])


def test_missing_bath_exits_2_and_names_it(tmp_path, capsys):
    assert _run(tmp_path, "run-master", doc(bath=None)) == 2
    assert "bath" in capsys.readouterr().err


def test_missing_config_exits_2(capsys):
    assert cli.main(["run-master"]) == 2
    assert "--config" in capsys.readouterr().err


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["run-master", "--frobnicate"])
    assert info.value.code == 2


def test_master_run_outputs(tmp_path):
    assert _run(tmp_path, "run-master", doc(output={"rho_dump": True})) == 0
    run = tmp_path / "run"
    names = {p.name for p in run.iterdir()}
    assert {"config.json", "manifest.json", "observables.csv", "F.csv", "kernel.csv", "rho.bin", "plot_observables.gp"} <= names
    manifest = json.loads((run / "manifest.json").read_text())
    for key in ("seed", "package_version", "wall_time_s", "trajectories", "failures", "max_leakage", "max_norm_drift"):
        assert key in manifest
    assert manifest["status"] == "ok" and manifest["exit_code"] == 0
    header = (run / "rho.bin").read_bytes()[:16]
    assert header[:4] == b"RHO1"
    states = read_rho_dump(run / "rho.bin")
    assert states.shape == (11, 9, 9)
    np.testing.assert_allclose(np.einsum("sii->s", states).real, 1.0, atol=1e-10)
    lines = (run / "observables.csv").read_text().splitlines()
    assert lines[0] == "t,E_N,l1_coherence,energy,purity,re_F,im_F" and len(lines) == 12


@pytest.mark.parametrize("mode", ["--linear", "--nonlinear"])
def test_qsd_observables_are_byte_identical_across_runs(tmp_path, mode):
    assert _run(tmp_path, "run-qsd", BASE, mode, out="a") == 0
    assert _run(tmp_path, "run-qsd", BASE, mode, out="b") == 0
    a = (tmp_path / "a" / "observables.csv").read_bytes()
    assert a == (tmp_path / "b" / "observables.csv").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["trajectories"] == 40 and manifest["seed"] == 1


def test_global_flags_override_the_config(tmp_path):
    assert _run(tmp_path, "run-qsd", BASE, "--seed", "9", "--trajectories", "25", "--workers", "0", "--debug-trajectories") == 0
    run = tmp_path / "run"
    echoed = json.loads((run / "config.json").read_text())
    assert echoed["ensemble"]["seed"] == 9 and echoed["ensemble"]["count"] == 25
    assert len(list((run / "trajectories").iterdir())) == 10


def test_sweep_with_twenty_frequencies(tmp_path):
    freqs = ",".join(f"{f:.2f}" for f in np.linspace(0.5, 4.3, 20))
    assert _run(tmp_path, "sweep", doc(SWEEP, grid={"t_end": 0.5}), "--freqs", freqs) == 0
    rows = (tmp_path / "run" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 21


def test_sweep_without_sinusoid_exits_2(tmp_path):
    assert _run(tmp_path, "sweep", BASE, "--freqs", "1,2") == 2


def test_gaussian_rejects_cat_state(tmp_path, capsys):
    cat = doc(SWEEP, initial_state={"kind": "cat", "alpha": 0.5})
    assert _run(tmp_path, "run-gaussian", cat) == 2
    assert "initial_state" in capsys.readouterr().err


def test_gaussian_outputs(tmp_path):
    assert _run(tmp_path, "run-gaussian", SWEEP) == 0
    header = (tmp_path / "run" / "gaussian.csv").read_text().splitlines()[0]
    assert header.startswith("t,")


def test_compare_columns(tmp_path):
    assert _run(tmp_path, "compare", BASE) == 0
    header = (tmp_path / "run" / "compare.csv").read_text().splitlines()[0]
    assert header == "t,E_N_master,E_N_qsd,E_N_qsd_se,trace_distance,qsd_frobenius_se"


def test_aborted_run_exits_1(tmp_path, capsys):
    pole = doc(system={"Omega": 0.0}, grid={"t_end": 4.0, "dt": 0.01})
    assert _run(tmp_path, "run-master", pole) == 1
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["status"] == "aborted" and manifest["exit_code"] == 1
    assert "aborted" in capsys.readouterr().err


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    config = _write(tmp_path, BASE)
    assert cli.main(["run-master", "--config", config]) == 0
    assert cli.main(["run-master", "--config", config]) == 0
    runs = list((tmp_path / "root").iterdir())
    assert len(runs) == 1 and runs[0].name.startswith("run-master-")


def test_module_entry_point_help():
    out = subprocess.run(
        [sys.executable, "-m", "qbmsim.cli", "--help"], capture_output=True, text=True, check=True
    )
    for command in ("run-master", "run-qsd", "run-gaussian", "compare", "sweep"):
        assert command in out.stdout
