import json
import os

import pytest

from homogelast.cli import main


@pytest.fixture(scope="module")
def layered_cfg(layered, ctx, tmp_path_factory):
    path = os.path.join(ctx.cache_dir, "calibration-layered.json")
    d = tmp_path_factory.mktemp("cfg")
    cfg = {"density": {"kind": "layered"}, "calibration_file": path, "grid_n": 8,
           "eps_list": [0.5, 0.25], "cells_per_period": 4, "theta_count": 2, "n_samples": 1}
    p = d / "c.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_layered_command(layered_cfg, tmp_path, capsys):
    assert main(["layered", "--config", layered_cfg, "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["flux_residual"] < 1e-12
    assert (tmp_path / "layered.csv").exists()


def test_whom_scan_deterministic(layered_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["whom-scan", "--config", layered_cfg, "--out", str(a)]) == 0
    assert main(["whom-scan", "--config", layered_cfg, "--out", str(b), "--threads", "2"]) == 0
    ta, tb = (a / "whom.csv").read_bytes(), (b / "whom.csv").read_bytes()
    assert ta == tb
    header = [ln for ln in ta.decode().splitlines() if not ln.startswith("#")][0]
    assert header == "theta,e11,e12,e21,e22,w_hom,rank_one_c,grid_n"


def test_rate_study_outputs(layered_cfg, tmp_path):
    assert main(["rate-study", "--config", layered_cfg, "--out", str(tmp_path)]) == 0
    rows = [ln for ln in (tmp_path / "report.csv").read_text().splitlines() if not ln.startswith("#")]
    assert rows[0] == "eps,err_L2,err_H1,energy_eps,energy_hom,lambda"
    assert len(rows) == 3
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["config"]["cells_per_period"] == 4 and rep["calibration"]["mu"] > 0


def test_corrector_command(layered_cfg, tmp_path):
    assert main(["corrector", "--config", layered_cfg, "--out", str(tmp_path), "--grid-n", "8"]) == 0
    assert (tmp_path / "corrector.csv").exists()


def test_verify_rejects_mu_zero(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mu_grid": [0.0], "delta_grid": [0.1]}))
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["passed"] is False and rep["margins"]


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid_size": 3}))
    with pytest.raises(SystemExit) as exc:
        main(["layered", "--config", str(cfg), "--out", str(tmp_path)])
    assert exc.value.code == 2
