"""Command-line pipeline: exit codes, artefacts and determinism."""
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from layerforge import __version__
from layerforge.cli import COMMANDS, ConfigError, dumps, load_config, main, run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
VQ = CONFIGS / "v_quadratic.yaml"
FLAT = CONFIGS / "flat.yaml"


def report(out):
    return json.loads((Path(out) / "report.json").read_text())


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_shipped_configs_validate():
    for p in CONFIGS.glob("*.yaml"):
        cfg, digest = load_config(p)
        assert len(digest) == 64 and cfg["field"]["V"]


def test_check_geometry(tmp_path):
    assert run("check-geometry", VQ, tmp_path) == 0
    rep = report(tmp_path)
    assert rep["status"] == "ok" and rep["results"]["check-geometry"]["length"] == pytest.approx(1.0)
    header = (tmp_path / "chart.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "theta" and "beta" in header
    assert rep["manifest"]["version"] == __version__


def test_check_geodesic_vq(tmp_path):
    assert run("check-geodesic", VQ, tmp_path, seed=7) == 0
    res = report(tmp_path)["results"]["check-geodesic"]
    assert res["stationary"] and res["nondegenerate"] and res["admissible"]
    chk = res["first_variation_check"]
    assert chk["seed"] == 7 and chk["fd"] == pytest.approx(chk["tabulated"], abs=1e-7)
    assert (tmp_path / "variation.csv").exists()


def test_check_geodesic_flat_is_degenerate(tmp_path):
    assert run("check-geodesic", FLAT, tmp_path) == 2
    rep = report(tmp_path)
    assert rep["status"] == "hypothesis_failure" and "degenerate" in rep["reason"]


def test_missing_field_is_config_error(tmp_path):
    cfg = yaml.safe_load(VQ.read_text())
    del cfg["field"]["V"]
    assert run("check-geometry", write_cfg(tmp_path, cfg), tmp_path) == 1
    rep = report(tmp_path)
    assert rep["status"] == "config_error" and rep["reason"] == "missing field.V"


@pytest.mark.parametrize("mutate,reason", [
    (lambda c: c.pop("boundary"), "boundary"),
    (lambda c: c.update(p=1.0), "p must exceed 1"),
    (lambda c: c["field"].update(V="2 - y1^^2"), "expression"),
])
def test_config_errors(tmp_path, mutate, reason):
    cfg = yaml.safe_load(VQ.read_text())
    mutate(cfg)
    assert run("check-geometry", write_cfg(tmp_path, cfg), tmp_path) == 1
    assert reason in report(tmp_path)["reason"]


def test_unreadable_config(tmp_path):
    assert run("profiles", tmp_path / "nope.yaml", tmp_path) == 1
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_geometry_hypothesis_failure(tmp_path):
    cfg = yaml.safe_load(VQ.read_text())
    cfg["boundary"]["phi1"] = "0.5*y1"
    assert run("check-geometry", write_cfg(tmp_path, cfg), tmp_path) == 2


def test_inadmissible_eps(tmp_path):
    cfg = yaml.safe_load(VQ.read_text())
    cfg["eps"] = 0.01  # resonant for the chart's own lambda* = 6/pi^2
    assert run("toda", write_cfg(tmp_path, cfg), tmp_path) == 2
    assert "gap condition" in report(tmp_path)["reason"]


def test_gaps_json(tmp_path):
    assert run("gaps", FLAT, tmp_path) == 0
    g = json.loads((tmp_path / "gaps.json").read_text())
    assert g["lambda_star"] == pytest.approx(3 / 3.141592653589793**2)
    assert not g["empty"] and 0.05 not in g["admissible"]


def test_toda_outputs(tmp_path):
    assert run("toda", VQ, tmp_path) == 0
    t = json.loads((tmp_path / "toda.json").read_text())
    assert t["direct"]["N"] == 2 and t["sup_difference"] < 1e-6
    assert report(tmp_path)["results"]["toda"]["direct_residual_over_eps2"] < 1e-9


def test_all_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("all", VQ, a) == 0
    assert run("all", VQ, b) == 0
    for name in ("report.json", "toda.json", "gaps.json", "transects.csv", "chart.csv"):
        ta, tb = (a / name).read_text(), (b / name).read_text()
        if name == "report.json":
            ta = ta.replace(str(a), "")
            tb = tb.replace(str(b), "")
        assert ta == tb, name
    res = report(a)["results"]
    assert set(res) == {"check-geometry", "check-geodesic", "profiles", "gaps", "toda", "assemble", "residual"}


def test_env_outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("LAYERFORGE_OUT", str(tmp_path / "env"))
    assert main(["profiles", "-c", str(FLAT)]) == 0
    assert (tmp_path / "env" / "profile.csv").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "layerforge", "check-geometry", "-c", str(VQ), "-o", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ok" in proc.stdout
    ver = subprocess.run([sys.executable, "-m", "layerforge", "--version"], capture_output=True, text=True)
    assert __version__ in ver.stdout


def test_dumps_format():
    s = dumps({"b": 1.0, "a": [0.1, float("nan")], "c": True})
    assert s.index('"a"') < s.index('"b"')
    assert "0.10000000000000001" in s and "null" in s and "1.0" in s


def test_commands_listed():
    assert set(COMMANDS) >= {"check-geometry", "check-geodesic", "profiles", "toda", "assemble", "residual",
                             "gaps", "all"}
