import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from petkin import FengAif, make_schedule
from petkin.aif import feng_curve, write_aif_csv
from petkin.cli import PlotSpec, render_plot, run
from petkin.phantom import default_mouse_spec, save_spec
from petkin.timegrid import save_schedule
from petkin.errors import ValidationError

SEGMENTS = [(1, 30), (8, 5), (4, 20), (2, 300)]  # short protocol for fast tests


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_schedule(root / "sched.json", make_schedule(SEGMENTS))
    save_spec(root / "spec.json", default_mouse_spec(dims=(12, 12, 12)))
    return root


def invoke(*args) -> int:
    return run([str(a) for a in args])


def test_end_to_end_simulate_fit_metrics(workdir):
    sim = workdir / "sim"
    assert invoke("simulate", "--spec", workdir / "spec.json", "--schedule", workdir / "sched.json",
                  "--out", sim) == 0
    for sub in ("image", "maps", "labels", "ki"):
        assert (sim / sub / "meta.json").is_file()
        assert (sim / sub / "data.f32").is_file()
    assert (sim / "aif.csv").is_file()
    assert (sim / "manifest.json").is_file()

    fit = workdir / "fit"
    assert invoke("fit", "--image", sim / "image", "--aif", sim / "aif_fine.csv",
                  "--method", "lls+nls", "--mask", sim / "labels", "--out", fit) == 0
    status = json.loads((fit / "status.json").read_text())
    assert status["ok"] > 0

    report_path = workdir / "report.json"
    assert invoke("metrics", "--est", fit, "--ref", sim,
                  "--aif-est", sim / "aif.csv", "--aif-ref", sim / "aif.csv",
                  "--out", report_path) == 0
    report = json.loads(report_path.read_text())
    for name in ("K1", "k2", "k3", "Vb"):
        assert "ssim" in report["channels"][name]
        assert "psnr_db" in report["channels"][name]
    assert report["aif"]["nrmse"] == 0.0
    assert "mean_ssim" in report["aggregate"]


def test_fit_rejects_mismatched_schedule(workdir, tmp_path):
    sim = workdir / "sim"
    other = feng_curve(FengAif(), np.linspace(0.0, 100.0, 5))
    csv_path = tmp_path / "aif.csv"
    write_aif_csv(csv_path, other)
    # break the image/schedule consistency by lying about the frame count
    bad_img = tmp_path / "badimg"
    import shutil

    shutil.copytree(sim / "image", bad_img)
    meta = json.loads((bad_img / "meta.json").read_text())
    meta["dims"][0] = meta["dims"][0] + 1
    (bad_img / "meta.json").write_text(json.dumps(meta))
    rc = invoke("fit", "--image", bad_img, "--aif", csv_path, "--out", tmp_path / "out")
    assert rc == 2


def test_unknown_flag_exits_2(workdir, capsys):
    rc = invoke("simulate", "--bogus", "x")
    assert rc == 2


def test_validation_error_is_machine_readable(workdir, tmp_path, capsys):
    rc = invoke("fit", "--image", tmp_path / "missing", "--aif", tmp_path / "nope.csv",
                "--out", tmp_path / "out")
    assert rc == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    payload = json.loads(err)
    assert payload["error"] == "validation"
    assert "message" in payload


def test_plot_determinism_and_kinds(workdir, tmp_path):
    sim = workdir / "sim"
    svg1 = tmp_path / "a.svg"
    svg2 = tmp_path / "b.svg"
    for out in (svg1, svg2):
        assert invoke("plot", "--kind", "aif-overlay", "--inputs", sim / "aif.csv",
                      "--out", out) == 0
    assert svg1.read_bytes() == svg2.read_bytes()

    scatter = tmp_path / "scatter.svg"
    assert invoke("plot", "--kind", "identity-scatter", "--inputs", sim / "aif.csv", sim / "aif.csv",
                  "--out", scatter) == 0
    text = scatter.read_text()
    assert "stroke-dasharray" in text  # the identity line
    # est = ref: every scatter point sits on the dashed identity segment
    import re

    line = re.search(r'<line x1="([\d.]+)" y1="([\d.]+)" x2="([\d.]+)" y2="([\d.]+)" '
                     r'stroke="#555555"', text)
    x1, y1, x2, y2 = (float(line.group(i)) for i in range(1, 5))
    points = re.findall(r'<circle cx="([\d.]+)" cy="([\d.]+)"', text)
    assert points
    for cx, cy in points:
        cx, cy = float(cx), float(cy)
        t = (cx - x1) / (x2 - x1)
        assert cy == pytest.approx(y1 + t * (y2 - y1), abs=0.01)

    mslice = tmp_path / "slice.svg"
    assert invoke("plot", "--kind", "map-slice", "--inputs", sim / "maps",
                  "--channel", "K1", "--slice", 6, "--out", mslice) == 0
    assert mslice.read_text().startswith("<svg")


def test_map_slice_of_zero_map_is_uniform(tmp_path):
    from petkin.kinetics import ParametricMaps
    from petkin.storage import write_maps

    maps = ParametricMaps(data=np.zeros((4, 4, 4, 4)), mask=np.zeros((4, 4, 4), bool))
    write_maps(tmp_path / "maps", maps)
    spec = PlotSpec(kind="map-slice", inputs=(str(tmp_path / "maps"),), output="x.svg", slice_index=1)
    svg = render_plot(spec)
    # every raster cell renders the same gray
    assert svg.count("rgb(0,0,0)") >= 16


def test_plot_spec_validation(tmp_path):
    with pytest.raises(ValidationError):
        PlotSpec(kind="pie", inputs=("x",), output="y.svg")
    with pytest.raises(ValidationError):
        PlotSpec(kind="aif-overlay", inputs=(str(tmp_path / "missing.csv"),), output="y.svg")


def test_default_feng_overlay_peaks_before_120s(workdir, tmp_path):
    sched = make_schedule([(1, 30), (24, 5), (9, 20), (8, 300)])
    from petkin import mid_times

    curve = feng_curve(FengAif(), mid_times(sched))
    peak_time = curve.times[int(np.argmax(curve.values))]
    assert peak_time < 120.0
    p = tmp_path / "c.csv"
    write_aif_csv(p, curve)
    out = tmp_path / "o.svg"
    assert invoke("plot", "--kind", "aif-overlay", "--inputs", p, "--out", out) == 0


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "petkin", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout


def test_env_var_threads_default(workdir, tmp_path, monkeypatch):
    sim = workdir / "sim"
    monkeypatch.setenv("PETKIN_THREADS", "2")
    out = tmp_path / "fit_env"
    assert invoke("fit", "--image", sim / "image", "--aif", sim / "aif_fine.csv",
                  "--method", "lls", "--mask", sim / "labels", "--out", out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["threads"] == 2
