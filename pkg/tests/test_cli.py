import json

import numpy as np
import pytest

from sargdv.cli import main
from sargdv.pipeline import RunConfig
from sargdv.raster import BinaryMask, GridGeometry, save_mask

SMALL_SPEC = {"width": 48, "height": 40, "blob_count": 3, "blob_radius": [4.0, 6.0], "seed": 2}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SMALL_SPEC))
    assert main(["synth", "--spec", str(root / "spec.json"), "--out", str(root / "in")]) == 0
    cfg_path = root / "in" / "run_config.json"
    cfg = json.loads(cfg_path.read_text())
    cfg["training"].update(max_depth=6, n_rounds=4)
    cfg["logreg_max_iters"] = 200
    cfg_path.write_text(json.dumps(cfg))
    assert main(["run-all", "--config", str(cfg_path), "--out", str(root / "out")]) == 0
    return root


def test_run_all_artifacts(small_run):
    out = small_run / "out"
    for name in ("labels.hdr.json", "split.json", "samples.csv", "model.json", "logreg.json",
                 "prob.hdr.json", "pred_unsmoothed.hdr.json", "pred_smoothed.hdr.json",
                 "metrics.json", "metrics.txt", "roc.csv", "prc.csv", "curves.svg", "dtw.hdr.json",
                 "borehole_filter.json", "run_config.resolved.json"):
        assert (out / name).exists(), name
    for name in ("model.json", "prob.hdr.json", "pred_smoothed.hdr.json", "metrics.json", "curves.svg"):
        prov = json.loads((out / f"{name}.prov.json").read_text())
        assert prov["schema_version"] == 1 and prov["artifact"] == name and prov["config_hash"]
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["schema_version"] == 1
    for region in ("training", "validation"):
        for fn in ("unsmoothed", "smoothed", "logreg"):
            cm = doc["regions"][region][fn]["confusion"]
            c0, c1 = doc["regions"][region]["cols"]
            assert sum(cm.values()) == 40 * (c1 - c0)
    assert set(doc["baseline_comparison"]) == {"threshold", "matched_fdr", "gbt_tpr", "logreg_tpr"}
    filt = json.loads((out / "borehole_filter.json").read_text())
    assert filt["input"] == 46 and filt["kept"] == 44
    assert (out / "roc.csv").read_text().startswith("threshold,x,y\n")


def test_eval_identity_and_two_thresholds(small_run, tmp_path):
    out = small_run / "out"
    truth = out / "labels.hdr.json"
    rc = main(["eval", "--truth", str(truth), "--split", str(out / "split.json"),
               "--pred", f"same={truth}", "--prob", f"gbt={out / 'prob.hdr.json'}",
               "--thresholds", "0.9", "0.2", "--out", str(tmp_path)])
    assert rc == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    for region in ("training", "validation"):
        assert doc["regions"][region]["same"]["metrics"]["accuracy"] == 1.0
    rows = doc["operating_points"]["gbt"]
    assert [r["threshold"] for r in rows] == [0.9, 0.2]
    assert "p=0.9" in (tmp_path / "metrics.txt").read_text()


def test_individual_stages(small_run, tmp_path):
    inp, out = small_run / "in", small_run / "out"
    cfg = ["--config", str(inp / "run_config.json"), "--out", str(tmp_path)]
    assert main(["rasterize", *cfg]) == 0
    assert (tmp_path / "labels.hdr.json").read_bytes() == (out / "labels.hdr.json").read_bytes()
    assert main(["split", *cfg]) == 0
    assert main(["sample", "--labels", str(tmp_path / "labels.hdr.json"),
                 "--split", str(tmp_path / "split.json"), *cfg]) == 0
    assert (tmp_path / "samples.csv").read_bytes() == (out / "samples.csv").read_bytes()
    assert main(["train", "--samples", str(tmp_path / "samples.csv"), "--rounds", "2",
                 "--max-depth", "3", *cfg]) == 0
    assert main(["predict", "--model", str(tmp_path / "model.json"), "--threshold", "0.9", *cfg]) == 0
    assert main(["smooth", "--prob", str(tmp_path / "prob.hdr.json"), "--beta", "2", *cfg]) == 0
    assert main(["curves", "--prob", str(tmp_path / "prob.hdr.json"), "--truth",
                 str(tmp_path / "labels.hdr.json"), "--split", str(tmp_path / "split.json"), *cfg]) == 0
    assert main(["idw", "--cutoff", "2019-01-01", "--power", "2", *cfg]) == 0
    assert (tmp_path / "curves.svg").exists() and (tmp_path / "dtw.hdr.json").exists()


def test_ingest(tmp_path):
    arr = np.zeros((30, 3, 4), np.float32)
    np.save(tmp_path / "vv.npy", arr)
    meta = {"kind": "VV", "width": 4, "height": 3, "origin_lon": 140.0, "origin_lat": -37.0,
            "pixel_size_lon": 0.001, "pixel_size_lat": -0.001,
            "dates": [f"2017-{m:02d}-{d:02d}" for m in range(1, 11) for d in (1, 11, 21)]}
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    rc = main(["ingest", "--array", str(tmp_path / "vv.npy"), "--meta", str(tmp_path / "meta.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 0 and (tmp_path / "o" / "vv.hdr.json").exists()


def test_missing_input_exit_1(tmp_path, capsys):
    rc = main(["rasterize", "--polygons", str(tmp_path / "nope.geojson"),
               "--reference", str(tmp_path / "nope.hdr.json"), "--out", str(tmp_path)])
    assert rc == 1
    assert "nope" in capsys.readouterr().err


def test_bad_config_exit_1(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"eval_thresholds": [1.5]}))
    assert main(["run-all", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 1


def test_invariant_violation_exit_2(tmp_path, capsys):
    a = save_mask(BinaryMask(GridGeometry(4, 4), np.zeros((4, 4))), tmp_path / "a.hdr.json")
    b = save_mask(BinaryMask(GridGeometry(4, 4, origin_lon=5.0), np.zeros((4, 4))), tmp_path / "b.hdr.json")
    (tmp_path / "split.json").write_text(json.dumps({"train_cols": [0, 3], "validation_cols": [3, 4]}))
    rc = main(["eval", "--truth", str(a), "--split", str(tmp_path / "split.json"),
               "--pred", f"x={b}", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "sargdv.raster.AlignmentError" in capsys.readouterr().err


def test_seed_override(tmp_path):
    assert main(["synth", "--spec", "/dev/null", "--out", str(tmp_path)]) != 0
    (tmp_path / "s.json").write_text(json.dumps(SMALL_SPEC))
    assert main(["synth", "--spec", str(tmp_path / "s.json"), "--seed", "9", "--out", str(tmp_path / "x")]) == 0
    assert json.loads((tmp_path / "x" / "synth_spec.json").read_text())["seed"] == 9
    cfg = RunConfig.load(tmp_path / "x" / "run_config.json")
    assert cfg.undersample_seed == 9 and cfg.path("vv") == tmp_path / "x" / "vv.hdr.json"
