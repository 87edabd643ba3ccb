"""Fingerprints, manifests, run directories, run comparison, prediction
tables, and explanation similarity."""

import hashlib
import os
import shutil
import struct

import numpy as np
import pytest

from detcnn import data, gradcam as gc, harness, weights_io, zoo
from detcnn.errors import ConfigError, DataError
from detcnn.tensor import Tensor
from detcnn.training import TrainConfig, train
from detcnn.zoo import SeedSet


def _ref_fingerprint(graph):
    h = hashlib.sha256()
    for name, t, _ in graph.registry():
        h.update(name.encode("utf-8") + b"\0")
        h.update(struct.pack("<B", t.rank))
        h.update(struct.pack(f"<{t.rank}I", *t.shape))
        h.update(t.data.astype("<f4", copy=False).tobytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One small trained run, written out as a run directory."""
    ds = data.synth_blobs(8, 48, seed=11)
    tr, va = data.split_train_val(ds)
    g = zoo.build_model("convnet", 48, SeedSet(1001))
    cfg = TrainConfig(epochs=2, batch_size=4)
    records = train(g, tr, va, cfg)
    man = harness.build_manifest(g, cfg, records, tr, va,
                                 threads_effective=1)
    run_dir = str(tmp_path_factory.mktemp("runs") / "a")
    harness.write_run_dir(run_dir, g, man, records)
    return {"dir": run_dir, "graph": g, "manifest": man, "records": records,
            "cfg": cfg, "train": tr, "val": va}


# -------------------------------------------------------------- fingerprint

def test_fingerprint_matches_reference_and_is_stable():
    g1 = zoo.build_model("convnet", 48, SeedSet(1001))
    g2 = zoo.build_model("convnet", 48, SeedSet(1001))
    fp = harness.fingerprint(g1)
    assert fp == _ref_fingerprint(g1)
    assert fp == harness.fingerprint(g2)
    assert len(fp) == 64 and int(fp, 16) >= 0


def test_fingerprint_sees_a_single_bit():
    g = zoo.build_model("convnet", 48, SeedSet(1001))
    base = harness.fingerprint(g)
    k = g.get_tensor("conv1/kernel")
    v = k.data.copy()
    bits = v.view(np.uint32)
    bits[0, 0, 0, 0] ^= np.uint32(1)  # least significant mantissa bit
    g.set_tensor("conv1/kernel", Tensor(v, copy=False))
    assert harness.fingerprint(g) != base


# ----------------------------------------------------------------- manifest

def test_manifest_text_roundtrip():
    m = harness.RunManifest({"b.key": "2", "a.key": "hello world",
                             "c.key": "line1\nline2"})
    txt = m.to_text()
    assert txt.splitlines()[0].startswith("a.key = ")
    back = harness.RunManifest.from_text(txt)
    assert back.entries["a.key"] == "hello world"
    assert back.entries["c.key"] == "line1 line2"  # newline flattened
    assert back.get("missing", "dflt") == "dflt"


def test_manifest_rejects_malformed_line():
    with pytest.raises(DataError, match="malformed"):
        harness.RunManifest.from_text("key-without-separator\n")


def test_build_manifest_contents(trained_run):
    m = trained_run["manifest"]
    g = trained_run["graph"]
    assert m.get("engine.version") == "1.0.0"
    assert m.get("model.model") == "convnet"
    assert m.get("model.pdim") == "48"
    assert m.get("seeds.global_seed") == "1001"
    assert m.get("seeds.kernel") == "1"
    assert m.get("seeds.dropout") == "7001"
    assert m.get("model.trainable_params") == str(g.count_trainable())
    assert m.get("config.epochs") == "2"
    assert m.get("config.batch_size") == "4"
    assert m.get("config.learning_rate") == repr(float(np.float32(1e-3)))
    assert m.get("data.train_digest") == trained_run["train"].digest
    assert m.get("data.classes") == "bright_blob,dark_blob"
    assert m.get("epoch.0000.train_loss") is not None
    assert m.get("epoch.0001.val_acc") is not None
    assert m.get("fingerprint.weights") == harness.fingerprint(g)
    assert float(m.get("run.wall_time_s")) > 0.0
    assert m.get("env.python") is not None


# ---------------------------------------------------------- run directories

def test_run_dir_has_all_artifacts(trained_run):
    d = trained_run["dir"]
    for f in (harness.WEIGHTS_FILE, harness.MANIFEST_FILE,
              harness.EPOCHS_FILE, harness.ARCH_FILE, harness.PLOT_FILE):
        assert os.path.isfile(os.path.join(d, f)), f
    with open(os.path.join(d, harness.EPOCHS_FILE)) as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("epoch=0 ")
    assert "wall" not in lines[0]


def test_load_run_restores_the_model(trained_run):
    g, m = harness.load_run(trained_run["dir"])
    assert harness.fingerprint(g) == m.get("fingerprint.weights")
    assert m.get("model.model") == "convnet"


def test_load_run_rejects_non_run_dir(tmp_path):
    with pytest.raises(DataError, match="not a trained run"):
        harness.load_run(str(tmp_path))


# --------------------------------------------------------------- comparison

def _clone_with_nudge(run_dir, dst, delta):
    shutil.copytree(run_dir, dst)
    g, _ = harness.load_run(run_dir)
    k = g.get_tensor("conv1/kernel")
    v = k.data.copy()
    v[0, 0, 0, 0] = np.float32(v[0, 0, 0, 0] + np.float32(delta))
    g.set_tensor("conv1/kernel", Tensor(v, copy=False))
    weights_io.save_weights(g, os.path.join(dst, harness.WEIGHTS_FILE))
    return dst


def test_compare_identical_runs(trained_run):
    r = harness.compare_runs(trained_run["dir"], trained_run["dir"])
    assert r.verdict == "bit-identical"
    assert r.same_architecture and r.same_config and r.metrics_identical
    assert r.fingerprint_a == r.fingerprint_b
    assert r.max_abs_diff == 0.0
    txt = r.render()
    assert txt.startswith("verdict: bit-identical\n")
    assert "max weight delta: 0.000e+00" in txt


def test_compare_numerically_close(trained_run, tmp_path):
    dst = _clone_with_nudge(trained_run["dir"], str(tmp_path / "b"), 5e-5)
    r = harness.compare_runs(trained_run["dir"], dst)
    assert r.verdict == "numerically-close"
    assert r.fingerprint_a != r.fingerprint_b
    assert 0.0 < r.max_abs_diff < harness.CLOSE_TOL
    assert r.worst_tensor == "conv1/kernel"


def test_compare_diverged(trained_run, tmp_path):
    dst = _clone_with_nudge(trained_run["dir"], str(tmp_path / "b"), 2e-3)
    r = harness.compare_runs(trained_run["dir"], dst)
    assert r.verdict == "diverged"
    assert r.max_abs_diff >= harness.CLOSE_TOL
    # the changed element sits in the rendered excerpt
    assert "conv1/kernel[:, :, 0, 0]" in r.render()


def test_compare_architecture_mismatch(trained_run, tmp_path):
    ds = data.synth_blobs(8, 52, seed=11)
    tr, va = data.split_train_val(ds)
    g = zoo.build_model("convnet", 52, SeedSet(1001))
    cfg = TrainConfig(epochs=1, batch_size=4)
    records = train(g, tr, va, cfg)
    man = harness.build_manifest(g, cfg, records, tr, va, 1)
    other = str(tmp_path / "other")
    harness.write_run_dir(other, g, man, records)
    r = harness.compare_runs(trained_run["dir"], other)
    assert r.verdict == "architecture-mismatch"
    assert not r.same_architecture
    assert any(d.startswith("model.pdim") for d in r.config_diffs)
    assert "architecture: DIFFERENT" in r.render()


def test_compare_flags_config_diffs_without_arch_change(trained_run,
                                                        tmp_path):
    dst = str(tmp_path / "b")
    shutil.copytree(trained_run["dir"], dst)
    mpath = os.path.join(dst, harness.MANIFEST_FILE)
    with open(mpath) as fh:
        m = harness.RunManifest.from_text(fh.read())
    m.entries["config.seed"] = "2002"
    m.entries["env.hostname"] = "elsewhere"  # must be ignored
    with open(mpath, "w") as fh:
        fh.write(m.to_text())
    r = harness.compare_runs(trained_run["dir"], dst)
    assert r.verdict == "bit-identical"
    assert not r.same_config
    assert r.config_diffs == ["config.seed: '1001' vs '2002'"]


def test_compare_requires_artifacts(trained_run, tmp_path):
    with pytest.raises(DataError, match="missing run artifact"):
        harness.compare_runs(trained_run["dir"], str(tmp_path))


# -------------------------------------------------------- prediction tables

def test_prediction_table_sums_to_one(trained_run):
    g = trained_run["graph"]
    img = Tensor(trained_run["val"].x[0])
    rows = harness.prediction_table(g, img, ("neg", "pos"))
    assert len(rows) == 2
    assert rows[0][2] >= rows[1][2]
    assert rows[0][2] + rows[1][2] == pytest.approx(1.0, abs=1e-6)
    assert {r[0] for r in rows} == {0, 1}
    assert {r[1] for r in rows} == {"neg", "pos"}


def test_format_prediction_table():
    rows = [(1, "pos", 0.75), (0, "neg", 0.25)]
    txt = harness.format_prediction_table(rows)
    lines = txt.splitlines()
    assert lines[0] == "rank  class  probability"
    assert lines[1] == "   1  pos (class 1)  0.75000000"
    assert lines[2] == "   2  neg (class 0)  0.25000000"


def test_rank_shift_report_flags_swaps():
    rows_a = [(1, "pos", 0.7), (0, "neg", 0.3)]
    rows_b = [(0, "neg", 0.6), (1, "pos", 0.4)]
    txt = harness.rank_shift_report(rows_a, rows_b)
    assert "class 0 (neg): rank 2 -> 1, prob 0.30000000 -> 0.60000000" in txt
    assert "class 1 (pos): rank 1 -> 2, prob 0.70000000 -> 0.40000000" in txt
    same = harness.rank_shift_report(rows_a, rows_a)
    assert same.count("unchanged") == 2


# ------------------------------------------------------------ cam similarity

def _cam(grid):
    return gc.CamMap(grid=Tensor(np.asarray(grid, dtype=np.float32)),
                     layer_id="l", class_index=1, score=0.5)


def test_cam_similarity_identical():
    g = np.zeros((4, 4), dtype=np.float32)
    g[1, 1] = 1.0
    s = harness.cam_similarity(_cam(g), _cam(g))
    assert s.iou == 1.0 and s.com_shift == 0.0


def test_cam_similarity_disjoint_and_partial():
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    a[0, 0] = 1.0
    b[3, 3] = 1.0
    s = harness.cam_similarity(_cam(a), _cam(b))
    assert s.iou == 0.0
    assert s.com_shift == pytest.approx(np.sqrt(18.0))
    # two-cell masks sharing one cell: intersection 1, union 3
    a2 = np.zeros((4, 4)); a2[0, 0] = a2[0, 1] = 1.0
    b2 = np.zeros((4, 4)); b2[0, 1] = b2[0, 2] = 1.0
    s2 = harness.cam_similarity(_cam(a2), _cam(b2))
    assert s2.iou == pytest.approx(1.0 / 3.0)
    assert s2.com_shift == pytest.approx(1.0)


def test_cam_similarity_empty_masks():
    a = np.full((3, 3), 0.2)  # below the 0.5 mask threshold
    s = harness.cam_similarity(_cam(a), _cam(a * 0.5))
    assert s.iou == 1.0
    assert s.com_shift == pytest.approx(0.0)
    z = np.zeros((3, 3))
    sz = harness.cam_similarity(_cam(z), _cam(z))
    assert sz.iou == 1.0 and sz.com_shift == 0.0


def test_cam_similarity_shape_mismatch():
    with pytest.raises(ConfigError, match="must match"):
        harness.cam_similarity(_cam(np.zeros((2, 2))),
                               _cam(np.zeros((3, 3))))
