import json

import numpy as np
import pytest

from helpers import tree_bytes, binary_dataset, pipeline_config as _config, rigged_network, run_pipeline
from sparse_seg import data
from sparse_seg.cli import main
from sparse_seg.config import ConfigError, load_config, override
from sparse_seg.model import ArchitectureSpec, build_network, load_weights, save_weights
from sparse_seg.train import read_loss_log


def test_pipeline_outputs(tmp_path, capsys):
    out = run_pipeline(tmp_path, "a")
    assert len(read_loss_log(out / "loss.csv")) == 2 * 3  # 12 patches / 4, two epochs
    report = json.loads((out / "eval" / "report.json").read_text())
    assert report["images"] == 4 and report["model_kind"] == "unet"
    assert report["train_minutes"] is None and report["eval_seconds"] is None
    assert (out / "eval" / "per_image.csv").read_text().startswith("image,iou_bg")
    assert sorted(p.name for p in (out / "eval" / "overlays").iterdir())[0] == "im0_compare.png"
    assert (out / "pred" / "im3_pred.png").exists() and (out / "pred" / "im3_overlay.png").exists()
    assert "mean_iou" in capsys.readouterr().out


def test_two_runs_are_bitwise_identical(tmp_path):
    a = tree_bytes(run_pipeline(tmp_path, "a"))
    b = tree_bytes(run_pipeline(tmp_path, "b"))
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []
    assert any(k.endswith("_compare.png") for k in a)


def test_zero_learning_rate_gives_initial_weights(tmp_path):
    manifest = binary_dataset(tmp_path)
    cfg = _config(tmp_path, learning_rate=0.0)
    assert main(["train", "--config", str(cfg), "--manifest", str(manifest),
                 "--out", str(tmp_path / "m.w"), "--loss-log", str(tmp_path / "l.csv")]) == 0
    fresh = build_network(load_config(cfg).architecture, seed=3)
    save_weights(fresh, tmp_path / "fresh.w")
    assert (tmp_path / "m.w").read_bytes() == (tmp_path / "fresh.w").read_bytes()


def test_rigged_model_evaluates_perfectly(tmp_path):
    manifest = binary_dataset(tmp_path, n=3, shape=(19, 30))
    save_weights(rigged_network(), tmp_path / "rig.w")
    assert main(["eval", "--model", str(tmp_path / "rig.w"), "--manifest", str(manifest),
                 "--out", str(tmp_path / "ev")]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["mean_iou"] == 1.0 and report["display"]["mean_iou"] == "1.0000"
    assert report["confusion_matrix"][0][1] == report["confusion_matrix"][1][0] == 0


def test_record_timing(tmp_path):
    manifest = binary_dataset(tmp_path, n=2)
    save_weights(rigged_network(), tmp_path / "rig.w")
    (tmp_path / "t.json").write_text(json.dumps({"evaluation": {"record_timing": True}}))
    assert main(["eval", "--config", str(tmp_path / "t.json"), "--model", str(tmp_path / "rig.w"),
                 "--manifest", str(manifest), "--train-minutes", "2.5",
                 "--out", str(tmp_path / "ev")]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["train_minutes"] == 2.5 and report["eval_seconds"] >= 0


def test_stats_and_split(tmp_path, capsys):
    manifest = binary_dataset(tmp_path, n=5)
    assert main(["stats", "--manifest", str(manifest)]) == 0
    text = capsys.readouterr().out
    masks = [data.read_mask(tmp_path / f"im{k}_mask.png") for k in range(5)]
    assert f"{sum(int(m.sum()) for m in masks):,}" in text
    assert main(["split", "--manifest", str(manifest), "--test-fraction", "0.4",
                 "--out", str(tmp_path / "s")]) == 0
    train = data.load_manifest(tmp_path / "s" / "train.csv")
    test = data.load_manifest(tmp_path / "s" / "test.csv")
    assert (len(train), len(test)) == (3, 2)


def test_overlay_command(tmp_path):
    binary_dataset(tmp_path, n=1)
    pred = np.zeros((20, 28), np.uint8)
    data.write_mask(tmp_path / "p.png", pred)
    assert main(["overlay", "--image", str(tmp_path / "im0.png"), "--pred", str(tmp_path / "p.png"),
                 "--truth", str(tmp_path / "im0_mask.png"), "--out", str(tmp_path / "o.png")]) == 0
    from sparse_seg.render import count_colors
    from PIL import Image
    counts = count_colors(np.asarray(Image.open(tmp_path / "o.png")))
    assert counts["magenta"] == data.read_mask(tmp_path / "im0_mask.png").sum()


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"optimizer": {"lerning_rate": 1}}))
    assert main(["stats", "--config", str(tmp_path / "bad.json")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err == ["sparse-seg: error: ConfigError: unknown config key: optimizer.lerning_rate"]


@pytest.mark.parametrize("argv,kind", [
    (["stats", "--manifest", "missing.csv"], "ManifestError"),
    (["stats"], "ConfigError"),
])
def test_errors_are_one_line(argv, kind, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"sparse-seg: error: {kind}: ")


def test_corrupt_weights_reported(tmp_path, capsys):
    manifest = binary_dataset(tmp_path, n=1)
    (tmp_path / "w").write_bytes(b"junk")
    assert main(["eval", "--model", str(tmp_path / "w"), "--manifest", str(manifest),
                 "--out", str(tmp_path / "o")]) == 1
    assert "WeightsFormatError" in capsys.readouterr().err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("sparse-seg ")


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.architecture == ArchitectureSpec()
        assert cfg.optimizer.learning_rate == 1e-5 and cfg.optimizer.minibatch == 16
        assert cfg.patch.patches_per_image == 67

    def test_patch_seed_follows_run_seed(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"seed": 7}))
        cfg = load_config(tmp_path / "c.json")
        assert cfg.patch.seed == 7
        assert override(cfg, seed=9).patch.seed == 9

    def test_round_trip(self, tmp_path):
        from sparse_seg.config import save_config
        cfg = override(load_config(), optimizer__epochs=3, patch__rotations=(0, 180))
        save_config(cfg, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg

    @pytest.mark.parametrize("doc,match", [
        ({"bogus": 1}, "unknown config key: bogus"),
        ({"architecture": {"depth": 0}}, "architecture"),
        ({"seed": "x"}, "seed"),
        ({"optimizer": []}, "expected an object"),
    ])
    def test_invalid(self, tmp_path, doc, match):
        (tmp_path / "c.json").write_text(json.dumps(doc))
        with pytest.raises(ConfigError, match=match):
            load_config(tmp_path / "c.json")

    def test_invalid_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(tmp_path / "c.json")
