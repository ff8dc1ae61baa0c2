import json

import numpy as np
import pytest

import dualprior as dp


def test_dataset_is_deterministic_and_well_formed():
    a = dp.generate_dataset(3, seed=7)
    b = dp.generate_dataset(3, seed=7)
    assert len(a) == 3
    for x, y in zip(a, b):
        assert np.array_equal(x["image"], y["image"])
        assert x["image"].shape == (3, 32, 32)
        assert x["mask"].shape == (1, 32, 32)
        assert set(np.unique(x["mask"])) <= {0.0, 1.0}
        assert x["mask"].sum() >= 16
        assert x["meta"]["texture"]["freq"] > 0


def test_generator_config_rejects_unknown_keys():
    with pytest.raises(dp.ConfigError):
        dp.generate_dataset(1, seed=0, config={"no_such_key": 1})


def test_forward_and_single_step_round_trip():
    rng = np.random.default_rng(0)
    z0 = rng.standard_normal((2, 3, 4, 4))
    eps = rng.standard_normal((2, 3, 4, 4))
    zt = dp.forward_diffuse(z0, 120, eps)
    assert np.max(np.abs(dp.single_step_x0(zt, 120, eps) - z0)) < 1e-12


def test_metric_fixtures():
    assert dp.kid(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(-2.375, abs=1e-12)
    rng = np.random.default_rng(1)
    a = rng.standard_normal((40, 3))
    assert dp.frechet_distance(a, a) < 1e-9
    assert dp.frechet_distance(a, a + 3.0) == pytest.approx(27.0, rel=1e-9)
    mask = np.zeros((8, 8))
    mask[2:6, 2:6] = 1
    assert dp.dice_iou(mask, mask) == (1.0, 1.0)
    assert dp.gate_w_a(11, 3, 10, 40) == 1
    assert dp.gate_w_a(10, 3, 10, 40) == 0


def test_cli_train_and_sample(tmp_path):
    data, run = tmp_path / "data", tmp_path / "run"
    assert dp.cli("gen-data", "--n", "6", "--seed", "3", "--out", data) == 0
    assert dp.cli("gen-data", "--n", "6", "--out", data) == 5  # refuses to clobber
    assert dp.cli("train", "--data", data, "--bogus") == 2
    assert dp.cli("train", "--data", data, "--iters", "4", "--batch", "2", "--out", run) == 0
    manifest = json.loads((run / "run.json").read_text())
    assert manifest["command"] == "train"
    assert "loss.csv" in manifest["output_hashes"]

    masks = [s["mask"] for s in dp.load_dataset(str(data))[:2]]
    imgs = dp.sample(str(run / "model.ckpt"), masks, seeds=[1], steps=4)
    again = dp.sample(str(run / "model.ckpt"), masks, seeds=[1], steps=4)
    assert len(imgs) == 2
    assert all(np.array_equal(x, y) for x, y in zip(imgs, again))
    assert all(np.all(np.abs(x) <= 1.0) for x in imgs)
