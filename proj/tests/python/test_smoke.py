"""End-to-end smoke tests for the python bindings."""

import math
import os

import numpy as np
import pytest

import factorkit

TINY_CONFIG = """
alpha = 0.005
beta = 0.0
rho = 0.1
delta = 0.005
momentum = 0.5
epochs = 1
batch_size = 16
d_z = 4
base_channels = 4
aux_hidden = 16
checkpoint_every = 1
seed = 3
"""


def test_loss_values():
    target = np.array([1.0, 0.0])
    prediction = np.array([0.5, 0.5])
    assert factorkit.bce(target, prediction) == pytest.approx(math.log(2.0), abs=1e-12)

    mu = np.zeros((2, 3))
    log_var = np.zeros((2, 3))
    assert factorkit.kl_divergence(mu, log_var) == pytest.approx(0.0)
    mu[0, 0] = 1.0
    assert factorkit.kl_divergence(mu, log_var) == pytest.approx(0.25)

    half = np.full((4,), 0.5)
    assert factorkit.gan_loss(half, half, half) == pytest.approx(math.log(2.0), abs=1e-12)


def test_dataset_generation(tmp_path):
    out = str(tmp_path / "d.bin")
    data = factorkit.generate_dataset(n=64, seed=7, size=8, channels=3, out=out)
    images = data["images"]
    labels = data["labels"]
    assert images.shape == (64, 3, 8, 8)
    assert images.min() >= 0.0 and images.max() <= 1.0
    assert labels.sum() == 32  # balanced by construction
    assert os.path.exists(out)

    recovered = factorkit.pixel_rule_labels(images)
    assert np.array_equal(recovered, labels)

    again = factorkit.generate_dataset(n=64, seed=7, size=8, channels=3)
    assert np.array_equal(again["images"], images)


def test_train_and_edit(tmp_path):
    data_path = str(tmp_path / "train.bin")
    factorkit.generate_dataset(n=200, seed=5, size=8, channels=3, out=data_path)
    out_dir = str(tmp_path / "run")

    result = factorkit.train(TINY_CONFIG, data_path, out_dir)
    assert result["checkpoints"], "training must produce a checkpoint"
    assert os.path.exists(os.path.join(out_dir, "metrics.log"))

    model = factorkit.Model.load(result["checkpoints"][-1])
    assert "d_z = 4" in model.config_text

    batch = factorkit.generate_dataset(n=8, seed=9, size=8, channels=3)["images"]
    post = model.encode(batch, noise=np.zeros((8, 4), dtype=np.float32))
    assert post["mu"].shape == (8, 4)
    assert np.array_equal(post["z_hat"], post["mu"])  # zero noise -> posterior mean
    assert post["y_hat"].min() > 0.0 and post["y_hat"].max() < 1.0

    decoded = model.decode(post["mu"], np.ones(8, dtype=np.float32))
    assert decoded.shape == (8, 3, 8, 8)
    assert decoded.min() > 0.0 and decoded.max() < 1.0

    edited = model.edit(batch, target=1)
    assert edited.shape == batch.shape
    again = model.edit(batch, target=1)
    assert np.array_equal(edited, again)  # editing is deterministic


def test_cli_binary_available():
    # The ctest harness exports the CLI path; outside it this check is skipped.
    path = os.environ.get("FACTORKIT_BIN")
    if not path:
        pytest.skip("FACTORKIT_BIN not set")
    assert os.path.exists(path)
