import math

import numpy as np
import pytest

import genspec


def test_phantom_is_deterministic_and_in_range():
    a = genspec.generate_phantom(5, 32)
    b = genspec.generate_phantom(5, 32)
    assert a.shape == (32, 32)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_dataset_round_trip(tmp_path):
    images = genspec.generate_dataset(1, "val", 4, 32)
    path = str(tmp_path / "val.gmzd")
    genspec.save_dataset(images, path)
    assert np.array_equal(genspec.load_dataset(path), images)
    with pytest.raises(genspec.UsageError):
        genspec.generate_dataset(1, "holdout", 4, 32)


def test_psnr_and_ssim():
    x = np.zeros((8, 8))
    assert genspec.psnr(x, x + 0.1) == pytest.approx(20.0)
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(16, 16))
    assert genspec.ssim(img, img) == pytest.approx(1.0)
    with pytest.raises(genspec.ShapeError):
        genspec.psnr(x, np.zeros((4, 4)))


def test_frechet_one_dimensional_closed_form():
    d = genspec.frechet_distance(np.array([0.3]), np.array([[4.0]]), np.array([-1.2]), np.array([[0.25]]))
    assert d == pytest.approx((0.3 + 1.2) ** 2 + (2.0 - 0.5) ** 2, abs=1e-8)


def test_kid_matches_numpy_estimator():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(20, 3)), rng.normal(0.5, 1.0, size=(15, 3))

    def k(x, y):
        return (x @ y.T / 3 + 1) ** 3

    kaa, kbb, kab = k(a, a), k(b, b), k(a, b)
    m, n = len(a), len(b)
    ref = ((kaa.sum() - np.trace(kaa)) / (m * (m - 1)) + (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
           - 2 * kab.mean())
    assert genspec.kid(a, b) == pytest.approx(ref, rel=1e-10)


def test_masks_and_schedules():
    pixel, cells = genspec.make_mask(0.5, "random-token", seed=3)
    assert pixel.shape == (32, 32) and cells.shape == (8, 8)
    assert cells.sum() == 32
    assert np.array_equal(np.kron(cells, np.ones((4, 4))), pixel)
    assert sum(genspec.maskgit_schedule(64, 8)) == 64
    ts = genspec.sampling_timesteps(200, 50)
    assert ts[0] == 200 and ts[-1] == 0 and len(ts) == 51
    sched = genspec.noise_schedule(200)
    assert sched["alpha_bar"][0] == 1.0
    assert math.isclose(sched["beta"][-1], 0.1)
    assert sched["alpha_bar"][-1] < 1e-4


def test_spearman():
    rho, p = genspec.spearman([1, 2, 3, 4, 5], [5, 4, 3, 2, 1])
    assert rho == pytest.approx(-1.0)
    assert p == 0.0


def test_cli_and_selftest():
    code, _, err = genspec.cli([])
    assert code == 1 and "Subcommands" in err
    code, out, _ = genspec.cli(["selftest"])
    assert code == 0 and "FAIL" not in out
    assert all(passed for _, passed, _ in genspec.selftest())
