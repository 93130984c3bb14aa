import numpy as np
import pytest

import blindrest


def test_dataset_is_deterministic_and_in_range():
    a = blindrest.synth_dataset(count=3, size=16, seed=4)
    b = blindrest.synth_dataset(count=3, size=16, seed=4)
    assert len(a) == 3
    assert a[0].shape == (16, 16, 3)
    assert a[0].dtype == np.float32
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
        assert x.min() >= 0.0 and x.max() <= 1.0


def test_png_round_trip(tmp_path):
    img = blindrest.synth_dataset(count=1, size=8, seed=1)[0]
    path = tmp_path / "x.png"
    blindrest.save_image(img, path)
    np.testing.assert_array_equal(blindrest.load_image(path), img)


def test_metrics():
    a = np.zeros((16, 16, 1), np.float32)
    b = np.full((16, 16, 1), 0.1, np.float32)
    assert blindrest.psnr(a, b) == pytest.approx(20.0, abs=1e-4)
    assert blindrest.ssim(b, b) == 1.0
    with pytest.raises(ValueError):
        blindrest.psnr(a, np.zeros((16, 15, 1), np.float32))


def test_plan_and_degrade():
    img = blindrest.synth_dataset(count=1, size=32, seed=2)[0]
    plan = blindrest.sample_plan(seed=9, height=32, width=32)
    assert blindrest.sample_plan(seed=9, height=32, width=32) == plan
    out = blindrest.degrade(img, plan)
    assert out.shape == img.shape
    np.testing.assert_array_equal(out, blindrest.degrade(img, plan))


def test_schedule_helpers():
    ab = blindrest.alpha_bars(1000, 1e-4, 0.02)
    assert len(ab) == 1001
    assert ab[0] == 1.0 and ab[-1] < 0.01
    steps = blindrest.spaced_steps(1000, 50)
    assert len(steps) == 50 and steps[0] == 1000 and steps[-1] == 1


def test_cli_in_process(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[dataset]\ncount = 2\n")
    code, out, err = blindrest.run_cli(["--config", str(cfg), "synth"])
    assert code == 0, err
    assert (tmp_path / "data" / "hq" / "manifest.txt").exists()
    code, _, err = blindrest.run_cli(["--config", str(cfg), "synth", "--count", "0"])
    assert code == 2
