import math

import numpy as np
import pytest

from lbrgm import generator as gen
from lbrgm import metrics
from lbrgm import perceptual
from lbrgm import tensorcore as tc

from _support import small_model

C1, C2 = 0.01 ** 2, 0.03 ** 2


def ssim_global_oracle(a, b):
    xs, ys = [float(v) for v in a.ravel()], [float(v) for v in b.ravel()]
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    vx = sum((x - mx) ** 2 for x in xs) / n
    vy = sum((y - my) ** 2 for y in ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / n
    return ((2 * mx * my + C1) * (2 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))


def ssim_window_oracle(a, b, size=11, sigma=1.5):
    g = [math.exp(-((i - (size - 1) / 2) ** 2) / (2 * sigma ** 2)) for i in range(size)]
    w = np.outer(g, g) / sum(g) ** 2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va, vb = np.sum(w * (pa - ma) ** 2), np.sum(w * (pb - mb) ** 2)
            cov = np.sum(w * (pa - ma) * (pb - mb))
            vals.append(((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))


def test_psnr_and_mse():
    a, b = np.zeros((4, 4, 1)), np.full((4, 4, 1), 0.5)
    assert metrics.mse(a, b) == 0.25
    assert metrics.psnr(a, b) == pytest.approx(10 * math.log10(4), abs=1e-12)
    assert metrics.psnr(a, a) == math.inf


def test_ssim_small_image_uses_global_statistics():
    rng = np.random.default_rng(0)
    a, b = rng.random((4, 4, 1)), rng.random((4, 4, 1))
    assert metrics.ssim(a, b) == pytest.approx(ssim_global_oracle(a, b), abs=1e-10)
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-15)


def test_ssim_windowed_matches_loop_oracle():
    rng = np.random.default_rng(1)
    a = rng.random((14, 13, 1))
    b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
    assert metrics.ssim(a, b) == pytest.approx(ssim_window_oracle(a[:, :, 0], b[:, :, 0]), abs=1e-12)


def test_ssim_averages_channels():
    rng = np.random.default_rng(2)
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    per = [metrics.ssim(a[:, :, [c]], b[:, :, [c]]) for c in range(3)]
    assert metrics.ssim(a, b) == pytest.approx(np.mean(per), abs=1e-14)


def test_evaluate_with_mask_and_extractor():
    rng = np.random.default_rng(3)
    gt = rng.random((8, 8, 1))
    rec = gt.copy()
    rec[:, 4:] += 0.1
    mask = np.ones((8, 8), bool)
    mask[:, 4:] = False
    ex = perceptual.build_extractor(2, "evaluation", (8, 8, 1))
    rep = metrics.evaluate(gt, rec, ex, mask)
    assert rep.mse_observed == 0.0
    assert rep.mse_unobserved == pytest.approx(0.01)
    assert rep.mse == pytest.approx(0.005)
    assert rep.eval_feature_distance == perceptual.feature_distance(ex, rec, gt)
    with pytest.raises(ValueError):
        metrics.evaluate(gt, rec, perceptual.build_extractor(1, "objective", (8, 8, 1)))
    with pytest.raises(tc.ShapeError):
        metrics.mse(gt, gt[:4])


def test_jacobian_report_on_known_matrix():
    q, _ = np.linalg.qr(np.random.default_rng(4).normal(size=(6, 3)))
    m = q * np.array([3.0, 2.0, 1.0])
    rep = metrics.jacobian_report(lambda v: tc.matmul(m, v), np.ones(3))
    np.testing.assert_allclose(rep.singular_values, [3, 2, 1], rtol=1e-12)
    assert rep.condition == pytest.approx(3.0)
    assert rep.offdiag_energy == pytest.approx(0.0, abs=1e-12)
    assert rep.frobenius_sq == pytest.approx(14.0)


def test_generator_jacobian_diagnostic():
    w = small_model(0)
    rep = metrics.jacobian_orthogonality(w, gen.mapping_forward(w, np.zeros(8)))
    assert rep.singular_values.shape == (16,)
    assert np.all(rep.singular_values > 0)
    with pytest.raises(ValueError):
        metrics.jacobian_report(lambda v: v, np.zeros(33))


def test_winner_count_with_ties():
    values = {"dist": [[0.1, 0.1, 0.3], [0.2, 0.1, 0.4]], "ssim": [[0.9, 0.8, 0.95], [0.5, 0.5, 0.5]]}
    table = metrics.winner_count_report(values, ["a", "b", "c"], {"dist": True, "ssim": False})
    assert table.wins("dist") == [1, 2, 0]
    assert table.wins("ssim") == [1, 1, 2]
    assert sum(table.wins("dist")) >= table.n_images
    assert table.means("dist") == pytest.approx([0.15, 0.1, 0.35])
    text = table.to_text("demo")
    assert "ties award a win to every tied method" in text
    assert text.splitlines()[1].startswith("| Method")
    rows = table.to_csv().splitlines()
    assert rows[0] == "image_id,method,metric,value,is_winner"
    assert len(rows) == 1 + 2 * 3 * 2


def test_winner_count_validation():
    with pytest.raises(ValueError):
        metrics.winner_count_report({"d": [[1.0, 2.0]]}, ["a"], {"d": True})
    with pytest.raises(ValueError):
        metrics.winner_count_report({"d": [[1.0]]}, ["a"], {})
    with pytest.raises(ValueError):
        metrics.winner_count_report({"d": [[1.0]], "e": [[1.0], [2.0]]}, ["a"], {"d": True, "e": True})
