"""Image quality metrics, the Jacobian diagnostic and winner-count tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import generator as gen
from . import perceptual
from . import tensorcore as tc

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
MAX_JACOBIAN_DIM = 32
TIE_RULE = "ties award a win to every tied method"


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise tc.ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; identical images give ``inf``."""
    err = mse(a, b)
    return float("inf") if err == 0 else float(10.0 * np.log10(1.0 / err))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_formula(mu_a, mu_b, var_a, var_b, cov):
    return (((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2))
            / ((mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)))


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    if min(a.shape) < SSIM_WINDOW:
        mu_a, mu_b = a.mean(), b.mean()
        da, db = a - mu_a, b - mu_b
        return float(_ssim_formula(mu_a, mu_b, np.mean(da * da), np.mean(db * db), np.mean(da * db)))
    win = _gaussian_window()
    view = np.lib.stride_tricks.sliding_window_view

    def filt(x):
        return np.einsum("ijkl,kl->ij", view(x, win.shape), win)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    return float(np.mean(_ssim_formula(mu_a, mu_b, var_a, var_b, cov)))


def ssim(a, b) -> float:
    """Gaussian-windowed SSIM (11x11, sigma 1.5), averaged over channels.

    Images smaller than the window on either side use global statistics.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[-1])]))


@dataclass
class MetricReport:
    mse: float
    psnr: float
    ssim: float
    eval_feature_distance: float | None = None
    mse_observed: float | None = None
    mse_unobserved: float | None = None

    def items(self) -> list[tuple[str, float]]:
        return [(k, v) for k, v in vars(self).items() if v is not None]


def region_mse(a, b, mask) -> tuple[float, float]:
    """MSE over observed (mask True) and unobserved pixels, all channels."""
    a, b = _pair(a, b)
    m = np.broadcast_to(np.asarray(mask, dtype=bool)[:, :, None], a.shape)
    sq = (a - b) ** 2
    obs = float(sq[m].mean()) if m.any() else float("nan")
    hole = float(sq[~m].mean()) if (~m).any() else float("nan")
    return obs, hole


def evaluate(ground_truth, recon, eval_extractor: perceptual.FeatureExtractor | None = None,
             mask=None) -> MetricReport:
    report = MetricReport(mse(ground_truth, recon), psnr(ground_truth, recon), ssim(ground_truth, recon))
    if eval_extractor is not None:
        if eval_extractor.role != "evaluation":
            raise ValueError("evaluation metrics must use an evaluation-role extractor")
        report.eval_feature_distance = perceptual.feature_distance(eval_extractor, recon, ground_truth)
    if mask is not None:
        report.mse_observed, report.mse_unobserved = region_mse(ground_truth, recon, mask)
    return report


# -- Jacobian diagnostic ------------------------------------------------------------

@dataclass
class JacobianReport:
    singular_values: np.ndarray
    condition: float
    offdiag_energy: float
    frobenius_sq: float


def jacobian_report(fn: Callable[[tc.Var], tc.Var], w) -> JacobianReport:
    """Spectrum of d fn / d w built from one reverse sweep per output entry."""
    w = np.asarray(w, dtype=np.float64)
    if w.size > MAX_JACOBIAN_DIM:
        raise ValueError(f"style dimension {w.size} exceeds {MAX_JACOBIAN_DIM}")
    jac = tc.jacobian(fn, w)
    sv = np.linalg.svd(jac, compute_uv=False)
    gram = jac.T @ jac
    trace = float(np.trace(gram))
    off = gram - np.diag(np.diag(gram))
    return JacobianReport(
        singular_values=sv,
        condition=float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf"),
        offdiag_energy=float(np.linalg.norm(off) / trace) if trace > 0 else 0.0,
        frobenius_sq=float(np.sum(jac * jac)),
    )


def jacobian_orthogonality(weights: gen.GeneratorWeights, w) -> JacobianReport:
    """Jacobian of the tied-style synthesis image with respect to one style vector."""
    if weights.arch.d_w > MAX_JACOBIAN_DIM:
        raise ValueError(f"d_w={weights.arch.d_w} exceeds {MAX_JACOBIAN_DIM}")
    return jacobian_report(lambda v: tc.reshape(gen.synthesis_tied(weights, v), (-1,)), w)


# -- winner counts ----------------------------------------------------------------

@dataclass
class WinnerTable:
    methods: list[str]
    metrics: list[str]
    lower_is_better: dict[str, bool]
    values: dict[str, np.ndarray]      # metric -> (n_images, n_methods)
    winners: dict[str, np.ndarray]     # metric -> bool (n_images, n_methods)
    image_ids: list[str]

    @property
    def n_images(self) -> int:
        return len(self.image_ids)

    def wins(self, metric: str) -> list[int]:
        return [int(v) for v in self.winners[metric].sum(axis=0)]

    def means(self, metric: str) -> list[float]:
        return [float(v) for v in self.values[metric].mean(axis=0)]

    def to_text(self, title: str = "") -> str:
        head = ["Method"]
        for m in self.metrics:
            arrow = "lower" if self.lower_is_better[m] else "higher"
            head += [f"{m} wins", f"{m} mean ({arrow} better)"]
        rows = []
        for j, name in enumerate(self.methods):
            row = [name]
            for m in self.metrics:
                row += [str(self.wins(m)[j]), f"{self.means(m)[j]:.6g}"]
            rows.append(row)
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = lambda r: "| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |"
        rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        lines = ([title] if title else []) + [fmt(head), rule] + [fmt(r) for r in rows]
        lines.append(f"Wins are counted over {self.n_images} images; {TIE_RULE}.")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "method", "metric", "value", "is_winner"])
        for i, image_id in enumerate(self.image_ids):
            for j, name in enumerate(self.methods):
                for m in self.metrics:
                    writer.writerow([image_id, name, m, repr(float(self.values[m][i, j])),
                                     int(self.winners[m][i, j])])
        return buf.getvalue()


def winner_count_report(values: Mapping[str, Sequence[Sequence[float]]], methods: Sequence[str],
                        lower_is_better: Mapping[str, bool],
                        image_ids: Sequence[str] | None = None) -> WinnerTable:
    """Per metric, count the images on which each method is best.

    ``values[metric][i][j]`` is the score of method ``j`` on image ``i``.
    """
    methods = list(methods)
    if not methods:
        raise ValueError("need at least one method")
    arrays, winners, n_images = {}, {}, None
    for metric, rows in values.items():
        if any(len(r) != len(methods) for r in rows):
            raise ValueError(f"ragged scores for metric {metric!r}")
        arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(methods))
        if n_images is None:
            n_images = arr.shape[0]
        elif arr.shape[0] != n_images:
            raise ValueError("metrics cover different numbers of images")
        if metric not in lower_is_better:
            raise ValueError(f"missing direction for metric {metric!r}")
        best = arr.min(axis=1) if lower_is_better[metric] else arr.max(axis=1)
        arrays[metric] = arr
        winners[metric] = arr == best[:, None]
    if not n_images:
        raise ValueError("need at least one image")
    ids = [str(i) for i in (image_ids if image_ids is not None else range(n_images))]
    if len(ids) != n_images:
        raise ValueError("image_ids length does not match the scores")
    return WinnerTable(methods, list(arrays), dict(lower_is_better), arrays, winners, ids)
