"""Fixed random feature extractors used as perceptual embeddings.

Each extractor has two stages. Stage ``k`` block-averages the input image by
the cumulative pool factor ``p_1 * ... * p_k``, applies a random dense map and
a leaky ReLU, and is normalised to unit length. The two unit vectors are
concatenated. One extractor (role ``objective``) is used inside the
reconstruction loss; a second one with a different seed (role ``evaluation``)
scores reconstructions, so a method is never graded by the features it was
optimised against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .rng import make_rng, normal

ROLES = ("objective", "evaluation")
NORM_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureExtractor:
    seed: int
    role: str
    input_shape: tuple[int, int, int]
    pools: tuple[int, ...]
    widths: tuple[int, ...]
    matrices: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @property
    def out_dim(self) -> int:
        return sum(self.widths)


def build_extractor(seed: int, role: str, input_shape, pools=(2, 2), widths=(64, 64)) -> FeatureExtractor:
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    if len(pools) != len(widths) or not pools:
        raise ValueError("pools and widths must be non-empty and of equal length")
    if len(input_shape) != 3:
        raise ValueError(f"degenerate shape {tuple(input_shape)}: expected (H, W, C)")
    h, w, c = (int(s) for s in input_shape)
    rng = make_rng(seed)
    matrices, biases, scale = [], [], 1
    for p, width in zip(pools, widths):
        scale *= int(p)
        if p < 1 or width < 1 or h % scale or w % scale or min(h, w, c) < 1:
            raise ValueError(f"degenerate shape {(h, w, c)} for pool factors {tuple(pools)}")
        fan_in = (h // scale) * (w // scale) * c
        mat = normal(rng, (width, fan_in), fan_in ** -0.5)
        bias = normal(rng, (width,), fan_in ** -0.5)
        mat.setflags(write=False)
        bias.setflags(write=False)
        matrices.append(mat)
        biases.append(bias)
    return FeatureExtractor(int(seed), role, (h, w, c), tuple(int(p) for p in pools),
                            tuple(int(k) for k in widths), tuple(matrices), tuple(biases))


def _features(ex: FeatureExtractor, x: tc.Var) -> tc.Var:
    if tuple(x.value.shape) != ex.input_shape:
        raise tc.ShapeError(f"extractor expects shape {ex.input_shape}, got {x.value.shape}")
    blocks, pooled = [], x
    for p, mat, bias in zip(ex.pools, ex.matrices, ex.biases):
        if p > 1:
            pooled = tc.block_pool(pooled, p)
        f = tc.lrelu(tc.matmul(mat, tc.reshape(pooled, (-1,))) + bias)
        norm = tc.sqrt(tc.sum_(tc.square(f)))
        blocks.append(f / (norm + NORM_EPS))
    return tc.concat(blocks)


def features(ex: FeatureExtractor, obs):
    out = _features(ex, tc.const(obs))
    return out if isinstance(obs, tc.Var) else out.value


def feature_distance(ex: FeatureExtractor, a, b):
    """Squared Euclidean distance between the feature vectors of ``a`` and ``b``."""
    fa = _features(ex, tc.const(a))
    fb = _features(ex, tc.const(b))
    out = tc.sum_(tc.square(fa - fb))
    if isinstance(a, tc.Var) or isinstance(b, tc.Var):
        return out
    return float(out.value)


def check_distinct_roles(objective: FeatureExtractor, evaluation: FeatureExtractor) -> None:
    if objective.role != "objective" or evaluation.role != "evaluation":
        raise ValueError("extractor roles are swapped or mislabelled")
    if objective.seed == evaluation.seed:
        raise ValueError("objective and evaluation extractors must use different seeds")
