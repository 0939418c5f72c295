"""Reconstruction objectives over style stacks and latents.

All objectives share the data terms

    pix = lambda_pix * ||y - A G(.)||^2
    vgg = lambda_vgg * ||phi(y) - phi(A G(.))||^2

and differ in their parameters and priors:

=============  ===========  ===================================================
objective      parameters   prior terms
=============  ===========  ===================================================
lbrgm          w+, z        lambda_map * sum_i ||w_i - M(z)||^2 + lambda_lat ||z||^2
tied           w, z         lambda_map * ||w - M(z)||^2 + lambda_lat ||z||^2
zinv           z            none (image is G(M(z)))
unreg          w+           none
brgm           w+           Gaussian + cosine prior around the empirical style mean
=============  ===========  ===================================================

Each ``*_terms`` builder returns a dict of graph nodes (differentiable with
respect to whichever inputs are parameters); the public ``*_loss`` wrappers
evaluate it into a :class:`LossBreakdown`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import generator as gen
from . import measurement as meas
from . import perceptual
from . import tensorcore as tc
from .rng import make_rng, normal

TERM_NAMES = ("pix", "vgg", "map", "lat", "gauss", "cos")
VAR_FLOOR = 1e-8
COS_EPS = 1e-12


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_pix: float = 2e-5
    lambda_vgg: float = 2e7
    lambda_map: float = 30.0
    lambda_lat: float = 0.4

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")


@dataclass
class LossBreakdown:
    total: float
    pix: float = 0.0
    vgg: float = 0.0
    map: float = 0.0
    lat: float = 0.0
    gauss: float = 0.0
    cos: float = 0.0

    def terms(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in TERM_NAMES}


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything fixed during one reconstruction: G, phi, A and y."""

    weights: gen.GeneratorWeights
    extractor: perceptual.FeatureExtractor
    op: meas.MeasurementOp
    y: np.ndarray
    y_features: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = tc.as_tensor(self.y, "observation")
        expected = self.op.out_shape(self.weights.arch.out_shape)
        if y.shape != expected:
            raise tc.ShapeError(f"observation shape {y.shape} does not match A G(.) shape {expected}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_features", perceptual.features(self.extractor, y))


def _sq(x) -> tc.Var:
    return tc.sum_(tc.square(x))


def data_terms(cfg: ObjectiveConfig, problem: Problem, image: tc.Var) -> dict[str, tc.Var]:
    ax = meas.apply(problem.op, image)
    feats = perceptual.features(problem.extractor, ax)
    return {"pix": cfg.lambda_pix * _sq(problem.y - ax),
            "vgg": cfg.lambda_vgg * _sq(problem.y_features - feats)}


def _row_sq_sum(diff: tc.Var) -> tc.Var:
    # per-row sums first, then over rows: a one-row stack reproduces the tied value bit for bit
    return tc.sum_(tc.sum_(tc.square(diff), axis=1))


def lbrgm_terms(cfg, problem, w_plus, z) -> dict[str, tc.Var]:
    w_plus, z = tc.const(w_plus), tc.const(z)
    terms = data_terms(cfg, problem, gen.synthesis_forward(problem.weights, w_plus))
    mz = gen.mapping_forward(problem.weights, z)
    terms["map"] = cfg.lambda_map * _row_sq_sum(w_plus - tc.reshape(mz, (1, -1)))
    terms["lat"] = cfg.lambda_lat * _sq(z)
    return terms


def tied_terms(cfg, problem, w, z) -> dict[str, tc.Var]:
    w, z = tc.const(w), tc.const(z)
    terms = data_terms(cfg, problem, gen.synthesis_tied(problem.weights, w))
    mz = gen.mapping_forward(problem.weights, z)
    terms["map"] = cfg.lambda_map * _row_sq_sum(tc.reshape(w - mz, (1, -1)))
    terms["lat"] = cfg.lambda_lat * _sq(z)
    return terms


def zinv_terms(cfg, problem, z) -> dict[str, tc.Var]:
    return data_terms(cfg, problem, gen.generate(problem.weights, tc.const(z)))


def unreg_terms(cfg, problem, w_plus) -> dict[str, tc.Var]:
    return data_terms(cfg, problem, gen.synthesis_forward(problem.weights, tc.const(w_plus)))


def total_of(terms: dict[str, tc.Var]) -> tc.Var:
    total = None
    for name in TERM_NAMES:
        if name in terms:
            total = terms[name] if total is None else total + terms[name]
    return total


def breakdown(terms: dict[str, tc.Var]) -> LossBreakdown:
    return LossBreakdown(float(total_of(terms).value),
                         **{k: float(v.value) for k, v in terms.items()})


def lbrgm_loss(cfg, weights, extractor, op, y, w_plus, z) -> LossBreakdown:
    return breakdown(lbrgm_terms(cfg, Problem(weights, extractor, op, y), w_plus, z))


def tied_loss(cfg, weights, extractor, op, y, w, z) -> LossBreakdown:
    return breakdown(tied_terms(cfg, Problem(weights, extractor, op, y), w, z))


def z_inversion_loss(weights, extractor, op, y, z, cfg: ObjectiveConfig = ObjectiveConfig()) -> LossBreakdown:
    return breakdown(zinv_terms(cfg, Problem(weights, extractor, op, y), z))


def unregularized_loss(weights, extractor, op, y, w_plus, cfg: ObjectiveConfig = ObjectiveConfig()) -> LossBreakdown:
    return breakdown(unreg_terms(cfg, Problem(weights, extractor, op, y), w_plus))


# -- BRGM-style baseline --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BrgmPrior:
    mean: np.ndarray
    var: np.ndarray
    lambda_gauss: float = 1.0
    lambda_cos: float = 30.0
    n_samples: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.var) <= 0):
            raise ValueError("prior variances must be positive")
        if self.lambda_gauss < 0 or self.lambda_cos < 0:
            raise ValueError("prior weights must be >= 0")


def estimate_style_prior(weights, n_samples: int = 10_000, seed: int = 0,
                         lambda_gauss: float = 1.0, lambda_cos: float = 30.0) -> BrgmPrior:
    """Per-coordinate mean and (unbiased) variance of M(z) over z ~ N(0, I)."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    zs = normal(make_rng(seed), (n_samples, weights.arch.d_z))
    ws = gen.mapping_forward(weights, zs)
    var = np.maximum(ws.var(axis=0, ddof=1), VAR_FLOOR)
    return BrgmPrior(ws.mean(axis=0), var, lambda_gauss, lambda_cos, n_samples)


def brgm_terms(cfg, prior: BrgmPrior, problem, w_plus) -> dict[str, tc.Var]:
    w_plus = tc.const(w_plus)
    terms = data_terms(cfg, problem, gen.synthesis_forward(problem.weights, w_plus))
    mu = prior.mean
    terms["gauss"] = prior.lambda_gauss * tc.sum_(tc.square(w_plus - mu) / prior.var)
    row_norms = tc.sqrt(tc.sum_(tc.square(w_plus), axis=1)) + COS_EPS
    cos = tc.matmul(w_plus, mu) / (row_norms * (np.linalg.norm(mu) + COS_EPS))
    terms["cos"] = prior.lambda_cos * tc.sum_(1.0 - cos)
    return terms


def brgm_baseline_loss(cfg, prior, weights, extractor, op, y, w_plus) -> LossBreakdown:
    return breakdown(brgm_terms(cfg, prior, Problem(weights, extractor, op, y), w_plus))


# -- MAP view -------------------------------------------------------------------

def _gaussian_nll(residual: np.ndarray, precision: float) -> float:
    """-log N(r; 0, precision^-1 I). A zero precision is treated as a flat prior."""
    if precision == 0:
        return 0.0
    n = residual.size
    return 0.5 * precision * float(residual @ residual) - 0.5 * n * np.log(precision / (2.0 * np.pi))


def neg_log_posterior(cfg, weights, extractor, op, y, w_plus, z) -> float:
    """-log p(y|w+) - sum_i log p(w_i|z) - log p(z), dropping log p(y).

    Every Gaussian has precision 2*lambda for its term, so the value differs
    from the L-BRGM loss by a constant that does not depend on (w+, z).
    """
    problem = Problem(weights, extractor, op, y)
    w_plus = np.asarray(w_plus, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    ax = meas.apply(op, gen.synthesis_forward(weights, w_plus))
    observed = op.observed(weights.arch.out_shape)
    pix_res = (problem.y - ax)[observed]
    feat_res = problem.y_features - perceptual.features(extractor, ax)
    map_res = (w_plus - gen.mapping_forward(weights, z)[None, :]).reshape(-1)
    return (_gaussian_nll(pix_res, 2 * cfg.lambda_pix)
            + _gaussian_nll(feat_res, 2 * cfg.lambda_vgg)
            + _gaussian_nll(map_res, 2 * cfg.lambda_map)
            + _gaussian_nll(z.reshape(-1), 2 * cfg.lambda_lat))
