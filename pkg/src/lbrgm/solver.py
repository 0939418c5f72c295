"""Reconstruction driver: multi-initialisation, Adam iterations, tracing, early stopping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import generator as gen
from . import measurement as meas
from . import objective as obj
from . import perceptual
from . import tensorcore as tc
from .optim import AdamConfig, adam_init, adam_step
from .rng import make_rng, normal

METHODS = ("lbrgm", "tied", "brgm", "unreg", "zinv")


class DivergenceError(FloatingPointError):
    """Raised when an iterate produces a non-finite loss or gradient.

    ``result`` holds the partial trace up to the failure.
    """

    def __init__(self, message: str, result: "ReconstructionResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class SolverConfig:
    method: str = "lbrgm"
    iters: int = 2000
    n_init: int = 100
    seed: int = 0
    objective: obj.ObjectiveConfig = field(default_factory=obj.ObjectiveConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    oracle_stopping: bool = False
    trace_every: int = 10
    # BRGM baseline prior
    prior_samples: int = 10_000
    lambda_gauss: float = 1.0
    lambda_cos: float = 30.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")


@dataclass
class TraceRecord:
    iter: int
    loss: obj.LossBreakdown
    eval_metric: float | None
    update_norm: float

    @property
    def total(self) -> float:
        return self.loss.total


@dataclass
class ReconstructionResult:
    image: np.ndarray
    w_plus: np.ndarray
    z: np.ndarray | None
    best_iter: int
    final_image: np.ndarray
    trace: list[TraceRecord]
    init_losses: np.ndarray
    init_index: int
    error: str | None = None


# -- initialisation -------------------------------------------------------------

def draw_candidates(d_z: int, n: int, seed: int) -> np.ndarray:
    return normal(make_rng(seed), (n, d_z))


def candidate_loss(problem: obj.Problem, z: np.ndarray) -> float:
    """||phi(y) - phi(A G(M(z)))||^2, forward passes only."""
    ax = meas.apply(problem.op, gen.generate(problem.weights, z))
    diff = problem.y_features - perceptual.features(problem.extractor, ax)
    return float(diff @ diff)


def multi_init(weights, extractor, op, y, n_init: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Best of ``n_init`` standard-normal latents under the perceptual loss (first index wins ties)."""
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    problem = y if isinstance(y, obj.Problem) else obj.Problem(weights, extractor, op, y)
    zs = draw_candidates(weights.arch.d_z, n_init, seed)
    losses = np.array([candidate_loss(problem, z) for z in zs])
    return zs[int(np.argmin(losses))].copy(), losses


def select_best_iterate(trace: list[TraceRecord]) -> int:
    """Index into ``trace`` of the smallest eval metric (earliest on ties)."""
    if not trace:
        raise ValueError("empty trace")
    metrics = [r.eval_metric for r in trace]
    if any(m is None for m in metrics):
        raise ValueError("trace records are missing eval metrics")
    return int(np.argmin(metrics))


# -- method plumbing ------------------------------------------------------------

def initial_params(method: str, weights, z_init: np.ndarray) -> dict[str, np.ndarray]:
    w0 = gen.mapping_forward(weights, z_init)
    w_plus = np.tile(w0, (weights.arch.num_layers, 1))
    return {
        "lbrgm": {"w_plus": w_plus, "z": z_init.copy()},
        "tied": {"w": w0.copy(), "z": z_init.copy()},
        "brgm": {"w_plus": w_plus},
        "unreg": {"w_plus": w_plus},
        "zinv": {"z": z_init.copy()},
    }[method]


def build_terms(method: str, cfg: obj.ObjectiveConfig, problem: obj.Problem, p, prior=None):
    if method == "lbrgm":
        return obj.lbrgm_terms(cfg, problem, p["w_plus"], p["z"])
    if method == "tied":
        return obj.tied_terms(cfg, problem, p["w"], p["z"])
    if method == "brgm":
        return obj.brgm_terms(cfg, prior, problem, p["w_plus"])
    if method == "unreg":
        return obj.unreg_terms(cfg, problem, p["w_plus"])
    return obj.zinv_terms(cfg, problem, p["z"])


def style_stack(method: str, weights, params) -> np.ndarray:
    if "w_plus" in params:
        return params["w_plus"]
    w = params["w"] if method == "tied" else gen.mapping_forward(weights, params["z"])
    return np.tile(w, (weights.arch.num_layers, 1))


def image_of(method: str, weights, params) -> np.ndarray:
    return gen.synthesis_forward(weights, style_stack(method, weights, params))


def _loss_and_grad(method, cfg, problem, params, prior):
    leaves = {k: tc.param(v, k) for k, v in params.items()}
    terms = build_terms(method, cfg, problem, leaves, prior)
    total = obj.total_of(terms)
    got = tc.backward(total)
    grads = {k: got.get(id(leaf), np.zeros_like(leaf.value)) for k, leaf in leaves.items()}
    return obj.breakdown(terms), grads


# -- main loop ------------------------------------------------------------------

def reconstruct(weights, obj_extractor, eval_extractor, op, y, cfg: SolverConfig,
                ground_truth=None, prior: obj.BrgmPrior | None = None) -> ReconstructionResult:
    """Minimise the selected objective with Adam from the multi-init latent.

    With ``cfg.oracle_stopping`` the returned iterate is the traced one closest
    to ``ground_truth`` under the evaluation extractor; otherwise it is the
    final iterate. Raises :class:`DivergenceError` on a non-finite step.
    """
    if cfg.oracle_stopping and ground_truth is None:
        raise ValueError("oracle stopping requires a ground-truth image")
    if eval_extractor is not None:
        perceptual.check_distinct_roles(obj_extractor, eval_extractor)
    if ground_truth is not None:
        ground_truth = tc.as_tensor(ground_truth, "ground truth")
    problem = obj.Problem(weights, obj_extractor, op, y)
    if cfg.method == "brgm" and prior is None:
        prior = obj.estimate_style_prior(weights, cfg.prior_samples, cfg.seed + 1,
                                         cfg.lambda_gauss, cfg.lambda_cos)

    z_init, init_losses = multi_init(weights, obj_extractor, op, problem, cfg.n_init, cfg.seed)
    init_index = int(np.argmin(init_losses))
    params = initial_params(cfg.method, weights, z_init)
    state = adam_init(params, cfg.adam)

    trace: list[TraceRecord] = []
    best_params, best_iter, best_metric = params, 0, np.inf
    update_norm = 0.0

    good_params, good_iter = params, 0   # last iterate whose loss evaluated cleanly

    def result(error=None) -> ReconstructionResult:
        last = good_params if error else params
        chosen = best_params if cfg.oracle_stopping else last
        w_plus = style_stack(cfg.method, weights, chosen)
        return ReconstructionResult(
            image=gen.synthesis_forward(weights, w_plus),
            w_plus=w_plus,
            z=chosen.get("z"),
            best_iter=best_iter if cfg.oracle_stopping else good_iter,
            final_image=image_of(cfg.method, weights, last),
            trace=trace,
            init_losses=init_losses,
            init_index=init_index,
            error=error,
        )

    for t in range(cfg.iters + 1):
        try:
            loss, grads = _loss_and_grad(cfg.method, cfg.objective, problem, params, prior)
            metric = None
            if (t % cfg.trace_every == 0 or t == cfg.iters) and ground_truth is not None \
                    and eval_extractor is not None:
                metric = perceptual.feature_distance(
                    eval_extractor, image_of(cfg.method, weights, params), ground_truth)
        except FloatingPointError as exc:
            raise DivergenceError(f"iteration {t}: {exc}", result(str(exc))) from exc
        good_params, good_iter = params, t
        if t % cfg.trace_every == 0 or t == cfg.iters:
            trace.append(TraceRecord(t, loss, metric, update_norm))
            if cfg.oracle_stopping and metric < best_metric:
                best_params, best_iter, best_metric = params, t, metric
        if t == cfg.iters:
            break
        try:
            state, new = adam_step(state, params, grads, cfg.adam)
        except FloatingPointError as exc:
            raise DivergenceError(f"iteration {t}: {exc}", result(str(exc))) from exc
        with np.errstate(over="ignore"):
            update_norm = float(np.sqrt(sum(np.sum((new[k] - params[k]) ** 2) for k in params)))
        params = new
    return result()


TRACE_HEADER = ("iter", "total", "pix", "vgg", "map", "lat", "eval_metric", "update_norm")


def trace_to_csv(trace: list[TraceRecord]) -> str:
    """Trace as CSV. For the BRGM baseline the ``map`` and ``lat`` columns hold
    its Gaussian and cosine prior terms."""
    lines = [",".join(TRACE_HEADER)]
    for r in trace:
        prior_a = r.loss.map + r.loss.gauss
        prior_b = r.loss.lat + r.loss.cos
        metric = "" if r.eval_metric is None else repr(r.eval_metric)
        lines.append(",".join([str(r.iter), repr(r.loss.total), repr(r.loss.pix), repr(r.loss.vgg),
                               repr(prior_a), repr(prior_b), metric, repr(r.update_norm)]))
    return "\n".join(lines) + "\n"
