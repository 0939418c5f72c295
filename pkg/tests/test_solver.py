import numpy as np
import pytest

from lbrgm import generator as gen
from lbrgm import measurement as meas
from lbrgm import objective as obj
from lbrgm import perceptual
from lbrgm import solver
from lbrgm.optim import AdamConfig

from _support import SMALL, extractors, small_model


@pytest.fixture(scope="module")
def setup():
    w = small_model(0)
    op = meas.identity()
    obj_ex, eval_ex = extractors(SMALL.out_shape, op)
    x, _ = gen.sample_image(w, 77)
    return w, op, obj_ex, eval_ex, x


def run(setup, **kw):
    w, op, obj_ex, eval_ex, x = setup
    cfg = solver.SolverConfig(**{"iters": 30, "n_init": 4, "trace_every": 5, **kw})
    return solver.reconstruct(w, obj_ex, eval_ex, op, x, cfg, ground_truth=x)


def test_multi_init_picks_argmin(setup):
    w, op, obj_ex, _, x = setup
    z, losses = solver.multi_init(w, obj_ex, op, x, 12, seed=3)
    zs = solver.draw_candidates(SMALL.d_z, 12, 3)
    feats = perceptual.features(obj_ex, x)
    recomputed = [float(np.sum((feats - perceptual.features(obj_ex, gen.generate(w, c))) ** 2)) for c in zs]
    np.testing.assert_allclose(losses, recomputed, rtol=1e-12)
    np.testing.assert_array_equal(z, zs[int(np.argmin(recomputed))])


def test_select_best_iterate_prefers_earliest():
    bd = obj.LossBreakdown(0.0)
    trace = [solver.TraceRecord(i, bd, m, 0.0) for i, m in enumerate([3.0, 1.0, 2.0, 1.0])]
    assert solver.select_best_iterate(trace) == 1
    with pytest.raises(ValueError):
        solver.select_best_iterate([solver.TraceRecord(0, bd, None, 0.0)])


def test_trace_schedule_and_final_record(setup):
    res = run(setup, iters=23, trace_every=10)
    assert [r.iter for r in res.trace] == [0, 10, 20, 23]
    assert res.trace[0].update_norm == 0.0
    assert all(r.eval_metric is not None for r in res.trace)
    np.testing.assert_array_equal(res.image, res.final_image)
    assert res.best_iter == 23


@pytest.mark.parametrize("method", solver.METHODS)
def test_every_method_reduces_its_loss(setup, method):
    res = run(setup, method=method, iters=40, prior_samples=500)
    assert res.trace[-1].total < res.trace[0].total
    assert res.w_plus.shape == (SMALL.num_layers, SMALL.d_w)
    if method == "brgm":
        assert res.trace[0].loss.gauss > 0 and res.trace[0].loss.map == 0


def test_oracle_returns_min_trace_metric(setup):
    res = run(setup, oracle_stopping=True)
    _, _, _, eval_ex, x = setup
    best = min(r.eval_metric for r in res.trace)
    assert perceptual.feature_distance(eval_ex, res.image, x) == best
    assert res.best_iter == res.trace[solver.select_best_iterate(res.trace)].iter


def test_deterministic(setup):
    a, b = run(setup), run(setup)
    np.testing.assert_array_equal(a.image, b.image)
    assert [r.total for r in a.trace] == [r.total for r in b.trace]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_partial_trace(setup):
    with pytest.raises(solver.DivergenceError) as err:
        run(setup, adam=AdamConfig(eta=1e200), iters=20, trace_every=1)
    res = err.value.result
    assert res.trace and res.error
    assert np.all(np.isfinite(res.final_image))


def test_config_validation(setup):
    with pytest.raises(ValueError):
        solver.SolverConfig(method="nope")
    with pytest.raises(ValueError):
        solver.SolverConfig(iters=0)
    w, op, obj_ex, eval_ex, x = setup
    with pytest.raises(ValueError, match="ground-truth"):
        solver.reconstruct(w, obj_ex, eval_ex, op, x, solver.SolverConfig(oracle_stopping=True))
    with pytest.raises(ValueError):
        solver.reconstruct(w, obj_ex, perceptual.build_extractor(1, "evaluation", SMALL.out_shape), op, x,
                           solver.SolverConfig(iters=1, n_init=1))


def test_trace_csv(setup):
    res = run(setup, iters=10)
    lines = solver.trace_to_csv(res.trace).splitlines()
    assert lines[0] == "iter,total,pix,vgg,map,lat,eval_metric,update_norm"
    assert len(lines) == 1 + len(res.trace)
    cells = lines[1].split(",")
    assert int(cells[0]) == 0 and float(cells[1]) == res.trace[0].total


def test_brgm_trace_csv_maps_prior_columns(setup):
    res = run(setup, method="brgm", iters=5, prior_samples=200)
    row = solver.trace_to_csv(res.trace).splitlines()[1].split(",")
    assert float(row[4]) == res.trace[0].loss.gauss
    assert float(row[5]) == res.trace[0].loss.cos
