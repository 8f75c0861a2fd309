import os
import subprocess
import sys

import numpy as np
import pytest

from regretlab import kernels
from regretlab.model import ModelParams, history_stats, reparam

BACKENDS = kernels.backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled extension not built")


def _reparam_arrays(seed, d=3):
    rp = reparam(ModelParams.init(d, np.random.default_rng(seed), 0.3))
    return rp.A, rp.b, rp.C, rp.dvec


def test_backend_flag_consistent():
    assert kernels.BACKEND in BACKENDS


@needs_compiled
@pytest.mark.parametrize("op,radius", [(kernels.SOFTMAX, 1.0), (kernels.BALL, 1.0), (kernels.BALL, 100.0)])
def test_fol_rollout_parity(op, radius):
    rng = np.random.default_rng(0)
    A, b, C, dvec = _reparam_arrays(1)
    rewards = rng.uniform(0, 10, size=(7, 25, 3))
    noise = rng.normal(size=(7, 25, 3))
    ref = kernels._fallback.fol_rollout(A, b, C, dvec, rewards, noise, op, radius)
    out = np.asarray(BACKENDS["compiled"].fol_rollout(A, b, C, dvec, rewards, noise, op, radius))
    assert np.allclose(out, ref, rtol=1e-10, atol=1e-12)


@needs_compiled
def test_mab_rollout_parity():
    rng = np.random.default_rng(2)
    A, b, C, dvec = _reparam_arrays(3)
    rewards = rng.uniform(0, 10, size=(9, 30, 3))
    noise = 0.1 * rng.normal(size=(9, 30, 3))
    uniforms = rng.uniform(size=(9, 30))
    p_ref, a_ref = kernels._fallback.mab_rollout(A, b, C, dvec, rewards, noise, uniforms)
    p, a = BACKENDS["compiled"].mab_rollout(A, b, C, dvec, rewards, noise, uniforms)
    assert np.array_equal(np.asarray(a), a_ref)
    assert np.allclose(np.asarray(p), p_ref, rtol=1e-10, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("op", [kernels.SOFTMAX, kernels.BALL, kernels.IDENTITY])
def test_loss_and_grad_parity(op):
    rng = np.random.default_rng(4)
    params = ModelParams.init(3, rng, 0.5)
    hist = rng.uniform(0, 10, size=(20, 12, 3))
    n, S1, M2 = history_stats(hist)
    targets = rng.dirichlet(np.ones(3), size=n.shape[0])
    args = [np.ascontiguousarray(a) for a in params.arrays()] + [np.ascontiguousarray(n, dtype=float), S1, M2,
                                                                 targets, op, 2.0]
    ref = kernels._fallback.loss_and_grad(*args)
    out = BACKENDS["compiled"].loss_and_grad(*args)
    assert out[0] == pytest.approx(ref[0], rel=1e-10)
    for x, y in zip(out[1:], ref[1:]):
        assert np.allclose(np.asarray(x), y, rtol=1e-9, atol=1e-10)


def test_env_var_forces_fallback():
    env = dict(os.environ, REGRETLAB_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "from regretlab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_benchmark_runs(capsys):
    import importlib.util
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    bench.main(["--repeat", "1"])
    out = capsys.readouterr().out
    assert "fol_rollout" in out and "loss_and_grad" in out
