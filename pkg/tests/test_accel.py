import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from co2coreset import _accel

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_numba_and_numpy_paths_agree(seed):
    rng = np.random.default_rng(seed)
    n, m, d = (int(k) for k in rng.integers(1, 40, size=3))
    X, Y = rng.normal(size=(n, d)), rng.normal(size=(m, d))
    C1, C2 = _accel.sqdist_numba(X, Y), _accel.sqdist_numpy(X, Y)
    np.testing.assert_allclose(C1, C2, rtol=1e-12, atol=1e-12)

    eps = float(10 ** rng.uniform(-2, 2))
    f = rng.normal(size=m)
    w = rng.random(m)
    w[rng.random(m) < 0.2] = 0.0
    w[0] = 1.0
    with np.errstate(divide="ignore"):
        logw = np.log(w / w.sum())
    CT = np.ascontiguousarray(C1.T)
    got = _accel.softmin_numba(CT, f, logw, eps)
    np.testing.assert_allclose(got, _accel.softmin_numpy(CT, f, logw, eps), rtol=1e-12, atol=1e-12)
    with np.errstate(divide="ignore"):
        direct = -eps * np.log((w / w.sum() * np.exp((f - C1) / eps)).sum(axis=1))
    ok = np.isfinite(direct)
    np.testing.assert_allclose(got[ok], direct[ok], rtol=1e-10, atol=1e-10)

    S = _accel.sqdist_numpy(X, X)
    phi = rng.normal(size=n)
    a = np.full(n, 1.0 / n)
    np.testing.assert_allclose(_accel.self_plan_numba(S, phi, a, eps),
                               _accel.self_plan_numpy(S, phi, a, eps), rtol=1e-12, atol=0)


@needs_numba
def test_vectorized_exp_matches_libm():
    rng = np.random.default_rng(0)
    x = np.concatenate([-rng.uniform(0, 50, 50_000), -rng.uniform(0, 700, 50_000),
                        [0.0, -1e-300, -708.0, -708.5, -1e4, -np.inf]])
    out, bits = np.empty_like(x), np.empty(x.size, np.int64)
    _accel._exp_nonpos(x, out, bits)
    want = np.exp(x)
    big = want > 1e-300
    assert np.max(np.abs(out[big] / want[big] - 1)) < 1e-15
    assert np.all(out[x < -708.0] == 0.0)


def test_env_flag_selects_numpy_path():
    code = "from co2coreset import _accel; print(_accel.USE_NUMBA)"
    env = dict(os.environ, CO2_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert out.stdout.strip() == "False"


def test_pipeline_matches_across_paths():
    code = (
        "import numpy as np\n"
        "from co2coreset import Co2Config, PointCloud, compress, uniform\n"
        "X = np.random.default_rng(3).normal(size=(80, 2))\n"
        "cs = compress(uniform(PointCloud(X)), Co2Config(epsilon=1.0, m=8, seed=1))\n"
        "print(' '.join(map(str, cs.indices)))\n"
        "print(' '.join(repr(float(w)) for w in cs.weights))\n"
    )
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, CO2_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
        assert res.returncode == 0, res.stderr
        outs.append(res.stdout.splitlines())
    assert outs[0][0] == outs[1][0]
    np.testing.assert_allclose(np.array(outs[0][1].split(), float),
                               np.array(outs[1][1].split(), float), rtol=1e-6)
