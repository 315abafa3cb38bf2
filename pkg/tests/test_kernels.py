import os
import subprocess
import sys

import numpy as np
import pytest

from rigamp import _kernels


def _inputs(rng, n=500):
    r0 = rng.uniform(-8, 8, n)
    r1 = rng.uniform(-8, 8, n)
    s0 = 10 ** rng.uniform(-3, 1.5, n)
    s1 = 10 ** rng.uniform(-3, 1.5, n)
    return r0, s0, r1, s1


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba backend disabled")
def test_posterior_backends_agree(rng):
    args = _inputs(rng)
    a = _kernels._relu_posterior_np(*args)
    b = _kernels.relu_posterior_moments(*args)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-13)


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba backend disabled")
def test_reflector_backends_agree(rng):
    z = rng.standard_normal((40, 40))
    v1, t1, s1 = _kernels._build_reflectors_np(z.copy())
    v2, t2, s2 = _kernels.build_reflectors(z.copy())
    np.testing.assert_allclose(v1, v2, atol=1e-13)
    np.testing.assert_allclose(t1, t2, atol=1e-13)
    np.testing.assert_array_equal(s1, s2)
    x = rng.standard_normal((40, 3))
    for tr in (False, True):
        np.testing.assert_allclose(
            _kernels._apply_reflectors_np(v1, t1, s1, x, tr),
            _kernels.apply_reflectors(v2, t2, s2, x, transpose=tr),
            atol=1e-13,
        )


def test_reflectors_orthogonal(rng):
    for n in (1, 2, 7, 60):
        v, tau, s = _kernels.build_reflectors(rng.standard_normal((n, n)))
        Q = _kernels.apply_reflectors(v, tau, s, np.eye(n))
        assert np.max(np.abs(Q.T @ Q - np.eye(n))) < 1e-12
        Qt = _kernels.apply_reflectors(v, tau, s, np.eye(n), transpose=True)
        np.testing.assert_allclose(Qt, Q.T, atol=1e-13)


def test_extreme_inputs_finite():
    big = np.array([-1e3, -60.0, -41.0, 0.0, 41.0, 1e3])
    for r0 in big:
        for r1 in big:
            out = _kernels.relu_posterior_moments(
                np.array([r0]), np.array([1e-4]), np.array([r1]), np.array([1e-4])
            )
            assert all(np.isfinite(o[0]) for o in out)
            assert out[1][0] >= 0 and out[3][0] >= 0 and out[2][0] >= 0


def test_env_flag_selects_numpy():
    env = dict(os.environ, RIGAMP_DISABLE_NUMBA="1")
    code = "from rigamp import _kernels; print(_kernels.backend())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_benchmark_script_runs():
    script = os.path.join(os.path.dirname(__file__), "..", "benchmarks", "bench_kernels.py")
    args = ["--n", "2000", "--dim", "40", "--cols", "3", "--repeats", "1"]
    out = subprocess.run([sys.executable, script, *args], capture_output=True, text=True, check=True)
    names = [line.split()[0] for line in out.stdout.splitlines()[2:]]
    assert names == ["relu_posterior", "build_reflectors", "apply_reflectors"]
