import os
import subprocess
import sys

import numpy as np
import pytest

from vmlimit import _backend
from vmlimit.maxwell import MaxwellSystem, ParticleEnsemble, cfl_dt, run_maxwell, uniform_motion_history

needs_core = pytest.mark.skipif(not _backend.COMPILED, reason="compiled core not built")


@pytest.fixture(scope="module")
def moving_history(small_kernel):
    rng = np.random.default_rng(1)
    c = small_kernel.light_speed
    x = rng.uniform(-0.6, 0.6, (12, 3))
    u = rng.uniform(-0.4, 0.4, (12, 3)) * c
    return uniform_motion_history(x, u, c, 0.02, 61)


@needs_core
def test_backends_agree(small_kernel, moving_history):
    t = 1.2
    hv = moving_history.view()
    obs_x = hv.hx[-1]
    obs_u = hv.hu[-1]
    fc = _backend.pair_force_sums(obs_x, obs_u, hv, t, small_kernel, backend="cython")
    fp = _backend.pair_force_sums(obs_x, obs_u, hv, t, small_kernel, backend="python")
    scale = np.abs(fc[0]).max()
    assert np.abs(fc[0]).max() > 0 and np.abs(fc[1]).max() > 0
    assert np.allclose(fc[0], fp[0], rtol=0, atol=1e-12 * scale)
    assert np.allclose(fc[1], fp[1], rtol=0, atol=1e-12 * scale)
    assert np.array_equal(fc[2], fp[2])


@needs_core
def test_retarded_root_backends_agree(small_kernel, moving_history):
    hv = moving_history.view()
    xi = np.array([0.3, 0.1, -0.2])
    for j in range(4):
        sc, fc = _backend.retarded_root(xi, hv, 1.0, j, small_kernel.light_speed, backend="cython")
        sp, fp = _backend.retarded_root(xi, hv, 1.0, j, small_kernel.light_speed, backend="python")
        assert not fc and not fp and abs(sc - sp) < 1e-13


@pytest.mark.parametrize("threads", [1, 4, 8])
def test_threads_bit_identical(small_kernel, moving_history, threads):
    hv = moving_history.view()
    ref = _backend.pair_force_sums(hv.hx[-1], hv.hu[-1], hv, 1.2, small_kernel, threads=1)
    out = _backend.pair_force_sums(hv.hx[-1], hv.hu[-1], hv, 1.2, small_kernel, threads=threads)
    for a, b in zip(ref, out):
        assert np.array_equal(a, b)


def test_evolution_thread_invariant(small_kernel):
    rng = np.random.default_rng(5)
    ens = ParticleEnsemble(rng.uniform(-0.5, 0.5, (6, 3)), rng.uniform(-0.5, 0.5, (6, 3)))
    dt = cfl_dt(small_kernel, 0.2)
    a, _ = run_maxwell(ens, 0.2, dt, MaxwellSystem(small_kernel, threads=1))
    b, _ = run_maxwell(ens, 0.2, dt, MaxwellSystem(small_kernel, threads=4))
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.velocities, b.velocities)


def test_fallback_env_var():
    code = "from vmlimit import _backend; print(_backend.NAME)"
    env = dict(os.environ, VMLIMIT_BACKEND="python")
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert r.stdout.strip() == "python"


def test_unknown_backend_rejected(small_kernel, moving_history):
    hv = moving_history.view()
    with pytest.raises(ValueError):
        _backend.pair_force_sums(hv.hx[-1], hv.hu[-1], hv, 1.0, small_kernel, backend="fortran")
