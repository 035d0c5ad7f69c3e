import os
import subprocess
import sys

import numpy as np
import pytest

from marktail import rng
from marktail._accel import resolve_backend


def test_uniforms_match_scalar_path():
    keys = rng.entity_keys(123, 0, np.arange(50))
    for i in (0, 7, 49):
        assert keys[i] == rng.entity_key(123, 0, i)
        assert rng.uniforms(keys, 5)[i] == rng.uniform(keys[i], 5)


def test_uniforms_look_uniform():
    u = rng.uniforms(rng.entity_keys(1, 0, np.arange(200_000)), 0)
    assert np.all((u > 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 0.003
    counts, _ = np.histogram(u, bins=20, range=(0, 1))
    chi2 = ((counts - 10_000) ** 2 / 10_000).sum()
    assert chi2 < 50  # 19 dof, p about 1e-4


def test_streams_differ():
    a = rng.entity_keys(1, 0, np.arange(10))
    b = rng.entity_keys(1, 1, np.arange(10))
    assert not np.any(a == b)


def test_resolve_backend():
    assert resolve_backend("numpy") == "numpy"
    with pytest.raises(ValueError):
        resolve_backend("fortran")


def test_disable_flag_selects_numpy():
    env = dict(os.environ, MARKTAIL_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c",
                          "from marktail._accel import default_backend; print(default_backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
