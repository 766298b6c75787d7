import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edg import kernels


def _backend_in_subprocess(flag):
    env = {**os.environ, "EDG_PURE_PYTHON": flag}
    out = subprocess.run([sys.executable, "-c", "import edg; print(edg.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_env_forces_python_fallback():
    assert _backend_in_subprocess("1") == "python"


@pytest.mark.skipif("compiled" not in kernels.available_backends(), reason="compiled kernels not built")
def test_compiled_is_default_when_built():
    assert _backend_in_subprocess("") == "compiled"


def test_unknown_backend_request():
    if "compiled" in kernels.available_backends():
        pytest.skip("compiled kernels present")
    with pytest.raises(ValueError):
        kernels.softmax(np.zeros((2, 2)), backend="compiled")


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    for backend in kernels.available_backends():
        y = kernels.softmax(x, backend=backend)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.exp(kernels.log_softmax(x, backend=backend)), y, atol=1e-12)


def test_empty_and_higher_rank():
    assert kernels.softmax(np.zeros((0, 3))).shape == (0, 3)
    x = np.random.default_rng(0).normal(size=(2, 3, 4))
    np.testing.assert_allclose(kernels.softmax(x)[1, 2], kernels.softmax(x[1, 2][None])[0], atol=1e-15)
