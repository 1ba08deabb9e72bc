import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from approxcal import _kernels_py, kernels
from approxcal.accel import DatapathConfig, make_backend
from approxcal.datagen import synthesize
from approxcal.stefcal import ReferenceBackend

compiled = kernels.compiled_module()
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def _float_inputs(rng, P):
    M = rng.standard_normal((2, P, P))
    V = rng.standard_normal((2, P, P))
    g = rng.standard_normal((2, P))
    return M[0], M[1], V[0], V[1], g[0], g[1]


def _fixed_inputs(rng, P, dp):
    def raw(shape, fmt):
        return rng.integers(fmt.min_raw, fmt.max_raw + 1, shape, dtype=np.int64)
    h, v, gf = dp.fmt("h"), dp.fmt("e_mac"), dp.gain_fmt
    return (raw((P, P), h), raw((P, P), h), raw((P, P), v), raw((P, P), v),
            raw(P, gf), raw(P, gf), dp.kernel_params())


def test_dispatch_reports_implementation():
    assert kernels.IMPLEMENTATION in ("compiled", "numpy")
    if compiled is not None and not os.environ.get("APPROXCAL_PURE_PYTHON"):
        assert kernels.IMPLEMENTATION == "compiled"


def test_environment_forces_numpy_fallback():
    code = "from approxcal import kernels; print(kernels.IMPLEMENTATION)"
    env = {**os.environ, "APPROXCAL_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"


@needs_compiled
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_reference_kernel_bit_identical(P, seed):
    args = _float_inputs(np.random.default_rng(seed), P)
    for a, b in zip(compiled.ref_iteration(*args), _kernels_py.ref_iteration(*args)):
        assert np.asarray(a).tobytes() == np.asarray(b).tobytes()


@needs_compiled
@pytest.mark.parametrize("dp", [DatapathConfig.accurate(), DatapathConfig.approximate(),
                                DatapathConfig.approximate((3, 3, 5, 7, 2, 9))])
@given(P=st.integers(1, 40), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_fixed_kernel_bit_identical(dp, P, seed):
    # full-range random raws exercise rounding ties, saturation and truncation
    args = _fixed_inputs(np.random.default_rng(seed), P, dp)
    for a, b in zip(compiled.fx_iteration(*args), _kernels_py.fx_iteration(*args)):
        np.testing.assert_array_equal(a, b)


def test_saturation_counts_agree_on_overdriven_input():
    dp = DatapathConfig.approximate()
    rng = np.random.default_rng(0)
    args = _fixed_inputs(rng, 16, dp)
    sat = _kernels_py.fx_iteration(*args)[3]
    assert sat.sum() > 0
    if compiled is not None:
        np.testing.assert_array_equal(compiled.fx_iteration(*args)[3], sat)


@pytest.mark.parametrize("backend", [ReferenceBackend(), make_backend(DatapathConfig.accurate()),
                                     make_backend(DatapathConfig.approximate())],
                         ids=["reference", "accurate", "approximate"])
@pytest.mark.parametrize("P", [1, 7, 124])
def test_staged_kernels_equal_fused(backend, P):
    pr = synthesize(P, seed=P)
    sess = backend.bind(pr)
    rng = np.random.default_rng(1)
    g = 1 + 0.2 * (rng.standard_normal(P) + 1j * rng.standard_normal(P))
    num_f, den_f = sess.fused(g, 1)
    Z = sess.z_kernel(g, 1)
    num_s, den_s = sess.mac_kernel(Z, 1), sess.sac_kernel(Z, 1)
    assert num_f.tobytes() == num_s.tobytes()
    assert den_f.tobytes() == den_s.tobytes()
