import json
import os
import subprocess
import sys

import numpy as np
import pytest

from invpde import _kernels


@pytest.mark.skipif(not _kernels.USE_NUMBA, reason="numba backend disabled")
def test_numba_matches_numpy():
    rng = np.random.default_rng(0)
    pairs = np.array([[0, 0], [0, 1], [2, 2]], dtype=np.int64)
    Z = rng.standard_normal((50, 1 + 3 + 3, 7))
    G = rng.standard_normal(Z.shape)
    H = _kernels.tanh_jet_forward_np(Z, 3, pairs)
    np.testing.assert_allclose(_kernels.tanh_jet_forward_nb(Z, 3, pairs), H, rtol=0, atol=1e-14)
    np.testing.assert_allclose(_kernels.tanh_jet_backward_nb(G, Z, H, 3, pairs),
                               _kernels.tanh_jet_backward_np(G, Z, H, 3, pairs), rtol=0, atol=1e-13)


def test_env_flag_selects_numpy_backend():
    code = ("import json, numpy as np\n"
            "from invpde import _kernels\n"
            "from invpde.surrogate import MlpSpec, forward_jet, init_params\n"
            "s = MlpSpec(3, 2, 2, 6)\n"
            "j = forward_jet(init_params(s, 1), s, np.linspace(-1, 1, 9).reshape(3, 3))\n"
            "print(json.dumps({'backend': _kernels.backend_name(), 'xy': j['f1_xy'].tolist()}))\n")
    out = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, INVPDE_BACKEND=backend)
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[backend] = json.loads(r.stdout)
    assert out["numpy"]["backend"] == "numpy"
    np.testing.assert_allclose(out["numpy"]["xy"], out["numba"]["xy"], rtol=1e-13, atol=1e-15)
