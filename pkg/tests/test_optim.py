import numpy as np

from invpde.optim import AdamState, LbfgsConfig, adam_step, lbfgs_minimize


def test_lbfgs_quadratic():
    c = np.array([1.0, -2.0, 3.0, 0.5])
    res = lbfgs_minimize(lambda x: (float((x - c) @ (x - c)), 2 * (x - c)), np.zeros(4),
                         LbfgsConfig(max_iter=25, tol_g=1e-12, tol_f=0.0))
    assert np.abs(res.x - c).max() < 1e-10
    assert res.n_iter <= 25 and res.converged


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_lbfgs_rosenbrock():
    res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_iter=500, tol_g=1e-12, tol_f=0.0))
    assert np.abs(res.x - 1).max() < 1e-6


def test_lbfgs_mask_and_callback():
    c = np.array([1.0, 2.0, 3.0])
    f = lambda x: (float((x - c) @ (x - c)), 2 * (x - c))
    mask = np.array([True, False, True])
    res = lbfgs_minimize(f, np.zeros(3), LbfgsConfig(tol_g=1e-12), mask=mask)
    assert res.x[1] == 0.0 and abs(res.x[0] - 1) < 1e-9 and abs(res.x[2] - 3) < 1e-9
    seen = []
    res = lbfgs_minimize(f, np.zeros(3), callback=lambda it, x, fx: seen.append(it) or it == 2)
    assert res.status == "callback" and seen == [1, 2]


def test_lbfgs_failed_line_search_keeps_point():
    # gradient points the wrong way, so no step decreases f
    f = lambda x: (float(x @ x), -2 * x)
    x0 = np.array([1.0, 1.0])
    res = lbfgs_minimize(f, x0, LbfgsConfig(max_halvings=5))
    assert res.status == "linesearch"
    np.testing.assert_array_equal(res.x, x0)


def test_adam_on_square():
    st = AdamState.create(np.array([1.0]), lr=1e-3)
    for _ in range(10_000):
        st = adam_step(st, 2 * st.x)
    assert abs(st.x[0]) < 1e-2


def test_adam_mask_freezes_entries():
    st = AdamState.create(np.array([1.0, 1.0]), lr=0.1)
    mask = np.array([True, False])
    for _ in range(10):
        st = adam_step(st, 2 * st.x, mask)
    assert st.x[1] == 1.0 and st.x[0] < 1.0 and st.m[1] == 0.0
