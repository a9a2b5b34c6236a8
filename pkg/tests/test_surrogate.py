import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invpde.surrogate import (CoefficientState, MlpSpec, PhysicsLoss, Surrogate, forward_jet, init_params,
                              jet_key, loss_and_grad)
from invpde.terms import LibraryMode, build_library, pinned_terms_for, scalar_vars, velocity_vars


def fd_jet(spec, theta, x, h=1e-4):
    """Central differences of the raw network output (first and second order)."""
    f = lambda z: forward_jet(theta, spec, z[None, :])
    d = spec.input_dim
    base = f(x)
    out = {}
    for k in range(spec.output_dim):
        name = f"f{k}"
        for a in range(d):
            e = np.zeros(d)
            e[a] = h
            out[jet_key(name, (a,))] = (f(x + e)[name] - f(x - e)[name]) / (2 * h)
            for b in range(a, d):
                e2 = np.zeros(d)
                e2[b] = h
                if a == b:
                    v = (f(x + e)[name] - 2 * base[name] + f(x - e)[name]) / h ** 2
                else:
                    v = (f(x + e + e2)[name] - f(x + e - e2)[name] - f(x - e + e2)[name]
                         + f(x - e - e2)[name]) / (4 * h * h)
                out[jet_key(name, (a, b))] = v
    return base, out


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 3), st.integers(1, 2), st.integers(1, 3), st.integers(3, 12), st.integers(0, 10 ** 6))
def test_forward_jet_matches_finite_differences(d, m, layers, width, seed):
    spec = MlpSpec(d, m, layers, width)
    theta = init_params(spec, seed)
    x = np.random.default_rng(seed).uniform(-1, 1, d)
    jets = forward_jet(theta, spec, x[None, :])
    _, fd = fd_jet(spec, theta, x)
    for k, v in fd.items():
        # first derivatives are FD-accurate to ~1e-9; second ones to ~1e-7 with h = 1e-4
        assert abs(jets[k][0] - v[0]) <= 1e-6 * max(1.0, abs(v[0])), k


def test_jets_are_in_physical_units():
    rng = np.random.default_rng(1)
    coords = np.column_stack([rng.uniform(0, 2, 50), rng.uniform(-3, 3, 50), rng.uniform(-3, 3, 50)])
    values = rng.standard_normal((50, 1)) * 5 + 2
    model = Surrogate.create(MlpSpec(3, 1, 2, 8), ["u"], 0, coords, values)
    x = coords[:1]
    h = 1e-5
    j = model.jets(x, ["u", "u_t", "u_x", "u_xy"])
    e = np.array([[0, h, 0]])
    assert abs((model.jets(x + e, ["u"])["u"] - model.jets(x - e, ["u"])["u"])[0] / (2 * h) - j["u_x"][0]) < 1e-6
    ex, ey = np.array([[0, h, 0]]), np.array([[0, 0, h]])
    u = lambda z: model.jets(z, ["u"])["u"][0]
    mixed = (u(x + ex + ey) - u(x + ex - ey) - u(x - ex + ey) + u(x - ex - ey)) / (4 * h * h)
    assert abs(mixed - j["u_xy"][0]) < 1e-4 * max(1, abs(mixed))


def _setup(kind, seed):
    rng = np.random.default_rng(seed)
    if kind == "galilean":
        vars_, lib = velocity_vars(), build_library(LibraryMode.GALILEAN, velocity_vars(), 2)
    else:
        vars_ = scalar_vars(["phi"])
        lib = build_library(LibraryMode.LORENTZ, vars_, 2)
    n = 40
    coords = np.column_stack([rng.uniform(0, 1, n), rng.uniform(-3, 3, n), rng.uniform(-3, 3, n)])
    vals = rng.standard_normal((n, len(vars_)))
    model = Surrogate.create(MlpSpec(3, len(vars_), 2, 10), [v.name for v in vars_], seed, coords, vals)
    pins = pinned_terms_for(lib)
    coeffs = CoefficientState.zeros(lib, pins)
    x = rng.standard_normal(coeffs.size) * 0.5
    coeffs.set_flat(x)
    values = {v.name: vals[:, i] for i, v in enumerate(vars_)}
    return model, lib, pins, coeffs, coords, values


@pytest.mark.parametrize("seed", range(10))
def test_loss_gradient_matches_finite_differences(seed):
    kind = "galilean" if seed % 2 == 0 else "lorentz"
    model, lib, pins, coeffs, coords, values = _setup(kind, seed)
    rng = np.random.default_rng(100 + seed)
    # random subset of masked-out coefficients to exercise the mask path
    for e in coeffs.equations:
        coeffs.mask[e][rng.random(coeffs.mask[e].size) < 0.3] = False
    coeffs.set_flat(coeffs.flat())
    loss = PhysicsLoss(model, lib, pins, alpha=0.7, beta=1e-3)
    f = loss.objective(coeffs, coords, values)
    x0 = np.concatenate([model.params, coeffs.flat()])
    _, g = f(x0)
    mask = np.concatenate([np.ones(model.spec.n_params, bool), coeffs.flat_mask()])
    idx = rng.choice(np.flatnonzero(mask), 25, replace=False)
    h = 1e-6
    for i in idx:
        e = np.zeros_like(x0)
        e[i] = h
        fd = (f(x0 + e)[0] - f(x0 - e)[0]) / (2 * h)
        assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(fd)), i


def test_loss_and_grad_shapes_and_finiteness_check():
    model, lib, pins, coeffs, coords, values = _setup("galilean", 3)
    parts, g = loss_and_grad(model, coeffs, coords, values, lib, pins)
    assert g.shape == (model.spec.n_params + coeffs.size,)
    assert parts.total == pytest.approx(parts.data + parts.physics + 0.0)
    bad = {k: v.copy() for k, v in values.items()}
    bad["u"][0] = np.nan
    with pytest.raises(FloatingPointError):
        loss_and_grad(model, coeffs, coords, bad, lib, pins)


def test_init_variance():
    spec = MlpSpec(3, 2, 4, 64)
    theta = init_params(spec, 0)
    from invpde.surrogate import unpack
    for W, b in unpack(theta, spec):
        fo, fi = W.shape
        if min(fo, fi) >= 64:
            assert abs(W.var() / (2.0 / (fi + fo)) - 1) < 0.1
        assert not b.any()
    assert not np.array_equal(theta, init_params(spec, 1))
    np.testing.assert_array_equal(theta, init_params(spec, 0))


def test_checkpoint_round_trip(tmp_path):
    model, *_ , coords, values = _setup("galilean", 5)
    model.step = 17
    model.save(tmp_path / "m")
    back = Surrogate.load(tmp_path / "m")
    np.testing.assert_array_equal(back.params, model.params)
    assert back.step == 17 and back.out_names == model.out_names
    np.testing.assert_array_equal(back.jets(coords)["u_xx"], model.jets(coords)["u_xx"])
    (tmp_path / "m" / "params.f64").write_bytes(b"\0" * 16)
    with pytest.raises(ValueError):
        Surrogate.load(tmp_path / "m")


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec(3, 1, 0, 10)
    with pytest.raises(ValueError):
        MlpSpec(3, 1, 2, 10, activation="relu")
    m = Surrogate.create(MlpSpec(2, 1, 1, 4), ["u"], 0)
    with pytest.raises(ValueError):
        m.jets(np.zeros((1, 2)), ["u_y"])


def test_single_neuron_tanh():
    # one hidden tanh unit with unit weight and a unit readout is tanh itself
    spec = MlpSpec(1, 1, 1, 1)
    theta = np.array([1.0, 0.0, 1.0, 0.0])
    j = forward_jet(theta, spec, np.array([[0.0]]))
    assert j["f0"][0] == 0.0 and j["f0_t"][0] == 1.0 and j["f0_tt"][0] == 0.0
    x = np.array([[0.3]])
    j = forward_jet(theta, spec, x)
    assert j["f0_tt"][0] == pytest.approx(-2 * np.tanh(0.3) * (1 - np.tanh(0.3) ** 2), rel=1e-14)


def test_mixed_derivative_single_slot():
    spec = MlpSpec(3, 1, 2, 6)
    j = forward_jet(init_params(spec, 2), spec, np.random.default_rng(0).uniform(-1, 1, (5, 3)))
    assert "f0_xy" in j and "f0_yx" not in j


def test_zero_coefficients_reduce_to_data_plus_target():
    model, lib, pins, coeffs, coords, values = _setup("galilean", 7)
    coeffs.set_flat(np.zeros(coeffs.size))
    parts, _ = loss_and_grad(model, coeffs, coords, values, lib, pins, alpha=1.0, beta=0.0)
    j = model.jets(coords, ["u", "v", "u_t", "v_t"])
    data = np.mean((j["u"] - values["u"]) ** 2) + np.mean((j["v"] - values["v"]) ** 2)
    phys = np.mean(j["u_t"] ** 2) + np.mean(j["v_t"] ** 2)
    assert parts.total == pytest.approx(data + phys, rel=1e-12)
