import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcheck as G
import oracles as O
from noir import diffcore as dc
from noir.diffcore import ShapeError, Tensor
from noir.inr import (ModulatedSiren, SignalSample, SirenConfig, evaluate, fit_latent, grid_coords,
                      hypernet_forward, inr_forward, latent_loss, reconstruction_loss, render_grid)

SMALL = SirenConfig(n_hidden_layers=3, hidden_size=16, latent_dim=6, hyper_hidden_size=8)


def trunk_pairs(model):
    return [(w.astype(np.float64), b.astype(np.float64)) for w, b in zip(model.shared.weights, model.shared.biases)]


def hyper_pairs(model):
    return [(w.astype(np.float64), b.astype(np.float64)) for w, b in zip(model.hyper.weights, model.hyper.biases)]


def test_zero_latent_gives_zero_modulations_at_init():
    model = ModulatedSiren.create(SMALL, seed=1)
    gamma = hypernet_forward(np.zeros(6), model)
    assert gamma.shape == (SMALL.n_hidden_layers * SMALL.hidden_size,)
    assert np.all(gamma == 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_modulation_length_for_any_latent(seed):
    model = G.random_inr(seed % 50)
    z = np.random.default_rng(seed).normal(size=model.cfg.latent_dim)
    assert hypernet_forward(z, model).shape == (model.cfg.n_shifts,)


@pytest.mark.parametrize("final", ["sigmoid", "softmax", "none"])
def test_inr_loss_gradients(final):
    errs = [G.check_inr_loss(s, final) for s in range(20)]
    assert max(max(e.values()) for e in errs) < G.TOL


def test_forward_matches_reference():
    model = G.random_inr(4)
    rng = np.random.default_rng(0)
    coords = rng.uniform(-1, 1, (30, 2)).astype(np.float32)
    z = rng.normal(size=model.cfg.latent_dim).astype(np.float32)
    ref = O.siren_forward(coords, trunk_pairs(model), hyper_pairs(model), z, 30.0, "sigmoid", 8)
    np.testing.assert_allclose(evaluate(coords, model, z), ref, atol=1e-5)


def test_sigmoid_outputs_in_unit_interval():
    model = G.random_inr(2)
    out = inr_forward(np.random.default_rng(0).uniform(-1, 1, (100, 2)), model,
                      np.random.default_rng(1).normal(0, 3, model.cfg.n_shifts))
    assert np.all((out > 0) & (out < 1))


def test_zero_modulation_is_plain_siren():
    model = ModulatedSiren.create(SMALL, seed=3)
    coords = grid_coords((5, 7))
    x = coords.astype(np.float64)
    for w, b in trunk_pairs(model)[:-1]:
        x = np.sin(30.0 * (x @ w.T + b))
    w, b = trunk_pairs(model)[-1]
    plain = O.sigmoid(x @ w.T + b)
    np.testing.assert_allclose(inr_forward(coords, model, np.zeros(SMALL.n_shifts)), plain, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 2))
def test_shift_equals_bias_offset(seed, layer):
    rng = np.random.default_rng(seed)
    model = ModulatedSiren.create(SMALL, seed=seed % 7)
    coords = rng.uniform(-1, 1, (10, 2)).astype(np.float32)
    delta = rng.normal(0, 0.1, SMALL.hidden_size).astype(np.float32)
    gamma = np.zeros(SMALL.n_shifts, dtype=np.float32)
    gamma[layer * 16:(layer + 1) * 16] = delta
    shifted = inr_forward(coords, model, gamma)
    other = model.copy()
    other.shared.biases[layer] += delta
    np.testing.assert_allclose(shifted, inr_forward(coords, other, np.zeros_like(gamma)), atol=1e-5)


def test_shape_errors():
    model = ModulatedSiren.create(SMALL)
    with pytest.raises(ShapeError):
        inr_forward(np.zeros((4, 3)), model, np.zeros(SMALL.n_shifts))
    with pytest.raises(ShapeError):
        inr_forward(np.zeros((4, 2)), model, np.zeros(5))
    with pytest.raises(ShapeError):
        hypernet_forward(np.zeros(7), model)


def test_render_single_cell_is_domain_centre():
    model = G.random_inr(5)
    z = np.random.default_rng(0).normal(size=model.cfg.latent_dim)
    assert np.all(grid_coords((1, 1)) == 0)
    np.testing.assert_array_equal(render_grid(model, z, (1, 1))[0, 0], evaluate(np.zeros((1, 2)), model, z)[0])


def test_grid_axis_convention():
    c = grid_coords((2, 4)).reshape(2, 4, 2)
    np.testing.assert_allclose(c[:, 0, 0], [-0.5, 0.5])
    np.testing.assert_allclose(c[0, :, 1], [-0.75, -0.25, 0.25, 0.75])


def test_render_is_pointwise():
    model = G.random_inr(6)
    z = np.random.default_rng(1).normal(size=model.cfg.latent_dim)
    coarse = render_grid(model, z, (16, 16))
    np.testing.assert_array_equal(coarse.reshape(-1, 1), evaluate(grid_coords((16, 16)), model, z))
    # with an odd ratio the coarse cell centres are a subset of the fine ones
    fine = render_grid(model, z, (48, 48))
    np.testing.assert_array_equal(fine[1::3, 1::3], coarse)
    np.testing.assert_array_equal(fine, render_grid(model, z, (48, 48)))


def test_fit_latent_zero_steps_is_zero():
    model = G.random_inr(0)
    sig = SignalSample.from_grid(np.full((6, 6), 0.3))
    assert np.all(fit_latent(sig, model, steps=0) == 0)


def test_fit_latent_is_deterministic_and_read_only():
    model = G.random_inr(1)
    before = [a.copy() for a in model.arrays()]
    sig = SignalSample.from_grid(np.random.default_rng(0).uniform(size=(12, 12)))
    a = fit_latent(sig, model, steps=4, lr=1.0, n_points=50, seed=3)
    b = fit_latent(sig, model, steps=4, lr=1.0, n_points=50, seed=3)
    assert a.tobytes() == b.tobytes()
    for x, y in zip(before, model.arrays()):
        assert x.tobytes() == y.tobytes()


def test_fit_latent_rejects_empty_signal():
    sig = SignalSample(np.zeros((0, 2), np.float32), np.zeros((0, 1), np.float32), (0, 0))
    with pytest.raises(ValueError):
        fit_latent(sig, G.random_inr(0))


def test_fit_latent_decreases_loss():
    model = G.random_inr(2)
    sig = SignalSample.from_grid(np.random.default_rng(5).uniform(size=(10, 10)))
    z, losses = fit_latent(sig, model, steps=20, lr=0.5, n_points=1000, return_losses=True)
    assert reconstruction_loss(sig, model, z) < losses[0]


def test_constant_image_fit_by_full_descent():
    cfg = SirenConfig(n_hidden_layers=2, hidden_size=16, latent_dim=4, hyper_hidden_size=8)
    model = ModulatedSiren.create(cfg, seed=0)
    sig = SignalSample.from_grid(np.full((16, 16), 0.7))
    z = np.zeros(4, dtype=np.float32)
    params = [z] + model.arrays()
    opt = dc.AdamW(params, lr=1e-3)
    for _ in range(500):
        zt = Tensor(z, requires_grad=True)
        loss, shared, hyper = latent_loss(model, zt, sig.coords, sig.values, True)
        opt.step(params, dc.backward(loss, [zt] + shared + hyper))
    assert reconstruction_loss(sig, model, z) < 1e-4


def test_named_arrays_roundtrip():
    model = G.random_inr(3)
    again = ModulatedSiren.from_named_arrays(model.cfg, model.named_arrays())
    for a, b in zip(model.arrays(), again.arrays()):
        assert a.tobytes() == b.tobytes()
    bad = dict(model.named_arrays())
    bad["trunk.0.weight"] = np.zeros((3, 3), np.float32)
    with pytest.raises(ShapeError):
        ModulatedSiren.from_named_arrays(model.cfg, bad)
