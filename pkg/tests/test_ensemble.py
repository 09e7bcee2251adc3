import dataclasses

import numpy as np
import pytest
import torch

from riskmbrl.data import OfflineDataset
from riskmbrl.ensemble import (ConstantGaussianEnsemble, EnsembleMLP, ModelConfig, SyntheticGaussianSpec,
                               build_synthetic_ensemble, fit_ensemble, gaussian_nll, load_ensemble,
                               sample_successors, save_ensemble)
from riskmbrl.risk_measures import gaussian_cvar, static_cvar_of_samples

SMALL = ModelConfig(n_members=3, n_elites=2, hidden=16, n_layers=2, epochs=30, batch_size=64, seed=0)


def linear_dataset(n=1200, seed=0, noise=0.1):
    # s' = s + 0.5 a + noise, r = a
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(n, 2))
    a = rng.uniform(-1, 1, size=(n, 1))
    s2 = s + 0.5 * a + noise * rng.normal(size=(n, 2))
    return OfflineDataset(s, a, a[:, 0].copy(), s2, np.zeros(n, dtype=bool), env_id="toy")


@pytest.fixture(scope="module")
def fitted():
    return fit_ensemble(linear_dataset(), SMALL)


def test_fit_learns_linear_dynamics(fitted):
    states = np.array([[0.0, 0.0], [1.0, -1.0]])
    actions = np.array([[0.5], [-0.5]])
    mean, std = fitted.member_moments(states, actions)
    assert mean.shape == (2, 2, 3)
    np.testing.assert_allclose(mean[..., :2].mean(0), states + 0.5 * actions, atol=0.1)
    np.testing.assert_allclose(mean[..., 2].mean(0), actions[:, 0], atol=0.1)
    assert np.all(std[..., :2] < 0.25)


def test_elites_and_history(fitted):
    assert len(fitted.elites) == 2
    assert set(fitted.elites) == set(np.argsort(fitted.holdout_nll)[:2])
    h = fitted.history["holdout_nll"]
    assert h.shape == (SMALL.epochs + 1, 3)
    assert np.all(h[-1] < h[0])


def test_config_validation():
    with pytest.raises(ValueError):
        fit_ensemble(linear_dataset(), dataclasses.replace(SMALL, n_elites=4))
    with pytest.raises(ValueError):
        fit_ensemble(linear_dataset(n=8), SMALL)


def test_save_load_bit_exact(fitted, tmp_path, rng):
    path = save_ensemble(fitted, tmp_path / "m.npz")
    loaded = load_ensemble(path)
    s, a = rng.normal(size=(20, 2)), rng.uniform(-1, 1, size=(20, 1))
    for x, y in zip(fitted.member_moments(s, a), loaded.member_moments(s, a)):
        np.testing.assert_array_equal(x, y)
    assert loaded.elites == fitted.elites
    save_ensemble(loaded, tmp_path / "m2.npz")
    assert (tmp_path / "m.npz").read_bytes() == (tmp_path / "m2.npz").read_bytes()


def test_sampling_shapes_and_joint_draw(fitted):
    s_next, r = fitted.sample(np.zeros((4, 2)), np.zeros((4, 1)), 7, np.random.default_rng(0))
    assert s_next.shape == (4, 7, 2) and r.shape == (4, 7)
    # same generator state -> same draws
    s2, r2 = fitted.sample(np.zeros((4, 2)), np.zeros((4, 1)), 7, np.random.default_rng(0))
    np.testing.assert_array_equal(s_next, s2)
    with pytest.raises(ValueError):
        sample_successors(fitted, np.zeros(2), np.zeros(1), 3, rng=None)


def test_logvar_clamp():
    net = EnsembleMLP(2, 3, 2, hidden=8, n_layers=1, logvar_bounds=(-4.0, 1.0))
    with torch.no_grad():
        net.head.bias[..., 2:] = 50.0
        _, hi = net(torch.zeros(2, 5, 3))
        net.head.bias[..., 2:] = -50.0
        _, lo = net(torch.zeros(2, 5, 3))
    assert torch.all(hi <= 1.0) and torch.all(lo >= -4.0)


def test_nll_gradcheck():
    g = torch.Generator().manual_seed(0)
    mean = torch.randn(2, 5, 3, generator=g, dtype=torch.float64, requires_grad=True)
    logvar = torch.randn(2, 5, 3, generator=g, dtype=torch.float64, requires_grad=True)
    target = torch.randn(2, 5, 3, generator=g, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda m, lv: gaussian_nll(m, lv, target), (mean, logvar),
                                    eps=1e-6, atol=1e-9, rtol=1e-4)


def test_network_nll_gradcheck():
    net = EnsembleMLP(2, 3, 2, hidden=6, n_layers=2).double()
    x = torch.randn(2, 4, 3, dtype=torch.float64, requires_grad=True)
    y = torch.randn(2, 4, 2, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda inp: gaussian_nll(*net(inp), y), (x,), eps=1e-6, atol=1e-9, rtol=1e-4)


def test_gaussian_nll_value():
    # N(0, 1) at 0: 0.5 log(2 pi)
    out = gaussian_nll(torch.zeros(1, 1, 1), torch.zeros(1, 1, 1), torch.zeros(1, 1, 1))
    assert out.item() == pytest.approx(0.5 * np.log(2 * np.pi))


class TestSyntheticEnsemble:
    def test_moments(self):
        spec = SyntheticGaussianSpec(mu0=1.0, sigma_E=0.5, sigma_A=0.3, n_members=200)
        ens = build_synthetic_ensemble(spec, np.random.default_rng(0))
        s, r = sample_successors(ens, np.zeros(1), np.zeros(1), m=200_000, rng=np.random.default_rng(1))
        assert np.all(r == 0)
        assert s[:, 0].mean() == pytest.approx(1.0, abs=0.02)
        assert s[:, 0].var() == pytest.approx(0.25 + 0.09, rel=0.03)

    def test_no_epistemic_reduces_to_aleatoric(self):
        ens = build_synthetic_ensemble(SyntheticGaussianSpec(0.0, 0.0, 1.0, n_members=5), np.random.default_rng(0))
        s, _ = sample_successors(ens, np.zeros(1), np.zeros(1), m=200_000, rng=np.random.default_rng(2))
        assert static_cvar_of_samples(s[:, 0], 0.1) == pytest.approx(gaussian_cvar(0, 1, 0.1), rel=0.02)

    def test_constant_members(self):
        ens = ConstantGaussianEnsemble(np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros((2, 2)), state_dim=1)
        s, r = ens.sample(np.zeros((1, 1)), np.zeros((1, 1)), 50, np.random.default_rng(0))
        assert set(np.unique(s)) <= {1.0, 3.0}
        np.testing.assert_array_equal(r, s[..., 0] + 1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticGaussianSpec(sigma_E=-1.0)
        with pytest.raises(ValueError):
            SyntheticGaussianSpec(n_members=0)
