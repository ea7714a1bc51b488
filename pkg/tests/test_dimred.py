import doctest

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gatbotnet import autodiff
from gatbotnet import dimred as dr
from gatbotnet.dimred import PcaModel, TrainConfig
from gatbotnet.exceptions import ConfigError, DimensionError


def test_autodiff_doctest():
    assert doctest.testmod(autodiff).failed == 0


# KL -------------------------------------------------------------------------

def test_kl_hand_values():
    assert dr.kl_standard_normal(np.zeros(8), np.zeros(8)) == 0.0
    mu = np.zeros(8)
    mu[0] = 1.0
    assert dr.kl_standard_normal(mu, np.zeros(8)) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-5, 5)), arrays(np.float64, 8, elements=st.floats(-5, 5)))
def test_kl_non_negative(mu, logvar):
    kl = dr.kl_standard_normal(mu, logvar)
    assert kl >= 0
    if np.any(mu != 0) or np.any(logvar != 0):
        assert kl > 0 or np.allclose(mu, 0, atol=1e-7) and np.allclose(logvar, 0, atol=1e-7)


def test_kl_term_is_batch_mean():
    rng = np.random.default_rng(0)
    mu, lv = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
    got = dr.kl_term(autodiff.Tensor(mu), autodiff.Tensor(lv)).item()
    assert got == pytest.approx(dr.kl_standard_normal(mu, lv).mean(), rel=1e-13)


# autoencoder ----------------------------------------------------------------

def test_autoencoder_memorises_constant():
    x = np.tile(np.linspace(0.1, 0.9, 10), (200, 1))
    model = dr.train_autoencoder(x, TrainConfig(epochs=300, seed=0))
    assert dr.reconstruction_mse(model, x) < 1e-3


def _rank2(n=600, d=20, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 2)) @ rng.normal(size=(2, d))


def test_autoencoder_beats_untrained_on_rank2():
    x = _rank2()
    cfg = TrainConfig(epochs=40, seed=1)
    untrained = dr.init_autoencoder(20, cfg, np.random.default_rng(1))
    trained = dr.train_autoencoder(x, cfg)
    assert dr.reconstruction_mse(untrained, x) >= 10 * dr.reconstruction_mse(trained, x)
    hist = trained.training_loss_history
    assert len(hist) == 40 and np.all(np.isfinite(hist)) and hist[-1] < hist[0]


def test_autoencoder_deterministic():
    x = _rank2(300)
    cfg = TrainConfig(epochs=3, seed=5)
    a = dr.train_autoencoder(x, cfg)
    b = dr.train_autoencoder(x, cfg)
    assert a.training_loss_history == b.training_loss_history
    assert np.array_equal(dr.reduce(a, x), dr.reduce(b, x))


def test_autoencoder_shape_contract():
    model = dr.train_autoencoder(_rank2(200), TrainConfig(epochs=1))
    assert model.encoder[-1].d_out == 8 == model.decoder[0].d_in
    assert dr.reduce(model, _rank2(5)).shape == (5, 8)


def test_training_input_errors():
    with pytest.raises(ConfigError, match="latent"):
        dr.train_autoencoder(np.zeros((200, 5)), TrainConfig(epochs=1))
    with pytest.raises(ConfigError, match="batch_size"):
        dr.train_vae(np.zeros((50, 10)), TrainConfig(epochs=1))


# VAE ------------------------------------------------------------------------

def test_vae_zero_noise_deterministic_forward():
    model = dr.init_vae(10, TrainConfig(), np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(size=(7, 10))
    a = dr.vae_loss(model, x, zero_noise=True)[0].item()
    b = dr.vae_loss(model, x, zero_noise=True)[0].item()
    assert a == b


def test_vae_matches_autoencoder_objective_when_noise_and_logvar_zero():
    cfg = TrainConfig()
    rng = np.random.default_rng(4)
    vae = dr.init_vae(12, cfg, rng)
    vae.logvar_head = autodiff.DenseLayer(np.zeros((32, 8)), np.zeros(8), name="logvar_head")
    ae = dr.AeModel(encoder=vae.encoder_trunk + [vae.mu_head], decoder=vae.decoder)
    x = rng.uniform(size=(9, 12))
    total, recon, kl = dr.vae_loss(vae, x, zero_noise=True)
    ae_recon = autodiff.sum_squared_error(ae.decode(ae.encode(x)), x).item()
    mu = vae.encode(x)[0].data
    assert recon.item() == pytest.approx(ae_recon, rel=1e-13)
    assert total.item() == pytest.approx(ae_recon + 0.5 * np.mean(np.sum(mu**2, axis=1)), rel=1e-13)


def test_vae_training_on_standard_normal():
    x = np.random.default_rng(0).standard_normal((2000, 8))
    model = dr.train_vae(x, TrainConfig(epochs=20, seed=0))
    assert len(model.elbo_history) == 20
    assert model.elbo_history[-1] < model.elbo_history[0]
    kl = np.array(model.kl_history)
    recon = np.array(model.reconstruction_history)
    assert kl[-5:].mean() < kl[:5].mean()
    assert np.all(np.isfinite(recon)) and recon.max() < 10 * recon[0]


def test_vae_deterministic_and_reduce_uses_mean():
    x = _rank2(256, 10)
    cfg = TrainConfig(epochs=2, seed=3)
    a = dr.train_vae(x, cfg)
    b = dr.train_vae(x, cfg)
    assert a.elbo_history == b.elbo_history
    np.testing.assert_array_equal(dr.reduce(a, x), dr.reduce(a, x))
    np.testing.assert_array_equal(dr.reduce(a, x), a.encode(x)[0].data)


def test_vae_logvar_clamped():
    model = dr.init_vae(4, TrainConfig(), np.random.default_rng(0))
    model.logvar_head = autodiff.DenseLayer(np.full((32, 8), 100.0), np.zeros(8), name="logvar_head")
    _, logvar = model.encode(np.ones((3, 4)))
    assert logvar.data.max() <= 10.0


def test_vae_kl_path_gradient(grad_check):
    cfg = TrainConfig(latent_dim=2, hidden_dim=3)
    model = dr.init_vae(4, cfg, np.random.default_rng(9))
    x = np.random.default_rng(10).uniform(-2, 2, size=(5, 4))

    def loss():
        return dr.vae_loss(model, x, np.random.default_rng(0))[0]

    errs = grad_check(loss, model.parameters())
    assert max(errs.values()) < 1e-4, errs


# PCA ------------------------------------------------------------------------

def test_pca_rank_one_line():
    t = np.linspace(-3, 3, 40)[:, None]
    x = t * np.array([[1.0, 2.0, -2.0]]) + np.array([5.0, 0.0, 1.0])
    model = dr.fit_pca(x, 1)
    np.testing.assert_allclose(model.explained_variance_ratio, [1.0], atol=1e-8)


def test_pca_anisotropic_ratios():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50_000, 2)) * np.sqrt([4.0, 1.0])
    model = dr.fit_pca(x, 1 + 1)
    np.testing.assert_allclose(model.explained_variance_ratio, [0.8, 0.2], atol=0.02)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_pca_orthonormal_and_ordered(seed, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, d)) * rng.uniform(0.1, 3, size=d)
    c = min(8, d)
    model = dr.fit_pca(x, c)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(c), atol=1e-8)
    r = model.explained_variance_ratio
    assert np.all(r >= 0) and np.all(r <= 1) and r.sum() <= 1 + 1e-12
    assert np.all(np.diff(r) <= 1e-15)


def test_pca_full_rank_round_trip():
    x = np.random.default_rng(2).normal(size=(50, 8))
    model = dr.fit_pca(x, 8)
    np.testing.assert_allclose(model.inverse_transform(dr.reduce(model, x)), x, atol=1e-8)


def test_pca_identity_projection():
    model = PcaModel(np.zeros(12), np.eye(12)[:8], np.full(8, 1 / 12))
    x = np.random.default_rng(0).normal(size=(4, 12))
    np.testing.assert_array_equal(dr.reduce(model, x), x[:, :8])


def test_pca_sign_convention_is_stable():
    x = np.random.default_rng(3).normal(size=(100, 6))
    a = dr.fit_pca(x, 3).components
    b = dr.fit_pca(x[::-1].copy(), 3).components
    np.testing.assert_allclose(a, b, atol=1e-10)
    assert np.all(a[np.arange(3), np.argmax(np.abs(a), axis=1)] > 0)


def test_pca_component_bound():
    with pytest.raises(ConfigError):
        dr.fit_pca(np.zeros((5, 20)), 8)


def test_variance_report_lists_components():
    model = PcaModel(np.zeros(3), np.eye(3)[:2], np.array([0.4097, 0.1979]))
    assert model.variance_report() == "2 components account for 60.76% variance (40.97%, 19.79%)"


# reduce / persistence / estimators -----------------------------------------

def test_reduce_rejects_wrong_width():
    model = dr.fit_pca(np.random.default_rng(0).normal(size=(20, 10)))
    with pytest.raises(DimensionError):
        dr.reduce(model, np.zeros((3, 9)))


@pytest.mark.parametrize("kind", ["ae", "vae", "pca"])
def test_reducer_checkpoint_round_trip(kind, tmp_path):
    x = _rank2(256, 12)
    est = dr.make_reducer(kind, epochs=1).fit(x)
    dr.save_reducer(est.model_, tmp_path / "r.ckpt")
    loaded = dr.load_reducer(tmp_path / "r.ckpt")
    np.testing.assert_array_equal(dr.reduce(loaded, x), est.transform(x))
    assert est.transform(x).shape == (256, 8)


def test_estimators_follow_sklearn_conventions():
    from sklearn.base import clone
    from sklearn.exceptions import NotFittedError

    est = dr.VAEReducer(epochs=1, seed=4)
    assert est.get_params()["seed"] == 4
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.transform(np.zeros((2, 12)))
    z = dr.PCAReducer(3).fit_transform(_rank2(40, 6))
    assert z.shape == (40, 3)


def test_reducer_kind_parse():
    assert dr.ReducerKind.parse("VAE") is dr.ReducerKind.VAE_ENCODER
    assert dr.ReducerKind.parse("ae_encoder") is dr.ReducerKind.AE_ENCODER
    with pytest.raises(ConfigError):
        dr.ReducerKind.parse("tsne")
