"""Networks, Adam, and the checkpoint container."""

import numpy as np
import pytest

import c2vae.tensor as T
from c2vae.errors import NonFiniteError, ShapeError
from c2vae.model import (Adam, Mlp, MlpSpec, ModelBundle, ModelConfig,
                         load_checkpoint, save_checkpoint)
from c2vae.tensor import Tensor

from gradcheck import assert_gradients_match


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def small_config(**kw):
    defaults = dict(input_dim=16, latent_dim=3, hidden_width=8, hidden_depth=2,
                    classifier_width=8, classifier_depth=2, gmm_components=2)
    defaults.update(kw)
    return ModelConfig(**defaults)


def make_bundle(seed=0, **kw):
    return ModelBundle(small_config(**kw), rng(seed))


# ---------------------------------------------------------------------------
# encoder / decoder / classifier contracts
# ---------------------------------------------------------------------------

def test_encode_shapes_and_determinism():
    b = make_bundle()
    x = Tensor(rng(1).uniform(0, 1, (5, 16)))
    q1, q2 = b.encode(x), b.encode(x)
    assert q1.mu.shape == (5, 3) and q1.logvar.shape == (5, 3)
    assert np.array_equal(q1.mu.data, q2.mu.data)
    assert np.array_equal(q1.logvar.data, q2.logvar.data)


def test_encode_width_mismatch():
    with pytest.raises(ShapeError):
        make_bundle().encode(Tensor(np.zeros((2, 10))))


def test_logvar_clamped():
    b = make_bundle()
    # blow up the head bias so the raw logvar exceeds the clip range
    b.encoder.biases[-1].data[:] = 1e4
    q = b.encode(Tensor(rng(2).uniform(0, 1, (4, 16))))
    assert q.logvar.data.max() <= 10.0
    assert np.exp(0.5 * q.logvar.data).max() <= np.exp(5.0)


def test_encoder_gradient_matches_fd():
    b = make_bundle()
    x = rng(3).uniform(0, 1, (3, 16))
    w0 = b.encoder.weights[0].data.copy()

    def build(warr):
        saved = b.encoder.weights[0]
        b.encoder.weights[0] = warr
        try:
            return T.sum_(b.encode(Tensor(x)).mu)
        finally:
            b.encoder.weights[0] = saved

    assert_gradients_match(build, [w0], rtol=1e-4)


def test_encode_cov_unit_diagonal_and_identity_at_init():
    b = make_bundle()
    corr = b.encode_cov(Tensor(rng(4).uniform(0, 1, (6, 16))))
    sig = corr.sigma.data
    idx = np.arange(3)
    assert np.all(sig[:, idx, idx] == 1.0)
    # v-head is zero-initialized: no coupling at the start of training
    np.testing.assert_allclose(sig, np.broadcast_to(np.eye(3), sig.shape),
                               atol=1e-12)


def test_cov_gradient_reaches_phi_c_through_L():
    b = make_bundle()
    x = rng(5).uniform(0, 1, (2, 16))
    eps = rng(6).standard_normal((2, 3))
    # give the v-head nonzero weights so the coupling path is active
    vW0 = rng(7).standard_normal((8, 3)) * 0.5

    def build(vw):
        saved = b.corr_heads.v_weight
        b.corr_heads.v_weight = vw
        try:
            corr = b.encode_cov(Tensor(x))
            mu_c = b.encode(Tensor(x)).mu.detach()
            from c2vae.copula import sample_gaussian_copula
            z_p = sample_gaussian_copula(mu_c, corr.L, eps)
            return T.sum_(z_p * z_p)
        finally:
            b.corr_heads.v_weight = saved

    assert_gradients_match(build, [vW0], rtol=1e-4)


def test_decode_shapes_and_logit_range():
    b = make_bundle()
    z = Tensor(rng(8).standard_normal((4, 3)))
    logits = b.decode(z)
    assert logits.shape == (4, 16)
    probs = T.sigmoid(logits).data
    assert np.all((probs > 0) & (probs < 1))
    with pytest.raises(ShapeError):
        b.decode(Tensor(np.zeros((2, 5))))


def test_decode_smoke_training_descends():
    from c2vae.training import recon_loss

    b = make_bundle(seed=9)
    x_img = (rng(10).uniform(0, 1, (1, 16)) > 0.5).astype(np.float64)
    params = b.phi() + b.theta()
    opt = Adam(params, lr=1e-3)
    losses = []
    for _ in range(200):
        x = Tensor(x_img)
        q = b.encode(x)
        logits = b.decode(q.mu)
        loss = recon_loss(x, logits)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert losses[-1] < losses[0]


def test_classifier_chance_at_init_and_determinism():
    b = make_bundle()
    z = Tensor(rng(11).standard_normal((5, 3)))
    logits = b.classify(z)
    np.testing.assert_array_equal(logits.data, np.zeros(5))  # zero-init head
    assert np.array_equal(b.classify(z).data, logits.data)


def test_classifier_learns_separable_clusters():
    b = make_bundle(seed=12)
    g = rng(13)
    pos = g.standard_normal((128, 3)) + 3.0
    neg = g.standard_normal((128, 3)) - 3.0
    opt = Adam(b.psi(), lr=1e-2)
    for _ in range(150):
        l_pos = b.classify(Tensor(pos))
        l_neg = b.classify(Tensor(neg))
        loss = (T.mean(T.softplus(-l_pos)) + T.mean(T.softplus(l_neg))) * 0.5
        opt.zero_grad()
        loss.backward()
        opt.step()
    acc = 0.5 * ((b.classify(Tensor(pos)).data > 0).mean()
                 + (b.classify(Tensor(neg)).data <= 0).mean())
    assert acc > 0.95
    assert loss.item() < 0.1


def test_frozen_forward_blocks_parameter_gradients():
    b = make_bundle()
    z = Tensor(rng(14).standard_normal((4, 3)), grad_enabled=True)
    out = T.sum_(b.classify(z, frozen=True))
    out.backward()
    assert all(p.grad is None for p in b.psi())
    assert z.grad is not None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    p = Tensor([1.0, -2.0], grad_enabled=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    before = p.data.copy()
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_magnitude():
    p = Tensor([0.0], grad_enabled=True)
    opt = Adam([p], lr=1e-3)
    p.grad = np.ones(1)
    opt.step()
    # m̂ = v̂ = 1 at t=1, so the step is −lr/(1+eps)
    assert p.data[0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_converges_on_quadratic():
    p = Tensor([1.0], grad_enabled=True)
    opt = Adam([p], lr=0.01)
    for _ in range(2000):
        opt.zero_grad()
        loss = T.sum_(p * p)
        loss.backward()
        opt.step()
        if abs(p.data[0]) < 0.01:
            break
    assert abs(p.data[0]) < 0.01


def test_adam_rejects_nonfinite_gradient():
    p = Tensor([1.0], grad_enabled=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([np.nan])
    with pytest.raises(NonFiniteError):
        opt.step()


def test_adam_rejects_shape_mismatch():
    p = Tensor([1.0, 2.0], grad_enabled=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(3)
    with pytest.raises(ShapeError):
        opt.step()


# ---------------------------------------------------------------------------
# parameter audit + checkpoints
# ---------------------------------------------------------------------------

def expected_param_count(cfg):
    def mlp(widths):
        return sum(i * o + o for i, o in zip(widths, widths[1:]))

    h, d, k = cfg.hidden_width, cfg.latent_dim, cfg.gmm_components
    hidden = (h,) * cfg.hidden_depth
    total = mlp((cfg.input_dim, *hidden, 2 * d))          # phi
    total += mlp((d, *hidden, cfg.input_dim))             # theta
    total += mlp((cfg.input_dim, *hidden, h))             # cov trunk
    total += 2 * (h * d + d)                              # w/v heads
    total += h * 1 + 1                                    # nu head
    total += h * k + k                                    # gmm weights head
    total += 4 * (h * k * d + k * d)                      # gmm mean/sigma/w/v
    total += mlp((d,) + (cfg.classifier_width,) * cfg.classifier_depth + (1,))
    return total


def test_parameter_count_matches_arithmetic():
    cfg = small_config()
    b = ModelBundle(cfg, rng(0))
    actual = sum(p.size for _, p in b.named_parameters())
    assert actual == expected_param_count(cfg)


def test_parameter_groups_disjoint():
    b = make_bundle()
    ids = [id(p) for p in b.phi() + b.theta() + b.phi_c() + b.psi()]
    assert len(ids) == len(set(ids))
    assert len(ids) == len(b.named_parameters())


def test_checkpoint_round_trip(tmp_path):
    b = make_bundle(seed=20)
    cfg_dict = {"input_dim": 16, "latent_dim": 3, "hidden_width": 8,
                "hidden_depth": 2, "classifier_width": 8, "classifier_depth": 2,
                "gmm_components": 2, "seed": 20}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, b, cfg_dict, step=123, config_hash="abc")
    loaded, manifest = load_checkpoint(path)
    assert manifest["step"] == 123
    assert manifest["config_sha256"] == "abc"
    for (n1, p1), (n2, p2) in zip(b.named_parameters(), loaded.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)


def test_checkpoint_mismatch_detected(tmp_path):
    b = make_bundle()
    cfg_dict = {"input_dim": 16, "latent_dim": 3, "hidden_width": 8,
                "hidden_depth": 2, "classifier_width": 8, "classifier_depth": 2,
                "gmm_components": 2}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, b, cfg_dict, step=1)
    other = small_config(latent_dim=4)
    with pytest.raises(ShapeError):
        load_checkpoint(path, model_config=other)


def test_mlp_spec_validation():
    with pytest.raises(ShapeError):
        MlpSpec((4,), ())
    with pytest.raises(ShapeError):
        MlpSpec((4, 0), ("relu",))
    with pytest.raises(ShapeError):
        MlpSpec((4, 3), ("bogus",))
    with pytest.raises(ShapeError):
        MlpSpec((4, 3, 2), ("relu",))
