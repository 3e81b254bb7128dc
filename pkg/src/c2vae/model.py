"""Neural components: posterior encoder, covariance encoder branch, decoder,
the contrastive classifier, parameter initialization, Adam, checkpoints.

Desk-scale architecture: plain MLPs stand in for the convolutional stacks —
the training mechanics under study do not depend on the choice. Hidden
activations are ReLU for encoder/decoder and LeakyReLU(0.2) for the
classifier. Weights use Kaiming-uniform fan-in init with zero biases; the
v-head of the covariance branch is zero-initialized so training starts from
the independence copula (sigma = I).
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ctf
from . import tensor as T
from .copula import CorrelationHeads, DiagGaussian, build_correlation
from .errors import NonFiniteError, ShapeError
from .tensor import Tensor

LOGVAR_CLIP = 10.0

_ACT = {
    "relu": T.relu,
    "leaky_relu": T.leaky_relu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "identity": lambda t: t,
}


@dataclass
class MlpSpec:
    """Layer widths (input..output) and one activation tag per layer."""

    widths: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ShapeError("MlpSpec: need at least one layer")
        if any(w <= 0 for w in self.widths):
            raise ShapeError("MlpSpec: widths must be positive")
        if len(self.activations) != len(self.widths) - 1:
            raise ShapeError("MlpSpec: one activation per layer required")
        for a in self.activations:
            if a not in _ACT:
                raise ShapeError(f"MlpSpec: unknown activation {a!r}")

    def param_count(self):
        return sum(i * o + o for i, o in zip(self.widths, self.widths[1:]))


def _kaiming_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """Fully-connected stack over the autodiff tensor layer."""

    def __init__(self, spec, rng, zero_init_last=False):
        self.spec = spec
        self.weights = []
        self.biases = []
        n_layers = len(spec.widths) - 1
        for i, (fi, fo) in enumerate(zip(spec.widths, spec.widths[1:])):
            last = i == n_layers - 1
            w = np.zeros((fi, fo)) if (zero_init_last and last) \
                else _kaiming_uniform(rng, fi, fo)
            self.weights.append(Tensor(w, grad_enabled=True))
            self.biases.append(Tensor(np.zeros(fo), grad_enabled=True))

    def forward(self, x, frozen=False):
        h = x
        for w, b, act in zip(self.weights, self.biases, self.spec.activations):
            if frozen:
                w, b = w.detach(), b.detach()
            h = _ACT[act](T.linear(h, w, b))
        return h

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def _affine_head(rng, fan_in, fan_out, scale=1.0):
    # always draw, then scale: the RNG stream stays aligned across configs
    # that zero or shrink a head
    w = _kaiming_uniform(rng, fan_in, fan_out) * scale
    return Tensor(w, grad_enabled=True), Tensor(np.zeros(fan_out), grad_enabled=True)


@dataclass
class ModelConfig:
    input_dim: int
    latent_dim: int
    hidden_width: int = 256
    hidden_depth: int = 2
    classifier_width: int = 256
    classifier_depth: int = 4
    gmm_components: int = 2
    # 0 starts from the exact independence copula (v ≡ 0, a stationary point
    # of the correlation map); a small nonzero value breaks that symmetry so
    # gradient routed into the covariance branch can move it
    v_head_scale: float = 0.0


class ModelBundle:
    """All four parameter groups plus the covariance-branch heads.

    Groups: phi (posterior encoder), theta (decoder), phi_c (covariance
    encoder trunk + every dependence head), psi (classifier).
    """

    def __init__(self, cfg, rng):
        self.cfg = cfg
        h, d, k = cfg.hidden_width, cfg.latent_dim, cfg.gmm_components
        hidden = (h,) * cfg.hidden_depth

        self.encoder = Mlp(MlpSpec(
            (cfg.input_dim, *hidden, 2 * d),
            ("relu",) * cfg.hidden_depth + ("identity",)), rng)
        self.decoder = Mlp(MlpSpec(
            (d, *hidden, cfg.input_dim),
            ("relu",) * cfg.hidden_depth + ("identity",)), rng)

        self.cov_trunk = Mlp(MlpSpec(
            (cfg.input_dim, *hidden, h),
            ("relu",) * cfg.hidden_depth + ("relu",)), rng)
        self.corr_heads = CorrelationHeads(
            *_affine_head(rng, h, d),
            *_affine_head(rng, h, d, scale=cfg.v_head_scale),
        )
        self.nu_head = _affine_head(rng, h, 1)
        self.gmm_weight_head = _affine_head(rng, h, k)
        self.gmm_mean_head = _affine_head(rng, h, k * d)
        self.gmm_sigma_head = _affine_head(rng, h, k * d)
        self.gmm_w_head = _affine_head(rng, h, k * d)
        self.gmm_v_head = _affine_head(rng, h, k * d, scale=cfg.v_head_scale)

        # zero-init output layer: the untrained classifier sits exactly at
        # chance (logit 0), so the density-ratio penalty starts from zero
        cls_hidden = (cfg.classifier_width,) * cfg.classifier_depth
        self.classifier = Mlp(MlpSpec(
            (d, *cls_hidden, 1),
            ("leaky_relu",) * cfg.classifier_depth + ("identity",)), rng,
            zero_init_last=True)

    # ---- parameter groups ----

    def phi(self):
        return self.encoder.parameters()

    def theta(self):
        return self.decoder.parameters()

    def phi_c(self):
        out = self.cov_trunk.parameters()
        out.extend([self.corr_heads.w_weight, self.corr_heads.w_bias,
                    self.corr_heads.v_weight, self.corr_heads.v_bias])
        for head in (self.nu_head, self.gmm_weight_head, self.gmm_mean_head,
                     self.gmm_sigma_head, self.gmm_w_head, self.gmm_v_head):
            out.extend(head)
        return out

    def psi(self):
        return self.classifier.parameters()

    def named_parameters(self):
        """Deterministic (name, tensor) inventory; order fixes the checkpoint."""
        named = []
        for group, params in (("phi", self.phi()), ("theta", self.theta()),
                              ("phi_c", self.phi_c()), ("psi", self.psi())):
            named.extend((f"{group}.{i}", p) for i, p in enumerate(params))
        return named

    # ---- forward surfaces ----

    def encode(self, x):
        """Image rows → factorized posterior with logvar clipped to ±10."""
        if x.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"encode: expected width {self.cfg.input_dim}, got {x.shape}")
        out = self.encoder.forward(x)
        d = self.cfg.latent_dim
        mu = T.slice_cols(out, 0, d)
        logvar = T.clamp(T.slice_cols(out, d, 2 * d), -LOGVAR_CLIP, LOGVAR_CLIP)
        return DiagGaussian(mu=mu, logvar=logvar)

    def cov_features(self, x, frozen=False):
        return self.cov_trunk.forward(x, frozen=frozen)

    def encode_cov(self, x):
        """Image rows → full CorrelationModel from the covariance branch."""
        return build_correlation(self.cov_features(x), self.corr_heads)

    def decode(self, z):
        if z.shape[-1] != self.cfg.latent_dim:
            raise ShapeError(f"decode: expected width {self.cfg.latent_dim}, got {z.shape}")
        return self.decoder.forward(z)

    def classify(self, z, frozen=False):
        """Latent rows → logits (N,); σ(logit) is the probability of 'from q'."""
        if z.shape[-1] != self.cfg.latent_dim:
            raise ShapeError(f"classify: expected width {self.cfg.latent_dim}, got {z.shape}")
        out = self.classifier.forward(z, frozen=frozen)
        return T.reshape(out, (out.shape[0],))

    # ---- detached dependence parameters for the ablation samplers ----

    def student_params_np(self, x):
        """Per-row (rho, nu) arrays: rho from the w/v heads, ν = 2 + softplus."""
        with T.no_grad():
            feats = self.cov_features(x)
            corr = build_correlation(feats, self.corr_heads)
            raw_nu = T.linear(feats, *self.nu_head)
        nu = 2.0 + np.log1p(np.exp(-np.abs(raw_nu.data))) + np.maximum(raw_nu.data, 0.0)
        return corr.sigma.data, nu[:, 0]

    def gmm_params_np(self, x):
        """Per-row mixture parameters (weights, means, sigmas, correlations)."""
        from .copula import correlation_from_wv_np

        k, d = self.cfg.gmm_components, self.cfg.latent_dim
        with T.no_grad():
            feats = self.cov_features(x)
            logits = T.linear(feats, *self.gmm_weight_head).data
            means = T.linear(feats, *self.gmm_mean_head).data
            raw_sig = T.linear(feats, *self.gmm_sigma_head).data
            raw_w = T.linear(feats, *self.gmm_w_head).data
            raw_v = T.linear(feats, *self.gmm_v_head).data
        n = feats.shape[0]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        weights = e / e.sum(axis=1, keepdims=True)
        means = means.reshape(n, k, d)
        sigmas = _softplus_np(raw_sig).reshape(n, k, d) + 1e-6
        w = _softplus_np(raw_w).reshape(n, k, d) + 1e-6
        v = np.tanh(raw_v).reshape(n, k, d)
        corrs = correlation_from_wv_np(w, v)
        return weights, means, sigmas, corrs


def _softplus_np(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Standard bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        from .backend import kernels

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"adam: grad {p.grad.shape} vs param {p.data.shape}")
            if not kernels.all_finite(p.grad):
                raise NonFiniteError("adam: non-finite gradient")
            kernels.adam_update(p.data, p.grad, m, v,
                                self.lr, self.beta1, self.beta2, self.eps, bc1, bc2)

    def state_arrays(self):
        """Moment arrays in parameter order, for checkpointing."""
        return self.m, self.v


# ---------------------------------------------------------------------------
# checkpoint container: manifest + concatenated CTF blobs
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"C2CK"


def save_checkpoint(path, bundle, config_dict, step, config_hash=""):
    named = bundle.named_parameters()
    manifest = {
        "version": 1,
        "step": int(step),
        "config": config_dict,
        "config_sha256": config_hash,
        "tensors": [{"name": n, "shape": list(p.shape)} for n, p in named],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [_CKPT_MAGIC, struct.pack("<I", len(blob)), blob]
    parts.extend(ctf.dumps(p.data) for _, p in named)
    from .utils import atomic_write_bytes

    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path, model_config=None):
    """Returns (bundle, manifest). The bundle is rebuilt from the embedded
    config echo unless an explicit ModelConfig is supplied."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _CKPT_MAGIC:
        raise ShapeError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<I", buf, 4)
    manifest = json.loads(buf[8:8 + n].decode("utf-8"))
    cfgd = manifest["config"]
    if model_config is None:
        model_config = ModelConfig(
            input_dim=int(cfgd["input_dim"]),
            latent_dim=int(cfgd["latent_dim"]),
            hidden_width=int(cfgd.get("hidden_width", 256)),
            hidden_depth=int(cfgd.get("hidden_depth", 2)),
            classifier_width=int(cfgd.get("classifier_width", 256)),
            classifier_depth=int(cfgd.get("classifier_depth", 4)),
            gmm_components=int(cfgd.get("gmm_components", 2)),
            v_head_scale=float(cfgd.get("v_head_scale", 0.0)),
        )
    bundle = ModelBundle(model_config, np.random.default_rng(0))
    named = bundle.named_parameters()
    if len(named) != len(manifest["tensors"]):
        raise ShapeError("checkpoint/config mismatch: tensor count differs")
    offset = 8 + n
    for (name, param), entry in zip(named, manifest["tensors"]):
        arr, offset = ctf.loads(buf, offset)
        if name != entry["name"] or list(arr.shape) != entry["shape"] \
                or arr.shape != param.shape:
            raise ShapeError(f"checkpoint/config mismatch at tensor {name!r}")
        param.data = arr
    if offset != len(buf):
        raise ShapeError(f"{path}: trailing bytes after checkpoint tensors")
    return bundle, manifest
