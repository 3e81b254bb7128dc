"""Objectives and the two-phase training loop.

Per step (batch alternation):

* Phase A — draw a batch, build the VAE loss (reconstruction + KL, plus the
  density-ratio penalty scaled by gamma outside beta-VAE mode), update the
  encoder/decoder (and covariance branch) with the classifier frozen;
* Phase B — draw a fresh batch from an independent stream, build factorized
  samples (label 1) and negatives from the configured source (label 0), and
  update only the classifier on the contrastive cross-entropy.

Each phase owns its own batch and noise streams, so e.g. a beta-VAE run and
a gamma=0 run see bit-identical Phase A inputs — the code paths must agree
exactly when the penalty vanishes.
"""

import hashlib
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .copula import (DiagGaussian, GmmCopulaParams, StudentCopulaParams,
                     build_correlation, kl_diag_gaussian, permute_dims,
                     reparameterize, sample_gaussian_copula, sample_gmm_copula,
                     sample_student_copula)
from .data import EpochBatcher
from .errors import ConfigError, DivergenceError, NonFiniteError, ShapeError
from .model import Adam, ModelBundle, ModelConfig, save_checkpoint
from .tensor import Tensor
from .utils import make_rng, sha256_text

MODES = ("beta_vae", "factor_vae", "c2vae")
NEGATIVE_SOURCES = ("permute", "copula_gaussian", "copula_student", "copula_gmm")
ALTERNATIONS = ("batch", "epoch")

STEPLOG_HEADER = "step,recon,kl,tc_penalty,cls_loss,cls_acc"


@dataclass
class TrainConfig:
    mode: str = "c2vae"
    negative_source: str = "copula_gaussian"
    beta: float = 1.0
    gamma: float = 6.4
    penalty_sign: str = "auto"      # auto | +1 | -1
    batch_size: int = 64
    steps: int = 10000
    seed: int = 0
    latent_dim: int = 10
    lr_vae: float = 1e-4
    lr_classifier: float = 1e-4
    hidden_width: int = 256
    hidden_depth: int = 2
    classifier_width: int = 256
    classifier_depth: int = 4
    gmm_components: int = 2
    alternation: str = "batch"
    cov_encoder_in_phase_b: bool = False
    checkpoint_every: int = 0
    verify_phase_isolation: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.negative_source not in NEGATIVE_SOURCES:
            raise ConfigError(
                f"negative_source must be one of {NEGATIVE_SOURCES}, "
                f"got {self.negative_source!r}")
        if self.alternation not in ALTERNATIONS:
            raise ConfigError(f"alternation must be one of {ALTERNATIONS}")
        if str(self.penalty_sign) not in ("auto", "+1", "-1", "1"):
            raise ConfigError(f"penalty_sign must be auto, +1 or -1, "
                              f"got {self.penalty_sign!r}")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        for name in ("batch_size", "steps", "latent_dim", "hidden_width",
                     "hidden_depth", "classifier_width", "classifier_depth",
                     "gmm_components"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def resolved_sign(self):
        """+1 drives q(z) toward the negatives (FactorVAE/permute), −1 drives
        it away from coupled negatives (default in c2vae mode)."""
        s = str(self.penalty_sign)
        if s in ("+1", "1"):
            return 1.0
        if s == "-1":
            return -1.0
        if self.mode == "factor_vae" or self.negative_source == "permute":
            return 1.0
        return -1.0


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False,
                "yes": True, "no": False}


def parse_config(text):
    """Flat key=value lines → TrainConfig. Unknown keys are errors."""
    spec = {f.name: f for f in fields(TrainConfig)}
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = key.strip(), value.strip()
        if key not in spec:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        kwargs[key] = _convert(spec[key], key, value)
    return TrainConfig(**kwargs)


def _convert(field, key, value):
    if field.type == "bool" or isinstance(field.default, bool):
        if value.lower() not in _BOOL_VALUES:
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return _BOOL_VALUES[value.lower()]
    try:
        if isinstance(field.default, int):
            return int(value)
        if isinstance(field.default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return value


def config_to_text(cfg):
    """Canonical key=value echo (sorted keys); feeds the config hash."""
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in fields(TrainConfig)]
    return "\n".join(sorted(lines)) + "\n"


def apply_overrides(cfg, pairs):
    """Fresh TrainConfig with key=value overrides applied."""
    spec = {f.name: f for f in fields(TrainConfig)}
    kwargs = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or key.strip() not in spec:
            raise ConfigError(f"bad override {pair!r}")
        key = key.strip()
        kwargs[key] = _convert(spec[key], key, value.strip())
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def recon_loss(x, logits):
    """Mean over the batch of per-pixel-summed Bernoulli NLL on logits."""
    if x.shape != logits.shape:
        raise ShapeError(f"recon_loss: x {x.shape} vs logits {logits.shape}")
    per_pixel = T.softplus(logits) - x * logits
    return T.mean(T.sum_(per_pixel, axis=1))


def elbo_loss(x, q, z, logits, beta=1.0):
    """Negative ELBO (minimization form): recon + beta * mean KL."""
    del z  # the sample enters through logits; kept for the call contract
    return recon_loss(x, logits) + T.mean(kl_diag_gaussian(q)) * beta


def tc_penalty(bundle, z_batch):
    """Mean classifier logit on the batch, ψ frozen.

    log(σ(l)/(1−σ(l))) = l, so the density-ratio estimate is the raw logit;
    gradient reaches the encoder only through z.
    """
    return T.mean(bundle.classify(z_batch, frozen=True))


def tc_elbo_loss(cfg, x, q, z, logits, bundle):
    """elbo + sign·gamma·penalty; gamma == 0 reduces exactly to the ELBO."""
    if cfg.mode not in ("factor_vae", "c2vae"):
        raise ConfigError(f"tc_elbo_loss: invalid mode {cfg.mode!r}")
    loss = elbo_loss(x, q, z, logits)
    if cfg.gamma > 0.0:
        loss = loss + tc_penalty(bundle, z) * (cfg.resolved_sign() * cfg.gamma)
    return loss


def classifier_loss(bundle, z_q, z_p):
    """Binary cross-entropy with pseudo-labels 1 for z_q and 0 for z_p.

    −(1/2N)[Σ ln σ(Ψ(z_q)) + Σ ln(1−σ(Ψ(z_p)))], in the softplus form that
    stays finite for extreme logits. Gradients reach ψ only (inputs must be
    detached by the caller).
    """
    if z_q.shape[0] < 1 or z_p.shape[0] < 1:
        raise ShapeError("classifier_loss: empty batch")
    l_q = bundle.classify(z_q)
    l_p = bundle.classify(z_p)
    return (T.mean(T.softplus(-l_q)) + T.mean(T.softplus(l_p))) * 0.5


def classifier_accuracy(logits_q, logits_p):
    return 0.5 * (float((logits_q > 0).mean()) + float((logits_p <= 0).mean()))


# ---------------------------------------------------------------------------
# step log
# ---------------------------------------------------------------------------

@dataclass
class StepLog:
    step: int
    recon: float
    kl: float
    tc_penalty: float
    cls_loss: float
    cls_acc: float

    def csv_row(self):
        return (f"{self.step},{self.recon!r},{self.kl!r},{self.tc_penalty!r},"
                f"{self.cls_loss!r},{self.cls_acc!r}")


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def _hash_params(params):
    h = hashlib.sha256()
    for p in params:
        h.update(p.data.tobytes())
    return h.digest()


class Trainer:
    """Owns the model, optimizers and RNG streams for one training run."""

    def __init__(self, cfg, dataset):
        if len(dataset) == 0:
            raise ShapeError("train: empty dataset")
        self.cfg = cfg
        self.dataset = dataset
        mcfg = ModelConfig(
            input_dim=dataset.input_dim,
            latent_dim=cfg.latent_dim,
            hidden_width=cfg.hidden_width,
            hidden_depth=cfg.hidden_depth,
            classifier_width=cfg.classifier_width,
            classifier_depth=cfg.classifier_depth,
            gmm_components=cfg.gmm_components,
            # v ≡ 0 is a stationary point of the correlation map, so the
            # adversarial phase-B routing needs a symmetry-breaking seed
            v_head_scale=0.01 if cfg.cov_encoder_in_phase_b else 0.0,
        )
        self.bundle = ModelBundle(mcfg, make_rng(cfg.seed, "init"))

        vae_params = self.bundle.phi() + self.bundle.theta()
        if cfg.mode == "c2vae":
            vae_params += self.bundle.phi_c()
        self.opt_vae = Adam(vae_params, lr=cfg.lr_vae)
        cls_params = self.bundle.psi()
        if cfg.cov_encoder_in_phase_b:
            cls_params = cls_params + self.bundle.phi_c()
        self.opt_cls = Adam(cls_params, lr=cfg.lr_classifier)

        self.batcher_a = EpochBatcher(dataset, cfg.batch_size,
                                      make_rng(cfg.seed, "data", "a"))
        self.batcher_b = EpochBatcher(dataset, cfg.batch_size,
                                      make_rng(cfg.seed, "data", "b"))
        self.rng_eps_a = make_rng(cfg.seed, "eps", "a")
        self.rng_eps_b = make_rng(cfg.seed, "eps", "b")
        self.rng_neg = make_rng(cfg.seed, "neg")

    # ---- phases ----

    def phase_a(self):
        cfg = self.cfg
        x_np = self.batcher_a.next()
        x = Tensor(x_np)
        q = self.bundle.encode(x)
        eps = self.rng_eps_a.standard_normal(q.mu.shape)
        z = reparameterize(q, eps)
        logits = self.bundle.decode(z)

        rec = recon_loss(x, logits)
        kl = T.mean(kl_diag_gaussian(q))
        if cfg.mode == "beta_vae":
            loss = rec + kl * cfg.beta
            pen_value = 0.0
        else:
            loss = rec + kl
            if cfg.gamma > 0.0:
                pen = tc_penalty(self.bundle, z)
                loss = loss + pen * (cfg.resolved_sign() * cfg.gamma)
                pen_value = pen.item()
            else:
                pen_value = 0.0
        self.opt_vae.zero_grad()
        loss.backward()
        self.opt_vae.step()
        return rec.item(), kl.item(), pen_value

    def make_negatives(self, x_np, q):
        """Negative latents per the configured source, shape (N, d).

        Returns a Tensor; it carries a tape into phi_c only when
        cov_encoder_in_phase_b is set and the source is the Gaussian copula.
        """
        cfg, rng = self.cfg, self.rng_neg
        mu = q.mu.data
        if cfg.negative_source == "permute":
            zq = reparameterize(q, self.rng_eps_b.standard_normal(mu.shape))
            return Tensor(permute_dims(zq.data, rng))
        if cfg.negative_source == "copula_gaussian":
            eps = rng.standard_normal(mu.shape)
            if cfg.cov_encoder_in_phase_b:
                corr = build_correlation(
                    self.bundle.cov_features(Tensor(x_np)), self.bundle.corr_heads)
                return sample_gaussian_copula(Tensor(mu), corr.L, eps)
            with T.no_grad():
                corr = self.bundle.encode_cov(Tensor(x_np))
            return Tensor(sample_gaussian_copula(mu, corr.L.data, eps).data)
        sigma_c = np.exp(0.5 * q.logvar.data)
        if cfg.negative_source == "copula_student":
            rhos, nus = self.bundle.student_params_np(Tensor(x_np))
            out = np.stack([
                sample_student_copula(
                    StudentCopulaParams(rho=rhos[i], nu=float(nus[i])),
                    mu[i], sigma_c[i], rng)
                for i in range(mu.shape[0])])
            return Tensor(out)
        if cfg.negative_source == "copula_gmm":
            weights, means, sigmas, corrs = self.bundle.gmm_params_np(Tensor(x_np))
            out = np.stack([
                sample_gmm_copula(
                    GmmCopulaParams(weights=weights[i], means=means[i],
                                    sigmas=sigmas[i], correlations=corrs[i]),
                    rng)
                for i in range(mu.shape[0])])
            return Tensor(out)
        raise ConfigError(f"unknown negative_source {cfg.negative_source!r}")

    def phase_b(self):
        x_np = self.batcher_b.next()
        with T.no_grad():
            q = self.bundle.encode(Tensor(x_np))
        z_q = Tensor(reparameterize(
            q, self.rng_eps_b.standard_normal(q.mu.shape)).data)
        z_p = self.make_negatives(x_np, q)

        l_q = self.bundle.classify(z_q)
        l_p = self.bundle.classify(z_p)
        loss = (T.mean(T.softplus(-l_q)) + T.mean(T.softplus(l_p))) * 0.5
        self.opt_cls.zero_grad()
        loss.backward()
        self.opt_cls.step()
        return loss.item(), classifier_accuracy(l_q.data, l_p.data)

    # ---- driver ----

    def run(self, out_dir=None, log_stream=None):
        cfg = self.cfg
        logs = []
        check = cfg.verify_phase_isolation
        steps_per_epoch = max(1, len(self.dataset) // cfg.batch_size)
        if log_stream is not None:
            log_stream.write(STEPLOG_HEADER + "\n")

        for step in range(1, cfg.steps + 1):
            run_b_now = cfg.mode != "beta_vae" and (
                cfg.alternation == "batch" or step % steps_per_epoch == 0)

            try:
                if check:
                    psi_before = _hash_params(self.bundle.psi())
                recon, kl, pen = self.phase_a()
                if check and _hash_params(self.bundle.psi()) != psi_before:
                    raise AssertionError("phase A mutated psi")

                if run_b_now:
                    n_b = steps_per_epoch if cfg.alternation == "epoch" else 1
                    for _ in range(n_b):
                        if check:
                            frozen = self.bundle.phi() + self.bundle.theta()
                            if not cfg.cov_encoder_in_phase_b:
                                frozen += self.bundle.phi_c()
                            before = _hash_params(frozen)
                        cls_loss, cls_acc = self.phase_b()
                        if check and _hash_params(frozen) != before:
                            raise AssertionError("phase B mutated theta/phi/phi_c")
                else:
                    cls_loss, cls_acc = 0.0, 0.5
            except NonFiniteError as exc:
                if log_stream is not None:
                    log_stream.flush()
                raise DivergenceError(
                    f"non-finite value at step {step}: {exc}", step=step) from exc

            entry = StepLog(step, recon, kl, pen, cls_loss, cls_acc)
            values = (recon, kl, pen, cls_loss, cls_acc)
            if not all(np.isfinite(v) for v in values):
                if log_stream is not None:
                    log_stream.write(entry.csv_row() + "\n")
                    log_stream.flush()
                raise DivergenceError(f"non-finite loss at step {step}", step=step)
            logs.append(entry)
            if log_stream is not None:
                log_stream.write(entry.csv_row() + "\n")
                if step % 200 == 0:
                    log_stream.flush()

            if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 \
                    and step < cfg.steps:
                self.save(f"{out_dir}/ckpt_{step:07d}.ckpt", step)
        return logs

    def save(self, path, step):
        cfg_text = config_to_text(self.cfg)
        cfg_dict = {f.name: getattr(self.cfg, f.name) for f in fields(TrainConfig)}
        cfg_dict["input_dim"] = self.dataset.input_dim
        cfg_dict["v_head_scale"] = self.bundle.cfg.v_head_scale
        save_checkpoint(path, self.bundle, cfg_dict, step,
                        config_hash=sha256_text(cfg_text))


def train(cfg, dataset, out_dir=None, log_stream=None):
    """Run the configured training; returns (bundle, step logs)."""
    trainer = Trainer(cfg, dataset)
    logs = trainer.run(out_dir=out_dir, log_stream=log_stream)
    return trainer.bundle, logs
