"""Distributional primitives: diagonal Gaussians, learned correlation
matrices, and the samplers that produce dependence-carrying latent vectors.

The correlation construction follows the additive diagonal-plus-rank-one
parameterization ``M = diag(w) + v vᵀ`` with ``w > 0`` and ``v ∈ (−1, 1)``
per dimension, rescaled to exact unit diagonal and factorized by Cholesky so
coupled samples are a differentiable affine function of white noise.

Everything here is pure given an explicit numpy ``Generator``; samplers never
touch hidden global state.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CholeskyError, DomainError, ShapeError
from .special import norm_ppf, student_t_cdf
from .tensor import Tensor

log = logging.getLogger(__name__)

CHOLESKY_JITTER = 1e-10


# ---------------------------------------------------------------------------
# diagonal Gaussian posterior
# ---------------------------------------------------------------------------

@dataclass
class DiagGaussian:
    """Mean and log-variance of a factorized Gaussian, (d,) or (N, d)."""

    mu: Tensor
    logvar: Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise ShapeError(
                f"DiagGaussian: mu {self.mu.shape} vs logvar {self.logvar.shape}")

    @property
    def dim(self):
        return self.mu.shape[-1]


def kl_diag_gaussian(q):
    """KL(q ‖ N(0, I)) = Σⱼ ½(μⱼ² + σⱼ² − 1 − log σⱼ²).

    Returns a 0-d tensor for a single distribution, (N,) for a batch.
    """
    var = T.exp(q.logvar)
    per_dim = (q.mu * q.mu + var - q.logvar - 1.0) * 0.5
    return T.sum_(per_dim, axis=-1 if per_dim.ndim > 1 else None)


def reparameterize(q, eps):
    """z = μ + exp(½ logvar) ⊙ ε, differentiable in μ and logvar."""
    eps_t = eps if isinstance(eps, Tensor) else Tensor(eps)
    if eps_t.shape != q.mu.shape:
        raise ShapeError(f"reparameterize: eps {eps_t.shape} vs mu {q.mu.shape}")
    return q.mu + T.exp(q.logvar * 0.5) * eps_t


# ---------------------------------------------------------------------------
# learned correlation structure
# ---------------------------------------------------------------------------

@dataclass
class CorrelationModel:
    """Learned dependence structure: w, v, unit-diagonal sigma, Cholesky L.

    All fields are tensors with matching leading batch dims; ``sigma`` and
    ``L`` are (..., d, d).
    """

    w: Tensor
    v: Tensor
    sigma: Tensor
    L: Tensor


def cholesky(sigma):
    """Lower Cholesky factor with a single logged jitter retry.

    ``sigma`` may be a Tensor (stays on the tape) or a plain array.
    """
    mat = sigma if isinstance(sigma, Tensor) else Tensor(sigma)
    try:
        return T.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    d = mat.shape[-1]
    eye = np.broadcast_to(np.eye(d), mat.shape)
    log.warning("cholesky: factorization failed, retrying with %g jitter",
                CHOLESKY_JITTER)
    jittered = mat + Tensor(CHOLESKY_JITTER * np.ascontiguousarray(eye))
    try:
        return T.cholesky(jittered)
    except np.linalg.LinAlgError:
        eigvals = np.linalg.eigvalsh(mat.data)
        raise CholeskyError(
            f"matrix not positive definite after {CHOLESKY_JITTER} jitter "
            f"(min eigenvalue {eigvals.min():.3e})",
            min_eigenvalue=float(eigvals.min()),
        ) from None


@dataclass
class CorrelationHeads:
    """Affine maps producing the raw w and v vectors from encoder features."""

    w_weight: Tensor
    w_bias: Tensor
    v_weight: Tensor
    v_bias: Tensor


def build_correlation(raw, heads):
    """Raw feature rows → CorrelationModel.

    w = softplus(affine₁(raw)) keeps the diagonal load positive,
    v = tanh(affine₂(raw)) bounds the shared factor, and
    sigma = D^{-½} (diag(w) + v vᵀ) D^{-½} has exact unit diagonal and is
    positive definite by construction. Fully differentiable, including
    through the Cholesky factor.
    """
    squeeze = raw.ndim == 1
    if squeeze:
        raw = T.reshape(raw, (1, raw.shape[0]))
    w = T.softplus(T.linear(raw, heads.w_weight, heads.w_bias))
    v = T.tanh(T.linear(raw, heads.v_weight, heads.v_bias))
    sigma = correlation_from_wv(w, v)
    L = cholesky(sigma)
    if squeeze:
        w, v = T.reshape(w, (w.shape[1],)), T.reshape(v, (v.shape[1],))
        d = sigma.shape[-1]
        sigma, L = T.reshape(sigma, (d, d)), T.reshape(L, (d, d))
    return CorrelationModel(w=w, v=v, sigma=sigma, L=L)


def correlation_from_wv(w, v):
    """Unit-diagonal PD correlation from positive w and bounded v (tensors)."""
    m = T.diag_embed(w) + T.batched_outer(v)
    scale = T.sqrt(T.diagonal(m))
    return T.unit_diag(m / T.batched_outer(scale))


def correlation_from_wv_np(w, v):
    """Numpy twin of :func:`correlation_from_wv` for detached samplers."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    m = v[..., :, None] * v[..., None, :]
    idx = np.arange(w.shape[-1])
    m[..., idx, idx] += w
    scale = np.sqrt(m[..., idx, idx])
    sigma = m / (scale[..., :, None] * scale[..., None, :])
    sigma[..., idx, idx] = 1.0
    return sigma


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def sample_gaussian_copula(mu_c, L, eps):
    """z_p = μ_c + L ε: white noise colored by the learned coupling.

    Differentiable wrt ``mu_c`` and ``L`` when they carry the tape.
    """
    mu_t = mu_c if isinstance(mu_c, Tensor) else Tensor(mu_c)
    L_t = L if isinstance(L, Tensor) else Tensor(L)
    eps_t = eps if isinstance(eps, Tensor) else Tensor(eps)
    if eps_t.shape != mu_t.shape:
        raise ShapeError(f"sample_gaussian_copula: eps {eps_t.shape} vs mu {mu_t.shape}")
    return mu_t + T.batched_matvec(L_t, eps_t)


@dataclass
class StudentCopulaParams:
    """Correlation matrix and degrees of freedom of a t copula."""

    rho: np.ndarray
    nu: float

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if not np.isfinite(self.nu) or self.nu <= 2.0:
            raise DomainError(f"StudentCopulaParams: nu must be finite and > 2, got {self.nu}")
        if not np.allclose(np.diagonal(self.rho), 1.0, atol=1e-8):
            raise DomainError("StudentCopulaParams: rho must have unit diagonal")


def sample_student_copula(params, mu_c, sigma_c, rng, size=None):
    """Gaussian marginals tied together by a Student-t copula.

    Draw t ~ multivariate-t(ρ, ν) as L_ρ ε √(ν/χ²_ν), push each coordinate
    through the univariate t CDF to get uᵢ ∈ (0,1), then map through the
    normal quantile: zᵢ = μᵢ + σᵢ Φ⁻¹(uᵢ).
    """
    mu_c = np.asarray(mu_c, dtype=np.float64)
    sigma_c = np.asarray(sigma_c, dtype=np.float64)
    d = mu_c.shape[-1]
    n = 1 if size is None else int(size)
    L_rho = np.linalg.cholesky(params.rho)
    eps = rng.standard_normal((n, d))
    chi2 = rng.chisquare(params.nu, size=n)
    t = (eps @ L_rho.T) * np.sqrt(params.nu / chi2)[:, None]
    u = np.clip(student_t_cdf(t, params.nu), 1e-12, 1.0 - 1e-12)
    z = mu_c + sigma_c * norm_ppf(u)
    return z[0] if size is None else z


@dataclass
class GmmCopulaParams:
    """Mixture-of-Gaussians dependence structure.

    weights: (k,) simplex; means, sigmas: (k, d); correlations: (k, d, d)
    unit-diagonal PD matrices.
    """

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray
    correlations: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        self.correlations = np.asarray(self.correlations, dtype=np.float64)
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("GmmCopulaParams: weights must be a simplex (tol 1e-12)")
        if np.any(self.sigmas <= 0.0):
            raise DomainError("GmmCopulaParams: sigmas must be positive")

    @property
    def k(self):
        return self.weights.shape[0]


def sample_gmm_copula(params, rng, size=None):
    """Pick component i ∝ wᵢ, then z = μᵢ + Lᵢ (σᵢ ⊙ ε)."""
    n = 1 if size is None else int(size)
    d = params.means.shape[-1]
    comp = rng.choice(params.k, size=n, p=params.weights)
    eps = rng.standard_normal((n, d))
    chols = np.linalg.cholesky(params.correlations)
    scaled = params.sigmas[comp] * eps
    z = params.means[comp] + np.einsum("nij,nj->ni", chols[comp], scaled)
    return z[0] if size is None else z


def permute_dims(latents, rng):
    """Shuffle each column independently: marginals exact, joint destroyed."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] < 2:
        raise ShapeError(f"permute_dims: need an (N≥2, d) batch, got {latents.shape}")
    out = np.empty_like(latents)
    for j in range(latents.shape[1]):
        out[:, j] = latents[rng.permutation(latents.shape[0]), j]
    return out


def gaussian_copula_density(u, sigma):
    """Density of the Gaussian copula at u ∈ (0,1)^d.

    c(u) = |R|^{-½} exp(−½ qᵀ(R⁻¹ − I)q) with q = Φ⁻¹(u). Accepts a single
    point (d,) or a batch (N, d).
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise DomainError("gaussian_copula_density: u must lie strictly inside (0,1)")
    sigma = np.asarray(sigma, dtype=np.float64)
    q = np.atleast_2d(norm_ppf(u))
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise DomainError("gaussian_copula_density: sigma must be positive definite")
    quad = np.einsum("ni,ij,nj->n", q, np.linalg.inv(sigma) - np.eye(sigma.shape[0]), q)
    dens = np.exp(-0.5 * (logdet + quad))
    return float(dens[0]) if u.ndim == 1 else dens
