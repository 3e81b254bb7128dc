"""Disentanglement and unsupervised representation scores.

All scores consume a LatentTable (posterior means paired with ground-truth
factor indices) except the intervention score, which drives the encoder
through the fixed-factor protocol itself. Estimators are deliberately
histogram/closed-form based so each has an independently checkable oracle:

* mutual information — plug-in estimate from the joint label histogram;
* MIG — normalized gap between the top-two latent dims per factor;
* SAP — gap between the two most predictive single dims per factor, where a
  dim's predictiveness is the accuracy of a 10-bin ordinal-split predictor
  (per-bin majority vote);
* FAC — majority-vote accuracy of identifying the fixed factor from the
  least-variable normalized latent dim;
* MI/TC/WCN — mean pairwise MI, Gaussian total correlation −½ ln det R, and
  the Bures 2-Wasserstein distance between the Gaussian fit and its
  diagonal counterpart, normalized by √trace(S).
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .data import fixed_factor_batch
from .errors import ShapeError
from .tensor import Tensor
from .utils import make_rng

log = logging.getLogger(__name__)

DEFAULT_BINS = 20
SAP_SPLITS = 10
FAC_TRAIN_VOTES = 800
FAC_EVAL_VOTES = 200
FAC_PROBES = 64


@dataclass
class LatentTable:
    means: np.ndarray    # (N, d)
    factors: np.ndarray  # (N, F) integer codes

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.factors = np.asarray(self.factors)
        if self.means.shape[0] != self.factors.shape[0]:
            raise ShapeError(f"LatentTable: {self.means.shape[0]} mean rows vs "
                             f"{self.factors.shape[0]} factor rows")
        if not np.isfinite(self.means).all():
            raise ShapeError("LatentTable: non-finite means")


@dataclass
class MetricReport:
    mig: float
    sap: float
    fac: float
    mi_score: float
    tc_score: float
    wcn: float
    recon: float
    kl: float
    w2_raw: float  # unnormalized Bures distance, reported alongside wcn

    @staticmethod
    def csv_header():
        return ",".join(f.name for f in fields(MetricReport))

    def csv_row(self):
        return ",".join(repr(getattr(self, f.name)) for f in fields(MetricReport))


# ---------------------------------------------------------------------------
# histogram information estimators
# ---------------------------------------------------------------------------

def discretize(column, bins):
    """Equal-width binning over [min, max]; constant columns map to label 0.

    Interior edges are left-closed going up, so the top bin is right-closed.
    """
    if bins < 2:
        raise ShapeError("discretize: bins must be >= 2")
    column = np.asarray(column, dtype=np.float64)
    lo, hi = column.min(), column.max()
    if lo == hi:
        return np.zeros(column.shape[0], dtype=np.int64)
    edges = np.linspace(lo, hi, bins + 1)[1:-1]
    return np.searchsorted(edges, column, side="right").astype(np.int64)


def entropy(labels):
    """Shannon entropy in nats of a label vector."""
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def mutual_information(a, b):
    """Plug-in MI in nats from the joint histogram of two label vectors."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.size == 0:
        raise ShapeError("mutual_information: label vectors must match and be nonempty")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    joint = np.bincount(ai * nb + bi, minlength=na * nb).reshape(na, nb)
    joint = joint / joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])).sum())


def _mi_matrix(table, bins):
    """MI between every discretized latent dim and every factor: (d, F)."""
    n, d = table.means.shape
    f = table.factors.shape[1]
    codes = [discretize(table.means[:, j], bins) for j in range(d)]
    out = np.empty((d, f))
    for j in range(d):
        for k in range(f):
            out[j, k] = mutual_information(codes[j], table.factors[:, k])
    return out


def mig(table, bins=DEFAULT_BINS):
    """Mean over factors of the top-two MI gap, normalized by factor entropy."""
    if table.means.shape[1] < 2:
        raise ShapeError("mig: need at least 2 latent dims")
    m = _mi_matrix(table, bins)
    gaps = []
    for k in range(table.factors.shape[1]):
        h = entropy(table.factors[:, k])
        if h <= 0:
            raise ShapeError(f"mig: factor {k} takes a single value")
        top = np.sort(m[:, k])[::-1]
        gaps.append((top[0] - top[1]) / h)
    return float(np.clip(np.mean(gaps), 0.0, 1.0))


# ---------------------------------------------------------------------------
# predictability
# ---------------------------------------------------------------------------

def _ordinal_split_accuracy(column, target, splits=SAP_SPLITS):
    """Accuracy of predicting ``target`` from ``column`` via an ordinal
    partition into ``splits`` quantile bins with per-bin majority vote."""
    edges = np.quantile(column, np.linspace(0, 1, splits + 1)[1:-1])
    bins = np.searchsorted(edges, column, side="right")
    correct = 0
    for b in np.unique(bins):
        members = target[bins == b]
        correct += np.bincount(members).max()
    return correct / target.shape[0]


def sap(table, splits=SAP_SPLITS):
    """Mean over factors of (best − second-best) single-dim predictability."""
    if table.means.shape[1] < 2:
        raise ShapeError("sap: need at least 2 latent dims")
    gaps = []
    for k in range(table.factors.shape[1]):
        target = table.factors[:, k].astype(np.int64)
        if np.unique(target).size < 2:
            raise ShapeError(f"sap: factor {k} is degenerate")
        scores = sorted(
            (_ordinal_split_accuracy(table.means[:, j], target, splits)
             for j in range(table.means.shape[1])),
            reverse=True)
        gaps.append(scores[0] - scores[1])
    return float(np.mean(gaps))


# ---------------------------------------------------------------------------
# intervention score
# ---------------------------------------------------------------------------

def fac_score(encode_means, dataset, train_votes=FAC_TRAIN_VOTES,
              eval_votes=FAC_EVAL_VOTES, probes_per_vote=FAC_PROBES,
              seed=0):
    """FactorVAE-protocol majority-vote score.

    ``encode_means`` maps a flat image batch (N, pixels) to latent means
    (N, d). Per vote: fix one factor, encode a batch sharing that value,
    normalize dims by their global std, and vote with the argmin-variance
    dim. A majority classifier fit on the training votes is scored on the
    held-out votes. Deterministic for a given seed regardless of the thread
    count (per-vote RNG streams; ordered reduction).
    """
    means_all = encode_means(dataset.flat_images())
    global_std = means_all.std(axis=0)
    active = np.flatnonzero(global_std > 1e-12)
    if active.size == 0:
        raise ShapeError("fac_score: every latent dim has zero variance")
    std_active = global_std[active]
    n_factors = len(dataset.spec.factors)

    def one_vote(v):
        rng = make_rng(seed, "fac", v)
        k = int(rng.integers(n_factors))
        batch, _ = fixed_factor_batch(dataset, k, probes_per_vote, rng, replace=True)
        reps = encode_means(batch)[:, active] / std_active
        return k, int(np.argmin(reps.var(axis=0)))

    total = train_votes + eval_votes
    threads = int(os.environ.get("C2VAE_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            votes = list(pool.map(one_vote, range(total)))
    else:
        votes = [one_vote(v) for v in range(total)]

    counts = np.zeros((n_factors, active.size), dtype=np.int64)
    for k, dim in votes[:train_votes]:
        counts[k, dim] += 1
    majority = counts.argmax(axis=0)
    hits = sum(1 for k, dim in votes[train_votes:] if majority[dim] == k)
    return hits / eval_votes


# ---------------------------------------------------------------------------
# unsupervised scores
# ---------------------------------------------------------------------------

def _psd_sqrt(mat):
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def unsup_scores(table, bins=DEFAULT_BINS):
    """(mi_score, tc_score, wcn, w2_raw) of the latent means.

    tc_score is the Gaussian total correlation −½ ln det R of the empirical
    correlation matrix; wcn is W₂(N(m,S), N(m,diag S)) / √trace(S) using the
    closed-form Bures distance.
    """
    means = table.means
    n, d = means.shape
    if n <= d:
        raise ShapeError(f"unsup_scores: need more rows ({n}) than dims ({d})")

    codes = [discretize(means[:, j], bins) for j in range(d)]
    pair_mi = [mutual_information(codes[i], codes[j])
               for i in range(d) for j in range(i + 1, d)]
    mi_score = float(np.mean(pair_mi)) if pair_mi else 0.0

    cov = np.cov(means.T, ddof=1)
    cov = np.atleast_2d(cov)
    diag = np.diagonal(cov).copy()
    if np.any(diag <= 0) or np.linalg.matrix_rank(cov) < d:
        log.warning("unsup_scores: singular covariance, adding 1e-10 jitter")
        cov = cov + 1e-10 * np.eye(d)
        diag = np.diagonal(cov).copy()
    corr = cov / np.sqrt(np.outer(diag, diag))
    sign, logdet = np.linalg.slogdet(corr)
    tc_score = float(-0.5 * logdet) if sign > 0 else float("inf")

    d_half = np.sqrt(diag)
    cross = _psd_sqrt(d_half[:, None] * cov * d_half[None, :])
    w2_sq = float(np.trace(cov) + diag.sum() - 2.0 * np.trace(cross))
    w2 = np.sqrt(max(w2_sq, 0.0))
    wcn = float(w2 / np.sqrt(np.trace(cov)))
    return mi_score, tc_score, wcn, float(w2)


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

def encode_dataset_means(bundle, dataset, batch=512):
    """Posterior means for every dataset image, deterministic."""
    flats = dataset.flat_images()
    rows = []
    with T.no_grad():
        for i in range(0, flats.shape[0], batch):
            rows.append(bundle.encode(Tensor(flats[i:i + batch])).mu.data)
    return np.concatenate(rows, axis=0)


def evaluate(bundle, dataset, bins=DEFAULT_BINS, metric_seed=0,
             train_votes=FAC_TRAIN_VOTES, eval_votes=FAC_EVAL_VOTES,
             probes_per_vote=FAC_PROBES):
    """Encode the dataset and compute every score plus recon/KL.

    Reconstruction is scored at the posterior mean (z = μ), so the report is
    a deterministic function of (checkpoint, dataset, metric_seed).
    """
    from .copula import kl_diag_gaussian
    from .training import recon_loss

    means = encode_dataset_means(bundle, dataset)
    table = LatentTable(means=means, factors=dataset.factors)

    def encode_means(flat):
        with T.no_grad():
            return bundle.encode(Tensor(flat)).mu.data

    mi_score, tc_score, wcn, w2 = unsup_scores(table, bins)
    flats = dataset.flat_images()
    recon_total, kl_total, count = 0.0, 0.0, 0
    with T.no_grad():
        for i in range(0, flats.shape[0], 512):
            x = Tensor(flats[i:i + 512])
            q = bundle.encode(x)
            logits = bundle.decode(q.mu)
            w = x.shape[0]
            recon_total += recon_loss(x, logits).item() * w
            kl_total += T.mean(kl_diag_gaussian(q)).item() * w
            count += w
    return MetricReport(
        mig=mig(table, bins),
        sap=sap(table),
        fac=fac_score(encode_means, dataset, train_votes, eval_votes,
                      probes_per_vote, seed=metric_seed),
        mi_score=mi_score,
        tc_score=tc_score,
        wcn=wcn,
        recon=recon_total / count,
        kl=kl_total / count,
        w2_raw=w2,
    )
