"""Object subspace: PCA / variational Bayesian PCA fits, projection and
back-projection.

A fitted model carries only an orthonormal basis ``W``; the data mean is
folded into its span, so an object vector ``o`` embeds as ``W.T @ o`` and an
embedding ``e`` reconstructs as ``W @ e``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"BEOS"
ORTHO_TOL = 1e-6
LN_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class SubspaceModel:
    basis: np.ndarray
    resolution: int | None = None
    variance_captured: float = float("nan")
    fit_info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.basis, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] < 1:
            raise ValueError("basis must be a V x k matrix with k >= 1")
        err = np.abs(w.T @ w - np.eye(w.shape[1])).max()
        if err >= ORTHO_TOL:
            raise ValueError(f"basis is not orthonormal (max |W^T W - I| = {err:.3g})")
        w.setflags(write=False)
        object.__setattr__(self, "basis", w)

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def k(self):
        return self.basis.shape[1]


def _as_matrix(data):
    if isinstance(data, np.ndarray) and data.ndim == 2:
        x = data.astype(np.float64, copy=False)
    else:
        rows = [np.asarray(d, dtype=np.float64).reshape(-1) for d in data]
        if not rows:
            raise ValueError("no data vectors")
        if len({r.size for r in rows}) != 1:
            raise ValueError("data vectors have inconsistent lengths")
        x = np.stack(rows)
    return x


def _check_k(k, x):
    n, v = x.shape
    if n < 2:
        raise ValueError("need at least 2 data vectors")
    if not 1 <= k <= min(v, n):
        raise ValueError(f"k={k} out of range [1, {min(v, n)}]")


def _canonical_signs(u):
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def orthonormalize(w_raw, mu, resolution=None, variance_captured=float("nan"), fit_info=None):
    """Orthonormal basis for span([w_raw, mu]) via SVD, rank-truncated."""
    w_raw = np.asarray(w_raw, dtype=np.float64)
    if w_raw.ndim == 1:
        w_raw = w_raw[:, None]
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if mu.size != w_raw.shape[0]:
        raise ValueError("mean length does not match basis rows")
    m = np.column_stack([w_raw, mu])
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("cannot orthonormalize an all-zero basis")
    rank = int(np.sum(s > s[0] * max(m.shape) * np.finfo(np.float64).eps))
    basis = _canonical_signs(u[:, :rank])
    return SubspaceModel(basis, resolution, float(variance_captured), fit_info or {})


def _infer_resolution(v):
    r = round(v ** (1 / 3))
    return r if r ** 3 == v else None


def fit_pca(data, k, resolution=None):
    """Top-``k`` principal directions of the centred data, plus the mean."""
    x = _as_matrix(data)
    _check_k(k, x)
    mu = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mu, full_matrices=False)
    total = float(np.sum(s ** 2))
    captured = float(np.sum(s[:k] ** 2)) / total if total > 0 else 1.0
    comps = vt[:k].T * s[:k]
    if resolution is None:
        resolution = _infer_resolution(x.shape[1])
    info = {"method": "pca", "components": comps, "mean": mu, "effective_dim": int(np.sum(s[:k] > 0))}
    return orthonormalize(comps, mu, resolution, captured, info)


def _gamma_entropy(a, b):
    return a - np.log(b) + gammaln(a) + (1 - a) * digamma(a)


def fit_vbpca(data, k_max, max_iters=200, tol=1e-6, prune_threshold=1e-8,
              prior=1e-3, mean_precision=1e-3, resolution=None):
    """Variational Bayesian PCA with per-column ARD precisions.

    Generative model ``t = W x + mu + noise`` with ``x ~ N(0, I)``, isotropic
    noise precision ``tau ~ Gamma``, ``mu ~ N(0, I / mean_precision)`` and
    column priors ``w_i ~ N(0, I / alpha_i)``, ``alpha_i ~ Gamma``. All Gamma
    priors use shape = rate = ``prior``. Updates are the standard mean-field
    coordinate ascent; the free energy (ELBO) is tracked for convergence.

    A column is pruned once the squared norm of its posterior mean drops
    below ``prune_threshold`` times the largest column's. The retained columns and
    the mean are then orthonormalized.
    """
    t = _as_matrix(data)
    _check_k(k_max, t)
    n, d = t.shape
    q = k_max
    a0 = b0 = float(prior)
    beta = float(mean_precision)

    # deterministic PCA initialisation
    mu_m = t.mean(axis=0)
    tc = t - mu_m
    _, s, vt = np.linalg.svd(tc, full_matrices=False)
    s = np.concatenate([s, np.zeros(max(0, q - s.size))])[:q]
    vt = np.vstack([vt, np.zeros((max(0, q - vt.shape[0]), d))])[:q]
    w_m = vt.T * (s / np.sqrt(n))
    total_var = float(np.sum(tc ** 2)) / (n * d)
    resid = total_var - float(np.sum(s ** 2)) / (n * d)
    tau = 1.0 / max(resid, 1e-3 * total_var, 1e-12)
    alpha = np.full(q, 1.0)
    sigma_w = np.zeros((q, q))
    mu_var = 0.0

    t_sq = float(np.sum(t * t))
    t_sum = t.sum(axis=0)
    a_alpha = a0 + d / 2.0
    a_tau = a0 + n * d / 2.0
    history = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        # q(x)
        wtw = w_m.T @ w_m + d * sigma_w
        sigma_x = np.linalg.inv(np.eye(q) + tau * wtw)
        tc = t - mu_m
        x_m = tau * (tc @ w_m) @ sigma_x
        sxx = n * sigma_x + x_m.T @ x_m
        x_sum = x_m.sum(axis=0)
        # q(mu)
        mu_var = 1.0 / (beta + n * tau)
        mu_m = tau * mu_var * (t_sum - w_m @ x_sum)
        # q(W), rows share one covariance
        sigma_w = np.linalg.inv(np.diag(alpha) + tau * sxx)
        tc = t - mu_m
        w_m = tau * (tc.T @ x_m) @ sigma_w
        # q(alpha)
        w_sq = np.sum(w_m ** 2, axis=0) + d * np.diag(sigma_w)
        b_alpha = b0 + w_sq / 2.0
        alpha = a_alpha / b_alpha
        # q(tau)
        wtw = w_m.T @ w_m + d * sigma_w
        mu_sq = float(mu_m @ mu_m) + d * mu_var
        sse = (t_sq + n * mu_sq + float(np.sum(wtw * sxx))
               + 2.0 * float(mu_m @ (w_m @ x_sum))
               - 2.0 * float(np.sum((t @ w_m) * x_m))
               - 2.0 * float(t_sum @ mu_m))
        sse = max(sse, 1e-300)
        b_tau = b0 + sse / 2.0
        tau = a_tau / b_tau

        ln_tau = digamma(a_tau) - np.log(b_tau)
        ln_alpha = digamma(a_alpha) - np.log(b_alpha)
        _, logdet_x = np.linalg.slogdet(sigma_x)
        _, logdet_w = np.linalg.slogdet(sigma_w)
        elbo = (0.5 * n * d * (ln_tau - LN_2PI) - 0.5 * tau * sse
                - 0.5 * n * q * LN_2PI - 0.5 * np.trace(sxx)
                + np.sum(0.5 * d * (ln_alpha - LN_2PI) - 0.5 * alpha * w_sq)
                + np.sum(a0 * np.log(b0) - gammaln(a0) + (a0 - 1) * ln_alpha - b0 * alpha)
                + 0.5 * d * (np.log(beta) - LN_2PI) - 0.5 * beta * mu_sq
                + a0 * np.log(b0) - gammaln(a0) + (a0 - 1) * ln_tau - b0 * tau
                + n * (0.5 * q * (1 + LN_2PI) + 0.5 * logdet_x)
                + d * (0.5 * q * (1 + LN_2PI) + 0.5 * logdet_w)
                + 0.5 * d * (1 + LN_2PI + np.log(mu_var))
                + np.sum(_gamma_entropy(a_alpha, b_alpha))
                + _gamma_entropy(a_tau, b_tau))
        history.append(float(elbo))

        mean_sq = np.sum(w_m ** 2, axis=0)
        keep = mean_sq >= prune_threshold * mean_sq.max()
        if not keep.all():
            w_m = w_m[:, keep]
            sigma_w = sigma_w[np.ix_(keep, keep)]
            alpha = alpha[keep]
            q = int(keep.sum())
            # the free energy jumps after pruning; restart the convergence test
            history.append(float("nan"))
            continue
        if len(history) >= 2 and np.isfinite(history[-2]):
            prev = history[-2]
            if abs(elbo - prev) <= tol * abs(elbo):
                converged = True
                break
    if not converged:
        logger.warning("VBPCA did not converge in %d iterations", max_iters)

    tc = t - mu_m
    proj = np.linalg.qr(w_m)[0]
    total = float(np.sum(tc ** 2))
    captured = float(np.sum((tc @ proj) ** 2)) / total if total > 0 else 1.0
    if resolution is None:
        resolution = _infer_resolution(d)
    info = {
        "method": "vbpca",
        "components": w_m,
        "mean": mu_m,
        "effective_dim": q,
        "alpha": alpha,
        "noise_variance": 1.0 / tau,
        "elbo": history,
        "converged": converged,
        "n_iter": it,
    }
    return orthonormalize(w_m, mu_m, resolution, captured, info)


def _check_len(model, x, axis_len, what):
    if x.shape[-1] != axis_len:
        raise ValueError(f"{what} length {x.shape[-1]} does not match model ({axis_len})")


def project(model, o):
    """Embedding ``W.T @ o``; accepts one vector or rows of vectors."""
    o = np.asarray(o, dtype=np.float64)
    _check_len(model, o, model.dim, "object vector")
    return o @ model.basis


def backproject(model, e):
    """Reconstruction ``W @ e`` in voxel space; one vector or rows."""
    e = np.asarray(e, dtype=np.float64)
    _check_len(model, e, model.k, "embedding")
    return e @ model.basis.T


def explained_variance(model, data):
    """Share of the data's second moment (about the origin) inside span(W)."""
    x = _as_matrix(data)
    _check_len(model, x, model.dim, "object vector")
    total = float(np.sum(x * x))
    if total == 0:
        return 1.0
    return float(np.sum((x @ model.basis) ** 2)) / total


def projector_distance(a, b):
    """Spectral norm of the difference of the orthogonal projectors onto
    span(a) and span(b)."""
    qa = np.linalg.qr(np.asarray(a, dtype=np.float64))[0]
    qb = np.linalg.qr(np.asarray(b, dtype=np.float64))[0]
    # ||Pa - Pb|| = max(||(I - Pb) Qa||, ||(I - Pa) Qb||), without forming V x V
    ra = qa - qb @ (qb.T @ qa)
    rb = qb - qa @ (qa.T @ qb)
    return float(max(np.linalg.norm(ra, 2), np.linalg.norm(rb, 2)))


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IIId", model.dim, model.k, model.resolution or 0,
                             model.variance_captured))
        fh.write(model.basis.T.astype("<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a subspace model file")
    v, k, res, var = struct.unpack("<IIId", data[4:24])
    w = np.frombuffer(data[24:], dtype="<f8")
    if w.size != v * k:
        raise ValueError(f"{path}: truncated basis")
    return SubspaceModel(w.reshape(k, v).T.copy(), res or None, var)
