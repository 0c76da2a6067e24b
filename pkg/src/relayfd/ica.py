"""FastICA by deflation: centering, PCA whitening, one-unit fixed-point updates.

Data matrices are channels x time (M x T).  The whitening transform comes
from the eigendecomposition of the M x M sample covariance, which is cheap
because M (the number of lags) is small in this package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.ndim != 2:
        raise ValueError("data matrix must be 2-D (channels x time)")
    if not np.all(np.isfinite(x)):
        raise ValueError("data matrix contains non-finite entries")
    return x


def center(x):
    """Subtract each row's sample mean. Returns ``(centered, mean)``."""
    x = _as_matrix(x)
    if x.shape[1] < 2:
        raise ValueError("need at least two time points to center")
    mean = x.mean(axis=1)
    return x - mean[:, np.newaxis], mean


@dataclass(frozen=True)
class WhiteningResult:
    mean: np.ndarray
    whitening_matrix: np.ndarray   # n x M
    whitened: np.ndarray           # n x T
    retained_dims: int
    eigenvalues: np.ndarray        # all M, descending

    @property
    def dewhitening_matrix(self) -> np.ndarray:
        """Pseudo-inverse of the whitening matrix, E sqrt(Lambda) (M x n)."""
        return self.whitening_matrix.T * self.eigenvalues[:self.retained_dims][np.newaxis, :]


def whiten(x, eig_cutoff_ratio: float = 1e-6, n_components: int | None = None) -> WhiteningResult:
    """Whiten ``x`` and drop low-variance directions.

    Directions whose covariance eigenvalue falls below
    ``eig_cutoff_ratio * max_eigenvalue`` are discarded; ``n_components``
    additionally caps the retained dimension at the leading principal
    components.  The covariance is normalized by T, so the whitened rows
    have exactly unit sample variance under the same convention.
    """
    x = _as_matrix(x)
    xc, mean = center(x)
    t = xc.shape[1]
    cov = xc @ xc.T / t
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    if not evals[0] > 0:
        raise ValueError("data has no variance to whiten")
    n = int(np.count_nonzero(evals > eig_cutoff_ratio * evals[0]))
    if n_components is not None:
        n = min(n, n_components)
    v = evecs[:, :n].T / np.sqrt(evals[:n])[:, np.newaxis]
    return WhiteningResult(mean, v, v @ xc, n, evals.copy())


# -- contrast functions --------------------------------------------------------

def _logcosh(u):
    # log(cosh(u)) without overflow for large |u|
    a = np.abs(u)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


# name: (G, g, sum of g' over the sample given u and g(u))
_CONTRASTS = {
    "logcosh": (_logcosh, np.tanh, lambda u, g: u.size - g @ g),
    "cube": (lambda u: u ** 4 / 4.0, lambda u: u ** 3, lambda u, g: 3.0 * (u @ u)),
}


@lru_cache(maxsize=None)
def gaussian_reference(nonlinearity: str = "logcosh") -> float:
    """E{G(nu)} for a standard normal nu."""
    G = _CONTRASTS[nonlinearity][0]
    pdf = lambda u: np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)
    val, _ = integrate.quad(lambda u: float(G(np.float64(u))) * pdf(u), -np.inf, np.inf)
    return val


def negentropy_approx(y, nonlinearity: str = "logcosh") -> float:
    """``(E{G(y)} - E{G(nu)})**2`` after standardizing ``y``."""
    if nonlinearity not in _CONTRASTS:
        raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
    y = np.asarray(y, dtype=float).ravel()
    sd = y.std()
    if not sd > 0:
        raise ValueError("cannot standardize a constant sample")
    z = (y - y.mean()) / sd
    G = _CONTRASTS[nonlinearity][0]
    return float((np.mean(G(z)) - gaussian_reference(nonlinearity)) ** 2)


# -- fixed-point iteration -----------------------------------------------------

@dataclass(frozen=True)
class DemixingModel:
    w_matrix: np.ndarray           # n_sources x retained_dims, rows orthonormal
    whitening: WhiteningResult
    sources: np.ndarray            # n_sources x T
    iterations_used: int
    component_converged: tuple[bool, ...]

    @property
    def converged(self) -> bool:
        return all(self.component_converged)

    @property
    def unmixing_matrix(self) -> np.ndarray:
        """W composed with whitening; acts on mean-removed observations."""
        return self.w_matrix @ self.whitening.whitening_matrix


def fastica(white: WhiteningResult, n_sources: int, tol: float = 1e-6, max_iter: int = 200,
            seed: int = 0, nonlinearity: str = "logcosh", w_init=None) -> DemixingModel:
    """Deflationary FastICA on already-whitened data.

    Each row is found by iterating ``w <- E{z g(w'z)} - E{g'(w'z)} w``,
    Gram-Schmidt against earlier rows and renormalizing, until
    ``|<w_new, w_old>| > 1 - tol``.  Rows that hit ``max_iter`` keep their
    last iterate and are flagged as unconverged.  ``w_init`` (n_sources x
    retained_dims) replaces the seeded random start, e.g. to warm-start from
    a previous window.
    """
    if nonlinearity not in _CONTRASTS:
        raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
    m = white.retained_dims
    if not 1 <= n_sources <= m:
        raise ValueError(f"n_sources={n_sources} must lie in [1, retained_dims={m}]")
    _, g, gprime = _CONTRASTS[nonlinearity]
    z = white.whitened
    if w_init is None:
        w_init = np.random.default_rng(seed).standard_normal((n_sources, m))
    else:
        w_init = np.asarray(w_init, dtype=float)
        if w_init.shape != (n_sources, m):
            raise ValueError(f"w_init must have shape {(n_sources, m)}")

    inv_t = 1.0 / z.shape[1]
    W = np.zeros((n_sources, m))
    flags = []
    total = 0
    for p in range(n_sources):
        found = W[:p]
        w = w_init[p] - found.T @ (found @ w_init[p])
        norm = math.sqrt(w @ w)
        if norm < 1e-12:
            # start vector lies in the span of earlier rows; pick another
            w = np.random.default_rng(seed + 1 + p).standard_normal(m)
            w -= found.T @ (found @ w)
            norm = math.sqrt(w @ w)
        w = w / norm
        ok = False
        for _ in range(max_iter):
            total += 1
            u = w @ z
            gu = g(u)
            w_new = (z @ gu - gprime(u, gu) * w) * inv_t
            if p:
                w_new -= found.T @ (found @ w_new)
            w_new /= math.sqrt(w_new @ w_new)
            done = abs(w_new @ w) > 1.0 - tol
            w = w_new
            if done:
                ok = True
                break
        W[p] = w
        flags.append(ok)
    return DemixingModel(W, white, W @ z, total, tuple(flags))


def separate(model: DemixingModel, x_new) -> np.ndarray:
    """Recover sources from new observations: W (V (x - mean))."""
    x_new = _as_matrix(x_new)
    wr = model.whitening
    if x_new.shape[0] != wr.mean.size:
        raise ValueError(f"expected {wr.mean.size} channels, got {x_new.shape[0]}")
    return model.w_matrix @ (wr.whitening_matrix @ (x_new - wr.mean[:, np.newaxis]))


def ica(x, n_sources: int | None = None, eig_cutoff_ratio: float = 1e-6, **kw) -> DemixingModel:
    """Whiten then run FastICA; ``n_sources`` defaults to the retained dimension."""
    white = whiten(x, eig_cutoff_ratio, n_components=n_sources)
    return fastica(white, n_sources or white.retained_dims, **kw)
