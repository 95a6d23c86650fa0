"""Relevance vector regression.

Training maximizes the marginal likelihood of a kernel expansion
``y ≈ w0 + sum_j w_j k(x, x_j)`` under independent zero-mean Gaussian priors
with one precision ``alpha_j`` per basis, using the classic re-estimation
rules::

    gamma_j = 1 - alpha_j * Sigma_jj
    alpha_j <- gamma_j / mu_j**2
    sigma2  <- ||y - Phi mu||**2 / (n - sum(gamma))

Bases whose precision exceeds ``prune_threshold`` are dropped; the training
inputs behind the surviving kernel columns are the relevance vectors.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import BadInput, DegenerateModel, DimMismatch, NumericalFailure

FORMAT_VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    width: float = 1.0
    kind: str = "rbf"
    include_bias: bool = True

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise BadInput(f"unknown kernel kind {self.kind!r}")
        if not (math.isfinite(self.width) and self.width > 0):
            raise BadInput(f"kernel width must be finite and positive, got {self.width}")


@dataclass(frozen=True)
class RvmOptions:
    prune_threshold: float = 1e9
    tol: float = 1e-3
    max_iter: int = 500
    jitter_start: float = 1e-8
    jitter_max: float = 1e-2
    scale_floor: float = 1e-12
    noise_floor: float = 1e-10
    record_likelihood: bool = False


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise BadInput(f"{name} contains non-finite values")


def rbf_kernel_matrix(X, Z, width: float) -> np.ndarray:
    """``K[i, j] = exp(-||x_i - z_j||^2 / (2 width^2))``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise DimMismatch(f"kernel inputs have {X.shape[1]} and {Z.shape[1]} columns")
    if not width > 0:
        raise BadInput(f"kernel width must be positive, got {width}")
    _check_finite("X", X)
    _check_finite("Z", Z)
    sq = np.sum(X * X, axis=1)[:, None] + np.sum(Z * Z, axis=1)[None, :] - 2.0 * (X @ Z.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * width * width))


def linear_kernel_matrix(X, Z) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise DimMismatch(f"kernel inputs have {X.shape[1]} and {Z.shape[1]} columns")
    return X @ Z.T


def kernel_matrix(X, Z, kernel: KernelSpec) -> np.ndarray:
    if kernel.kind == "linear":
        return linear_kernel_matrix(X, Z)
    return rbf_kernel_matrix(X, Z, kernel.width)


def design_matrix(X, Z, kernel: KernelSpec) -> np.ndarray:
    K = kernel_matrix(X, Z, kernel)
    if kernel.include_bias:
        return np.hstack([np.ones((K.shape[0], 1)), K])
    return K


def _cholesky(H, opts: RvmOptions):
    try:
        return linalg.cholesky(H, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(H))) or 1.0
    jitter = opts.jitter_start
    while jitter <= opts.jitter_max * (1 + 1e-12):
        try:
            return linalg.cholesky(H + jitter * scale * np.eye(len(H)), lower=True, check_finite=False)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalFailure("posterior precision is not positive definite even with maximal jitter")


def _posterior(Phi, y, alpha, noise_var, opts):
    beta = 1.0 / noise_var
    H = beta * (Phi.T @ Phi)
    H[np.diag_indices_from(H)] += alpha
    if not np.all(np.isfinite(H)):
        raise NumericalFailure("non-finite posterior precision")
    L = _cholesky(H, opts)
    mu = linalg.cho_solve((L, True), beta * (Phi.T @ y), check_finite=False)
    Linv = linalg.solve_triangular(L, np.eye(len(H)), lower=True, check_finite=False)
    Sigma = Linv.T @ Linv
    logdet_H = 2.0 * float(np.sum(np.log(np.diag(L))))
    return mu, Sigma, logdet_H


def fixed_alpha_posterior(Phi, y, alpha, noise_var, opts: RvmOptions | None = None):
    """Posterior ``(mu, Sigma)`` of the weights for fixed precisions.

    ``Sigma = (Phi^T Phi / noise_var + diag(alpha))^-1`` and
    ``mu = Sigma Phi^T y / noise_var``, via a (jittered if needed) Cholesky.
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    alpha = np.asarray(alpha, dtype=float).ravel()
    if Phi.shape != (len(y), len(alpha)):
        raise DimMismatch(f"design {Phi.shape} does not match {len(y)} targets and {len(alpha)} precisions")
    if not noise_var > 0 or np.any(alpha <= 0):
        raise BadInput("noise variance and precisions must be positive")
    mu, Sigma, _ = _posterior(Phi, y, alpha, noise_var, opts or RvmOptions())
    return mu, Sigma


def log_marginal_likelihood(Phi, y, alpha, noise_var) -> float:
    """``-1/2 [n log 2pi + log|C| + y^T C^-1 y]`` with ``C = s2 I + Phi A^-1 Phi^T``,
    evaluated densely on the ``n x n`` covariance."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    alpha = np.asarray(alpha, dtype=float).ravel()
    n = len(y)
    C = noise_var * np.eye(n) + (Phi / alpha) @ Phi.T
    L = linalg.cholesky(C, lower=True)
    v = linalg.solve_triangular(L, y, lower=True)
    return -0.5 * (n * math.log(2 * math.pi) + 2.0 * np.sum(np.log(np.diag(L))) + v @ v)


def _log_likelihood_from_posterior(Phi, y, alpha, noise_var, mu, logdet_H):
    n = len(y)
    r = y - Phi @ mu
    log_det_C = n * math.log(noise_var) + logdet_H - float(np.sum(np.log(alpha)))
    quad = (r @ r) / noise_var + float(mu @ (alpha * mu))
    return -0.5 * (n * math.log(2 * math.pi) + log_det_C + quad)


def marginal_likelihood_gradient(Phi, y, alpha, noise_var):
    """Analytic partials of the log marginal likelihood with respect to
    ``log alpha`` (one per basis) and ``log noise_var``."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    alpha = np.asarray(alpha, dtype=float).ravel()
    mu, Sigma = fixed_alpha_posterior(Phi, y, alpha, noise_var)
    d_alpha = 0.5 * (1.0 - alpha * (mu * mu + np.diag(Sigma)))
    gamma = 1.0 - alpha * np.diag(Sigma)
    r = y - Phi @ mu
    d_noise = 0.5 * ((r @ r) / noise_var - len(y) + np.sum(gamma))
    return d_alpha, float(d_noise)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RvmModel:
    """Trained regressor; immutable.

    ``weights``, ``alpha`` and ``covariance`` are ordered as the retained
    bases: the bias first (if ``has_bias``), then one column per relevance
    vector.
    """

    kernel: KernelSpec
    relevance_vectors: np.ndarray
    relevance_index: np.ndarray
    weights: np.ndarray
    alpha: np.ndarray
    covariance: np.ndarray
    noise_var: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    has_bias: bool
    n_train: int
    iterations: int = 0
    converged: bool = True
    provenance: frozenset = field(default_factory=frozenset)
    likelihood_trace: tuple = ()

    def __post_init__(self):
        for name in ("relevance_vectors", "weights", "alpha", "covariance", "x_mean", "x_scale"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        index = np.array(self.relevance_index, dtype=np.int64)
        index.setflags(write=False)
        object.__setattr__(self, "relevance_index", index)
        object.__setattr__(self, "provenance", frozenset(self.provenance))
        object.__setattr__(self, "likelihood_trace", tuple(float(v) for v in self.likelihood_trace))

    @property
    def n_relevance(self) -> int:
        return len(self.relevance_index)

    @property
    def n_features(self) -> int:
        return len(self.x_mean)

    def standardize(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_scale

    def design(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        cols = []
        if self.has_bias:
            cols.append(np.ones((len(X), 1)))
        if self.n_relevance:
            spec = replace(self.kernel, include_bias=False)
            cols.append(kernel_matrix(self.standardize(X), self.standardize(self.relevance_vectors), spec))
        if not cols:
            return np.zeros((len(X), 0))
        return np.hstack(cols)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kernel": {"kind": self.kernel.kind, "width": self.kernel.width, "include_bias": self.kernel.include_bias},
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "relevance_index": self.relevance_index.tolist(),
            "relevance_vectors": self.relevance_vectors.tolist(),
            "has_bias": self.has_bias,
            "weights": self.weights.tolist(),
            "alpha": self.alpha.tolist(),
            "covariance": self.covariance.tolist(),
            "noise_var": self.noise_var,
            "n_train": self.n_train,
            "iterations": self.iterations,
            "converged": self.converged,
            "provenance": sorted(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RvmModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise BadInput(f"unsupported model format version {d.get('format_version')!r}")
        dim = len(d["x_mean"])
        m = len(d["weights"])
        return cls(
            kernel=KernelSpec(**d["kernel"]),
            relevance_vectors=np.array(d["relevance_vectors"], dtype=float).reshape(-1, dim),
            relevance_index=d["relevance_index"],
            weights=d["weights"],
            alpha=d["alpha"],
            covariance=np.array(d["covariance"], dtype=float).reshape(m, m),
            noise_var=float(d["noise_var"]),
            x_mean=d["x_mean"],
            x_scale=d["x_scale"],
            has_bias=bool(d["has_bias"]),
            n_train=int(d["n_train"]),
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", True)),
            provenance=frozenset(d.get("provenance", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RvmModel":
        return cls.from_dict(json.loads(text))


def standardization(X, floor: float = 1e-12):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale < floor, 1.0, scale)
    return mean, scale


def rvm_train(X, y, kernel: KernelSpec, opts: RvmOptions | None = None, groups=None) -> RvmModel:
    """Fit a relevance vector regressor.

    Parameters
    ----------
    X : array, shape (n, d)
    y : array, shape (n,)
    kernel : KernelSpec
        Width is in standardized input units.
    opts : RvmOptions, optional
    groups : sequence, optional
        Per-row source labels (subject ids); recorded as the model's
        provenance.
    """
    opts = opts or RvmOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    if n < 2 or X.shape[0] != n:
        raise BadInput(f"need at least 2 rows with matching targets, got X {X.shape} and {n} targets")
    _check_finite("X", X)
    _check_finite("y", y)
    provenance = frozenset(groups) if groups is not None else frozenset()

    x_mean, x_scale = standardization(X, opts.scale_floor)
    Xs = (X - x_mean) / x_scale
    Phi_full = design_matrix(Xs, Xs, kernel)
    bias_offset = 1 if kernel.include_bias else 0

    var_y = float(np.var(y))
    noise_floor = opts.noise_floor * (1.0 + var_y)
    noise_var = max(0.1 * var_y, noise_floor)
    active = np.arange(Phi_full.shape[1])
    # start from a weak prior matched to the target scale
    alpha = np.full(len(active), 1.0 / max(var_y + float(np.mean(y)) ** 2, 1e-12))

    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        Phi = Phi_full[:, active]
        mu, Sigma, logdet_H = _posterior(Phi, y, alpha, noise_var, opts)
        if opts.record_likelihood:
            trace.append(_log_likelihood_from_posterior(Phi, y, alpha, noise_var, mu, logdet_H))
        gamma = np.clip(1.0 - alpha * np.diag(Sigma), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            new_alpha = np.where(mu != 0.0, gamma / (mu * mu), np.inf)
        resid = y - Phi @ mu
        noise_var = max(float(resid @ resid) / max(n - float(np.sum(gamma)), 1e-12), noise_floor)

        keep = new_alpha < opts.prune_threshold
        new_alpha = np.maximum(new_alpha, 1e-12)
        delta = np.max(np.abs(np.log(new_alpha[keep]) - np.log(alpha[keep]))) if keep.any() else 0.0
        pruned = not keep.all()
        active, alpha = active[keep], new_alpha[keep]
        if len(active) == 0:
            break
        if not pruned and delta < opts.tol:
            converged = True
            break

    if len(active) == 0:
        warnings.warn("all basis functions were pruned; returning a bias-only model", DegenerateModel)
        return RvmModel(
            kernel=kernel, relevance_vectors=np.zeros((0, X.shape[1])), relevance_index=[],
            weights=[float(np.mean(y))], alpha=[1.0 / max(float(np.mean(y)) ** 2, 1e-12)],
            covariance=[[noise_var / n]], noise_var=noise_var, x_mean=x_mean, x_scale=x_scale,
            has_bias=True, n_train=n, iterations=iterations, converged=converged,
            provenance=provenance, likelihood_trace=trace,
        )

    Phi = Phi_full[:, active]
    mu, Sigma, logdet_H = _posterior(Phi, y, alpha, noise_var, opts)
    if opts.record_likelihood:
        trace.append(_log_likelihood_from_posterior(Phi, y, alpha, noise_var, mu, logdet_H))
    has_bias = bool(kernel.include_bias and active[0] == 0)
    rv_index = active[bias_offset:] - bias_offset if has_bias else active - bias_offset
    return RvmModel(
        kernel=kernel,
        relevance_vectors=X[rv_index],
        relevance_index=rv_index,
        weights=mu,
        alpha=alpha,
        covariance=Sigma,
        noise_var=noise_var,
        x_mean=x_mean,
        x_scale=x_scale,
        has_bias=has_bias,
        n_train=n,
        iterations=iterations,
        converged=converged,
        provenance=provenance,
        likelihood_trace=trace,
    )


def rvm_predict(model: RvmModel, X):
    """Predictive mean and variance (unclamped) at the rows of ``X``."""
    Phi = model.design(X)
    mean = Phi @ model.weights
    var = model.noise_var + np.einsum("ij,jk,ik->i", Phi, model.covariance, Phi)
    return mean, var
