"""Exact Gaussian-process regression.

Kernels (squared-exponential and Matérn-5/2 with ARD lengthscales),
zero/constant mean functions, the exact log marginal likelihood,
Type-II maximum-likelihood hyperparameter fitting, closed-form posterior
inference with cached Cholesky statistics, and joint posterior sampling
at finite candidate sets.

All positive hyperparameters are handled in log space during fitting;
Cholesky factorizations recover from near-singular matrices by adding a
diagonal jitter that escalates from 1e-8 up to 1e-2 before giving up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .errors import InvalidArgumentError, NumericalError

__all__ = [
    "SQUARED_EXPONENTIAL",
    "MATERN52",
    "NOISE_VARIANCE_FLOOR",
    "KernelSpec",
    "MeanSpec",
    "GpHyperparams",
    "RegressionData",
    "FitBudget",
    "PosteriorGp",
    "kernel_eval",
    "kernel_matrix",
    "mean_vector",
    "log_marginal_likelihood",
    "fit_type2_mle",
    "posterior",
]

SQUARED_EXPONENTIAL = "squared_exponential"
MATERN52 = "matern52"

# Strictly positive floor keeping K + sigma^2 I well conditioned.
NOISE_VARIANCE_FLOOR = 1e-6

_JITTER_START = 1e-8
_JITTER_MAX = 1e-2
_LOG_PARAM_BOUND = 12.0


@dataclass(frozen=True)
class KernelSpec:
    """A stationary covariance kernel with per-dimension (ARD) lengthscales."""

    family: str
    lengthscales: tuple[float, ...]
    output_scale: float

    def __post_init__(self):
        if self.family not in (SQUARED_EXPONENTIAL, MATERN52):
            raise InvalidArgumentError(f"unknown kernel family: {self.family!r}")
        if len(self.lengthscales) < 1:
            raise InvalidArgumentError("kernel needs at least one lengthscale")
        if any(not (ls > 0.0) for ls in self.lengthscales):
            raise InvalidArgumentError("lengthscales must be positive")
        if not (self.output_scale > 0.0):
            raise InvalidArgumentError("output_scale must be positive")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)


@dataclass(frozen=True)
class MeanSpec:
    """Prior mean function: identically zero, or a fitted constant."""

    family: str = "zero"
    constant_value: float = 0.0

    def __post_init__(self):
        if self.family not in ("zero", "constant"):
            raise InvalidArgumentError(f"unknown mean family: {self.family!r}")

    def value(self) -> float:
        return self.constant_value if self.family == "constant" else 0.0


@dataclass(frozen=True)
class GpHyperparams:
    mean: MeanSpec
    kernel: KernelSpec
    noise_variance: float

    def __post_init__(self):
        if not (self.noise_variance > 0.0):
            raise InvalidArgumentError("noise_variance must be positive")


class RegressionData:
    """Immutable (inputs, targets) pair; inputs are (T, d), targets (T,)."""

    __slots__ = ("inputs", "targets")

    def __init__(self, inputs, targets):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float).ravel()
        if len(y) == 0:
            X = X.reshape(0, X.shape[1] if X.size else 1)
        if X.shape[0] != y.shape[0]:
            raise InvalidArgumentError(
                f"inputs ({X.shape[0]}) and targets ({y.shape[0]}) disagree in length"
            )
        if y.size and not np.all(np.isfinite(y)):
            raise InvalidArgumentError("targets must be finite")
        if X.size and not np.all(np.isfinite(X)):
            raise InvalidArgumentError("inputs must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        self.inputs = X
        self.targets = y

    def __len__(self) -> int:
        return self.targets.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "RegressionData":
        return cls(np.zeros((0, dim)), np.zeros(0))


@dataclass(frozen=True)
class FitBudget:
    """Budget for the multi-start Type-II MLE search.

    ``restarts`` includes the warm start at the initial hyperparameters;
    additional starts perturb the initial point in log space.
    """

    restarts: int = 4
    max_evals: int = 100
    seed: int = 0
    perturb_scale: float = 1.0


# ---------------------------------------------------------------------------
# kernels and means


def _as_matrix(points, dim: int | None = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if dim is not None and X.shape[1] != dim:
        raise InvalidArgumentError(
            f"points have dimension {X.shape[1]}, kernel expects {dim}"
        )
    return X


def _scaled_sqdist(X: np.ndarray, X2: np.ndarray, lengthscales) -> np.ndarray:
    ls = np.asarray(lengthscales, dtype=float)
    A = X / ls
    B = X2 / ls
    d2 = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.maximum(d2, 0.0)


def kernel_matrix(spec: KernelSpec, X, X2=None) -> np.ndarray:
    """Kernel Gram/cross matrix.

    With ``X2=None`` the Gram matrix is mirrored from its lower triangle
    (bit-exact symmetry) and the diagonal is set exactly to the output
    scale (the kernels here are stationary).
    """
    X = _as_matrix(X, spec.dim)
    symmetric = X2 is None
    X2m = X if symmetric else _as_matrix(X2, spec.dim)
    d2 = _scaled_sqdist(X, X2m, spec.lengthscales)
    if spec.family == SQUARED_EXPONENTIAL:
        K = spec.output_scale * np.exp(-0.5 * d2)
    else:
        r = np.sqrt(d2)
        s5r = math.sqrt(5.0) * r
        K = spec.output_scale * (1.0 + s5r + (5.0 / 3.0) * d2) * np.exp(-s5r)
    if symmetric:
        K = np.tril(K) + np.tril(K, -1).T
        np.fill_diagonal(K, spec.output_scale)
    return K


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    """Evaluate k(x, x2) for a single pair of points."""
    return float(kernel_matrix(spec, _as_matrix(x, spec.dim), _as_matrix(x2, spec.dim))[0, 0])


def mean_vector(mean: MeanSpec, X) -> np.ndarray:
    X = _as_matrix(X)
    return np.full(X.shape[0], mean.value())


# ---------------------------------------------------------------------------
# factorization helpers


def _cholesky_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky of K, escalating diagonal jitter on failure."""
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    n = K.shape[0]
    jitter = _JITTER_START
    eye = np.eye(n)
    while jitter <= _JITTER_MAX:
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"Cholesky failed for {n}x{n} matrix even with jitter up to {_JITTER_MAX:g}"
    )


# ---------------------------------------------------------------------------
# marginal likelihood and fitting


def log_marginal_likelihood(hp: GpHyperparams, data: RegressionData) -> float:
    """Exact Gaussian log marginal likelihood of the targets under the prior."""
    T = len(data)
    if T == 0:
        raise InvalidArgumentError("log marginal likelihood needs at least one observation")
    K = kernel_matrix(hp.kernel, data.inputs)
    K[np.diag_indices_from(K)] += hp.noise_variance
    L, _ = _cholesky_with_jitter(K)
    resid = data.targets - mean_vector(hp.mean, data.inputs)
    v = solve_triangular(L, resid, lower=True)
    return float(
        -0.5 * v @ v - np.sum(np.log(np.diag(L))) - 0.5 * T * math.log(2.0 * math.pi)
    )


def _pack(hp: GpHyperparams) -> np.ndarray:
    vec = [math.log(ls) for ls in hp.kernel.lengthscales]
    vec.append(math.log(hp.kernel.output_scale))
    vec.append(math.log(hp.noise_variance))
    if hp.mean.family == "constant":
        vec.append(hp.mean.constant_value)
    return np.array(vec)


def _unpack(vec: np.ndarray, template: GpHyperparams) -> GpHyperparams:
    d = template.kernel.dim
    logs = np.clip(vec[: d + 2], -_LOG_PARAM_BOUND, _LOG_PARAM_BOUND)
    lengthscales = tuple(float(v) for v in np.exp(logs[:d]))
    output_scale = float(math.exp(logs[d]))
    noise = max(float(math.exp(logs[d + 1])), NOISE_VARIANCE_FLOOR)
    kernel = replace(template.kernel, lengthscales=lengthscales, output_scale=output_scale)
    mean = template.mean
    if mean.family == "constant":
        mean = replace(mean, constant_value=float(vec[d + 2]))
    return GpHyperparams(mean=mean, kernel=kernel, noise_variance=noise)


def _fit_objective(data: RegressionData, template: GpHyperparams):
    """Negative log marginal likelihood over packed log-parameters.

    Per-dimension squared input differences are precomputed once, so
    each evaluation only rescales them by the candidate lengthscales.
    Used only to steer the search; candidates are re-scored with
    log_marginal_likelihood before acceptance.
    """
    X = data.inputs
    y = data.targets
    T = len(y)
    d = template.kernel.dim
    diffs = X[:, None, :] - X[None, :, :]
    sq = diffs * diffs  # (T, T, d)
    se = template.kernel.family == SQUARED_EXPONENTIAL
    has_mean = template.mean.family == "constant"
    const = 0.5 * T * math.log(2.0 * math.pi)
    diag = np.diag_indices(T)
    sqrt5 = math.sqrt(5.0)

    def neg_lml(vec: np.ndarray) -> float:
        logs = np.clip(vec[: d + 2], -_LOG_PARAM_BOUND, _LOG_PARAM_BOUND)
        d2 = sq @ np.exp(-2.0 * logs[:d])
        out = math.exp(logs[d])
        noise = max(math.exp(logs[d + 1]), NOISE_VARIANCE_FLOOR)
        if se:
            K = out * np.exp(-0.5 * d2)
        else:
            r = sqrt5 * np.sqrt(np.maximum(d2, 0.0))
            K = out * (1.0 + r + (5.0 / 3.0) * d2) * np.exp(-r)
        K[diag] += noise
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return 1e25
        resid = y - vec[d + 2] if has_mean else y
        v = solve_triangular(L, resid, lower=True, check_finite=False)
        return float(0.5 * v @ v + np.sum(np.log(np.diag(L))) + const)

    return neg_lml


def _heuristic_start(data: RegressionData, template: GpHyperparams) -> GpHyperparams:
    """Moment-matched starting point: mean and output scale from the
    targets, lengthscales from the per-dimension input spread."""
    y = data.targets
    var = max(float(np.var(y)), 1e-4)
    spread = np.std(data.inputs, axis=0)
    fallback = np.asarray(template.kernel.lengthscales)
    lengthscales = tuple(
        float(s) if s > 1e-6 else float(f) for s, f in zip(spread, fallback)
    )
    mean = template.mean
    if mean.family == "constant":
        mean = replace(mean, constant_value=float(np.mean(y)))
    kernel = replace(template.kernel, lengthscales=lengthscales, output_scale=var)
    return GpHyperparams(
        mean=mean,
        kernel=kernel,
        noise_variance=max(0.1 * var, NOISE_VARIANCE_FLOOR),
    )


def fit_type2_mle(
    data: RegressionData,
    init: GpHyperparams,
    budget: FitBudget | None = None,
) -> GpHyperparams:
    """Fit GP hyperparameters by maximizing the log marginal likelihood.

    Multi-start gradient-free (Nelder-Mead) search in log-parameter
    space: the warm start at ``init``, a moment-matched heuristic start,
    and seeded perturbations of the heuristic. Never returns
    hyperparameters with a lower marginal likelihood than ``init``; for
    fewer than two observations ``init`` is returned unchanged. A
    candidate replaces the incumbent only on strict improvement, so ties
    resolve to the earliest restart.
    """
    if len(data) < 2:
        return init
    budget = budget or FitBudget()
    neg_lml = _fit_objective(data, init)

    try:
        best_val = log_marginal_likelihood(init, data)
    except NumericalError:
        best_val = -math.inf
    best_hp = init

    x_init = _pack(init)
    x_heur = _pack(_heuristic_start(data, init))
    rng = np.random.default_rng(budget.seed)
    starts = [x_init, x_heur][: max(budget.restarts, 1)]
    starts += [
        x_heur + rng.normal(0.0, budget.perturb_scale, size=x_heur.shape)
        for _ in range(budget.restarts - len(starts))
    ]
    for x0 in starts:
        try:
            res = minimize(
                neg_lml,
                x0,
                method="Nelder-Mead",
                options={"maxfev": budget.max_evals, "xatol": 1e-3, "fatol": 1e-7},
            )
        except (FloatingPointError, ValueError):
            continue
        cand = _unpack(np.asarray(res.x), init)
        try:
            val = log_marginal_likelihood(cand, data)
        except NumericalError:
            continue
        if val > best_val:
            best_val = val
            best_hp = cand
    return best_hp


# ---------------------------------------------------------------------------
# posterior


class PosteriorGp:
    """A fitted GP posterior with cached sufficient statistics.

    Immutable after construction; safe to share read-only. With empty
    data the posterior reproduces the prior exactly.
    """

    __slots__ = ("hyperparams", "data", "chol_factor", "alpha")

    def __init__(self, hyperparams: GpHyperparams, data: RegressionData):
        self.hyperparams = hyperparams
        self.data = data
        if len(data) == 0:
            self.chol_factor = None
            self.alpha = None
        else:
            K = kernel_matrix(hyperparams.kernel, data.inputs)
            K[np.diag_indices_from(K)] += hyperparams.noise_variance
            L, _ = _cholesky_with_jitter(K)
            resid = data.targets - mean_vector(hyperparams.mean, data.inputs)
            v = solve_triangular(L, resid, lower=True)
            alpha = solve_triangular(L.T, v, lower=False)
            L.setflags(write=False)
            alpha.setflags(write=False)
            self.chol_factor = L
            self.alpha = alpha

    def predict(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean vector and covariance matrix at the query points.

        The covariance is symmetrized and its diagonal clamped at zero.
        """
        Q = _as_matrix(queries, self.hyperparams.kernel.dim)
        if Q.shape[0] == 0:
            raise InvalidArgumentError("predict needs at least one query point")
        prior_mean = mean_vector(self.hyperparams.mean, Q)
        Kqq = kernel_matrix(self.hyperparams.kernel, Q)
        if self.chol_factor is None:
            return prior_mean, Kqq
        Ks = kernel_matrix(self.hyperparams.kernel, self.data.inputs, Q)
        mean = prior_mean + Ks.T @ self.alpha
        V = solve_triangular(self.chol_factor, Ks, lower=True)
        cov = Kqq - V.T @ V
        cov = 0.5 * (cov + cov.T)
        diag = np.diag(cov).copy()
        np.fill_diagonal(cov, np.maximum(diag, 0.0))
        return mean, cov

    def sample_joint(self, queries, rng: np.random.Generator) -> np.ndarray:
        """One draw from the joint posterior at the query points.

        Deterministic given the generator state. A numerically zero
        covariance degenerates to the predictive mean.
        """
        mean, cov = self.predict(queries)
        scale = float(np.max(np.diag(cov)))
        if scale < 1e-14:
            return mean.copy()
        jitter = 1e-12 * max(scale, 1.0)
        eye = np.eye(cov.shape[0])
        L = None
        while jitter <= _JITTER_MAX:
            try:
                L = np.linalg.cholesky(cov + jitter * eye)
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
        if L is None:
            raise NumericalError("posterior covariance could not be factorized for sampling")
        return mean + L @ rng.standard_normal(mean.shape[0])


def posterior(hp: GpHyperparams, data: RegressionData) -> PosteriorGp:
    """Closed-form GP posterior for the given hyperparameters and data."""
    return PosteriorGp(hp, data)
