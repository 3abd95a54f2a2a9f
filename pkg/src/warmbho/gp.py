"""Gaussian process surrogate with an ARD Matern 5/2 kernel.

Inputs live on the unit cube. Targets are centred on their sample mean before
conditioning and the mean is added back in :func:`posterior`, so far from the
data the prediction reverts to the average observed error rather than zero.

Kernel hyperparameters are chosen by maximizing the log marginal likelihood
with a derivative-free search: eight Halton starting points over the box of
log-parameters, each refined by coordinate-wise golden-section search for a
fixed budget of likelihood evaluations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DataError, DimensionMismatchError, NumericalError
from .sampling import halton

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)
JITTER_LADDER = (0.0,) + tuple(10.0**e for e in range(-10, -3))

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class KernelParams:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")

    def to_log(self) -> np.ndarray:
        return np.concatenate(
            [np.log(self.lengthscales), [math.log(self.signal_variance), math.log(self.noise_variance)]]
        )

    @classmethod
    def from_log(cls, theta: np.ndarray) -> "KernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[:-2]), float(np.exp(theta[-2])), float(np.exp(theta[-1])))

    def to_json(self) -> dict:
        return {
            "lengthscales": self.lengthscales.tolist(),
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }


@dataclass(frozen=True)
class ParamBounds:
    """Search box for the fit; each entry is ``(low, high)`` in natural units."""

    lengthscale: tuple[float, float] = (1e-2, 1e1)
    signal_variance: tuple[float, float] = (1e-4, 1e2)
    noise_variance: tuple[float, float] = (1e-8, 1e-1)

    def log_box(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        lo = [self.lengthscale[0]] * d + [self.signal_variance[0], self.noise_variance[0]]
        hi = [self.lengthscale[1]] * d + [self.signal_variance[1], self.noise_variance[1]]
        return np.log(lo), np.log(hi)


def _matern52_from_r(r: np.ndarray, signal_variance: float) -> np.ndarray:
    s = SQRT5 * r
    return signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def matern52_ard(x, x_prime, p: KernelParams) -> float:
    """k(x, x') = s2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r), r the ARD-scaled distance."""
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    if x.shape != x_prime.shape or x.shape[-1] != p.lengthscales.shape[0]:
        raise DimensionMismatchError(
            f"kernel inputs {x.shape}, {x_prime.shape} with {p.lengthscales.shape[0]} lengthscales"
        )
    r = math.sqrt(float(np.sum(((x - x_prime) / p.lengthscales) ** 2)))
    return float(_matern52_from_r(np.float64(r), p.signal_variance))


def kernel_matrix(X1: np.ndarray, X2: np.ndarray, p: KernelParams) -> np.ndarray:
    A = np.asarray(X1, dtype=float) / p.lengthscales
    B = np.asarray(X2, dtype=float) / p.lengthscales
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatchError(f"kernel inputs with {A.shape[1]} and {B.shape[1]} columns")
    diff = A[:, None, :] - B[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    return _matern52_from_r(r, p.signal_variance)


@dataclass(frozen=True, eq=False)
class GpModel:
    """A GP conditioned on data.

    ``params.noise_variance`` is the noise actually used in the factorization;
    when the requested noise could not be factorized it has been raised by
    ``jitter`` (see :func:`condition`).
    """

    inputs: np.ndarray
    targets: np.ndarray
    params: KernelParams
    factor: np.ndarray
    alpha: np.ndarray
    y_mean: float
    jitter: float = 0.0
    trace: dict = field(default_factory=dict, repr=False)

    @property
    def n_obs(self) -> int:
        return self.inputs.shape[0]

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "jitter": self.jitter,
            "inputs": self.inputs.tolist(),
            "targets": self.targets.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _check_data(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatchError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    if y.shape[0] < 1:
        raise DataError("need at least one observation")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise DataError("inputs and targets must be finite")
    return X, y


def condition(X, y, params: KernelParams) -> GpModel:
    """Condition the GP on ``(X, y)`` with fixed kernel parameters.

    If ``K + noise I`` is not numerically positive definite, diagonal jitter
    from 1e-10 up to 1e-4 is added; past that :class:`NumericalError` is
    raised.
    """
    X, y = _check_data(X, y)
    if X.shape[1] != params.lengthscales.shape[0]:
        raise DimensionMismatchError(
            f"inputs have {X.shape[1]} columns, kernel has {params.lengthscales.shape[0]} lengthscales"
        )
    K = kernel_matrix(X, X, params)
    n = K.shape[0]
    for jitter in JITTER_LADDER:
        try:
            L = np.linalg.cholesky(K + (params.noise_variance + jitter) * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        break
    else:
        raise NumericalError(f"Cholesky failed with jitter up to {JITTER_LADDER[-1]:g}")
    if jitter:
        params = KernelParams(params.lengthscales, params.signal_variance, params.noise_variance + jitter)
    y_mean = float(np.mean(y))
    alpha = cho_solve((L, True), y - y_mean)
    return GpModel(X, y, params, L, alpha, y_mean, jitter)


def log_marginal_likelihood(m: GpModel) -> float:
    yc = m.targets - m.y_mean
    return float(
        -0.5 * yc @ m.alpha - np.sum(np.log(np.diag(m.factor))) - 0.5 * m.n_obs * LOG_2PI
    )


def posterior_batch(m: GpModel, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at each row of ``Xq``."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    Ks = kernel_matrix(Xq, m.inputs, m.params)
    mu = Ks @ m.alpha + m.y_mean
    v = solve_triangular(m.factor, Ks.T, lower=True)
    var = m.params.signal_variance - np.sum(v * v, axis=0)
    return mu, np.maximum(var, 0.0)


def posterior(m: GpModel, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != m.inputs.shape[1]:
        raise DimensionMismatchError(f"query of shape {x.shape} for a {m.inputs.shape[1]}-d model")
    mu, var = posterior_batch(m, x[None, :])
    return float(mu[0]), float(var[0])


class _LmlObjective:
    """Log marginal likelihood as a function of log-parameters.

    Same quantity as ``log_marginal_likelihood(condition(X, y, params))``, with
    the pairwise squared differences computed once per fit.
    """

    def __init__(self, X, y):
        self.sqdiff = (X[:, None, :] - X[None, :, :]) ** 2
        self.yc = y - np.mean(y)
        self.n = y.shape[0]
        self.eye = np.eye(self.n)

    def __call__(self, theta) -> float:
        inv_ls2 = np.exp(-2.0 * theta[:-2])
        s2, noise = math.exp(theta[-2]), math.exp(theta[-1])
        r = np.sqrt(self.sqdiff @ inv_ls2)
        K = _matern52_from_r(r, s2)
        for jitter in JITTER_LADDER:
            try:
                L = np.linalg.cholesky(K + (noise + jitter) * self.eye)
            except np.linalg.LinAlgError:
                continue
            break
        else:
            return -math.inf
        z = solve_triangular(L, self.yc, lower=True, check_finite=False)
        return float(-0.5 * z @ z - np.sum(np.log(np.diag(L))) - 0.5 * self.n * LOG_2PI)


def _coordinate_golden(f, x0, f0, lo, hi, budget):
    """Coordinate-wise golden-section ascent inside a box, ``budget`` calls of ``f``."""
    x, fx = x0.copy(), f0
    used = 0
    width = 0.25 * (hi - lo)
    per_coord = 6
    while used + 2 <= budget:
        for c in range(x.shape[0]):
            if used + 2 > budget:
                break
            a = max(lo[c], x[c] - width[c])
            b = min(hi[c], x[c] + width[c])
            if b - a < 1e-12:
                continue
            p = b - _INVPHI * (b - a)
            q = a + _INVPHI * (b - a)
            xp, xq = x.copy(), x.copy()
            xp[c], xq[c] = p, q
            fp, fq = f(xp), f(xq)
            used += 2
            steps = 2
            while steps < per_coord and used < budget:
                if fp >= fq:
                    b, q, fq = q, p, fp
                    p = b - _INVPHI * (b - a)
                    xp = x.copy()
                    xp[c] = p
                    fp = f(xp)
                else:
                    a, p, fp = p, q, fq
                    q = a + _INVPHI * (b - a)
                    xq = x.copy()
                    xq[c] = q
                    fq = f(xq)
                used += 1
                steps += 1
            if fp >= fq and fp > fx:
                x[c], fx = p, fp
            elif fq > fp and fq > fx:
                x[c], fx = q, fq
        width = width * 0.5
    return x, fx


def fit(
    X,
    y,
    bounds: ParamBounds | None = None,
    seed: int = 0,
    n_starts: int = 8,
    evals_per_start: int = 200,
) -> GpModel:
    """Fit kernel hyperparameters by maximizing the log marginal likelihood.

    The returned model records every start and its likelihood in
    ``model.trace`` so callers can check the result dominates them.
    """
    X, y = _check_data(X, y)
    if X.shape[0] < 2:
        raise DataError("fit needs at least two observations")
    bounds = bounds or ParamBounds()
    d = X.shape[1]
    lo, hi = bounds.log_box(d)
    starts = lo + halton(d + 2, n_starts, 1 + int(seed) % 997).points * (hi - lo)

    f = _LmlObjective(X, y)
    best_theta, best_val = None, -math.inf
    start_vals = []
    for s in starts:
        f0 = f(s)
        start_vals.append(f0)
        theta, val = _coordinate_golden(f, s, f0, lo, hi, evals_per_start - 1)
        if val > best_val:
            best_theta, best_val = theta, val
    if best_theta is None:
        raise NumericalError("no starting point admitted a Cholesky factorization")
    model = condition(X, y, KernelParams.from_log(best_theta))
    model.trace.update(starts=starts, start_lml=np.array(start_vals), lml=best_val)
    return model
