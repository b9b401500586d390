"""Gaussian-process regression with an automatic-relevance RBF kernel.

    k(a, b) = signal_variance * exp(-1/2 sum_d (a_d - b_d)^2 / length_d^2)

Targets are centered by their training mean (the mean is re-added at
prediction). Hyperparameters can be optimized by maximizing the log marginal
likelihood with analytic gradients, taking plain gradient-ascent steps with
a backtracking line search in log-parameter space. The Cholesky
factorization gets an escalating jitter (1e-10 up to 1e-6) when the kernel
matrix is numerically singular.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import serialize

log = logging.getLogger(__name__)

_JITTER_START = 1e-10
_JITTER_MAX = 1e-6


class NumericalError(RuntimeError):
    """Kernel matrix stayed indefinite even at the maximum jitter."""


@dataclass(frozen=True)
class GpHyper:
    """ARD kernel hyperparameters; one length scale per input dimension."""

    length_scales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.asarray(self.length_scales, dtype=np.float64)
        object.__setattr__(self, "length_scales", ls)
        if ls.ndim != 1 or ls.size == 0 or np.any(ls <= 0):
            raise ValueError("length_scales must be positive, one per dimension")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")


def default_hyper(dim: int) -> GpHyper:
    return GpHyper(np.ones(dim), 1.0, 0.1)


def ard_kernel(hyper: GpHyper, a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = (a - b) / hyper.length_scales
    return float(hyper.signal_variance * np.exp(-0.5 * np.sum(d * d)))


def ard_kernel_matrix(hyper: GpHyper, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64) / hyper.length_scales
    B = np.asarray(B, dtype=np.float64) / hyper.length_scales
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return hyper.signal_variance * np.exp(-0.5 * sq)


def _chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
            return L, jitter
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = _JITTER_START
            elif jitter >= _JITTER_MAX:
                raise NumericalError(
                    f"kernel matrix not positive definite at jitter {jitter:g}"
                ) from None
            else:
                jitter *= 10.0
            log.debug("escalating Cholesky jitter to %g", jitter)


def _solve_chol(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (L L') x = b via two triangular solves
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def log_marginal_likelihood(
    X: np.ndarray, y: np.ndarray, hyper: GpHyper, with_gradients: bool = False
):
    """Log marginal likelihood of (already centered) targets; optionally with
    its gradient in log-parameter space, ordered
    [log l_1 .. log l_d, log signal_variance, log noise_variance]."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = y.size
    Kf = ard_kernel_matrix(hyper, X, X)
    K = Kf + hyper.noise_variance * np.eye(m)
    L, jitter = _chol_with_jitter(K)
    alpha = _solve_chol(L, y)
    lml = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * m * np.log(2 * np.pi)
    )
    if not with_gradients:
        return lml

    Kinv = _solve_chol(L, np.eye(m))
    inner = np.outer(alpha, alpha) - Kinv  # d lml / dK = inner / 2
    grad = np.empty(X.shape[1] + 2)
    scaled = X / hyper.length_scales
    for d in range(X.shape[1]):
        sq_d = (scaled[:, d][:, None] - scaled[:, d][None, :]) ** 2
        grad[d] = 0.5 * float(np.sum(inner * (Kf * sq_d)))
    grad[-2] = 0.5 * float(np.sum(inner * Kf))
    grad[-1] = 0.5 * hyper.noise_variance * float(np.trace(inner))
    return lml, grad


@dataclass
class GpModel:
    """Fitted regressor: training inputs, hyperparameters, solve cache."""

    X: np.ndarray
    hyper: GpHyper
    y_mean: float
    alpha: np.ndarray  # (K + noise I + jitter I)^-1 (y - y_mean)
    L: np.ndarray
    jitter: float
    lml_history: list[float] = field(default_factory=list)


def _hyper_from_log(theta: np.ndarray) -> GpHyper:
    return GpHyper(
        length_scales=np.exp(theta[:-2]),
        signal_variance=float(np.exp(theta[-2])),
        noise_variance=float(np.exp(theta[-1])),
    )


def fit(
    X: np.ndarray,
    y: np.ndarray,
    init: GpHyper | None = None,
    optimize: bool = True,
    steps: int = 100,
) -> GpModel:
    """Fit the GP, optionally maximizing the marginal likelihood.

    Optimization is plain gradient ascent in log-parameter space with a
    halving backtracking line search; it is deterministic and accepts only
    strict improvements, so the recorded likelihood history is
    non-decreasing. A zero initial noise variance is floored at 1e-6 for
    optimization (log-space cannot represent zero).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size or y.size == 0:
        raise ValueError("X must be (m, d) with one target per row, m >= 1")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    hyper = init if init is not None else default_hyper(X.shape[1])
    if hyper.length_scales.size != X.shape[1]:
        raise ValueError("one length scale per input dimension required")
    y_mean = float(y.mean())
    yc = y - y_mean
    history: list[float] = []

    if optimize:
        theta = np.log(np.concatenate([
            hyper.length_scales,
            [hyper.signal_variance, max(hyper.noise_variance, 1e-6)],
        ]))
        lml, grad = log_marginal_likelihood(X, yc, _hyper_from_log(theta), True)
        history.append(lml)
        for _ in range(steps):
            if np.max(np.abs(grad)) < 1e-6:
                break
            t = 0.1
            improved = False
            while t >= 1e-6:
                cand = np.clip(theta + t * grad, -20.0, 20.0)
                try:
                    cand_lml = log_marginal_likelihood(X, yc, _hyper_from_log(cand))
                except NumericalError:
                    cand_lml = -np.inf
                if cand_lml > lml:
                    theta = cand
                    lml, grad = log_marginal_likelihood(
                        X, yc, _hyper_from_log(theta), True
                    )
                    history.append(lml)
                    improved = True
                    break
                t *= 0.5
            if not improved:
                break
        hyper = _hyper_from_log(theta)

    K = ard_kernel_matrix(hyper, X, X) + hyper.noise_variance * np.eye(y.size)
    L, jitter = _chol_with_jitter(K)
    alpha = _solve_chol(L, yc)
    return GpModel(
        X=X.copy(), hyper=hyper, y_mean=y_mean, alpha=alpha, L=L,
        jitter=jitter, lml_history=history,
    )


def predict_means(model: GpModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Ks = ard_kernel_matrix(model.hyper, X, model.X)
    return Ks @ model.alpha + model.y_mean


def predict_mean(model: GpModel, x: np.ndarray) -> float:
    return float(predict_means(model, np.asarray(x)[None, :])[0])


def predict_vars(model: GpModel, X: np.ndarray) -> np.ndarray:
    """Posterior variance of the latent function (noise not added)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Ks = ard_kernel_matrix(model.hyper, X, model.X)
    v = np.linalg.solve(model.L, Ks.T)
    var = model.hyper.signal_variance - np.sum(v * v, axis=0)
    return np.maximum(var, 0.0)


def predict_var(model: GpModel, x: np.ndarray) -> float:
    return float(predict_vars(model, np.asarray(x)[None, :])[0])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def gp_to_dict(model: GpModel) -> dict[str, Any]:
    return serialize.wrap("gp", {
        "config": {
            "length_scales": model.hyper.length_scales.tolist(),
            "signal_variance": model.hyper.signal_variance,
            "noise_variance": model.hyper.noise_variance,
            "jitter": model.jitter,
        },
        "y_mean": model.y_mean,
        "X": serialize.encode_f64(model.X),
        "alpha": serialize.encode_f64(model.alpha),
    })


def gp_from_dict(doc: dict[str, Any]) -> GpModel:
    payload = serialize.unwrap(doc, "gp")
    cfg = payload["config"]
    hyper = GpHyper(
        length_scales=np.asarray(cfg["length_scales"], dtype=np.float64),
        signal_variance=float(cfg["signal_variance"]),
        noise_variance=float(cfg["noise_variance"]),
    )
    X = serialize.decode_f64(payload["X"])
    K = ard_kernel_matrix(hyper, X, X) + (
        hyper.noise_variance + float(cfg["jitter"])
    ) * np.eye(X.shape[0])
    return GpModel(
        X=X,
        hyper=hyper,
        y_mean=float(payload["y_mean"]),
        alpha=serialize.decode_f64(payload["alpha"]),
        L=np.linalg.cholesky(K),
        jitter=float(cfg["jitter"]),
    )
