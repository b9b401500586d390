"""Soft-margin support vector classification and regression.

Both trainers reduce to one dual subproblem

    minimize    D(beta) = 1/2 beta' (yy' o K) beta + p' beta
    subject to  y' beta = 0,   0 <= beta <= C

solved by sequential minimal optimization with first-order max-violating-pair
selection (ties broken by a seeded generator). Classification uses p = -1 on
the training points directly; epsilon-insensitive regression doubles the
variables (beta = (a, a_star), signs (+1, -1), p = (eps - y, eps + y)) and
feeds the same core. The full Gram matrix is materialized up front — training
sets here are at most a few thousand points.

The exact two-variable subproblem solution never decreases the dual
objective; the solver records the (maximization-form) objective after every
update so callers can audit monotonicity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import serialize

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """A kernel function as data: ``linear`` or ``rbf`` with bandwidth gamma.

    ``gamma=None`` on an RBF spec means "resolve to 1/num_features at
    training time".
    """

    kind: str
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and self.gamma is not None and self.gamma <= 0:
            raise ValueError("rbf gamma must be positive")

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls("linear")

    @classmethod
    def rbf(cls, gamma: float | None = None) -> "KernelSpec":
        return cls("rbf", gamma)


def resolve_kernel(spec: KernelSpec, n_features: int) -> KernelSpec:
    """Fill in the default RBF bandwidth (1/num_features) if unset."""
    if spec.kind == "rbf" and spec.gamma is None:
        return KernelSpec("rbf", 1.0 / n_features)
    return spec


def kernel_value(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if spec.kind == "linear":
        return float(a @ b)
    if spec.gamma is None:
        raise ValueError("rbf gamma unresolved; call resolve_kernel first")
    d = a - b
    return float(np.exp(-spec.gamma * (d @ d)))


def kernel_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise kernel values, shape (len(A), len(B))."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if spec.kind == "linear":
        return A @ B.T
    if spec.gamma is None:
        raise ValueError("rbf gamma unresolved; call resolve_kernel first")
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-spec.gamma * sq)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverParams:
    """Box constraint, stopping tolerance, iteration cap, tie-break seed."""

    C: float = 1.0
    tolerance: float = 1e-3
    max_passes: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_passes < 1:
            raise ValueError("max_passes must be at least 1")


@dataclass
class SmoState:
    """Raw solver output for one dual problem."""

    beta: np.ndarray
    bias_mid: float  # midpoint of the KKT interval for the constraint multiplier
    iterations: int
    converged: bool
    objective_history: list[float]  # maximization-form dual, one entry per update


def _pick(rng: np.random.Generator, values: np.ndarray, mask: np.ndarray,
          largest: bool) -> tuple[int, float]:
    masked = np.where(mask, values, -np.inf if largest else np.inf)
    target = masked.max() if largest else masked.min()
    ties = np.flatnonzero(masked == target)
    idx = int(ties[0]) if ties.size == 1 else int(rng.choice(ties))
    return idx, float(target)


def solve_dual(
    Q: np.ndarray, y: np.ndarray, p: np.ndarray, params: SolverParams
) -> SmoState:
    """Run SMO on the generic dual; see the module docstring for the form.

    ``Q`` must be symmetric positive semi-definite with the label signs
    already folded in (Q = yy' o K).
    """
    m = y.size
    rng = np.random.default_rng(params.seed)
    C, tol = params.C, params.tolerance
    beta = np.zeros(m)
    g = p.astype(np.float64).copy()  # gradient of D: Q beta + p
    pos = y > 0
    history = [0.0]  # W(0) = -D(0) = 0
    iterations = 0
    converged = False

    for iterations in range(1, params.max_passes + 1):
        v = y * g
        # KKT interval: b <= v on set A, b >= v on set B
        set_a = (pos & (beta < C)) | (~pos & (beta > 0))
        set_b = (pos & (beta > 0)) | (~pos & (beta < C))
        i, v_i = _pick(rng, v, set_b, largest=True)
        j, v_j = _pick(rng, v, set_a, largest=False)
        gap = v_i - v_j
        if gap <= tol:
            converged = True
            iterations -= 1
            break

        # exact subproblem on the pair: beta_i -= y_i d, beta_j += y_j d, d >= 0
        eta = Q[i, i] + Q[j, j] - 2.0 * y[i] * y[j] * Q[i, j]
        d_max = min(
            beta[i] if y[i] > 0 else C - beta[i],
            C - beta[j] if y[j] > 0 else beta[j],
        )
        d = min(gap / eta, d_max) if eta > 1e-12 else d_max
        dbi, dbj = -y[i] * d, y[j] * d
        beta[i] += dbi
        beta[j] += dbj
        np.clip(beta, 0.0, C, out=beta)
        g += Q[:, i] * dbi + Q[:, j] * dbj
        history.append(-0.5 * float(beta @ g + beta @ p))
    else:
        log.warning("SMO hit max_passes=%d before tolerance %g", params.max_passes, tol)

    v = y * g
    set_a = (pos & (beta < C)) | (~pos & (beta > 0))
    set_b = (pos & (beta > 0)) | (~pos & (beta < C))
    hi = float(np.min(np.where(set_a, v, np.inf))) if set_a.any() else np.nan
    lo = float(np.max(np.where(set_b, v, -np.inf))) if set_b.any() else np.nan
    if np.isnan(hi) and np.isnan(lo):
        mid = 0.0
    elif np.isnan(hi):
        mid = lo
    elif np.isnan(lo):
        mid = hi
    else:
        mid = 0.5 * (hi + lo)
    return SmoState(
        beta=beta, bias_mid=mid, iterations=iterations,
        converged=converged, objective_history=history,
    )


def _check_training_inputs(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ValueError("X must be (m, d) with one label per row")
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("training data must be finite")
    return X, y


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class SvcModel:
    """Trained classifier: support vectors and their signed dual weights."""

    support_vectors: np.ndarray  # (k, d)
    dual_coef: np.ndarray  # (k,)  alpha_i * y_i, nonzero
    bias: float
    kernel: KernelSpec
    C: float
    iterations: int = 0
    converged: bool = True
    objective_history: list[float] = field(default_factory=list)


def train_svc(
    X: np.ndarray,
    y: np.ndarray,
    params: SolverParams = SolverParams(),
    kernel: KernelSpec = KernelSpec.rbf(),
) -> SvcModel:
    """Train a soft-margin classifier; labels must be -1/+1, both present."""
    X, y = _check_training_inputs(X, y)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValueError("training set must contain both classes")
    kernel = resolve_kernel(kernel, X.shape[1])
    K = kernel_matrix(kernel, X, X)
    K = 0.5 * (K + K.T)
    Q = (y[:, None] * y[None, :]) * K
    state = solve_dual(Q, y, -np.ones(y.size), params)
    sv = state.beta > 0
    return SvcModel(
        support_vectors=X[sv].copy(),
        dual_coef=(state.beta * y)[sv],
        bias=-state.bias_mid,
        kernel=kernel,
        C=params.C,
        iterations=state.iterations,
        converged=state.converged,
        objective_history=state.objective_history,
    )


def decision_values(model: SvcModel, X: np.ndarray) -> np.ndarray:
    """Signed distances flavor: sum_k coef_k K(sv_k, x) + bias, per row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if model.support_vectors.shape[0] == 0:
        return np.full(X.shape[0], model.bias)
    K = kernel_matrix(model.kernel, X, model.support_vectors)
    return K @ model.dual_coef + model.bias


def decision_value(model: SvcModel, x: np.ndarray) -> float:
    return float(decision_values(model, np.asarray(x)[None, :])[0])


def predict_svc(model: SvcModel, X: np.ndarray) -> np.ndarray:
    """Class labels in {-1, +1}; the decision boundary itself maps to +1."""
    return np.where(decision_values(model, X) >= 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

@dataclass
class SvrModel:
    """Trained epsilon-insensitive regressor."""

    support_vectors: np.ndarray  # (k, d)
    dual_coef: np.ndarray  # (k,)  alpha_i - alpha_i*, nonzero
    bias: float
    kernel: KernelSpec
    C: float
    epsilon: float
    iterations: int = 0
    converged: bool = True
    objective_history: list[float] = field(default_factory=list)


def train_svr(
    X: np.ndarray,
    y: np.ndarray,
    params: SolverParams = SolverParams(),
    epsilon: float = 0.1,
    kernel: KernelSpec = KernelSpec.rbf(),
) -> SvrModel:
    """Train an epsilon-insensitive regressor on real-valued targets."""
    X, y = _check_training_inputs(X, y)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    kernel = resolve_kernel(kernel, X.shape[1])
    m = y.size
    K = kernel_matrix(kernel, X, X)
    K = 0.5 * (K + K.T)
    y2 = np.concatenate([np.ones(m), -np.ones(m)])
    p2 = np.concatenate([epsilon - y, epsilon + y])
    K2 = np.tile(K, (2, 2))
    Q2 = (y2[:, None] * y2[None, :]) * K2
    state = solve_dual(Q2, y2, p2, params)
    coef = state.beta[:m] - state.beta[m:]
    sv = coef != 0
    return SvrModel(
        support_vectors=X[sv].copy(),
        dual_coef=coef[sv],
        bias=-state.bias_mid,
        kernel=kernel,
        C=params.C,
        epsilon=epsilon,
        iterations=state.iterations,
        converged=state.converged,
        objective_history=state.objective_history,
    )


def predict_svr_many(model: SvrModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if model.support_vectors.shape[0] == 0:
        return np.full(X.shape[0], model.bias)
    K = kernel_matrix(model.kernel, X, model.support_vectors)
    return K @ model.dual_coef + model.bias


def predict_svr(model: SvrModel, x: np.ndarray) -> float:
    return float(predict_svr_many(model, np.asarray(x)[None, :])[0])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _kernel_to_dict(spec: KernelSpec) -> dict[str, Any]:
    return {"kind": spec.kind, "gamma": spec.gamma}


def _kernel_from_dict(doc: dict[str, Any]) -> KernelSpec:
    return KernelSpec(doc["kind"], doc.get("gamma"))


def svc_to_dict(model: SvcModel) -> dict[str, Any]:
    return serialize.wrap("svc", {
        "config": {"C": model.C, "kernel": _kernel_to_dict(model.kernel)},
        "bias": model.bias,
        "support_vectors": serialize.encode_f64(model.support_vectors),
        "dual_coef": serialize.encode_f64(model.dual_coef),
    })


def svc_from_dict(doc: dict[str, Any]) -> SvcModel:
    payload = serialize.unwrap(doc, "svc")
    return SvcModel(
        support_vectors=serialize.decode_f64(payload["support_vectors"]),
        dual_coef=serialize.decode_f64(payload["dual_coef"]),
        bias=float(payload["bias"]),
        kernel=_kernel_from_dict(payload["config"]["kernel"]),
        C=float(payload["config"]["C"]),
    )


def svr_to_dict(model: SvrModel) -> dict[str, Any]:
    return serialize.wrap("svr", {
        "config": {
            "C": model.C,
            "epsilon": model.epsilon,
            "kernel": _kernel_to_dict(model.kernel),
        },
        "bias": model.bias,
        "support_vectors": serialize.encode_f64(model.support_vectors),
        "dual_coef": serialize.encode_f64(model.dual_coef),
    })


def svr_from_dict(doc: dict[str, Any]) -> SvrModel:
    payload = serialize.unwrap(doc, "svr")
    return SvrModel(
        support_vectors=serialize.decode_f64(payload["support_vectors"]),
        dual_coef=serialize.decode_f64(payload["dual_coef"]),
        bias=float(payload["bias"]),
        kernel=_kernel_from_dict(payload["config"]["kernel"]),
        C=float(payload["config"]["C"]),
        epsilon=float(payload["config"]["epsilon"]),
    )
