"""Supervised heads for RBM features: L2 logistic regression and an RBF-kernel SVM (simplified SMO)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .errors import ConfigurationError, DegenerateFitError, DimensionError
from .tensor import sigmoid


class ConvergenceWarning(UserWarning):
    pass


def _check_features(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ConfigurationError("features contain non-finite values")
    return X


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    C: float
    history: list | None = None

    def save(self, path, **extra):
        return checkpoint.save(path, "logistic", {"weights": self.weights, "bias": np.array([self.bias])},
                               C=self.C, **extra)

    @classmethod
    def load(cls, path):
        manifest, arrays = checkpoint.load(path, kind="logistic")
        return cls(arrays["weights"], float(arrays["bias"][0]), manifest["C"])


def logistic_objective(weights, bias, X, y, C):
    """Mean cross-entropy plus ``||w||^2 / (2C)`` and its gradient ``(dw, db)``."""
    z = X @ weights + bias
    # log(1 + e^z) - y z, computed stably
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + weights @ weights / (2.0 * C)
    r = (sigmoid(z) - y) / X.shape[0]
    return float(loss), X.T @ r + weights / C, float(r.sum())


def logistic_fit(features, labels, C=1.0, alpha=None, epochs=500, seed=0) -> LogisticModel:
    """Full-batch gradient descent from zero weights.

    ``alpha=None`` uses ``1/L`` with L an upper bound on the objective's curvature,
    which keeps every step non-increasing; any step that would increase the
    objective is halved until it does not. ``seed`` is accepted for interface
    symmetry, the fit itself is deterministic.
    """
    if C <= 0:
        raise ConfigurationError(f"C must be positive, got {C}")
    X = _check_features(features)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.size != X.shape[0]:
        raise DimensionError(f"{y.size} labels for {X.shape[0]} samples")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigurationError("logistic labels must be 0/1")
    if np.unique(y).size < 2:
        raise DegenerateFitError("logistic fit needs both classes in the training labels")
    if alpha is None:
        Xb = np.hstack([X, np.ones((X.shape[0], 1))])
        curvature = 0.25 * np.linalg.eigvalsh(Xb.T @ Xb / X.shape[0]).max() + 1.0 / C
        alpha = 1.0 / curvature
    w, b = np.zeros(X.shape[1]), 0.0
    loss, gw, gb = logistic_objective(w, b, X, y, C)
    history = [loss]
    for _ in range(epochs):
        step = alpha
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss, new_gw, new_gb = logistic_objective(w_new, b_new, X, y, C)
            if new_loss <= loss or step < 1e-12:
                break
            step /= 2
        if new_loss > loss:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        history.append(loss)
    return LogisticModel(w, b, C, history)


def logistic_predict(model: LogisticModel, features):
    """Returns ``(probabilities, labels)``; label 1 when p >= 0.5."""
    X = _check_features(features)
    if X.shape[1] != model.weights.size:
        raise DimensionError(f"features have width {X.shape[1]}, model expects {model.weights.size}")
    p = sigmoid(X @ model.weights + model.bias)
    return p, (p >= 0.5).astype(int)


# ---------------------------------------------------------------------------
# RBF support vector machine
# ---------------------------------------------------------------------------

def rbf_kernel(A, B, gamma):
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray
    bias: float
    svm_C: float
    gamma: float
    status: str = "converged"
    n_sweeps: int = 0

    def save(self, path, **extra):
        return checkpoint.save(
            path, "svm",
            {"support_vectors": self.support_vectors, "dual_coeffs": self.dual_coeffs, "bias": np.array([self.bias])},
            svm_C=self.svm_C, gamma=self.gamma, status=self.status, **extra,
        )

    @classmethod
    def load(cls, path):
        manifest, arrays = checkpoint.load(path, kind="svm")
        return cls(arrays["support_vectors"], arrays["dual_coeffs"], float(arrays["bias"][0]),
                   manifest["svm_C"], manifest["gamma"], manifest["status"])


def kkt_violations(alphas, y, f, svm_C, tol):
    """Indices whose margin ``y f(x)`` breaks the soft-margin KKT conditions by more than ``tol``."""
    r = y * f - 1.0
    bad = ((alphas < svm_C) & (r < -tol)) | ((alphas > 0) & (r > tol))
    return np.flatnonzero(bad)


def svm_dual_objective(alphas, y, K):
    """Dual value ``sum(a) - 0.5 (a*y)' K (a*y)`` and its gradient ``1 - y * K (a*y)``.

    SMO's error terms are this gradient up to the bias: ``y_i E_i = -grad_i + y_i b``.
    """
    ay = alphas * y
    Kay = K @ ay
    return float(alphas.sum() - 0.5 * ay @ Kay), 1.0 - y * Kay


def _snap(a, svm_C, eps=1e-12):
    # round-off residue at the box edges would otherwise read as a KKT violation
    if a < eps * svm_C:
        return 0.0
    if a > svm_C * (1 - eps):
        return svm_C
    return a


def _smo_pair_step(i, j, Ei, alphas, b, y, K, svm_C):
    """Jointly optimize alphas i and j in place; returns the new bias, or None if no progress."""
    Ej = (alphas * y) @ K[:, j] + b - y[j]
    ai_old, aj_old = alphas[i], alphas[j]
    if y[i] != y[j]:
        lo, hi = max(0.0, aj_old - ai_old), min(svm_C, svm_C + aj_old - ai_old)
    else:
        lo, hi = max(0.0, ai_old + aj_old - svm_C), min(svm_C, ai_old + aj_old)
    if lo >= hi:
        return None
    eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
    if eta >= 0:
        return None
    aj = float(np.clip(aj_old - y[j] * (Ei - Ej) / eta, lo, hi))
    if abs(aj - aj_old) < 1e-5:
        return None
    ai = float(np.clip(ai_old + y[i] * y[j] * (aj_old - aj), 0.0, svm_C))
    ai, aj = (_snap(a, svm_C) for a in (ai, aj))
    alphas[i], alphas[j] = ai, aj
    b1 = b - Ei - y[i] * (ai - ai_old) * K[i, i] - y[j] * (aj - aj_old) * K[i, j]
    b2 = b - Ej - y[i] * (ai - ai_old) * K[i, j] - y[j] * (aj - aj_old) * K[j, j]
    if 0 < ai < svm_C:
        return b1
    if 0 < aj < svm_C:
        return b2
    return (b1 + b2) / 2.0


def svm_fit(features, labels, svm_C=1.0, gamma=0.06, tol=1e-3, max_passes=50, seed=0, max_sweeps=2000) -> SvmModel:
    """Simplified SMO: each KKT-violating alpha is paired with a random partner.

    Partners are tried in random order until one pair update makes progress.

    Stops after ``max_passes`` consecutive sweeps change nothing. If ``max_sweeps``
    is reached first, or KKT violations remain, a ConvergenceWarning is issued and
    the partial model is returned with ``status != "converged"``.
    """
    if gamma <= 0 or svm_C <= 0:
        raise ConfigurationError("gamma and svm_C must be positive")
    X = _check_features(features)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.size != X.shape[0]:
        raise DimensionError(f"{y.size} labels for {X.shape[0]} samples")
    if not np.all(np.abs(y) == 1):
        raise ConfigurationError("svm labels must be -1/+1")
    if np.unique(y).size < 2:
        raise DegenerateFitError("svm fit needs both classes in the training labels")

    rng = np.random.default_rng(seed)
    n = X.shape[0]
    K = rbf_kernel(X, X, gamma)
    alphas = np.zeros(n)
    b = 0.0
    passes = sweeps = 0
    while passes < max_passes and sweeps < max_sweeps:
        changed = 0
        for i in range(n):
            Ei = (alphas * y) @ K[:, i] + b - y[i]
            if not ((y[i] * Ei < -tol and alphas[i] < svm_C) or (y[i] * Ei > tol and alphas[i] > 0)):
                continue
            partners = rng.permutation(n - 1)
            partners += partners >= i
            for j in partners:
                new_b = _smo_pair_step(i, int(j), Ei, alphas, b, y, K, svm_C)
                if new_b is not None:
                    b = new_b
                    changed += 1
                    break
        sweeps += 1
        passes = passes + 1 if changed == 0 else 0

    f = (alphas * y) @ K + b
    status = "converged"
    if passes < max_passes:
        status = "max_sweeps"
    elif kkt_violations(alphas, y, f, svm_C, tol).size:
        status = "kkt_violations"
    if status != "converged":
        warnings.warn(f"SMO stopped with status {status!r} after {sweeps} sweeps", ConvergenceWarning, stacklevel=2)
    sv = alphas > 0
    return SvmModel(X[sv], (alphas * y)[sv], float(b), svm_C, gamma, status, sweeps)


def svm_decision(model: SvmModel, features):
    X = _check_features(features)
    if model.support_vectors.size and X.shape[1] != model.support_vectors.shape[1]:
        raise DimensionError(f"features have width {X.shape[1]}, model expects {model.support_vectors.shape[1]}")
    if not model.support_vectors.size:
        return np.full(X.shape[0], model.bias)
    return rbf_kernel(X, model.support_vectors, model.gamma) @ model.dual_coeffs + model.bias


def svm_predict(model: SvmModel, features):
    """Returns ``(labels, decision_values)``; a zero decision counts as +1."""
    d = svm_decision(model, features)
    return np.where(d >= 0, 1, -1), d
