"""Bernoulli-Bernoulli restricted Boltzmann machine trained by contrastive divergence.

Energy ``E(v, h) = -b.v - c.h - v.W.h`` with ``W`` of shape (n_visible, n_hidden).
Real-valued inputs in [0, 1] are treated as Bernoulli probabilities.

The exact diagnostics (``exact_log_likelihood``, ``cd_kl_diagnostic``) enumerate
the whole state space and refuse models with more than 20 units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import checkpoint
from .errors import ConfigurationError, DimensionError, InputRangeError, NumericError, SizeBoundError
from .tensor import sigmoid

MAX_ENUMERATED_UNITS = 20


@dataclass
class RbmModel:
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.W = np.array(self.W, dtype=float)
        self.b = np.array(self.b, dtype=float).reshape(-1)
        self.c = np.array(self.c, dtype=float).reshape(-1)
        if self.W.shape != (self.b.size, self.c.size):
            raise DimensionError(f"W {self.W.shape} does not match b ({self.b.size},) and c ({self.c.size},)")

    @property
    def n_visible(self):
        return self.b.size

    @property
    def n_hidden(self):
        return self.c.size

    @classmethod
    def initialize(cls, n_visible, n_hidden, seed=0, scale=0.01):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(n_visible, n_hidden)), np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def zeros(cls, n_visible, n_hidden):
        return cls(np.zeros((n_visible, n_hidden)), np.zeros(n_visible), np.zeros(n_hidden))

    def copy(self):
        return RbmModel(self.W.copy(), self.b.copy(), self.c.copy())

    def save(self, path, **extra):
        return checkpoint.save(path, "rbm", {"W": self.W, "b": self.b, "c": self.c},
                               n_visible=self.n_visible, n_hidden=self.n_hidden, **extra)

    @classmethod
    def load(cls, path):
        _, arrays = checkpoint.load(path, kind="rbm")
        return cls(arrays["W"], arrays["b"], arrays["c"])


@dataclass
class CdConfig:
    epsilon: float = 0.01
    n_steps: int = 1
    epochs: int = 50
    minibatch: int = 10
    seed: int = 0
    deterministic_mode: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.epsilon}")
        if self.n_steps < 1:
            raise ConfigurationError(f"CD chain length must be >= 1, got {self.n_steps}")
        if self.minibatch < 1 or self.epochs < 0:
            raise ConfigurationError("minibatch must be >= 1 and epochs >= 0")


@dataclass
class CdDeltas:
    dW: np.ndarray
    db: np.ndarray
    dc: np.ndarray


def _check_dim(model, v, n, what):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != n:
        raise DimensionError(f"{what} has length {v.shape[-1]}, model expects {n}")
    return v


def _check_unit_range(v, what="visible data"):
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise InputRangeError(f"{what} must lie in [0, 1] (got range [{v.min():g}, {v.max():g}]); scale it first")


def energy(model: RbmModel, v, h):
    """E(v, h); broadcasts over leading batch axes."""
    v = _check_dim(model, v, model.n_visible, "v")
    h = _check_dim(model, h, model.n_hidden, "h")
    return -(v @ model.b) - (h @ model.c) - np.einsum("...i,ij,...j->...", v, model.W, h)


def free_energy(model: RbmModel, v):
    v = _check_dim(model, v, model.n_visible, "v")
    return -(v @ model.b) - np.logaddexp(0.0, v @ model.W + model.c).sum(axis=-1)


def prob_h_given_v(model: RbmModel, v):
    v = _check_dim(model, v, model.n_visible, "v")
    return sigmoid(v @ model.W + model.c)


def prob_v_given_h(model: RbmModel, h):
    h = _check_dim(model, h, model.n_hidden, "h")
    return sigmoid(h @ model.W.T + model.b)


def _sample(p, rng):
    return (rng.random(p.shape) < p).astype(float)


def reconstruct(model: RbmModel, v, rng=None, deterministic_mode=False):
    """One reconstruction pass: hidden states from the data, then visible units from the hidden states.

    Returns ``(h_state, v_recon)``; in deterministic mode both are probabilities.
    """
    v = _check_dim(model, v, model.n_visible, "v")
    _check_unit_range(v)
    ph = prob_h_given_v(model, v)
    if deterministic_mode:
        return ph, prob_v_given_h(model, ph)
    rng = rng if rng is not None else np.random.default_rng()
    h = _sample(ph, rng)
    return h, _sample(prob_v_given_h(model, h), rng)


def cd_update(model: RbmModel, minibatch, config: CdConfig, rng=None, apply=True) -> CdDeltas:
    """CD-n parameter deltas for one minibatch, applied to ``model`` unless ``apply`` is False.

    Positive statistics use P(h|v_data). The negative chain samples hidden states
    (probabilities in deterministic mode) and ends on visible probabilities and the
    matching hidden probabilities.
    """
    v0 = np.atleast_2d(_check_dim(model, minibatch, model.n_visible, "minibatch"))
    if v0.shape[0] == 0:
        raise DimensionError("empty minibatch")
    _check_unit_range(v0)
    det = config.deterministic_mode
    rng = rng if rng is not None else np.random.default_rng(config.seed)

    ph0 = prob_h_given_v(model, v0)
    h = ph0 if det else _sample(ph0, rng)
    for step in range(config.n_steps):
        pv = prob_v_given_h(model, h)
        last = step == config.n_steps - 1
        v = pv if (det or last) else _sample(pv, rng)
        ph = prob_h_given_v(model, v)
        h = ph if (det or last) else _sample(ph, rng)
    vn, phn = v, h

    m = v0.shape[0]
    eps = config.epsilon
    deltas = CdDeltas(
        dW=eps * (v0.T @ ph0 - vn.T @ phn) / m,
        db=eps * (v0 - vn).mean(axis=0),
        dc=eps * (ph0 - phn).mean(axis=0),
    )
    if apply:
        model.W += deltas.dW
        model.b += deltas.db
        model.c += deltas.dc
    return deltas


def train(model: RbmModel, data, config: CdConfig, callback=None):
    """Run ``config.epochs`` epochs of shuffled minibatch CD; returns per-epoch mean squared reconstruction error."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    _check_unit_range(data)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(data.shape[0])
        for start in range(0, data.shape[0], config.minibatch):
            cd_update(model, data[order[start:start + config.minibatch]], config, rng)
        _, recon = reconstruct(model, data, deterministic_mode=True)
        history.append(float(((data - recon) ** 2).mean()))
        if not all(np.all(np.isfinite(a)) for a in (model.W, model.b, model.c)) or not np.isfinite(history[-1]):
            raise NumericError(f"RBM parameters became non-finite at epoch {epoch}")
        if callback is not None:
            callback(epoch, history[-1])
    return history


def transform(model: RbmModel, matrix):
    """Hidden-unit probabilities for each sample: the feature matrix for downstream heads."""
    values = getattr(matrix, "values", matrix)
    values = np.atleast_2d(_check_dim(model, values, model.n_visible, "input"))
    _check_unit_range(values, "input to transform")
    return prob_h_given_v(model, values)


# ---------------------------------------------------------------------------
# exact diagnostics for tiny models
# ---------------------------------------------------------------------------

def all_states(n):
    """Every binary vector of length ``n`` as rows, in binary counting order (first unit most significant)."""
    idx = np.arange(2 ** n)
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(float)


def _check_enumerable(model):
    if model.n_visible + model.n_hidden > MAX_ENUMERATED_UNITS:
        raise SizeBoundError(
            f"exact enumeration limited to {MAX_ENUMERATED_UNITS} units, model has "
            f"{model.n_visible} visible + {model.n_hidden} hidden"
        )


def log_partition(model: RbmModel):
    _check_enumerable(model)
    return float(logsumexp(-free_energy(model, all_states(model.n_visible))))


def exact_log_likelihood(model: RbmModel, data):
    """Mean log P(v) over ``data`` with the partition function summed exactly."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    return float(np.mean(-free_energy(model, data)) - log_partition(model))


def visible_distribution(model: RbmModel):
    """Exact marginal P(v) over ``all_states(n_visible)``."""
    logp = -free_energy(model, all_states(model.n_visible))
    return np.exp(logp - log_partition(model))


def gibbs_kernel(model: RbmModel):
    """Exact one-sweep transition matrix T[v, v'] = sum_h P(h|v) P(v'|h)."""
    _check_enumerable(model)
    V, H = all_states(model.n_visible), all_states(model.n_hidden)
    ph = prob_h_given_v(model, V)
    pv = prob_v_given_h(model, H)
    p_h_given_v = np.prod(np.where(H[None, :, :] == 1, ph[:, None, :], 1 - ph[:, None, :]), axis=2)
    p_v_given_h = np.prod(np.where(V[None, :, :] == 1, pv[:, None, :], 1 - pv[:, None, :]), axis=2)
    return p_h_given_v @ p_v_given_h


def kl_divergence(p, q):
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def empirical_distribution(data, n_visible):
    """Histogram of binary rows over ``all_states(n_visible)``."""
    data = np.atleast_2d(np.asarray(data))
    if not np.all((data == 0) | (data == 1)):
        raise InputRangeError("empirical distribution needs binary rows")
    idx = (data.astype(int) << np.arange(n_visible - 1, -1, -1)).sum(axis=1)
    return np.bincount(idx, minlength=2 ** n_visible) / data.shape[0]


def cd_kl_diagnostic(model: RbmModel, data_dist, n):
    """``(kl_0, kl_n, cd_n)`` with p_n obtained by applying n exact Gibbs sweeps to p_0.

    ``data_dist`` is either a probability vector over ``all_states(n_visible)``
    or a matrix of binary data rows.
    """
    _check_enumerable(model)
    p0 = np.asarray(data_dist, dtype=float)
    if p0.ndim == 2 or p0.size != 2 ** model.n_visible:
        p0 = empirical_distribution(p0, model.n_visible)
    p_inf = visible_distribution(model)
    pn = p0 @ np.linalg.matrix_power(gibbs_kernel(model), n)
    kl_0, kl_n = kl_divergence(p0, p_inf), kl_divergence(pn, p_inf)
    return kl_0, kl_n, kl_0 - kl_n
