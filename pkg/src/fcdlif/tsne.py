"""Exact (non-approximated) t-SNE for inspecting encoder feature spaces.

Per-point Gaussian bandwidths are found by binary search so the conditional
distribution's entropy matches log2(perplexity) bits; the embedding is
optimized by gradient descent with momentum, adaptive gains, and early
exaggeration.  Everything is deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

ENTROPY_TOL_BITS = 1e-5
MIN_SQ_DISTANCE = 1e-12
P_FLOOR = 1e-12


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 1.0:
            raise ConfigurationError("perplexity must exceed 1")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")


def _pairwise_sq_distances(x: np.ndarray) -> np.ndarray:
    norms = np.einsum("ij,ij->i", x, x)
    d2 = norms[:, None] + norms[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def conditional_probabilities(sq_distances: np.ndarray, perplexity: float,
                              max_steps: int = 200):
    """Row-stochastic affinities whose entropy matches log2(perplexity).

    Returns (P, betas).  Duplicate points are separated by a minimum squared
    distance so the binary search always converges.
    """
    n = sq_distances.shape[0]
    target_bits = np.log2(perplexity)
    p = np.zeros((n, n))
    betas = np.ones(n)
    d2 = sq_distances.copy()
    off_diag = ~np.eye(n, dtype=bool)
    d2[off_diag] = np.maximum(d2[off_diag], MIN_SQ_DISTANCE)

    for i in range(n):
        di = np.delete(d2[i], i)
        lo, hi = 0.0, np.inf
        beta = 1.0
        for _ in range(max_steps):
            w = np.exp(-di * beta)
            total = w.sum()
            if total <= 0.0:
                hi = beta
                beta = beta / 2.0
                continue
            pi = w / total
            # Shannon entropy in bits
            nz = pi > 0
            entropy = -np.sum(pi[nz] * np.log2(pi[nz]))
            diff = entropy - target_bits
            if abs(diff) <= ENTROPY_TOL_BITS:
                break
            if diff > 0:  # too flat: narrow the kernel
                lo = beta
                beta = beta * 2.0 if not np.isfinite(hi) else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else 0.5 * (beta + lo)
        betas[i] = beta
        row = np.zeros(n)
        row[np.arange(n) != i] = pi
        p[i] = row
    return p, betas


def row_entropies_bits(p: np.ndarray) -> np.ndarray:
    """Shannon entropy (bits) of each row of a conditional affinity matrix."""
    out = np.empty(p.shape[0])
    for i, row in enumerate(p):
        nz = row > 0
        out[i] = -np.sum(row[nz] * np.log2(row[nz]))
    return out


def _joint_probabilities(p_conditional: np.ndarray) -> np.ndarray:
    n = p_conditional.shape[0]
    p = (p_conditional + p_conditional.T) / (2.0 * n)
    return np.maximum(p, P_FLOOR)


def _low_dim_affinities(y: np.ndarray):
    d2 = _pairwise_sq_distances(y)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), P_FLOOR)
    return q, num


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > P_FLOOR
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tsne_embed(features: np.ndarray, config: TsneConfig = None):
    """Embed an (n, d) feature matrix into 2 dimensions.

    Returns (embedding, info) where info records the initial and final KL
    divergence and the per-point bandwidths.
    """
    config = config or TsneConfig()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigurationError(f"features must be 2-d, got shape {x.shape}")
    n = x.shape[0]
    if n < 5:
        raise ConfigurationError("need at least 5 points")
    if config.perplexity >= n:
        raise ConfigurationError(
            f"perplexity {config.perplexity} must be below the point count {n}")

    d2 = _pairwise_sq_distances(x)
    p_cond, betas = conditional_probabilities(d2, config.perplexity)
    p = _joint_probabilities(p_cond)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)

    q0, _ = _low_dim_affinities(y)
    info = {"initial_kl": kl_divergence(p, q0), "betas": betas}

    # short runs must still leave the exaggeration phase before they end
    exaggeration_end = min(config.exaggeration_iters, config.iterations // 2)
    for it in range(config.iterations):
        exaggerate = it < exaggeration_end
        p_eff = p * config.early_exaggeration if exaggerate else p
        q, num = _low_dim_affinities(y)
        pq = p_eff - q
        grad = np.empty_like(y)
        w = pq * num
        grad[:] = 4.0 * ((np.diag(w.sum(axis=1)) - w) @ y)
        momentum = (config.initial_momentum if it < exaggeration_end
                    else config.final_momentum)
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - config.learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)

    q_final, _ = _low_dim_affinities(y)
    info["final_kl"] = kl_divergence(p, q_final)
    return y, info
