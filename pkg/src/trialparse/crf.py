"""Linear-chain CRF output layer.

Scores live in log space throughout: the partition function comes from
the forward algorithm, decoding from Viterbi, and per-token posteriors
from forward-backward. START and STOP are real rows/columns of the
transition table (indices K and K+1); transitions into START and out of
STOP are pinned to a large negative constant and never updated, and the
dynamic programs index only the valid slices so the pinned values never
enter the arithmetic.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import EntityMention, TagSet
from .errors import NumericsError
from .numcore import logsumexp, require_finite

# Pinned score for transitions that scoring must never use.
BARRIER = -1e4


def start_index(n_tags: int) -> int:
    return n_tags


def stop_index(n_tags: int) -> int:
    return n_tags + 1


def init_transitions(n_tags: int, rng: np.random.Generator) -> np.ndarray:
    """Random [(K+2) x (K+2)] table with the barrier entries pinned."""
    size = n_tags + 2
    limit = np.sqrt(6.0 / (2 * size))
    T = rng.uniform(-limit, limit, size=(size, size))
    T[:, start_index(n_tags)] = BARRIER
    T[stop_index(n_tags), :] = BARRIER
    return T


def transition_update_mask(n_tags: int) -> np.ndarray:
    """Boolean mask of trainable transition entries (barriers excluded)."""
    size = n_tags + 2
    mask = np.ones((size, size), dtype=bool)
    mask[:, start_index(n_tags)] = False
    mask[stop_index(n_tags), :] = False
    return mask


@dataclass
class TransitionTable:
    """Transition scores T[i, j] with reserved START/STOP tags.

    Thin wrapper; the functional API below accepts either this or the raw
    array.
    """

    table: np.ndarray

    @property
    def n_tags(self) -> int:
        return self.table.shape[0] - 2


def _table(T) -> np.ndarray:
    arr = T.table if isinstance(T, TransitionTable) else np.asarray(T, float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 3:
        raise ValueError(f"transition table must be square and at least 3x3, got {arr.shape}")
    return arr


def _check_inputs(P, T) -> tuple[np.ndarray, np.ndarray, int, int]:
    P = np.asarray(P, float)
    T = _table(T)
    if P.ndim != 2 or P.shape[0] < 1:
        raise ValueError(f"emission matrix must be [n x K] with n >= 1, got {P.shape}")
    K = T.shape[0] - 2
    if P.shape[1] != K:
        raise ValueError(f"emissions have {P.shape[1]} tags but transitions have {K}")
    if not np.all(np.isfinite(P)):
        raise NumericsError("non-finite emission scores")
    return P, T, P.shape[0], K


def sequence_score(P, T, tags) -> float:
    """s(X, Y): START->y1, the y_i->y_{i+1} chain, y_n->STOP, plus emissions."""
    P, T, n, K = _check_inputs(P, T)
    y = np.asarray(tags, dtype=np.intp)
    if y.shape != (n,):
        raise ValueError(f"expected {n} tags, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"tag index out of range 0..{K - 1}")
    score = T[start_index(K), y[0]] + T[y[-1], stop_index(K)]
    score += P[np.arange(n), y].sum()
    score += T[y[:-1], y[1:]].sum()
    return float(score)


def _forward_table(P, T, n, K) -> np.ndarray:
    alpha = np.empty((n, K))
    alpha[0] = T[start_index(K), :K] + P[0]
    inner = T[:K, :K]
    for t in range(1, n):
        m = alpha[t - 1][:, None] + inner
        mx = m.max(axis=0)
        alpha[t] = mx + np.log(np.exp(m - mx).sum(axis=0)) + P[t]
    return alpha


def _backward_table(P, T, n, K) -> np.ndarray:
    beta = np.empty((n, K))
    beta[n - 1] = T[:K, stop_index(K)]
    inner = T[:K, :K]
    for t in range(n - 2, -1, -1):
        m = inner + (P[t + 1] + beta[t + 1])[None, :]
        mx = m.max(axis=1)
        beta[t] = mx + np.log(np.exp(m - mx[:, None]).sum(axis=1))
    return beta


def log_partition(P, T) -> float:
    """log sum over all K^n tag sequences of exp(s(X, Y)), forward algorithm."""
    P, T, n, K = _check_inputs(P, T)
    alpha = _forward_table(P, T, n, K)
    return float(logsumexp(alpha[n - 1] + T[:K, stop_index(K)]))


def token_marginals(P, T) -> np.ndarray:
    """p(y_t = k | X) for every position and tag, via forward-backward."""
    P, T, n, K = _check_inputs(P, T)
    alpha = _forward_table(P, T, n, K)
    beta = _backward_table(P, T, n, K)
    log_z = logsumexp(alpha[n - 1] + T[:K, stop_index(K)])
    return np.exp(alpha + beta - log_z)


def nll_loss(P, T, gold) -> tuple[float, np.ndarray, np.ndarray]:
    """Negative log-likelihood of the gold tags with analytic gradients.

    loss = log_partition - sequence_score(gold) >= 0.
    dLoss/dP = token marginals - one-hot(gold).
    dLoss/dT = expected transition counts - observed ones; pinned barrier
    entries get exactly zero gradient.
    """
    P, T, n, K = _check_inputs(P, T)
    y = np.asarray(gold, dtype=np.intp)
    alpha = _forward_table(P, T, n, K)
    beta = _backward_table(P, T, n, K)
    log_z = logsumexp(alpha[n - 1] + T[:K, stop_index(K)])
    loss = log_z - sequence_score(P, T, y)

    marginals = np.exp(alpha + beta - log_z)
    d_p = marginals.copy()
    d_p[np.arange(n), y] -= 1.0

    d_t = np.zeros_like(T)
    d_t[start_index(K), :K] = marginals[0]
    d_t[start_index(K), y[0]] -= 1.0
    d_t[:K, stop_index(K)] = marginals[n - 1]
    d_t[y[-1], stop_index(K)] -= 1.0
    inner = T[:K, :K]
    for t in range(n - 1):
        pair = np.exp(alpha[t][:, None] + inner + (P[t + 1] + beta[t + 1])[None, :] - log_z)
        d_t[:K, :K] += pair
        d_t[y[t], y[t + 1]] -= 1.0
    require_finite("nll gradients", d_t)
    return float(loss), d_p, d_t


def viterbi_decode(P, T) -> tuple[list[int], float]:
    """Highest-scoring tag sequence and its exact score.

    Ties break toward the lowest tag index at the latest differing step
    (argmax keeps the first maximum during backtrace).
    """
    P, T, n, K = _check_inputs(P, T)
    delta = T[start_index(K), :K] + P[0]
    backptr = np.empty((n, K), dtype=np.intp)
    inner = T[:K, :K]
    for t in range(1, n):
        m = delta[:, None] + inner
        backptr[t] = np.argmax(m, axis=0)
        delta = m[backptr[t], np.arange(K)] + P[t]
    final = delta + T[:K, stop_index(K)]
    last = int(np.argmax(final))
    score = float(final[last])
    path = [last]
    for t in range(n - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, score


def entity_confidence(marginals, mention: EntityMention, tag_set: TagSet, mode: str = "min") -> float:
    """Confidence for a decoded mention from the token posteriors.

    Uses the marginal of the mention's own tag at each position (B-type at
    the first token, I-type after). mode "min" keeps the weakest token,
    "mean" averages; min is the default, conservative choice for the
    probability filter.
    """
    marginals = np.asarray(marginals, float)
    n = marginals.shape[0]
    if not 0 <= mention.first <= mention.last < n:
        raise ValueError(f"mention span [{mention.first}, {mention.last}] outside 0..{n - 1}")
    indices = [tag_set.begin_index(mention.entity_type)]
    indices += [tag_set.inside_index(mention.entity_type)] * (mention.last - mention.first)
    probs = marginals[np.arange(mention.first, mention.last + 1), indices]
    if mode == "min":
        value = probs.min()
    elif mode == "mean":
        value = probs.mean()
    else:
        raise ValueError(f"unknown confidence mode {mode!r}")
    return float(np.clip(value, 0.0, 1.0))
