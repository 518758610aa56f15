"""Transducer joiner computation and lattice losses.

A lattice holds raw joiner logits with shape [T, U+1, V]. Cell [t][u] is the
output of the joiner fed with encoder frame t (0-based) and the predictor
state after u emitted labels, i.e. the distribution governing the (u+1)-th
emission. All dynamic programs run in log space; linear-domain
probabilities are never materialized inside a forward-backward.

Losses provided: standard full-softmax transducer log-likelihood with exact
gradients, the sigmoid blank factorization used by blank-sharing auxiliary
transducers, the shared-blank auxiliary loss, and the forced-alignment
cross-entropy used to train the role head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import check_finite, log_softmax, logsumexp

NEG_INF = -np.inf


@dataclass
class JoinerParams:
    """Weights of the two-projection tanh joiner.

    logits = A @ tanh(P @ f_t + Q @ g_u + b_h) + b_s
    """

    P: np.ndarray  # [joint_dim, encoder_dim]
    Q: np.ndarray  # [joint_dim, predictor_dim]
    A: np.ndarray  # [vocab_size, joint_dim]
    b_h: np.ndarray  # [joint_dim]
    b_s: np.ndarray  # [vocab_size]

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.Q = np.asarray(self.Q, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.b_h = np.asarray(self.b_h, dtype=np.float64)
        self.b_s = np.asarray(self.b_s, dtype=np.float64)
        joint = self.P.shape[0]
        if self.Q.shape[0] != joint or self.A.shape[1] != joint or self.b_h.shape != (joint,):
            raise ValueError("joiner dimensions are inconsistent")
        if self.b_s.shape != (self.A.shape[0],):
            raise ValueError("output bias does not match vocabulary size")
        if self.A.shape[0] < 2:
            raise ValueError("joiner needs a vocabulary of at least two entries")


def joiner_forward(f_t: np.ndarray, g_u: np.ndarray, params: JoinerParams) -> np.ndarray:
    """Raw logits for one (frame, predictor-state) pair."""
    f_t = np.asarray(f_t, dtype=np.float64)
    g_u = np.asarray(g_u, dtype=np.float64)
    if f_t.shape != (params.P.shape[1],):
        raise ValueError(f"encoder vector has shape {f_t.shape}, expected ({params.P.shape[1]},)")
    if g_u.shape != (params.Q.shape[1],):
        raise ValueError(f"predictor vector has shape {g_u.shape}, expected ({params.Q.shape[1]},)")
    h = params.P @ f_t + params.Q @ g_u + params.b_h
    return params.A @ np.tanh(h) + params.b_s


@dataclass
class LogitLattice:
    """Raw joiner outputs for one utterance: [T, U+1, V].

    ``blank`` is the blank token index for recognition lattices and None for
    role lattices, whose vocabulary has no blank.
    """

    logits: np.ndarray
    blank: Optional[int] = None

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 3:
            raise ValueError("lattice logits must have shape [T, U+1, V]")
        if self.logits.shape[1] < 1 or self.logits.shape[2] < 1:
            raise ValueError("lattice needs at least one predictor row and one vocab entry")
        if self.blank is not None and not 0 <= self.blank < self.logits.shape[2]:
            raise ValueError("blank index out of range")
        check_finite(self.logits, "lattice logits")

    @property
    def T(self) -> int:
        return self.logits.shape[0]

    @property
    def U(self) -> int:
        return self.logits.shape[1] - 1

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[2]


def _check_labels(lattice: LogitLattice, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 and labels.size != 0:
        raise ValueError("labels must be a flat sequence")
    labels = labels.reshape(-1)
    if labels.size != lattice.U:
        raise ValueError(f"label count {labels.size} != lattice U {lattice.U}")
    if labels.size and (labels.min() < 0 or labels.max() >= lattice.vocab_size):
        raise ValueError("label id out of vocabulary range")
    if lattice.blank is not None and labels.size and np.any(labels == lattice.blank):
        raise ValueError("labels must not contain blank")
    return labels


def _forward_alphas(lp: np.ndarray, labels: np.ndarray, blank: int) -> np.ndarray:
    """alpha[t, u] = log-sum over paths that consumed t frames and u labels."""
    T, U1, _ = lp.shape
    U = U1 - 1
    alpha = np.full((T, U + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(1, T):
        alpha[t, 0] = alpha[t - 1, 0] + lp[t - 1, 0, blank]
    for u in range(1, U + 1):
        alpha[0, u] = alpha[0, u - 1] + lp[0, u - 1, labels[u - 1]]
    for t in range(1, T):
        for u in range(1, U + 1):
            stay = alpha[t - 1, u] + lp[t - 1, u, blank]
            emit = alpha[t, u - 1] + lp[t, u - 1, labels[u - 1]]
            alpha[t, u] = np.logaddexp(stay, emit)
    return alpha


def _backward_betas(lp: np.ndarray, labels: np.ndarray, blank: int) -> np.ndarray:
    """beta[t, u] = log-sum over path suffixes starting at cell (t, u)."""
    T, U1, _ = lp.shape
    U = U1 - 1
    beta = np.full((T, U + 1), NEG_INF)
    beta[T - 1, U] = lp[T - 1, U, blank]
    for t in range(T - 2, -1, -1):
        beta[t, U] = beta[t + 1, U] + lp[t, U, blank]
    for u in range(U - 1, -1, -1):
        beta[T - 1, u] = beta[T - 1, u + 1] + lp[T - 1, u, labels[u]]
    for t in range(T - 2, -1, -1):
        for u in range(U - 1, -1, -1):
            stay = lp[t, u, blank] + beta[t + 1, u]
            emit = lp[t, u, labels[u]] + beta[t, u + 1]
            beta[t, u] = np.logaddexp(stay, emit)
    return beta


def rnnt_log_likelihood(lattice: LogitLattice, labels) -> float:
    """ln P(labels | lattice) summed over all monotone alignments.

    Per-cell distributions are full-vocabulary softmaxes (the blank
    factorization variant is a separate operation).
    """
    if lattice.blank is None:
        raise ValueError("recognition lattice requires a blank index")
    labels = _check_labels(lattice, labels)
    if lattice.T == 0:
        if labels.size > 0:
            raise ValueError("no valid path: labels present but no frames")
        return 0.0
    lp = log_softmax(lattice.logits, axis=2)
    alpha = _forward_alphas(lp, labels, lattice.blank)
    return float(alpha[lattice.T - 1, lattice.U] + lp[lattice.T - 1, lattice.U, lattice.blank])


def rnnt_gradients(lattice: LogitLattice, labels) -> np.ndarray:
    """Exact gradient of -ln P(labels | lattice) w.r.t. the raw logits.

    Forward-backward posteriors give, per cell, d(-lnP)/d logit_k =
    softmax_k * cell_occupancy - edge_occupancy_k; unreachable cells
    (alpha + beta = -inf) contribute exactly zero.
    """
    if lattice.blank is None:
        raise ValueError("recognition lattice requires a blank index")
    labels = _check_labels(lattice, labels)
    T, U = lattice.T, lattice.U
    if T == 0:
        if labels.size > 0:
            raise ValueError("no valid path: labels present but no frames")
        return np.zeros_like(lattice.logits)
    lp = log_softmax(lattice.logits, axis=2)
    alpha = _forward_alphas(lp, labels, lattice.blank)
    beta = _backward_betas(lp, labels, lattice.blank)
    total = alpha[T - 1, U] + lp[T - 1, U, lattice.blank]

    grad = np.zeros_like(lattice.logits)
    probs = np.exp(lp)
    for t in range(T):
        for u in range(U + 1):
            if alpha[t, u] == NEG_INF:
                continue
            # log occupancy of the blank edge out of (t, u)
            if t + 1 < T:
                log_blank = alpha[t, u] + lp[t, u, lattice.blank] + beta[t + 1, u] - total
            elif u == U:
                log_blank = alpha[t, u] + lp[t, u, lattice.blank] - total
            else:
                log_blank = NEG_INF
            occ_blank = np.exp(log_blank)
            occ_emit = 0.0
            if u < U:
                log_emit = alpha[t, u] + lp[t, u, labels[u]] + beta[t, u + 1] - total
                occ_emit = np.exp(log_emit)
            cell = occ_blank + occ_emit
            if cell == 0.0:
                continue
            grad[t, u, :] = probs[t, u, :] * cell
            grad[t, u, lattice.blank] -= occ_blank
            if u < U:
                grad[t, u, labels[u]] -= occ_emit
    return grad


def hat_blank_probability(lattice: LogitLattice) -> np.ndarray:
    """Factorized blank probability: sigmoid of the blank logit, per cell."""
    if lattice.blank is None:
        raise ValueError("blank factorization requires a blank index")
    z = lattice.logits[:, :, lattice.blank]
    # stable sigmoid
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def hat_label_distribution(lattice: LogitLattice) -> np.ndarray:
    """Non-blank probabilities scaled by (1 - blank probability).

    Returns [T, U+1, V-1] in original token order with the blank entry
    removed; together with the blank probability each cell sums to one.
    """
    if lattice.blank is None:
        raise ValueError("blank factorization requires a blank index")
    b = hat_blank_probability(lattice)
    keep = [v for v in range(lattice.vocab_size) if v != lattice.blank]
    label_logits = lattice.logits[:, :, keep]
    return (1.0 - b)[:, :, None] * np.exp(log_softmax(label_logits, axis=2))


def rnnt_shared_blank_log_likelihood(
    aux_lattice: LogitLattice, shared_blank: np.ndarray, labels
) -> float:
    """Auxiliary-transducer log-likelihood with the blank borrowed per cell.

    The auxiliary vocabulary has no blank of its own; per cell the blank
    probability is ``shared_blank[t, u]`` and each auxiliary label gets
    ``(1 - shared_blank[t, u]) * softmax(aux logits)``.
    """
    if aux_lattice.blank is not None:
        raise ValueError("auxiliary lattice must not carry its own blank")
    shared_blank = np.asarray(shared_blank, dtype=np.float64)
    if shared_blank.shape != (aux_lattice.T, aux_lattice.U + 1):
        raise ValueError("shared blank must have shape [T, U+1]")
    if np.any(shared_blank <= 0.0) or np.any(shared_blank >= 1.0):
        raise ValueError("shared blank probabilities must lie strictly in (0, 1)")
    labels = _check_labels(aux_lattice, labels)
    T, U = aux_lattice.T, aux_lattice.U
    if T == 0:
        if labels.size > 0:
            raise ValueError("no valid path: labels present but no frames")
        return 0.0
    # assemble per-cell log distribution over [labels..., blank] and reuse the DP
    log_b = np.log(shared_blank)
    log_not_b = np.log1p(-shared_blank)
    lp_labels = log_not_b[:, :, None] + log_softmax(aux_lattice.logits, axis=2)
    lp = np.concatenate([lp_labels, log_b[:, :, None]], axis=2)
    blank = aux_lattice.vocab_size
    alpha = _forward_alphas(lp, labels, blank)
    return float(alpha[T - 1, U] + lp[T - 1, U, blank])


def rd_cross_entropy(rd_lattice: LogitLattice, targets):
    """Cross-entropy over supplied forced-alignment emission steps.

    ``targets`` is an iterable of (t, u, role) triples with 1-based frame
    index t, as produced by forced alignment; cells not named contribute
    neither loss nor gradient. Returns (loss, gradient over raw logits).
    """
    if rd_lattice.blank is not None:
        raise ValueError("role lattice must not carry a blank")
    lp = log_softmax(rd_lattice.logits, axis=2)
    probs = np.exp(lp)
    grad = np.zeros_like(rd_lattice.logits)
    loss = 0.0
    for t, u, role in targets:
        if not 1 <= t <= rd_lattice.T:
            raise ValueError(f"target frame {t} outside lattice (T={rd_lattice.T})")
        if not 0 <= u <= rd_lattice.U:
            raise ValueError(f"target state {u} outside lattice (U={rd_lattice.U})")
        if not 0 <= role < rd_lattice.vocab_size:
            raise ValueError(f"role index {role} outside vocabulary")
        loss -= lp[t - 1, u, role]
        grad[t - 1, u, :] += probs[t - 1, u, :]
        grad[t - 1, u, role] -= 1.0
    return float(loss), grad


def enumerate_alignment_log_probs(lattice: LogitLattice, labels, lp: np.ndarray = None):
    """Log-probability of every monotone alignment, by explicit enumeration.

    Brute-force oracle for the dynamic programs; only usable at tiny sizes
    (there are C(T+U, U) paths).
    """
    if lattice.blank is None and lp is None:
        raise ValueError("need a blank index or explicit per-cell log-probs")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lp is None:
        lp = log_softmax(lattice.logits, axis=2)
    blank = lattice.blank if lattice.blank is not None else lp.shape[2] - 1
    T, U = lattice.T, len(labels)
    out = []

    def walk(t, u, acc):
        if t == T - 1 and u == U:
            out.append(acc + lp[t, u, blank])
            return
        if t + 1 < T:
            walk(t + 1, u, acc + lp[t, u, blank])
        if u < U:
            walk(t, u + 1, acc + lp[t, u, labels[u]])

    if T >= 1:
        walk(0, 0, 0.0)
    elif U == 0:
        out.append(0.0)
    return out


def enumeration_log_likelihood(lattice: LogitLattice, labels) -> float:
    """logsumexp over all enumerated alignments (test oracle)."""
    return logsumexp(enumerate_alignment_log_probs(lattice, labels))
