"""Shared test fixtures and independent oracles (no dynamic programming)."""

import itertools
from functools import lru_cache

import numpy as np

from rnnt_roles.lattice import LogitLattice


def brute_force_log_likelihood(lp, labels, blank):
    """Oracle: log-sum over every monotone path, walked explicitly."""
    T = lp.shape[0]
    U = len(labels)
    acc = []

    def walk(t, u, s):
        if t == T - 1 and u == U:
            acc.append(s + lp[t, u, blank])
            return
        if t + 1 < T:
            walk(t + 1, u, s + lp[t, u, blank])
        if u < U:
            walk(t, u + 1, s + lp[t, u, labels[u]])

    walk(0, 0, 0.0)
    m = max(acc)
    return m + np.log(sum(np.exp(a - m) for a in acc))


def enumerate_paths(T, U, blank, labels):
    """All monotone paths as (t, u, symbol) triples, 1-based frame index."""
    paths = []
    for emit_frames in itertools.combinations_with_replacement(range(T), U):
        steps = []
        u = 0
        for t in range(T):
            while u < U and emit_frames[u] == t:
                steps.append((t + 1, u, labels[u]))
                u += 1
            steps.append((t + 1, u, blank))
        paths.append(steps)
    return paths


def recursive_edit_distance(ref, hyp):
    """Oracle: plain memoized recursion, no tabulation or backtrace."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        sub = d(i - 1, j - 1) + (0 if ref[i - 1] == hyp[j - 1] else 1)
        return min(sub, d(i - 1, j) + 1, d(i, j - 1) + 1)

    return d(len(ref), len(hyp))


def lattice_from_probs(cells, blank):
    """Build a LogitLattice whose per-cell softmax equals the given tables."""
    logits = np.log(np.asarray(cells, dtype=np.float64))
    return LogitLattice(logits=logits, blank=blank)


def suppression_fixture():
    """A conversation-like posterior stream where beam search deletes "yeah".

    Vocabulary: 0=yeah, 1=okay, 2=hello, 3=there, 4=blank; roles DOC/PAT/OTH.
    The reference is [hello, yeah, there]. At frame 1 (predictor state 1)
    blank dominates but the runner-up is "yeah" with posterior 0.15 and the
    role head is 0.995 confident, mirroring a deleted-backchannel region;
    everywhere else the stream decodes cleanly to [hello, there].

    Returns (asr_lattice, rd_lattice, reference_tokens, rigged_token).
    """
    V, U, T = 5, 3, 6
    quiet = [0.01, 0.01, 0.01, 0.01, 0.96]
    cells = [[list(quiet) for _ in range(U + 1)] for _ in range(T)]
    cells[0][0] = [0.02, 0.02, 0.90, 0.02, 0.04]  # emit "hello"
    cells[1][1] = [0.15, 0.02, 0.01, 0.02, 0.80]  # rigged: "yeah" runner-up
    cells[2][2] = [0.02, 0.02, 0.02, 0.85, 0.09]  # "there" on the recovered path
    cells[3][1] = [0.02, 0.02, 0.02, 0.85, 0.09]  # "there" on the baseline path
    asr = lattice_from_probs(cells, blank=4)

    calm = [0.70, 0.20, 0.10]
    rd_cells = [[list(calm) for _ in range(U + 1)] for _ in range(T)]
    rd_cells[1][1] = [0.995, 0.003, 0.002]  # confident DOC activity
    rd = lattice_from_probs(rd_cells, blank=None)
    return asr, rd, [2, 0, 3], 0
