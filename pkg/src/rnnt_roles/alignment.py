"""Forced alignment against a recognition lattice and role-target building.

Path steps are (t, u, symbol) with a 1-based frame index t and u = number of
labels emitted before the step, so a path starts at (1, 0) and contains
exactly T blank steps and U label steps. Lattice arrays themselves stay
0-based; the off-by-one is resolved here and in ``lattice.rd_cross_entropy``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import LogitLattice, _check_labels
from .numerics import log_softmax
from .vocab import RoleSet, RoleTranscript, Vocabulary, speaker_to_role


@dataclass
class AlignmentPath:
    """One monotone path: T blank steps plus U label steps, with log prob."""

    steps: list  # of (t, u, symbol) triples
    log_prob: float

    def __post_init__(self):
        self.steps = [(int(t), int(u), int(s)) for t, u, s in self.steps]
        self.log_prob = float(self.log_prob)


@dataclass
class RoleTargets:
    """Role indices pinned to the non-blank steps of an alignment path."""

    entries: list  # of (t, u, role_index) triples
    utterance_id: str = ""

    def __post_init__(self):
        self.entries = [(int(t), int(u), int(r)) for t, u, r in self.entries]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def viterbi_force_align(lattice: LogitLattice, labels) -> AlignmentPath:
    """Highest-probability alignment of ``labels`` through the lattice.

    Max-plus analogue of the likelihood forward pass. Exact ties between
    the blank and label predecessors break toward blank (advance t), which
    keeps role targets reproducible.
    """
    if lattice.blank is None:
        raise ValueError("forced alignment requires a blank index")
    labels = _check_labels(lattice, labels)
    T, U = lattice.T, lattice.U
    if T < 1:
        raise ValueError("forced alignment requires at least one frame")
    lp = log_softmax(lattice.logits, axis=2)
    blank = lattice.blank

    score = np.full((T, U + 1), -np.inf)
    # from_label[t, u]: best step into cell (t, u) was a label emission
    from_label = np.zeros((T, U + 1), dtype=bool)
    score[0, 0] = 0.0
    for t in range(1, T):
        score[t, 0] = score[t - 1, 0] + lp[t - 1, 0, blank]
    for u in range(1, U + 1):
        score[0, u] = score[0, u - 1] + lp[0, u - 1, labels[u - 1]]
        from_label[0, u] = True
    for t in range(1, T):
        for u in range(1, U + 1):
            stay = score[t - 1, u] + lp[t - 1, u, blank]
            emit = score[t, u - 1] + lp[t, u - 1, labels[u - 1]]
            # on exact ties the forward path takes blank first (emit as late
            # as possible), which means the backtrace prefers the label edge
            if emit >= stay:
                score[t, u] = emit
                from_label[t, u] = True
            else:
                score[t, u] = stay

    steps = [(T, U, blank)]  # final blank closes the path
    t, u = T - 1, U
    while (t, u) != (0, 0):
        if u > 0 and from_label[t, u]:
            u -= 1
            steps.append((t + 1, u, int(labels[u])))
        else:
            t -= 1
            steps.append((t + 1, u, blank))
    steps.reverse()
    log_prob = float(score[T - 1, U] + lp[T - 1, U, blank])
    return AlignmentPath(steps=steps, log_prob=log_prob)


def emission_steps(path: AlignmentPath):
    """The label steps of a path, in order: u values run 0..U-1.

    A step is an emission exactly when the following step's u grew by one;
    the closing blank never qualifies.
    """
    out = []
    for i, (t, u, sym) in enumerate(path.steps):
        next_u = path.steps[i + 1][1] if i + 1 < len(path.steps) else u
        if next_u == u + 1:
            out.append((t, u, sym))
    return out


def path_score(lattice: LogitLattice, path: AlignmentPath) -> float:
    """Sum of per-step log-probabilities of an explicit path (oracle helper)."""
    lp = log_softmax(lattice.logits, axis=2)
    total = 0.0
    for t, u, sym in path.steps:
        total += lp[t - 1, u, sym]
    return float(total)


def expand_role_targets(emissions, token_roles, roles: RoleSet, utterance_id: str = "") -> RoleTargets:
    """Pair each emission step with the role of its reference token.

    ``token_roles`` holds one role name per reference token; subwords of a
    split word all carry the parent word's role.
    """
    emissions = list(emissions)
    token_roles = list(token_roles)
    if len(token_roles) != len(emissions):
        raise ValueError(
            f"{len(token_roles)} token roles for {len(emissions)} emission steps"
        )
    entries = []
    for (t, u, _), role_name in zip(emissions, token_roles):
        entries.append((t, u, roles.index(role_name)))
    return RoleTargets(entries=entries, utterance_id=utterance_id)


def insert_role_tokens(transcript: RoleTranscript, vocab: Vocabulary):
    """Role-augmented token targets: the turn's role token after each turn.

    A turn is a maximal run of same-role words. Word texts are encoded to
    subword ids; the returned ids live in the role-augmented vocabulary.
    Reference transcripts may label words with speaker identities, which are
    mapped to roles first.
    """
    if len(transcript) == 0:
        raise ValueError("cannot augment an empty transcript")
    tokens = []
    run_role = None
    for text, label in transcript.words:
        role = speaker_to_role(label, vocab.roles)
        if run_role is not None and role != run_role:
            tokens.append(vocab.role_token(run_role))
        tokens.extend(vocab.encode_words([text]))
        run_role = role
    tokens.append(vocab.role_token(run_role))
    return tokens


def strip_role_tokens(tokens, vocab: Vocabulary):
    """Drop role tokens, recovering the plain subword sequence."""
    return [t for t in tokens if not vocab.is_role_token(t)]


def roles_from_augmented(tokens, vocab: Vocabulary):
    """Per-subword role names implied by role-token placement.

    Words inherit the role token that closes their turn; trailing words with
    no closing role token inherit the previous turn's role, or the last role
    in the role set if there is none.
    """
    pending = []
    last_role = None
    out = []
    for t in tokens:
        if vocab.is_role_token(t):
            name = vocab.token_string(t)
            out.extend([name] * len(pending))
            pending = []
            last_role = name
        else:
            pending.append(t)
    if pending:
        fallback = last_role if last_role is not None else vocab.roles.roles[-1]
        out.extend([fallback] * len(pending))
    return out


def alignment_record(utterance_id: str, path: AlignmentPath) -> dict:
    """One dump record: id, (t, u, symbol) triples, and the path log prob."""
    return {
        "id": utterance_id,
        "steps": [[t, u, s] for t, u, s in path.steps],
        "log_prob": path.log_prob,
    }


def alignment_from_record(record: dict) -> AlignmentPath:
    return AlignmentPath(
        steps=[tuple(step) for step in record["steps"]],
        log_prob=record["log_prob"],
    )
