"""Frame-synchronous beam search with a synchronized role head.

Hypothesis scores are logs of summed alignment probability: within a frame,
prefixes are expanded in increasing-length order and duplicate prefixes are
merged by log-adding their scores, so with a wide enough beam the top score
equals the exact marginal over alignments. On every non-blank expansion the
role is read off the role head by argmax, and an optional role-guided
blank-suppression rule can transfer probability mass from blank to a
shortlist of frequently deleted tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .lattice import LogitLattice
from .numerics import log_softmax, softmax


@dataclass(frozen=True)
class SuppressionConfig:
    """Gates and constants for role-guided blank suppression.

    Defaults are the tuned operating point: trigger when the top non-blank
    token is in ``suppression_set`` with posterior >= alpha and the role head
    is confident (max role posterior >= beta), at least ``min_gap`` expansion
    steps after the previous trigger; then pin blank to
    ``suppressed_blank_value`` and renormalize.
    """

    alpha: float = 0.1
    beta: float = 0.99
    suppression_set: frozenset = frozenset()
    min_gap: int = 3
    suppressed_blank_value: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "suppression_set", frozenset(int(t) for t in self.suppression_set))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.min_gap < 0:
            raise ValueError("min_gap must be >= 0")
        if not 0.0 < self.suppressed_blank_value < 1.0:
            raise ValueError("suppressed_blank_value must be in (0, 1)")


def step_posteriors(asr_logits, rd_logits=None):
    """Softmax posteriors for one (t, u) step of decoding."""
    p_asr = softmax(np.asarray(asr_logits, dtype=np.float64))
    p_rd = None if rd_logits is None else softmax(np.asarray(rd_logits, dtype=np.float64))
    return p_asr, p_rd


def suppress_blank(p_asr, p_rd, config: SuppressionConfig, steps_since: int, blank: int):
    """Apply the blank-suppression rule to one posterior vector.

    Returns (possibly renormalized posterior, triggered flag). Untriggered
    calls return the input unchanged.
    """
    p_asr = np.asarray(p_asr, dtype=np.float64)
    if p_rd is None:
        return p_asr, False
    nonblank = np.delete(np.arange(p_asr.shape[0]), blank)
    top = nonblank[int(np.argmax(p_asr[nonblank]))]
    if (
        top in config.suppression_set
        and p_asr[top] >= config.alpha
        and float(np.max(p_rd)) >= config.beta
        and steps_since >= config.min_gap
    ):
        out = p_asr.copy()
        out[blank] = config.suppressed_blank_value
        return out / out.sum(), True
    return p_asr, False


# --- scorers ------------------------------------------------------------------


class LatticeScorer:
    """Decode directly from precomputed logit lattices (tests, fixtures)."""

    def __init__(self, asr_lattice: LogitLattice, rd_lattice: Optional[LogitLattice] = None):
        if asr_lattice.blank is None:
            raise ValueError("decoding needs a blank index")
        if rd_lattice is not None:
            if rd_lattice.T != asr_lattice.T or rd_lattice.U != asr_lattice.U:
                raise ValueError("role lattice shape must match the recognition lattice")
        self.asr = asr_lattice
        self.rd = rd_lattice

    @property
    def T(self):
        return self.asr.T

    @property
    def blank(self):
        return self.asr.blank

    @property
    def max_tokens(self):
        return self.asr.U

    def init_state(self):
        return 0

    def advance(self, state, token):
        return state + 1

    def asr_logits(self, state, t):
        return self.asr.logits[t, state]

    def rd_logits(self, state, t):
        if self.rd is None:
            return None
        return self.rd.logits[t, state]


class NetworkScorer:
    """Decode from trained networks; encoder passes are precomputed."""

    def __init__(self, asr_network, features, rd_network=None, max_tokens=None):
        self.asr = asr_network
        self.rd = rd_network
        F, tapped = asr_network.encoder.forward(features)
        self.F = F
        self.F_rd = None
        if rd_network is not None:
            self.F_rd, _ = rd_network.encoder.forward(tapped)
        self._max_tokens = max_tokens

    @property
    def T(self):
        return self.F.shape[0]

    @property
    def blank(self):
        return self.asr.blank

    @property
    def max_tokens(self):
        return self._max_tokens

    def init_state(self):
        asr_state, asr_g = self.asr.predictor.init_state()
        rd_state, rd_g = None, None
        if self.rd is not None and self.rd.predictor is not None:
            rd_state, rd_g = self.rd.predictor.init_state()
        return (asr_state, asr_g, rd_state, rd_g)

    def advance(self, state, token):
        asr_state, _, rd_state, _ = state
        asr_state, asr_g = self.asr.predictor.advance(asr_state, token)
        rd_g = None
        if self.rd is not None and self.rd.predictor is not None:
            rd_state, rd_g = self.rd.predictor.advance(rd_state, token)
        return (asr_state, asr_g, rd_state, rd_g)

    def asr_logits(self, state, t):
        return self.asr.joiner.forward_cell(self.F[t], state[1])

    def rd_logits(self, state, t):
        if self.rd is None:
            return None
        g = state[3] if self.rd.predictor is not None else state[1]
        return self.rd.joiner.forward_cell(self.F_rd[t], g)


# --- hypotheses & search --------------------------------------------------------


@dataclass
class BeamHypothesis:
    """A token prefix with attached roles and summed-alignment log score.

    ``roles`` holds one role index per token (None when decoding without a
    role head); the suppression counter counts (t, u) expansion steps since
    the last trigger. Where alignment paths merge, the role/counter fields
    follow the highest-scoring contribution.
    """

    tokens: tuple = ()
    roles: tuple = ()
    log_score: float = 0.0
    state: object = None
    steps_since_suppression: int = 0
    suppression_count: int = 0
    best_contribution: float = field(default=0.0, repr=False)
    pending_token: object = field(default=None, repr=False)
    parent_state: object = field(default=None, repr=False)

    def realized(self, scorer):
        if self.state is None:
            state = scorer.advance(self.parent_state, self.pending_token)
            return replace(self, state=state, pending_token=None, parent_state=None)
        return self


def _merge(pool, hyp):
    old = pool.get(hyp.tokens)
    if old is None:
        pool[hyp.tokens] = hyp
        return
    total = np.logaddexp(old.log_score, hyp.log_score)
    if hyp.best_contribution > old.best_contribution:
        keep = replace(hyp, log_score=float(total))
    else:
        keep = replace(old, log_score=float(total))
    pool[hyp.tokens] = keep


def _rank(hyps):
    return sorted(hyps, key=lambda h: (-h.log_score, h.tokens))


def beam_search(
    scorer,
    beam_size: int,
    suppression: Optional[SuppressionConfig] = None,
    max_symbols_per_frame: int = 10,
    nbest: Optional[int] = None,
):
    """N-best summed-alignment beam search over ``scorer.T`` frames.

    Within a frame, levels (prefix lengths) are processed in increasing
    order so that merged prefixes have complete mass before expansion; each
    level keeps the ``beam_size`` best prefixes. Without a suppression
    config the posterior path is untouched (log-softmax directly), so a run
    with ``suppression=None`` is bit-identical to one with suppression
    disabled.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    if scorer.T < 1:
        raise ValueError("empty encoder output")

    start_gap = suppression.min_gap if suppression is not None else 0
    boundary = {
        (): BeamHypothesis(state=scorer.init_state(), steps_since_suppression=start_gap)
    }

    for t in range(scorer.T):
        levels = {}
        for hyp in boundary.values():
            levels.setdefault(len(hyp.tokens), {})[hyp.tokens] = hyp
        u_min = min(levels)
        cap = max(levels) + max_symbols_per_frame
        if scorer.max_tokens is not None:
            cap = min(cap, scorer.max_tokens)
        next_boundary = {}
        for u in range(u_min, cap + 1):
            entries = levels.pop(u, None)
            if not entries:
                if not levels or max(levels) < u:
                    break
                continue
            for hyp in _rank(entries.values())[:beam_size]:
                hyp = hyp.realized(scorer)
                asr_logits = scorer.asr_logits(hyp.state, t)
                rd_logits = scorer.rd_logits(hyp.state, t)
                triggered = False
                lp = log_softmax(asr_logits)
                if suppression is not None and rd_logits is not None:
                    p_asr, p_rd = step_posteriors(asr_logits, rd_logits)
                    p_new, triggered = suppress_blank(
                        p_asr, p_rd, suppression, hyp.steps_since_suppression, scorer.blank
                    )
                    if triggered:
                        # only a trigger touches the scores, so disabled
                        # suppression is bit-identical to no suppression
                        with np.errstate(divide="ignore"):
                            lp = np.log(p_new)
                role = None
                if rd_logits is not None:
                    role = int(np.argmax(rd_logits))
                gap = 0 if triggered else hyp.steps_since_suppression + 1
                hits = hyp.suppression_count + (1 if triggered else 0)

                blank_score = hyp.log_score + lp[scorer.blank]
                _merge(
                    next_boundary,
                    replace(
                        hyp,
                        log_score=float(blank_score),
                        best_contribution=float(blank_score),
                        steps_since_suppression=gap,
                        suppression_count=hits,
                    ),
                )
                if u >= cap:
                    continue
                order = np.argsort(lp)[::-1]
                emitted = 0
                for k in order:
                    k = int(k)
                    if k == scorer.blank:
                        continue
                    if emitted >= beam_size:
                        break
                    emitted += 1
                    score = hyp.log_score + lp[k]
                    child = BeamHypothesis(
                        tokens=hyp.tokens + (k,),
                        roles=hyp.roles + (role,),
                        log_score=float(score),
                        state=None,
                        steps_since_suppression=gap,
                        suppression_count=hits,
                        best_contribution=float(score),
                        pending_token=k,
                        parent_state=hyp.state,
                    )
                    _merge(levels.setdefault(u + 1, {}), child)
        boundary = {h.tokens: h for h in _rank(next_boundary.values())[:beam_size]}

    final = _rank(boundary.values())
    if nbest is not None:
        final = final[:nbest]
    return final


def greedy_decode(scorer, max_symbols_per_frame: int = 10):
    """Follow the per-step argmax; blank advances the frame.

    Returns a single hypothesis whose log score is the followed path's
    log-probability (a lower bound on the summed-alignment score).
    """
    if scorer.T < 1:
        raise ValueError("empty encoder output")
    state = scorer.init_state()
    tokens, roles = [], []
    score = 0.0
    for t in range(scorer.T):
        emitted = 0
        while True:
            lp = log_softmax(scorer.asr_logits(state, t))
            rd_logits = scorer.rd_logits(state, t)
            best = int(np.argmax(lp))
            exhausted = scorer.max_tokens is not None and len(tokens) >= scorer.max_tokens
            if best == scorer.blank or emitted >= max_symbols_per_frame or exhausted:
                score += float(lp[scorer.blank])
                break
            tokens.append(best)
            roles.append(None if rd_logits is None else int(np.argmax(rd_logits)))
            score += float(lp[best])
            state = scorer.advance(state, best)
            emitted += 1
    return BeamHypothesis(
        tokens=tuple(tokens), roles=tuple(roles), log_score=score, state=state
    )


def hypothesis_record(utterance_id, hyp: BeamHypothesis, vocab=None, roles=None) -> dict:
    """One decode-output record: id, tokens, per-token roles, score, triggers."""
    if vocab is not None:
        tokens = [vocab.token_string(t) for t in hyp.tokens]
    else:
        tokens = list(hyp.tokens)
    role_names = []
    for r in hyp.roles:
        if r is None:
            role_names.append(None)
        elif roles is not None:
            role_names.append(roles.roles[r])
        else:
            role_names.append(r)
    return {
        "id": utterance_id,
        "tokens": tokens,
        "roles": role_names,
        "log_score": hyp.log_score,
        "suppression_triggers": hyp.suppression_count,
    }
