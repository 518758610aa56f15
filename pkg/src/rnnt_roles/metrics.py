"""Word-level scoring: edit alignment, WER, speaker/role error rates.

Words are compared case-insensitively after trimming. WDER-style rates are
computed over aligned (match or substitute) pairs only; deletions and
insertions carry no speaker attribution and are excluded from both numerator
and denominator. The role-constrained variant scores doctor/patient
hypothesis words only against the corresponding reference speaker and lets
"other" words match one other reference speaker, chosen per conversation to
maximize correct matches.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .vocab import (
    DEFAULT_ROLES,
    DOCTOR_SPEAKER,
    PATIENT_SPEAKER,
    RoleSet,
    RoleTranscript,
    speaker_to_role,
)


def _norm(word: str) -> str:
    return word.strip().lower()


@dataclass
class ErrorCounts:
    correct: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    @property
    def reference_length(self) -> int:
        return self.correct + self.substitutions + self.deletions

    @property
    def rate(self):
        n = self.reference_length
        errors = self.substitutions + self.deletions + self.insertions
        if n == 0:
            return float("inf") if errors else 0.0
        return errors / n

    def __add__(self, other):
        return ErrorCounts(
            self.correct + other.correct,
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
        )


@dataclass
class WordAlignment:
    """Edit ops covering reference and hypothesis indices exactly once."""

    ops: list  # of (kind, ref_index or None, hyp_index or None)

    def aligned_pairs(self):
        return [(r, h) for kind, r, h in self.ops if kind in ("match", "substitute")]


def align_words(ref, hyp) -> WordAlignment:
    """Minimum-edit alignment with unit costs.

    Backtrace ties resolve match > substitute > delete > insert, so
    downstream attribution rates are deterministic.
    """
    ref = [_norm(w) for w in ref]
    hyp = [_norm(w) for w in hyp]
    R, H = len(ref), len(hyp)
    dist = [[0] * (H + 1) for _ in range(R + 1)]
    for i in range(1, R + 1):
        dist[i][0] = i
    for j in range(1, H + 1):
        dist[0][j] = j
    for i in range(1, R + 1):
        row = dist[i]
        prev = dist[i - 1]
        ri = ref[i - 1]
        for j in range(1, H + 1):
            sub = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            row[j] = min(sub, prev[j] + 1, row[j - 1] + 1)
    ops = []
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] and ref[i - 1] == hyp[j - 1]:
            ops.append(("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            ops.append(("substitute", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            ops.append(("delete", i - 1, None))
            i -= 1
        else:
            ops.append(("insert", None, j - 1))
            j -= 1
    ops.reverse()
    return WordAlignment(ops=ops)


def edit_distance(ref, hyp) -> int:
    counts = wer_counts(align_words(ref, hyp))
    return counts.substitutions + counts.deletions + counts.insertions


def wer_counts(alignment: WordAlignment) -> ErrorCounts:
    counts = ErrorCounts()
    for kind, _, _ in alignment.ops:
        if kind == "match":
            counts.correct += 1
        elif kind == "substitute":
            counts.substitutions += 1
        elif kind == "delete":
            counts.deletions += 1
        else:
            counts.insertions += 1
    return counts


def wer(alignment: WordAlignment):
    """(ErrorCounts, rate); an empty reference with insertions rates inf."""
    counts = wer_counts(alignment)
    return counts, counts.rate


def _direct_label_wrongs(ref_labels, hyp_labels, pairs) -> int:
    return sum(1 for r, h in pairs if ref_labels[r] != hyp_labels[h])


def _anonymous_label_wrongs(ref_labels, hyp_labels, pairs) -> int:
    """Wrong pairs under the best one-to-one label mapping."""
    ref_names = sorted({ref_labels[r] for r, _ in pairs})
    hyp_names = sorted({hyp_labels[h] for _, h in pairs})
    small, large, ref_small = (
        (ref_names, hyp_names, True) if len(ref_names) <= len(hyp_names)
        else (hyp_names, ref_names, False)
    )
    best_correct = 0
    for perm in itertools.permutations(large, len(small)):
        mapping = dict(zip(small, perm))
        correct = 0
        for r, h in pairs:
            a, b = (ref_labels[r], hyp_labels[h]) if ref_small else (hyp_labels[h], ref_labels[r])
            if mapping.get(a) == b:
                correct += 1
        best_correct = max(best_correct, correct)
    return len(pairs) - best_correct


def wder(ref: RoleTranscript, hyp: RoleTranscript, alignment: WordAlignment,
         anonymous: bool = False):
    """Fraction of aligned words attributed to the wrong speaker/role.

    With ``anonymous=True`` labels are first mapped one-to-one (best
    assignment over label permutations, for generic speaker-1/2 labels);
    otherwise labels are compared directly. Returns None when no words
    align.
    """
    pairs = alignment.aligned_pairs()
    if not pairs:
        return None
    if anonymous:
        wrong = _anonymous_label_wrongs(ref.labels, hyp.labels, pairs)
    else:
        wrong = _direct_label_wrongs(ref.labels, hyp.labels, pairs)
    return wrong / len(pairs)


def _role_constrained_wrongs(ref: RoleTranscript, hyp: RoleTranscript, pairs,
                             roles: RoleSet) -> int:
    doc, pat = roles.roles[0], roles.roles[1]
    oth = roles.roles[2] if roles.size >= 3 else None
    ref_speakers = ref.labels
    hyp_roles = hyp.labels

    oth_votes = {}
    for r, h in pairs:
        if hyp_roles[h] == oth:
            speaker = ref_speakers[r]
            if speaker not in (DOCTOR_SPEAKER, PATIENT_SPEAKER):
                oth_votes[speaker] = oth_votes.get(speaker, 0) + 1
    chosen_other = None
    if oth_votes:
        chosen_other = max(sorted(oth_votes), key=lambda s: oth_votes[s])

    wrong = 0
    for r, h in pairs:
        speaker = ref_speakers[r]
        role = hyp_roles[h]
        if role == doc:
            ok = speaker == DOCTOR_SPEAKER
        elif role == pat:
            ok = speaker == PATIENT_SPEAKER
        elif role == oth:
            ok = speaker == chosen_other
        else:
            ok = speaker_to_role(speaker, roles) == role
        if not ok:
            wrong += 1
    return wrong


def r_wder(ref: RoleTranscript, hyp: RoleTranscript, alignment: WordAlignment,
           roles: RoleSet = DEFAULT_ROLES):
    """Role-constrained attribution error over aligned words.

    Hypothesis DOC words are correct only against the reference doctor,
    PAT only against the patient; OTH words are scored against the single
    other reference speaker that maximizes correct OTH matches for this
    conversation. Returns None when no words align.
    """
    pairs = alignment.aligned_pairs()
    if not pairs:
        return None
    return _role_constrained_wrongs(ref, hyp, pairs, roles) / len(pairs)


def deletion_histogram(sequences):
    """Counts of reference words deleted across a corpus, sorted.

    ``sequences`` yields (ref_words, alignment) pairs; returns a list of
    (word, count) with the most-deleted first (ties alphabetical). The
    leading entries are the candidates for the suppression shortlist.
    """
    counts = {}
    for ref_words, alignment in sequences:
        normed = [_norm(w) for w in ref_words]
        for kind, r, _ in alignment.ops:
            if kind == "delete":
                word = normed[r]
                counts[word] = counts.get(word, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def top_deleted_tokens(histogram, n: int):
    return [word for word, _ in histogram[:n]]


@dataclass
class ScoreReport:
    """Corpus-level WER/attribution summary plus per-utterance rows."""

    counts: ErrorCounts = field(default_factory=ErrorCounts)
    wder_wrong: int = 0
    wder_pairs: int = 0
    rwder_wrong: int = 0
    rwder_pairs: int = 0
    per_utterance: list = field(default_factory=list)
    histogram: list = field(default_factory=list)

    @property
    def wer(self):
        return self.counts.rate

    @property
    def wder(self):
        return None if self.wder_pairs == 0 else self.wder_wrong / self.wder_pairs

    @property
    def r_wder(self):
        return None if self.rwder_pairs == 0 else self.rwder_wrong / self.rwder_pairs

    def to_dict(self) -> dict:
        return {
            "corpus": {
                "wer": None if self.wer == float("inf") else self.wer,
                "correct": self.counts.correct,
                "substitutions": self.counts.substitutions,
                "deletions": self.counts.deletions,
                "insertions": self.counts.insertions,
                "reference_words": self.counts.reference_length,
                "wder": self.wder,
                "r_wder": self.r_wder,
            },
            "per_utterance": self.per_utterance,
            "deletion_histogram": [[w, c] for w, c in self.histogram],
        }


def score_corpus(refs, hyps, roles: RoleSet = DEFAULT_ROLES) -> ScoreReport:
    """Score hypothesis transcripts against references, id by id.

    ``refs`` and ``hyps`` map utterance id -> RoleTranscript; every
    reference id must have a hypothesis (an empty transcript stands for no
    output).
    """
    report = ScoreReport()
    histogram_input = []
    for utt_id in sorted(refs):
        ref = refs[utt_id]
        if utt_id not in hyps:
            raise KeyError(f"missing hypothesis for utterance {utt_id!r}")
        hyp = hyps[utt_id]
        alignment = align_words(ref.texts, hyp.texts)
        counts = wer_counts(alignment)
        report.counts = report.counts + counts
        histogram_input.append((ref.texts, alignment))

        pairs = alignment.aligned_pairs()
        w = rw = None
        if pairs:
            ref_roles = [speaker_to_role(s, roles) for s in ref.labels]
            wder_wrong = _direct_label_wrongs(ref_roles, hyp.labels, pairs)
            rwder_wrong = _role_constrained_wrongs(ref, hyp, pairs, roles)
            report.wder_pairs += len(pairs)
            report.wder_wrong += wder_wrong
            report.rwder_pairs += len(pairs)
            report.rwder_wrong += rwder_wrong
            w = wder_wrong / len(pairs)
            rw = rwder_wrong / len(pairs)
        report.per_utterance.append(
            {
                "id": utt_id,
                "reference_words": counts.reference_length,
                "correct": counts.correct,
                "substitutions": counts.substitutions,
                "deletions": counts.deletions,
                "insertions": counts.insertions,
                "wer": None if counts.rate == float("inf") else counts.rate,
                "wder": w,
                "r_wder": rw,
            }
        )
    report.histogram = deletion_histogram(histogram_input)
    return report
