"""Deterministic synthetic conversation generator.

Utterances are turn-structured role-labeled word sequences. Frame features
are per-token codebook vectors repeated for a sampled duration plus white
noise, with silence frames between turns, so the frames -> tokens -> roles
structure of real conversations is preserved at desk scale and the
difficulty is a single dial (noise_std).

Two regimes:
  * biased (default): each role owns a block of word types and samples from
    it with probability ``role_unigram_bias``, so roles are inferable from
    the words themselves.
  * long_dependency: word types are split into two channel blocks plus an
    "other" block; an opening header word, spoken by an extra participant,
    decides which channel is the doctor and which the patient. Role
    inference then requires remembering the header, i.e. long label-history
    context, while word identity stays locally decodable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fileio import DataError, read_json, read_jsonl, write_json, write_jsonl
from .vocab import (
    DEFAULT_ROLES,
    DOCTOR_SPEAKER,
    PATIENT_SPEAKER,
    RoleSet,
    RoleTranscript,
    Vocabulary,
    speaker_to_role,
)

# Conversational word inventory; the first two entries are the classic
# backchannel words that beam search tends to delete.
WORD_LIST = [
    "yeah", "okay", "hello", "there", "thanks", "well", "fine", "pain",
    "head", "back", "sleep", "better", "worse", "today", "right", "sure",
    "maybe", "little", "never", "problem", "went", "away", "but", "it",
]


@dataclass
class SynthConfig:
    vocab_size: int = 24
    roles: RoleSet = field(default_factory=lambda: DEFAULT_ROLES)
    role_unigram_bias: float = 0.95
    turn_transition: dict = None  # role -> {role: prob}; default set in __post_init__
    mean_turn_length: float = 3.0
    min_words: int = 5
    max_words: int = 15
    frames_per_token: tuple = (2, 3)
    noise_std: float = 0.1
    silence_frames: tuple = (1, 2)
    long_dependency: bool = False
    subword_split: int = 1
    input_dim: int = 8
    second_other_prob: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < self.roles.size + 4:
            raise ValueError("vocab_size must be at least roles + 4")
        if not 0.0 <= self.role_unigram_bias <= 1.0:
            raise ValueError("role_unigram_bias must be in [0, 1]")
        if self.subword_split < 1:
            raise ValueError("subword_split must be >= 1")
        if self.min_words < 1 or self.max_words < self.min_words:
            raise ValueError("invalid word-count range")
        self.frames_per_token = tuple(int(v) for v in self.frames_per_token)
        self.silence_frames = tuple(int(v) for v in self.silence_frames)
        if len(self.frames_per_token) != 2 or self.frames_per_token[0] < 1:
            raise ValueError("frames_per_token must be (lo, hi) with lo >= 1")
        if len(self.silence_frames) != 2 or self.silence_frames[0] < 0:
            raise ValueError("silence_frames must be (lo, hi) with lo >= 0")
        if self.turn_transition is None:
            doc, pat, oth = self.roles.roles[0], self.roles.roles[1], self.roles.roles[2]
            self.turn_transition = {
                doc: {pat: 0.85, oth: 0.15},
                pat: {doc: 0.85, oth: 0.15},
                oth: {doc: 0.5, pat: 0.5},
            }
        for role, row in self.turn_transition.items():
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"transition row for {role!r} sums to {total}, not 1")

    def to_dict(self) -> dict:
        d = {
            "vocab_size": self.vocab_size,
            "roles": list(self.roles.roles),
            "role_unigram_bias": self.role_unigram_bias,
            "turn_transition": self.turn_transition,
            "mean_turn_length": self.mean_turn_length,
            "min_words": self.min_words,
            "max_words": self.max_words,
            "frames_per_token": list(self.frames_per_token),
            "noise_std": self.noise_std,
            "silence_frames": list(self.silence_frames),
            "long_dependency": self.long_dependency,
            "subword_split": self.subword_split,
            "input_dim": self.input_dim,
            "second_other_prob": self.second_other_prob,
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "roles" in d:
            d["roles"] = RoleSet(tuple(d["roles"]))
        for key in ("frames_per_token", "silence_frames"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # [T_in, input_dim]
    tokens: list  # subword token ids
    words: RoleTranscript  # reference words with speaker identities
    token_roles: list  # role name per token
    token_spans: list = None  # (start_frame, end_frame) per token, generator-only

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if len(self.token_roles) != len(self.tokens):
            raise ValueError("token_roles must align with tokens")


def build_vocabulary(config: SynthConfig) -> Vocabulary:
    words = list(WORD_LIST[: config.vocab_size])
    for i in range(len(words), config.vocab_size):
        words.append(f"word{i:03d}")
    return Vocabulary(words=words, roles=config.roles, subword_split=config.subword_split)


def _role_blocks(config: SynthConfig):
    """Word-id blocks per role for the biased regime (yeah/okay go to DOC)."""
    n = config.vocab_size
    per = n // config.roles.size
    blocks = {}
    start = 0
    for i, role in enumerate(config.roles.roles):
        end = n if i == config.roles.size - 1 else start + per
        blocks[role] = list(range(start, end))
        start = end
    return blocks


def _channel_blocks(config: SynthConfig):
    """Header/other/channel word-id blocks for the long-dependency regime."""
    n = config.vocab_size
    headers = [n - 2, n - 1]
    other = [n - 4, n - 3]
    rest = list(range(n - 4))
    half = len(rest) // 2
    return {"headers": headers, "other": other, "A": rest[:half], "B": rest[half:]}


def codebook(config: SynthConfig) -> np.ndarray:
    """Per-token feature prototypes (+1 silence row at the end).

    Depends only on the seed and sizes, so every split of a corpus shares
    the same codebook.
    """
    rng = np.random.default_rng((config.seed, 0xC0DEB00C))
    num_tokens = config.vocab_size * config.subword_split
    book = rng.normal(size=(num_tokens + 1, config.input_dim))
    book /= np.maximum(np.linalg.norm(book, axis=1, keepdims=True), 1e-12)
    book[num_tokens] = 0.0  # silence prototype
    return book


def _sample_turn_roles(rng, config, num_words):
    """Turn lengths ~ geometric around mean_turn_length; roles via the map."""
    role = config.roles.roles[int(rng.integers(0, 2))]  # start with DOC or PAT
    p_stop = 1.0 / max(config.mean_turn_length, 1.0)
    turns = []
    remaining = num_words
    while remaining > 0:
        length = 1
        while length < remaining and rng.random() > p_stop:
            length += 1
        length = min(length, remaining)
        turns.append((role, length))
        remaining -= length
        row = config.turn_transition[role]
        names = sorted(row)
        probs = np.array([row[n] for n in names])
        role = names[int(rng.choice(len(names), p=probs / probs.sum()))]
    return turns


def _gen_utterance_words(rng, config: SynthConfig, blocks):
    """Word ids with speaker identities; returns (word_ids, speakers)."""
    num_words = int(rng.integers(config.min_words, config.max_words + 1))
    word_ids, speakers = [], []
    doc, pat, oth = config.roles.roles[0], config.roles.roles[1], config.roles.roles[2]
    if not config.long_dependency:
        other_speaker = "other2" if rng.random() < config.second_other_prob else "other1"
        speaker_of = {doc: DOCTOR_SPEAKER, pat: PATIENT_SPEAKER, oth: other_speaker}
        bias = config.role_unigram_bias
        for role, length in _sample_turn_roles(rng, config, num_words):
            for _ in range(length):
                if rng.random() < bias:
                    wid = int(rng.choice(blocks[role]))
                else:
                    wid = int(rng.integers(0, config.vocab_size))
                word_ids.append(wid)
                speakers.append(speaker_of[role])
        return word_ids, speakers

    # long-dependency regime: header word decides the channel->role mapping
    ch = blocks
    head = int(rng.integers(0, 2))
    word_ids.append(ch["headers"][head])
    speakers.append("other1")
    if head == 0:
        channel_of = {doc: "A", pat: "B"}
    else:
        channel_of = {doc: "B", pat: "A"}
    speaker_of = {doc: DOCTOR_SPEAKER, pat: PATIENT_SPEAKER, oth: "other1"}
    for role, length in _sample_turn_roles(rng, config, max(num_words - 1, 1)):
        block = ch["other"] if role == oth else ch[channel_of[role]]
        for _ in range(length):
            word_ids.append(int(rng.choice(block)))
            speakers.append(speaker_of[role])
    return word_ids, speakers


def _render_features(rng, config, vocab, tokens, turn_breaks):
    """Codebook frames per token plus noise, silence between turns."""
    book = codebook(config)
    silence_row = vocab.num_subword_tokens
    lo, hi = config.frames_per_token
    slo, shi = config.silence_frames
    frames = []
    spans = []
    for i, tok in enumerate(tokens):
        if i in turn_breaks:
            for _ in range(int(rng.integers(slo, shi + 1))):
                frames.append(book[silence_row])
        start = len(frames)
        for _ in range(int(rng.integers(lo, hi + 1))):
            frames.append(book[tok])
        spans.append((start, len(frames)))
    # trailing silence so the last emissions are not squeezed onto the final
    # speech frame
    for _ in range(int(rng.integers(slo, shi + 1))):
        frames.append(book[silence_row])
    feats = np.array(frames, dtype=np.float64)
    if feats.size == 0:
        feats = book[silence_row][None, :].copy()
        spans = []
    if config.noise_std > 0:
        feats = feats + rng.normal(size=feats.shape) * config.noise_std
    return feats, spans


def _make_utterance(rng, config, vocab, blocks, utt_id):
    word_ids, speakers = _gen_utterance_words(rng, config, blocks)
    tokens, token_roles, turn_breaks = [], [], set()
    prev_speaker = None
    for wid, speaker in zip(word_ids, speakers):
        if prev_speaker is not None and speaker != prev_speaker:
            turn_breaks.add(len(tokens))
        prev_speaker = speaker
        role = speaker_to_role(speaker, config.roles)
        for tok in vocab.word_tokens(wid):
            tokens.append(tok)
            token_roles.append(role)
    features, spans = _render_features(rng, config, vocab, tokens, turn_breaks)
    words = RoleTranscript(words=[(vocab.words[w], s) for w, s in zip(word_ids, speakers)])
    return Utterance(
        id=utt_id, features=features, tokens=tokens, words=words,
        token_roles=token_roles, token_spans=spans,
    )


def gen_corpus(config: SynthConfig, num_train: int, num_val: int, num_test: int):
    """Generate train/val/test splits from one seeded stream.

    Returns (vocabulary, {"train": [...], "val": [...], "test": [...]}).
    """
    vocab = build_vocabulary(config)
    blocks = _channel_blocks(config) if config.long_dependency else _role_blocks(config)
    rng = np.random.default_rng((config.seed, 0x5EED))
    totals = {"train": num_train, "val": num_val, "test": num_test}
    splits = {}
    counter = 0
    for split, count in totals.items():
        utts = []
        for _ in range(count):
            utts.append(_make_utterance(rng, config, vocab, blocks, f"utt-{counter:06d}"))
            counter += 1
        splits[split] = utts
    return vocab, splits


# --- dataset files -------------------------------------------------------------


def utterance_record(utt: Utterance) -> dict:
    return {
        "id": utt.id,
        "features": [[float(v) for v in row] for row in utt.features],
        "tokens": [int(t) for t in utt.tokens],
        "words": [{"text": t, "role": r} for t, r in utt.words.words],
    }


def utterance_from_record(record: dict, vocab: Vocabulary) -> Utterance:
    try:
        words = RoleTranscript(words=[(w["text"], w["role"]) for w in record["words"]])
        tokens = [int(t) for t in record["tokens"]]
        token_roles = []
        for _, label in words.words:
            token_roles.extend([speaker_to_role(label, vocab.roles)] * vocab.subword_split)
        if len(token_roles) != len(tokens):
            raise DataError(
                f"utterance {record.get('id')!r}: {len(tokens)} tokens but "
                f"{len(token_roles)} derived token roles"
            )
        return Utterance(
            id=str(record["id"]),
            features=np.array(record["features"], dtype=np.float64),
            tokens=tokens,
            words=words,
            token_roles=token_roles,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"utterance record {record.get('id')!r}: {exc}") from None


def write_dataset(path, utterances):
    write_jsonl(path, (utterance_record(u) for u in utterances))


def read_dataset(path, vocab: Vocabulary):
    return [utterance_from_record(r, vocab) for r in read_jsonl(path)]


def write_vocabulary(path, vocab: Vocabulary):
    write_json(path, vocab.to_dict())


def read_vocabulary(path) -> Vocabulary:
    return Vocabulary.from_dict(read_json(path))


# --- nearest-codebook oracle ------------------------------------------------------


def oracle_decode(features, config: SynthConfig, vocab: Vocabulary):
    """Per-frame nearest-codebook token decoder for frames_per_token == (1, 1).

    Classifies every frame against the codebook (silence included), drops
    silence frames, and returns the token sequence. With zero noise this
    recovers the generated tokens exactly; accuracy degrades monotonically
    with the noise dial.
    """
    if config.frames_per_token != (1, 1):
        raise ValueError("oracle decoding assumes one frame per token")
    book = codebook(config)
    silence_row = vocab.num_subword_tokens
    d2 = ((np.asarray(features)[:, None, :] - book[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    return [int(t) for t in nearest if t != silence_row]
