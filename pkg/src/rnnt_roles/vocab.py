"""Token vocabularies, role sets, and role-labeled word transcripts.

Token id layout used throughout the package: subword token ids come first
(``word_id * subword_split + piece``), then one id per role (only present in
the role-augmented vocabulary), and blank is always the last id of whichever
vocabulary carries it.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class RoleSet:
    """Ordered, unique role names (e.g. DOC, PAT, OTH)."""

    roles: tuple

    def __post_init__(self):
        object.__setattr__(self, "roles", tuple(self.roles))
        if len(self.roles) < 2:
            raise ValueError("a role set needs at least two roles")
        if len(set(self.roles)) != len(self.roles):
            raise ValueError("role names must be unique")

    @property
    def size(self) -> int:
        return len(self.roles)

    def index(self, name: str) -> int:
        try:
            return self.roles.index(name)
        except ValueError:
            raise KeyError(f"unknown role {name!r}") from None

    def __iter__(self):
        return iter(self.roles)


DEFAULT_ROLES = RoleSet(("DOC", "PAT", "OTH"))

# Reference transcripts carry speaker identities; hypotheses carry roles.
DOCTOR_SPEAKER = "doctor"
PATIENT_SPEAKER = "patient"
OTHER_SPEAKER_PREFIX = "other"


def speaker_to_role(speaker: str, roles: RoleSet = DEFAULT_ROLES) -> str:
    """Map a reference speaker identity to its functional role name."""
    if speaker == DOCTOR_SPEAKER:
        return roles.roles[0]
    if speaker == PATIENT_SPEAKER:
        return roles.roles[1]
    if speaker.startswith(OTHER_SPEAKER_PREFIX):
        return roles.roles[2] if roles.size >= 3 else roles.roles[-1]
    if speaker in roles.roles:
        return speaker
    raise KeyError(f"cannot map speaker {speaker!r} to a role")


@dataclass(frozen=True)
class RoleTranscript:
    """A word sequence with one label per word.

    For hypotheses the labels are role names; for references they are
    speaker identities (doctor, patient, other1, ...). Unlabeled words are
    not representable.
    """

    words: tuple  # of (text, label) pairs

    def __post_init__(self):
        object.__setattr__(self, "words", tuple((str(t), str(r)) for t, r in self.words))

    @property
    def texts(self):
        return [t for t, _ in self.words]

    @property
    def labels(self):
        return [r for _, r in self.words]

    def __len__(self):
        return len(self.words)


@dataclass
class Vocabulary:
    """Word inventory plus roles; derives subword token ids and strings.

    A word splits into ``subword_split`` consecutive token ids; with split 1
    a token is a word. The plain recognition vocabulary is the subword
    tokens plus blank; the role-augmented vocabulary inserts one token per
    role before blank.
    """

    words: list
    roles: RoleSet = field(default_factory=lambda: DEFAULT_ROLES)
    subword_split: int = 1

    def __post_init__(self):
        self.words = [str(w) for w in self.words]
        if len(set(self.words)) != len(self.words):
            raise ValueError("word inventory contains duplicates")
        if self.subword_split < 1:
            raise ValueError("subword_split must be >= 1")

    # --- sizes and special ids -------------------------------------------
    @property
    def num_subword_tokens(self) -> int:
        return len(self.words) * self.subword_split

    @property
    def asr_vocab_size(self) -> int:
        return self.num_subword_tokens + 1

    @property
    def asr_blank(self) -> int:
        return self.num_subword_tokens

    @property
    def role_asr_vocab_size(self) -> int:
        return self.num_subword_tokens + self.roles.size + 1

    @property
    def role_asr_blank(self) -> int:
        return self.num_subword_tokens + self.roles.size

    def role_token(self, role_name: str) -> int:
        return self.num_subword_tokens + self.roles.index(role_name)

    def is_role_token(self, token: int) -> bool:
        return self.num_subword_tokens <= token < self.num_subword_tokens + self.roles.size

    # --- word <-> token mapping ------------------------------------------
    def word_tokens(self, word_id: int):
        base = word_id * self.subword_split
        return list(range(base, base + self.subword_split))

    def encode_words(self, texts):
        out = []
        for text in texts:
            try:
                wid = self.words.index(text)
            except ValueError:
                raise KeyError(f"word {text!r} not in vocabulary") from None
            out.extend(self.word_tokens(wid))
        return out

    def token_string(self, token: int) -> str:
        if token < self.num_subword_tokens:
            wid, piece = divmod(token, self.subword_split)
            if self.subword_split == 1:
                return self.words[wid]
            return f"{self.words[wid]}@{piece}"
        if self.is_role_token(token):
            return self.roles.roles[token - self.num_subword_tokens]
        return "<blank>"

    def token_strings(self):
        return [self.token_string(i) for i in range(self.num_subword_tokens)]

    def collapse_tokens(self, tokens, attachments=None):
        """Collapse subword tokens back to word texts.

        Consecutive tokens of the same word id with ascending piece index
        collapse into one word; stray pieces fall back to their parent word
        so that scoring stays word-based under deletions. When per-token
        ``attachments`` are given, each word keeps its first token's
        attachment and (words, word_attachments) is returned.
        """
        texts = []
        kept = []
        prev_wid, prev_piece = None, None
        for i, tok in enumerate(tokens):
            if not 0 <= tok < self.num_subword_tokens:
                raise ValueError(f"token {tok} is not a subword token")
            wid, piece = divmod(tok, self.subword_split)
            if wid == prev_wid and prev_piece is not None and piece == prev_piece + 1:
                prev_piece = piece
                continue
            texts.append(self.words[wid])
            if attachments is not None:
                kept.append(attachments[i])
            prev_wid, prev_piece = wid, piece
        if attachments is not None:
            return texts, kept
        return texts

    def tokens_to_words(self, tokens):
        return self.collapse_tokens(tokens)

    def to_dict(self) -> dict:
        return {
            "words": list(self.words),
            "roles": list(self.roles.roles),
            "subword_split": self.subword_split,
            "tokens": self.token_strings(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            words=list(d["words"]),
            roles=RoleSet(tuple(d["roles"])),
            subword_split=int(d.get("subword_split", 1)),
        )
