"""Scikit-learn style estimators wrapping the train/decode core.

``TransducerRecognizer`` fits a recognition (optionally role-token
augmented) transducer on utterances and predicts word sequences;
``RoleDiarizer`` fits the frozen-recognizer role head and predicts
role-labeled transcripts. Constructor arguments are stored verbatim, so
``get_params``/``set_params``/``clone`` behave as sklearn expects.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .alignment import roles_from_augmented, strip_role_tokens
from .decoder import NetworkScorer, SuppressionConfig, beam_search, greedy_decode
from .models import EncoderConfig, PredictorConfig
from .numerics import AdamConfig
from .training import (
    TrainSettings,
    role_from_checkpoint,
    train_asr,
    train_rd,
    transducer_from_checkpoint,
)
from .vocab import RoleTranscript, Vocabulary


def check_utterances(utterances, input_dim=None, require_roles=False):
    """Validate decoding/training inputs: features, tokens, roles."""
    utterances = list(utterances)
    if not utterances:
        raise ValueError("empty utterance collection")
    for utt in utterances:
        feats = np.asarray(utt.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError(f"utterance {utt.id}: features must be a nonempty [T, D] array")
        if input_dim is not None and feats.shape[1] != input_dim:
            raise ValueError(
                f"utterance {utt.id}: feature dim {feats.shape[1]} != expected {input_dim}"
            )
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"utterance {utt.id}: non-finite features")
        if any(t < 0 for t in utt.tokens):
            raise ValueError(f"utterance {utt.id}: negative token id")
        if require_roles and len(utt.token_roles) != len(utt.tokens):
            raise ValueError(f"utterance {utt.id}: token_roles do not align with tokens")
    return utterances


def _check_fitted(estimator, attr):
    if not hasattr(estimator, attr):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first"
        )


class TransducerRecognizer(BaseEstimator):
    """Streaming-transducer recognizer with a finite- or full-context predictor.

    With ``role_augmented=True`` the training targets interleave role tokens
    at turn ends and ``predict`` returns role-labeled transcripts.
    """

    def __init__(self, vocabulary=None, role_augmented=False,
                 encoder_kind="unidirectional-recurrent", encoder_layers=2,
                 hidden_dim=32, tap_layer=1, subsample_factor=2,
                 predictor_kind="cnn", predictor_context=2, embed_dim=16,
                 joint_dim=32, learning_rate=3e-3, warmup_steps=200,
                 weight_decay=1e-6, epochs=5, average_top_k=3, beam_size=4,
                 max_symbols_per_frame=10, seed=0):
        self.vocabulary = vocabulary
        self.role_augmented = role_augmented
        self.encoder_kind = encoder_kind
        self.encoder_layers = encoder_layers
        self.hidden_dim = hidden_dim
        self.tap_layer = tap_layer
        self.subsample_factor = subsample_factor
        self.predictor_kind = predictor_kind
        self.predictor_context = predictor_context
        self.embed_dim = embed_dim
        self.joint_dim = joint_dim
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.average_top_k = average_top_k
        self.beam_size = beam_size
        self.max_symbols_per_frame = max_symbols_per_frame
        self.seed = seed

    # --- config assembly ---------------------------------------------------
    def _encoder_config(self, input_dim):
        return EncoderConfig(kind=self.encoder_kind, num_layers=self.encoder_layers,
                             hidden_dim=self.hidden_dim, input_dim=input_dim,
                             tap_layer=self.tap_layer,
                             subsample_factor=self.subsample_factor)

    def _predictor_config(self):
        return PredictorConfig(kind=self.predictor_kind,
                               context_n=self.predictor_context,
                               embed_dim=self.embed_dim, hidden_dim=self.hidden_dim)

    def _adam_config(self):
        return AdamConfig(learning_rate=self.learning_rate,
                          warmup_steps=self.warmup_steps,
                          weight_decay=self.weight_decay)

    def _settings(self):
        return TrainSettings(epochs=self.epochs, seed=self.seed,
                             average_top_k=self.average_top_k,
                             joint_dim=self.joint_dim)

    def _vocab(self) -> Vocabulary:
        if self.vocabulary is None:
            raise ValueError("a Vocabulary is required")
        return self.vocabulary

    # --- estimator interface -------------------------------------------------
    def fit(self, utterances, validation=None):
        vocab = self._vocab()
        utterances = check_utterances(utterances, require_roles=self.role_augmented)
        validation = list(validation) if validation else []
        input_dim = np.asarray(utterances[0].features).shape[1]
        self.checkpoint_, self.history_ = train_asr(
            utterances, validation, vocab,
            encoder_config=self._encoder_config(input_dim),
            predictor_config=self._predictor_config(),
            adam_config=self._adam_config(),
            settings=self._settings(),
            role_augmented=self.role_augmented,
        )
        self.network_ = transducer_from_checkpoint(self.checkpoint_)
        return self

    def decode(self, utterances, greedy=False):
        """Raw token-level hypotheses (one BeamHypothesis per utterance)."""
        _check_fitted(self, "network_")
        out = []
        for utt in check_utterances(utterances):
            scorer = NetworkScorer(self.network_, utt.features)
            if greedy:
                out.append(greedy_decode(scorer, self.max_symbols_per_frame))
            else:
                out.append(beam_search(scorer, self.beam_size,
                                       max_symbols_per_frame=self.max_symbols_per_frame)[0])
        return out

    def predict(self, utterances):
        """Word sequences; role-labeled transcripts when role-augmented."""
        vocab = self._vocab()
        hyps = self.decode(utterances)
        results = []
        for hyp in hyps:
            tokens = list(hyp.tokens)
            if self.role_augmented:
                words = vocab.tokens_to_words(strip_role_tokens(tokens, vocab))
                roles = roles_from_augmented(tokens, vocab)
                results.append(RoleTranscript(words=list(zip(words, roles))))
            else:
                results.append(vocab.tokens_to_words(tokens))
        return results


class RoleDiarizer(BaseEstimator):
    """Role head synchronized to a fitted (then frozen) recognizer.

    ``predictor_kind="shared"`` reuses the recognizer's frozen predictor;
    otherwise the role head gets its own trainable one. ``suppression_tokens``
    (word strings) arm role-guided blank suppression during ``predict``.
    """

    def __init__(self, recognizer=None, encoder_kind="unidirectional-recurrent",
                 encoder_layers=1, hidden_dim=32, predictor_kind="rnn",
                 predictor_context=2, embed_dim=16, joint_dim=32,
                 init_predictor_from=None, learning_rate=3e-3, warmup_steps=200,
                 weight_decay=1e-6, epochs=5, average_top_k=3, beam_size=4,
                 max_symbols_per_frame=10, suppression_tokens=None, alpha=0.1,
                 beta=0.99, min_gap=3, suppressed_blank_value=0.01, seed=0):
        self.recognizer = recognizer
        self.encoder_kind = encoder_kind
        self.encoder_layers = encoder_layers
        self.hidden_dim = hidden_dim
        self.predictor_kind = predictor_kind
        self.predictor_context = predictor_context
        self.embed_dim = embed_dim
        self.joint_dim = joint_dim
        self.init_predictor_from = init_predictor_from
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.average_top_k = average_top_k
        self.beam_size = beam_size
        self.max_symbols_per_frame = max_symbols_per_frame
        self.suppression_tokens = suppression_tokens
        self.alpha = alpha
        self.beta = beta
        self.min_gap = min_gap
        self.suppressed_blank_value = suppressed_blank_value
        self.seed = seed

    def _recognizer_parts(self):
        rec = self.recognizer
        if rec is None:
            raise ValueError("a fitted TransducerRecognizer is required")
        _check_fitted(rec, "checkpoint_")
        return rec, rec._vocab()

    def fit(self, utterances, validation=None):
        rec, vocab = self._recognizer_parts()
        utterances = check_utterances(utterances, require_roles=True)
        validation = list(validation) if validation else []
        shared = self.predictor_kind == "shared"
        rd_encoder = EncoderConfig(kind=self.encoder_kind,
                                   num_layers=self.encoder_layers,
                                   hidden_dim=self.hidden_dim,
                                   input_dim=rec.hidden_dim,
                                   tap_layer=1,
                                   subsample_factor=1)
        rd_predictor = None if shared else PredictorConfig(
            kind=self.predictor_kind, context_n=self.predictor_context,
            embed_dim=self.embed_dim, hidden_dim=self.hidden_dim)
        self.checkpoint_, self.history_ = train_rd(
            utterances, validation, vocab, rec.checkpoint_,
            rd_encoder_config=rd_encoder,
            rd_predictor_config=rd_predictor,
            adam_config=AdamConfig(learning_rate=self.learning_rate,
                                   warmup_steps=self.warmup_steps,
                                   weight_decay=self.weight_decay),
            settings=TrainSettings(epochs=self.epochs, seed=self.seed,
                                   average_top_k=self.average_top_k,
                                   joint_dim=self.joint_dim),
            init_predictor_checkpoint=self.init_predictor_from,
        )
        self.network_ = role_from_checkpoint(self.checkpoint_)
        return self

    def _suppression_config(self, vocab):
        if not self.suppression_tokens:
            return None
        ids = []
        for word in self.suppression_tokens:
            ids.extend(vocab.encode_words([word]))
        return SuppressionConfig(alpha=self.alpha, beta=self.beta,
                                 suppression_set=frozenset(ids),
                                 min_gap=self.min_gap,
                                 suppressed_blank_value=self.suppressed_blank_value)

    def decode(self, utterances, suppression="auto"):
        """Joint token/role hypotheses; suppression per the estimator config."""
        _check_fitted(self, "network_")
        rec, vocab = self._recognizer_parts()
        if suppression == "auto":
            suppression = self._suppression_config(vocab)
        out = []
        for utt in check_utterances(utterances):
            scorer = NetworkScorer(rec.network_, utt.features, self.network_)
            out.append(beam_search(scorer, self.beam_size, suppression=suppression,
                                   max_symbols_per_frame=self.max_symbols_per_frame)[0])
        return out

    def predict(self, utterances):
        """Role-labeled transcripts from synchronized joint decoding."""
        rec, vocab = self._recognizer_parts()
        results = []
        for hyp in self.decode(utterances):
            role_names = [vocab.roles.roles[r] for r in hyp.roles]
            words, word_roles = vocab.collapse_tokens(list(hyp.tokens), role_names)
            results.append(RoleTranscript(words=list(zip(words, word_roles))))
        return results
