"""Training loops: recognition transducers and the frozen-recognizer role head.

One utterance per optimizer step, sequential and fully seeded, so fixed
seeds give bit-identical checkpoints. Per-epoch parameter snapshots are
kept and the returned checkpoint is the elementwise average of the k best
epochs by validation metric.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .alignment import emission_steps, expand_role_targets, insert_role_tokens, viterbi_force_align
from .lattice import LogitLattice, rd_cross_entropy, rnnt_gradients, rnnt_log_likelihood
from .models import (
    Checkpoint,
    EncoderConfig,
    PredictorConfig,
    RoleNetwork,
    TransducerNetwork,
    average_checkpoints,
    init_rd_predictor_from,
    load_state_dict,
    set_frozen,
    state_dict,
)
from .numerics import AdamConfig, AdamState, NumericalError, adam_step
from .vocab import Vocabulary


@dataclass
class TrainSettings:
    epochs: int = 5
    seed: int = 0
    average_top_k: int = 3
    joint_dim: int = 32


def _epoch_rows(history):
    return [dict(row) for row in history]


def build_transducer(encoder_config, predictor_config, joint_dim, vocab: Vocabulary,
                     role_augmented: bool, seed: int) -> TransducerNetwork:
    if role_augmented:
        vocab_size = vocab.role_asr_vocab_size
        num_pred_tokens = vocab.num_subword_tokens + vocab.roles.size
    else:
        vocab_size = vocab.asr_vocab_size
        num_pred_tokens = vocab.num_subword_tokens
    return TransducerNetwork.build(
        encoder_config, predictor_config, joint_dim, vocab_size, num_pred_tokens, seed
    )


def transducer_config_echo(encoder_config, predictor_config, joint_dim, vocab,
                           role_augmented) -> dict:
    return {
        "kind": "role_asr" if role_augmented else "asr",
        "encoder": asdict(encoder_config),
        "predictor": asdict(predictor_config),
        "joint_dim": joint_dim,
        "vocab_size": vocab.role_asr_vocab_size if role_augmented else vocab.asr_vocab_size,
        "num_pred_tokens": (
            vocab.num_subword_tokens + vocab.roles.size if role_augmented
            else vocab.num_subword_tokens
        ),
    }


def transducer_from_checkpoint(ckpt: Checkpoint) -> TransducerNetwork:
    cfg = ckpt.config
    network = TransducerNetwork.build(
        EncoderConfig(**cfg["encoder"]),
        PredictorConfig(**cfg["predictor"]),
        int(cfg["joint_dim"]),
        int(cfg["vocab_size"]),
        int(cfg["num_pred_tokens"]),
        seed=0,
    )
    load_state_dict(network, ckpt.tensors)
    return network


def _utterance_targets(utt, vocab: Vocabulary, role_augmented: bool):
    if role_augmented:
        return insert_role_tokens(utt.words, vocab)
    return list(utt.tokens)


def _mean_neg_log_likelihood(network, utterances, targets):
    total = 0.0
    for utt, tokens in zip(utterances, targets):
        logits, _ = network.forward(utt.features, tokens)
        lat = LogitLattice(logits, blank=network.blank)
        total -= rnnt_log_likelihood(lat, tokens)
    return total / max(len(utterances), 1)


def train_asr(
    train_utts,
    val_utts,
    vocab: Vocabulary,
    *,
    encoder_config: EncoderConfig,
    predictor_config: PredictorConfig,
    adam_config: AdamConfig,
    settings: TrainSettings,
    role_augmented: bool = False,
    log=None,
):
    """Train a recognition (or role-augmented) transducer.

    Returns (checkpoint, history); history row 0 is the pre-training
    validation loss. The checkpoint is the average of the
    ``settings.average_top_k`` best epochs by validation loss.
    """
    if not train_utts:
        raise ValueError("empty training set")
    network = build_transducer(
        encoder_config, predictor_config, settings.joint_dim, vocab, role_augmented,
        settings.seed,
    )
    params = network.parameters()
    train_targets = [_utterance_targets(u, vocab, role_augmented) for u in train_utts]
    val_targets = [_utterance_targets(u, vocab, role_augmented) for u in val_utts]
    config_echo = transducer_config_echo(
        encoder_config, predictor_config, settings.joint_dim, vocab, role_augmented
    )

    rng = np.random.default_rng((settings.seed, 0x7EA1))
    opt_state = AdamState()
    step = 0
    history = [{"epoch": 0, "train_loss": None,
                "val_loss": _mean_neg_log_likelihood(network, val_utts, val_targets)}]
    snapshots = []
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(train_utts))
        running = 0.0
        for idx in order:
            utt, tokens = train_utts[idx], train_targets[idx]
            logits, _ = network.forward(utt.features, tokens)
            lat = LogitLattice(logits, blank=network.blank)
            ll = rnnt_log_likelihood(lat, tokens)
            if not np.isfinite(ll):
                raise NumericalError(
                    f"diverged at epoch {epoch}, utterance {utt.id}: loss={-ll}"
                )
            running -= ll
            network.backward(rnnt_gradients(lat, tokens))
            step += 1
            adam_step(params, opt_state, step, adam_config)
        val_loss = _mean_neg_log_likelihood(network, val_utts, val_targets)
        row = {"epoch": epoch, "train_loss": running / len(train_utts), "val_loss": val_loss}
        history.append(row)
        if log:
            log(row)
        snapshots.append((val_loss, epoch, state_dict(network)))

    k = max(1, min(settings.average_top_k, len(snapshots)))
    snapshots.sort(key=lambda item: (item[0], item[1]))
    best = [Checkpoint(tensors=t, config=config_echo, step=step, metric=m)
            for m, _, t in snapshots[:k]]
    final = average_checkpoints(best) if len(best) > 1 else best[0]
    final.config = config_echo
    final.step = step
    final.metric = snapshots[0][0]
    return final, _epoch_rows(history)


@dataclass
class RoleTrainingData:
    """Frozen-recognizer quantities cached once per utterance."""

    tapped: np.ndarray
    tokens: list
    targets: list  # (t, u, role_index)
    shared_G: Optional[np.ndarray] = None


def prepare_role_data(asr: TransducerNetwork, utterances, vocab: Vocabulary,
                      need_shared_G: bool):
    """Forced-align each utterance against the frozen recognizer.

    Returns RoleTrainingData with the tap activations, the emission-step
    role targets, and (for the shared-predictor variant) the recognizer's
    predictor outputs.
    """
    out = []
    for utt in utterances:
        F, tapped = asr.encoder.forward(utt.features)
        G = asr.predictor.forward_sequence(utt.tokens)
        logits = asr.joiner.forward_all(F, G)
        lat = LogitLattice(logits, blank=asr.blank)
        path = viterbi_force_align(lat, utt.tokens)
        targets = expand_role_targets(
            emission_steps(path), utt.token_roles, vocab.roles, utt.id
        )
        out.append(
            RoleTrainingData(
                tapped=tapped,
                tokens=list(utt.tokens),
                targets=list(targets),
                shared_G=G if need_shared_G else None,
            )
        )
    return out


def _mean_role_ce(rd: RoleNetwork, data):
    total = 0.0
    steps = 0
    for item in data:
        logits = rd.forward(item.tapped, item.tokens, shared_G=item.shared_G)
        lat = LogitLattice(logits, blank=None)
        loss, _ = rd_cross_entropy(lat, item.targets)
        total += loss
        steps += max(len(item.targets), 1)
    return total / max(steps, 1)


def role_config_echo(rd_encoder_config, rd_predictor_config, joint_dim, vocab,
                     shared_predictor_dim) -> dict:
    return {
        "kind": "rd",
        "encoder": asdict(rd_encoder_config),
        "predictor": None if rd_predictor_config is None else asdict(rd_predictor_config),
        "joint_dim": joint_dim,
        "num_roles": vocab.roles.size,
        "num_pred_tokens": vocab.num_subword_tokens,
        "shared_predictor_dim": shared_predictor_dim,
    }


def role_from_checkpoint(ckpt: Checkpoint) -> RoleNetwork:
    cfg = ckpt.config
    pred_cfg = None if cfg["predictor"] is None else PredictorConfig(**cfg["predictor"])
    network = RoleNetwork.build(
        EncoderConfig(**cfg["encoder"]),
        pred_cfg,
        int(cfg["joint_dim"]),
        int(cfg["num_roles"]),
        int(cfg["num_pred_tokens"]),
        predictor_dim=cfg.get("shared_predictor_dim"),
        seed=0,
    )
    load_state_dict(network, ckpt.tensors)
    return network


def train_rd(
    train_utts,
    val_utts,
    vocab: Vocabulary,
    asr_checkpoint: Checkpoint,
    *,
    rd_encoder_config: EncoderConfig,
    rd_predictor_config: Optional[PredictorConfig],
    adam_config: AdamConfig,
    settings: TrainSettings,
    init_predictor_checkpoint: Optional[Checkpoint] = None,
    log=None,
):
    """Train the role head against the frozen recognizer.

    ``rd_predictor_config=None`` shares the recognizer's (frozen) predictor.
    Recognition parameters are frozen and verified unchanged. Model
    selection is by validation cross-entropy over emission steps.
    """
    if not train_utts:
        raise ValueError("empty training set")
    asr = transducer_from_checkpoint(asr_checkpoint)
    set_frozen(asr.parameters(), True)
    asr_before = {p.name: p.value.copy() for p in asr.parameters()}

    shared = rd_predictor_config is None
    rd = RoleNetwork.build(
        rd_encoder_config,
        rd_predictor_config,
        settings.joint_dim,
        vocab.roles.size,
        vocab.num_subword_tokens,
        predictor_dim=asr.predictor.config.hidden_dim if shared else None,
        seed=settings.seed + 1,
    )
    if init_predictor_checkpoint is not None:
        if rd.predictor is None:
            raise ValueError("cannot initialize a shared predictor from a checkpoint")
        init_rd_predictor_from(init_predictor_checkpoint, rd.predictor)
    params = rd.parameters()
    config_echo = role_config_echo(
        rd_encoder_config, rd_predictor_config, settings.joint_dim, vocab,
        asr.predictor.config.hidden_dim if shared else None,
    )

    train_data = prepare_role_data(asr, train_utts, vocab, need_shared_G=shared)
    val_data = prepare_role_data(asr, val_utts, vocab, need_shared_G=shared)

    rng = np.random.default_rng((settings.seed, 0x7EA2))
    opt_state = AdamState()
    step = 0
    history = [{"epoch": 0, "train_loss": None, "val_loss": _mean_role_ce(rd, val_data)}]
    snapshots = []
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(train_data))
        running = 0.0
        running_steps = 0
        for idx in order:
            item = train_data[idx]
            logits = rd.forward(item.tapped, item.tokens, shared_G=item.shared_G)
            lat = LogitLattice(logits, blank=None)
            loss, dlogits = rd_cross_entropy(lat, item.targets)
            if not np.isfinite(loss):
                raise NumericalError(f"diverged at epoch {epoch} (role head)")
            running += loss
            running_steps += max(len(item.targets), 1)
            rd.backward(dlogits)
            step += 1
            adam_step(params, opt_state, step, adam_config)
        val_loss = _mean_role_ce(rd, val_data)
        row = {"epoch": epoch, "train_loss": running / max(running_steps, 1),
               "val_loss": val_loss}
        history.append(row)
        if log:
            log(row)
        snapshots.append((val_loss, epoch, state_dict(rd)))

    for p in asr.parameters():
        if not np.array_equal(asr_before[p.name], p.value):
            raise AssertionError(f"frozen recognizer tensor {p.name} changed")

    k = max(1, min(settings.average_top_k, len(snapshots)))
    snapshots.sort(key=lambda item: (item[0], item[1]))
    best = [Checkpoint(tensors=t, config=config_echo, step=step, metric=m)
            for m, _, t in snapshots[:k]]
    final = average_checkpoints(best) if len(best) > 1 else best[0]
    final.config = config_echo
    final.step = step
    final.metric = snapshots[0][0]
    return final, _epoch_rows(history)
