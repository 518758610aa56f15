import numpy as np
import pytest

from rnnt_roles.lattice import LogitLattice, joiner_forward, rnnt_gradients, rnnt_log_likelihood
from rnnt_roles.models import (
    Checkpoint,
    CnnPredictor,
    Encoder,
    EncoderConfig,
    PredictorConfig,
    RnnPredictor,
    RoleNetwork,
    TransducerNetwork,
    average_checkpoints,
    checkpoint_from_json,
    checkpoint_hash,
    checkpoint_to_json,
    init_rd_predictor_from,
    load_checkpoint,
    load_state_dict,
    save_checkpoint,
    set_frozen,
    state_dict,
)


def tiny_network(seed=0, vocab_size=5, pred_kind="cnn", enc_kind="unidirectional-recurrent"):
    enc = EncoderConfig(kind=enc_kind, num_layers=2, hidden_dim=4, input_dim=3,
                        tap_layer=1, subsample_factor=1)
    pred = PredictorConfig(kind=pred_kind, context_n=2, embed_dim=3, hidden_dim=4)
    return TransducerNetwork.build(enc, pred, joint_dim=3, vocab_size=vocab_size,
                                   num_pred_tokens=vocab_size - 1, seed=seed)


# --- encoder -------------------------------------------------------------------


def test_identity_initialized_feedforward_encoder():
    cfg = EncoderConfig(kind="feedforward", num_layers=1, hidden_dim=3, input_dim=3,
                        tap_layer=1, subsample_factor=1)
    enc = Encoder(cfg, np.random.default_rng(0))
    enc.in_proj.W.value[...] = np.eye(3)
    enc.in_proj.b.value[...] = 0.0
    for p in enc.blocks[0].parameters():
        p.value[...] = 0.0
    x = np.random.default_rng(1).normal(size=(4, 3))
    out, tapped = enc.forward(x)
    assert np.array_equal(out, x)
    assert np.array_equal(tapped, x)


def test_encoder_subsample_ceil():
    cfg = EncoderConfig(kind="feedforward", num_layers=1, hidden_dim=4, input_dim=3,
                        subsample_factor=2)
    enc = Encoder(cfg, np.random.default_rng(2))
    out, _ = enc.forward(np.random.default_rng(3).normal(size=(5, 3)))
    assert out.shape == (3, 4)


def test_encoder_frame_count_preserved_at_factor_one():
    for T in (1, 2, 7):
        cfg = EncoderConfig(kind="unidirectional-recurrent", num_layers=1, hidden_dim=4,
                            input_dim=4)
        enc = Encoder(cfg, np.random.default_rng(4))
        out, _ = enc.forward(np.random.default_rng(5).normal(size=(T, 4)))
        assert out.shape == (T, 4)


def test_encoder_rejects_bad_input():
    cfg = EncoderConfig(num_layers=1, hidden_dim=4, input_dim=3)
    enc = Encoder(cfg, np.random.default_rng(6))
    with pytest.raises(ValueError):
        enc.forward(np.zeros((4, 5)))


# --- finite differences through the whole stack ----------------------------------


def network_loss(network, features, tokens):
    logits, _ = network.forward(features, tokens)
    return -rnnt_log_likelihood(LogitLattice(logits, blank=network.blank), tokens)


def check_network_gradients(network, features, tokens, h=1e-6, rel=1e-4):
    logits, _ = network.forward(features, tokens)
    lat = LogitLattice(logits, blank=network.blank)
    network.backward(rnnt_gradients(lat, tokens))
    for p in network.parameters():
        analytic = p.grad.copy()
        fd = np.zeros_like(analytic)
        it = np.nditer(p.value, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p.value[idx]
            p.value[idx] = orig + h
            lp = network_loss(network, features, tokens)
            p.value[idx] = orig - h
            lm = network_loss(network, features, tokens)
            p.value[idx] = orig
            fd[idx] = (lp - lm) / (2 * h)
            it.iternext()
        denom = np.maximum(np.abs(fd), 1e-3)
        worst = np.max(np.abs(analytic - fd) / denom)
        assert worst <= rel, f"{p.name}: rel err {worst}"
        p.zero_grad()


@pytest.mark.parametrize("pred_kind", ["cnn", "rnn"])
@pytest.mark.parametrize("enc_kind", ["feedforward", "unidirectional-recurrent"])
def test_full_stack_gradients(pred_kind, enc_kind):
    rng = np.random.default_rng(7)
    network = tiny_network(seed=11, pred_kind=pred_kind, enc_kind=enc_kind)
    features = rng.normal(size=(4, 3))
    tokens = [1, 3]
    check_network_gradients(network, features, tokens)


def test_vectorized_joiner_matches_reference_op():
    network = tiny_network(seed=12)
    rng = np.random.default_rng(13)
    F = rng.normal(size=(3, 4))
    G = rng.normal(size=(2, 4))
    all_logits = network.joiner.forward_all(F, G)
    params = network.joiner.params_view()
    for t in range(3):
        for u in range(2):
            ref = joiner_forward(F[t], G[u], params)
            assert np.max(np.abs(all_logits[t, u] - ref)) < 1e-12


# --- predictors -----------------------------------------------------------------


def test_cnn_predictor_empty_prefix_start_state():
    pred = CnnPredictor(PredictorConfig(kind="cnn", context_n=2, embed_dim=3, hidden_dim=4),
                        num_tokens=5, rng=np.random.default_rng(14))
    g = pred.forward_sequence([])
    assert g.shape == (1, 4)
    _, g0 = pred.init_state()
    assert np.allclose(g[0], g0, atol=1e-15)


def test_cnn_context_window_bound():
    pred = CnnPredictor(PredictorConfig(kind="cnn", context_n=2, embed_dim=3, hidden_dim=4),
                        num_tokens=6, rng=np.random.default_rng(15))
    tokens = [0, 1, 2, 3, 4, 5]
    base = pred.forward_sequence(tokens)
    u = 4  # g_4 sees tokens at 0-based positions 2 and 3 only
    far = list(tokens)
    far[1] = 5
    assert np.array_equal(pred.forward_sequence(far)[u], base[u])
    near = list(tokens)
    near[3] = 0
    assert not np.array_equal(pred.forward_sequence(near)[u], base[u])
    near2 = list(tokens)
    near2[2] = 5
    assert not np.array_equal(pred.forward_sequence(near2)[u], base[u])


@pytest.mark.parametrize("n", [1, 2, 4])
def test_cnn_context_bound_exhaustive(n):
    pred = CnnPredictor(PredictorConfig(kind="cnn", context_n=n, embed_dim=2, hidden_dim=3),
                        num_tokens=4, rng=np.random.default_rng(16))
    tokens = [0, 1, 2, 3, 1, 0, 2]
    base = pred.forward_sequence(tokens)
    for u in range(len(tokens) + 1):
        window = set(range(max(0, u - n), u))
        for pos in range(len(tokens)):
            mutated = list(tokens)
            mutated[pos] = (mutated[pos] + 1) % 4
            out = pred.forward_sequence(mutated)
            if pos in window:
                assert not np.array_equal(out[u], base[u])
            else:
                assert np.array_equal(out[u], base[u])


def test_rnn_predictor_long_range_sensitivity():
    pred = RnnPredictor(PredictorConfig(kind="rnn", embed_dim=3, hidden_dim=4),
                        num_tokens=5, rng=np.random.default_rng(17))
    tokens = [1, 2, 3, 4, 0, 1, 2, 3, 4, 0]
    base = pred.forward_sequence(tokens)
    mutated = list(tokens)
    mutated[0] = 3
    out = pred.forward_sequence(mutated)
    assert np.max(np.abs(out[10] - base[10])) > 1e-12


def test_predictor_incremental_matches_sequence():
    for kind in ("cnn", "rnn"):
        cfg = PredictorConfig(kind=kind, context_n=3, embed_dim=3, hidden_dim=4)
        cls = CnnPredictor if kind == "cnn" else RnnPredictor
        pred = cls(cfg, num_tokens=5, rng=np.random.default_rng(18))
        tokens = [0, 4, 2, 1]
        full = pred.forward_sequence(tokens)
        state, g = pred.init_state()
        assert np.allclose(g, full[0], atol=1e-14)
        for u, tok in enumerate(tokens, start=1):
            state, g = pred.advance(state, tok)
            assert np.allclose(g, full[u], atol=1e-14)


# --- role network and freezing -----------------------------------------------------


def test_role_encoder_identity_and_frame_preserving():
    cfg = EncoderConfig(kind="feedforward", num_layers=1, hidden_dim=3, input_dim=3,
                        subsample_factor=1)
    rd = RoleNetwork.build(cfg, PredictorConfig(kind="rnn", embed_dim=2, hidden_dim=3),
                           joint_dim=2, num_roles=3, num_pred_tokens=4,
                           predictor_dim=None, seed=19)
    rd.encoder.in_proj.W.value[...] = np.eye(3)
    rd.encoder.in_proj.b.value[...] = 0.0
    for p in rd.encoder.blocks[0].parameters():
        p.value[...] = 0.0
    x = np.random.default_rng(20).normal(size=(6, 3))
    out, _ = rd.encoder.forward(x)
    assert np.array_equal(out, x)


def test_role_network_requires_frame_rate_preservation():
    cfg = EncoderConfig(num_layers=1, hidden_dim=3, input_dim=3, subsample_factor=2)
    with pytest.raises(ValueError):
        RoleNetwork.build(cfg, None, joint_dim=2, num_roles=3, num_pred_tokens=4,
                          predictor_dim=4, seed=0)


def test_gradient_stops_at_recognizer_boundary():
    asr = tiny_network(seed=21)
    set_frozen(asr.parameters(), True)
    rd_cfg = EncoderConfig(kind="feedforward", num_layers=1, hidden_dim=4, input_dim=4)
    rd = RoleNetwork.build(rd_cfg, PredictorConfig(kind="cnn", context_n=2, embed_dim=3,
                                                   hidden_dim=4),
                           joint_dim=3, num_roles=3, num_pred_tokens=4,
                           predictor_dim=None, seed=22)
    feats = np.random.default_rng(23).normal(size=(5, 3))
    _, tapped = asr.encoder.forward(feats)
    logits = rd.forward(tapped, [1, 2])
    rd.backward(np.ones_like(logits))
    assert any(p.grad.any() for p in rd.parameters())
    assert not any(p.grad.any() for p in asr.parameters())
    assert all(p.frozen for p in asr.parameters())


# --- checkpoints ----------------------------------------------------------------


def test_checkpoint_json_round_trip_is_bit_exact():
    network = tiny_network(seed=24)
    ckpt = Checkpoint(tensors=state_dict(network), config={"kind": "asr"}, step=7, metric=1.25)
    text = checkpoint_to_json(ckpt)
    back = checkpoint_from_json(text)
    assert checkpoint_to_json(back) == text
    for name, t in ckpt.tensors.items():
        assert np.array_equal(back.tensors[name], t)


def test_checkpoint_file_round_trip(tmp_path):
    network = tiny_network(seed=25)
    ckpt = Checkpoint(tensors=state_dict(network), config={"a": 1}, step=3, metric=None)
    p1 = tmp_path / "model.ckpt.json"
    p2 = tmp_path / "model2.ckpt.json"
    save_checkpoint(p1, ckpt)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_load_state_dict_round_trip_and_hash():
    a = tiny_network(seed=26)
    b = tiny_network(seed=27)
    ck = Checkpoint(tensors=state_dict(a))
    load_state_dict(b, ck.tensors)
    assert checkpoint_hash(Checkpoint(tensors=state_dict(b))) == checkpoint_hash(ck)


def test_average_checkpoints_identity_and_mean():
    net = tiny_network(seed=28)
    ck = Checkpoint(tensors=state_dict(net))
    one = average_checkpoints([ck])
    for name in ck.tensors:
        assert np.array_equal(one.tensors[name], ck.tensors[name])
    neg = Checkpoint(tensors={k: -v for k, v in ck.tensors.items()})
    zero = average_checkpoints([ck, neg])
    for v in zero.tensors.values():
        assert np.allclose(v, 0.0, atol=1e-16)
    rng = np.random.default_rng(29)
    cks = [Checkpoint(tensors={k: rng.normal(size=v.shape) for k, v in ck.tensors.items()})
           for _ in range(3)]
    mean = average_checkpoints(cks)
    for name in ck.tensors:
        direct = (cks[0].tensors[name] + cks[1].tensors[name] + cks[2].tensors[name]) / 3.0
        assert np.max(np.abs(mean.tensors[name] - direct)) <= 1e-12


def test_average_checkpoints_shape_mismatch():
    a = Checkpoint(tensors={"w": np.zeros(3)})
    b = Checkpoint(tensors={"w": np.zeros(4)})
    with pytest.raises(ValueError):
        average_checkpoints([a, b])


def test_init_rd_predictor_from_copies_weights():
    src_net = tiny_network(seed=30, vocab_size=7)  # pretend role-augmented: 6 pred tokens
    ckpt = Checkpoint(
        tensors=state_dict(src_net),
        config={"predictor": {"kind": "cnn", "context_n": 2, "embed_dim": 3, "hidden_dim": 4}},
    )
    rd_pred = CnnPredictor(PredictorConfig(kind="cnn", context_n=2, embed_dim=3, hidden_dim=4),
                           num_tokens=4, rng=np.random.default_rng(31))
    init_rd_predictor_from(ckpt, rd_pred)
    src_embed = ckpt.tensors["predictor.embed"]
    assert np.array_equal(rd_pred.embed.value[:4], src_embed[:4])
    assert np.array_equal(rd_pred.embed.value[4], src_embed[-1])  # start row
    assert np.array_equal(rd_pred.out.W.value, ckpt.tensors["predictor.out.W"])


def test_init_rd_predictor_kind_mismatch():
    src_net = tiny_network(seed=32, pred_kind="rnn")
    ckpt = Checkpoint(
        tensors=state_dict(src_net),
        config={"predictor": {"kind": "rnn", "context_n": 2, "embed_dim": 3, "hidden_dim": 4}},
    )
    rd_pred = CnnPredictor(PredictorConfig(kind="cnn", context_n=2, embed_dim=3, hidden_dim=4),
                           num_tokens=4, rng=np.random.default_rng(33))
    with pytest.raises(ValueError):
        init_rd_predictor_from(ckpt, rd_pred)


def test_init_rd_predictor_trained_copy_diverges():
    # after copying, a nonzero gradient step must change the copy, not the source
    src_net = tiny_network(seed=34)
    ckpt = Checkpoint(
        tensors=state_dict(src_net),
        config={"predictor": {"kind": "cnn", "context_n": 2, "embed_dim": 3, "hidden_dim": 4}},
    )
    rd_pred = CnnPredictor(PredictorConfig(kind="cnn", context_n=2, embed_dim=3, hidden_dim=4),
                           num_tokens=4, rng=np.random.default_rng(35))
    init_rd_predictor_from(ckpt, rd_pred)
    before = rd_pred.out.W.value.copy()
    g = rd_pred.forward_sequence([0, 1])
    rd_pred.backward(np.ones_like(g))
    rd_pred.out.W.value -= 0.1 * rd_pred.out.W.grad
    assert not np.array_equal(rd_pred.out.W.value, before)
    assert np.array_equal(ckpt.tensors["predictor.out.W"], before)
