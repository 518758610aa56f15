"""Trainable toy networks: encoders, task-specific predictors, joiners.

All layers run on float64 numpy with hand-written backward passes that
accumulate into ``Parameter.grad``; forward caches live on the layer, so a
network instance processes one utterance at a time. Checkpoints are named
tensors serialized as canonical JSON with bit-exact round-trips.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lattice import JoinerParams
from .numerics import Parameter


@dataclass
class EncoderConfig:
    kind: str = "unidirectional-recurrent"  # or "feedforward"
    num_layers: int = 2
    hidden_dim: int = 32
    input_dim: int = 8
    tap_layer: int = 1
    subsample_factor: int = 1

    def __post_init__(self):
        if self.kind not in ("feedforward", "unidirectional-recurrent"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if not 1 <= self.tap_layer <= self.num_layers:
            raise ValueError("tap_layer must be within 1..num_layers")
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")


@dataclass
class PredictorConfig:
    kind: str = "cnn"  # or "rnn"
    context_n: int = 2  # cnn only: output depends on the last context_n tokens
    embed_dim: int = 16
    hidden_dim: int = 32

    def __post_init__(self):
        if self.kind not in ("cnn", "rnn"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.kind == "cnn" and self.context_n < 1:
            raise ValueError("cnn context must be >= 1")


def _init(rng, shape, scale):
    return rng.normal(size=shape) * scale


class Linear:
    def __init__(self, name, in_dim, out_dim, rng, scale=None):
        scale = (1.0 / np.sqrt(in_dim)) if scale is None else scale
        self.W = Parameter(f"{name}.W", _init(rng, (out_dim, in_dim), scale))
        self.b = Parameter(f"{name}.b", np.zeros(out_dim))
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.W.value.T + self.b.value

    def backward(self, dy):
        if not self.W.frozen:
            self.W.grad += dy.T @ self._x
            self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value

    def parameters(self):
        return [self.W, self.b]


class ResidualTanhBlock:
    """y = x + tanh(W x + b); zero-initialized blocks are the identity."""

    def __init__(self, name, dim, rng, scale=None):
        self.lin = Linear(name, dim, dim, rng, scale=scale)
        self._h = None

    def forward(self, x):
        self._h = np.tanh(self.lin.forward(x))
        return x + self._h

    def backward(self, dy):
        da = dy * (1.0 - self._h**2)
        return dy + self.lin.backward(da)

    def parameters(self):
        return self.lin.parameters()


class ResidualRecurrentBlock:
    """y_t = x_t + tanh(Wx x_t + Wh h_{t-1} + b), h started at zero."""

    def __init__(self, name, dim, rng, scale=None):
        scale = (1.0 / np.sqrt(dim)) if scale is None else scale
        self.Wx = Parameter(f"{name}.Wx", _init(rng, (dim, dim), scale))
        self.Wh = Parameter(f"{name}.Wh", _init(rng, (dim, dim), scale))
        self.b = Parameter(f"{name}.b", np.zeros(dim))
        self._x = None
        self._h = None

    def forward(self, x):
        T, dim = x.shape
        h = np.zeros((T, dim))
        prev = np.zeros(dim)
        for t in range(T):
            prev = np.tanh(x[t] @ self.Wx.value.T + prev @ self.Wh.value.T + self.b.value)
            h[t] = prev
        self._x = x
        self._h = h
        return x + h

    def backward(self, dy):
        x, h = self._x, self._h
        T, dim = x.shape
        dx = dy.copy()
        dh_next = np.zeros(dim)
        frozen = self.Wx.frozen
        for t in range(T - 1, -1, -1):
            dh = dy[t] + dh_next
            da = dh * (1.0 - h[t] ** 2)
            prev = h[t - 1] if t > 0 else np.zeros(dim)
            if not frozen:
                self.Wx.grad += np.outer(da, x[t])
                self.Wh.grad += np.outer(da, prev)
                self.b.grad += da
            dh_next = da @ self.Wh.value
            dx[t] += da @ self.Wx.value
        return dx

    def parameters(self):
        return [self.Wx, self.Wh, self.b]


class Encoder:
    """Input projection, optional mean-pool subsampling, residual blocks.

    ``forward`` returns the final activations and the activations after the
    tap layer (which feed the role encoder). The input features are treated
    as constants: ``backward`` stops after the input projection.
    """

    def __init__(self, config: EncoderConfig, rng, name="encoder"):
        self.config = config
        self.in_proj = Linear(f"{name}.in_proj", config.input_dim, config.hidden_dim, rng)
        block = ResidualTanhBlock if config.kind == "feedforward" else ResidualRecurrentBlock
        self.blocks = [
            block(f"{name}.block{i}", config.hidden_dim, rng)
            for i in range(config.num_layers)
        ]
        self._d_tap = None

    def subsample(self, features):
        k = self.config.subsample_factor
        if k == 1:
            return features
        T_in = features.shape[0]
        T = -(-T_in // k)
        out = np.zeros((T, features.shape[1]))
        for i in range(T):
            out[i] = features[i * k : min((i + 1) * k, T_in)].mean(axis=0)
        return out

    def forward(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ValueError(
                f"features must be [T, {self.config.input_dim}], got {features.shape}"
            )
        if features.shape[0] < 1:
            raise ValueError("encoder needs at least one input frame")
        x = self.in_proj.forward(self.subsample(features))
        tapped = None
        for i, blk in enumerate(self.blocks, start=1):
            x = blk.forward(x)
            if i == self.config.tap_layer:
                tapped = x
        return x, tapped

    def backward(self, d_out, d_tapped=None):
        g = d_out
        for i in range(len(self.blocks), 0, -1):
            if d_tapped is not None and i == self.config.tap_layer:
                g = g + d_tapped
            g = self.blocks[i - 1].backward(g)
        self.in_proj.backward(g)

    def parameters(self):
        out = self.in_proj.parameters()
        for blk in self.blocks:
            out.extend(blk.parameters())
        return out


class CnnPredictor:
    """Finite-context predictor: g_u sees only the last ``context_n`` tokens.

    Implemented as a kernel-n 1-D convolution over token embeddings with a
    dedicated start symbol padding the left edge; g_0 is the all-start
    window.
    """

    def __init__(self, config: PredictorConfig, num_tokens, rng, name="predictor"):
        self.config = config
        self.num_tokens = num_tokens
        n = config.context_n
        self.start_id = num_tokens  # one extra embedding row for the start pad
        self.embed = Parameter(
            f"{name}.embed", _init(rng, (num_tokens + 1, config.embed_dim), 0.5)
        )
        self.out = Linear(f"{name}.out", n * config.embed_dim, config.hidden_dim, rng)
        self._windows = None
        self._g = None

    def _window(self, tokens, u):
        n = self.config.context_n
        window = []
        for i in range(u - n + 1, u + 1):
            window.append(tokens[i - 1] if i >= 1 else self.start_id)
        return window

    def forward_sequence(self, tokens):
        tokens = [int(t) for t in tokens]
        U = len(tokens)
        windows = np.array([self._window(tokens, u) for u in range(U + 1)], dtype=np.int64)
        flat = self.embed.value[windows].reshape(U + 1, -1)
        g = np.tanh(self.out.forward(flat))
        self._windows = windows
        self._g = g
        return g

    def backward(self, dg):
        da = dg * (1.0 - self._g**2)
        dflat = self.out.backward(da)
        if not self.embed.frozen:
            dwin = dflat.reshape(self._windows.shape[0], self.config.context_n, -1)
            np.add.at(self.embed.grad, self._windows.reshape(-1), dwin.reshape(-1, dwin.shape[2]))

    # --- incremental interface for decoding --------------------------------
    def init_state(self):
        window = (self.start_id,) * (self.config.context_n - 1)
        return window, self._output_for(window + (self.start_id,))

    def advance(self, state, token):
        full = state + (int(token),)
        g = self._output_for(full)
        new_window = full[1:] if self.config.context_n > 1 else ()
        return new_window, g

    def _output_for(self, full_window):
        flat = self.embed.value[np.array(full_window, dtype=np.int64)].reshape(1, -1)
        return np.tanh(flat @ self.out.W.value.T + self.out.b.value)[0]

    def parameters(self):
        return [self.embed] + self.out.parameters()


class RnnPredictor:
    """Unbounded-context predictor: g_u = tanh(Wx e(y_u) + Wh g_{u-1} + b).

    g_0 is a learned start state.
    """

    def __init__(self, config: PredictorConfig, num_tokens, rng, name="predictor"):
        self.config = config
        self.num_tokens = num_tokens
        d, h = config.embed_dim, config.hidden_dim
        self.embed = Parameter(f"{name}.embed", _init(rng, (num_tokens, d), 0.5))
        self.Wx = Parameter(f"{name}.Wx", _init(rng, (h, d), 1.0 / np.sqrt(d)))
        self.Wh = Parameter(f"{name}.Wh", _init(rng, (h, h), 1.0 / np.sqrt(h)))
        self.b = Parameter(f"{name}.b", np.zeros(h))
        self.h0 = Parameter(f"{name}.h0", _init(rng, (h,), 0.1))
        self._tokens = None
        self._g = None

    def forward_sequence(self, tokens):
        tokens = [int(t) for t in tokens]
        U = len(tokens)
        g = np.zeros((U + 1, self.config.hidden_dim))
        g[0] = self.h0.value
        for u in range(1, U + 1):
            e = self.embed.value[tokens[u - 1]]
            g[u] = np.tanh(e @ self.Wx.value.T + g[u - 1] @ self.Wh.value.T + self.b.value)
        self._tokens = tokens
        self._g = g
        return g

    def backward(self, dg):
        tokens, g = self._tokens, self._g
        U = len(tokens)
        frozen = self.Wx.frozen
        dh = dg[U].copy()
        for u in range(U, 0, -1):
            da = dh * (1.0 - g[u] ** 2)
            e = self.embed.value[tokens[u - 1]]
            if not frozen:
                self.Wx.grad += np.outer(da, e)
                self.Wh.grad += np.outer(da, g[u - 1])
                self.b.grad += da
                self.embed.grad[tokens[u - 1]] += da @ self.Wx.value
            dh = dg[u - 1] + da @ self.Wh.value
        if not frozen:
            self.h0.grad += dh

    def init_state(self):
        return (self.h0.value.copy(),), self.h0.value.copy()

    def advance(self, state, token):
        (h,) = state
        e = self.embed.value[int(token)]
        g = np.tanh(e @ self.Wx.value.T + h @ self.Wh.value.T + self.b.value)
        return (g,), g

    def parameters(self):
        return [self.embed, self.Wx, self.Wh, self.b, self.h0]


def build_predictor(config: PredictorConfig, num_tokens, rng, name="predictor"):
    cls = CnnPredictor if config.kind == "cnn" else RnnPredictor
    return cls(config, num_tokens, rng, name=name)


class Joiner:
    """logits = A tanh(P f + Q g + b_h) + b_s over all (t, u) cells."""

    def __init__(self, joint_dim, encoder_dim, predictor_dim, vocab_size, rng, name="joiner"):
        self.P = Parameter(f"{name}.P", _init(rng, (joint_dim, encoder_dim), 1.0 / np.sqrt(encoder_dim)))
        self.Q = Parameter(f"{name}.Q", _init(rng, (joint_dim, predictor_dim), 1.0 / np.sqrt(predictor_dim)))
        self.A = Parameter(f"{name}.A", _init(rng, (vocab_size, joint_dim), 1.0 / np.sqrt(joint_dim)))
        self.b_h = Parameter(f"{name}.b_h", np.zeros(joint_dim))
        self.b_s = Parameter(f"{name}.b_s", np.zeros(vocab_size))
        self._F = None
        self._G = None
        self._th = None

    @property
    def vocab_size(self):
        return self.A.value.shape[0]

    def params_view(self) -> JoinerParams:
        return JoinerParams(
            P=self.P.value, Q=self.Q.value, A=self.A.value,
            b_h=self.b_h.value, b_s=self.b_s.value,
        )

    def forward_all(self, F, G):
        # [T, 1, J] + [1, U+1, J] -> [T, U+1, J]
        h = F @ self.P.value.T
        h = h[:, None, :] + (G @ self.Q.value.T)[None, :, :] + self.b_h.value
        th = np.tanh(h)
        logits = th @ self.A.value.T + self.b_s.value
        self._F, self._G, self._th = F, G, th
        return logits

    def backward(self, dlogits):
        F, G, th = self._F, self._G, self._th
        dth = dlogits @ self.A.value
        dh = dth * (1.0 - th**2)
        if not self.P.frozen:
            self.A.grad += np.einsum("tuv,tuj->vj", dlogits, th)
            self.b_s.grad += dlogits.sum(axis=(0, 1))
            self.b_h.grad += dh.sum(axis=(0, 1))
            self.P.grad += np.einsum("tuj,tf->jf", dh, F)
            self.Q.grad += np.einsum("tuj,ug->jg", dh, G)
        dF = np.einsum("tuj,jf->tf", dh, self.P.value)
        dG = np.einsum("tuj,jg->ug", dh, self.Q.value)
        return dF, dG

    def forward_cell(self, f, g):
        h = self.P.value @ f + self.Q.value @ g + self.b_h.value
        return self.A.value @ np.tanh(h) + self.b_s.value

    def parameters(self):
        return [self.P, self.Q, self.A, self.b_h, self.b_s]


class TransducerNetwork:
    """Recognition transducer: encoder + predictor + joiner over vocab+blank."""

    def __init__(self, encoder, predictor, joiner, vocab_size):
        self.encoder = encoder
        self.predictor = predictor
        self.joiner = joiner
        self.vocab_size = vocab_size
        self.blank = vocab_size - 1

    @classmethod
    def build(cls, encoder_config, predictor_config, joint_dim, vocab_size, num_pred_tokens, seed):
        rng = np.random.default_rng(seed)
        encoder = Encoder(encoder_config, rng, name="encoder")
        predictor = build_predictor(predictor_config, num_pred_tokens, rng, name="predictor")
        joiner = Joiner(joint_dim, encoder_config.hidden_dim, predictor_config.hidden_dim,
                        vocab_size, rng, name="joiner")
        return cls(encoder, predictor, joiner, vocab_size)

    def forward(self, features, tokens):
        F, tapped = self.encoder.forward(features)
        G = self.predictor.forward_sequence(tokens)
        return self.joiner.forward_all(F, G), tapped

    def backward(self, dlogits):
        dF, dG = self.joiner.backward(dlogits)
        self.encoder.backward(dF)
        self.predictor.backward(dG)

    def parameters(self):
        return self.encoder.parameters() + self.predictor.parameters() + self.joiner.parameters()


class RoleNetwork:
    """Role head: frame-preserving encoder over tapped activations + joiner.

    ``predictor`` may be None, in which case the role joiner reads the
    recognition predictor's outputs (the shared-predictor baseline).
    """

    def __init__(self, encoder, predictor, joiner, num_roles):
        self.encoder = encoder
        self.predictor = predictor
        self.joiner = joiner
        self.num_roles = num_roles

    @classmethod
    def build(cls, encoder_config, predictor_config, joint_dim, num_roles,
              num_pred_tokens, predictor_dim, seed):
        if encoder_config.subsample_factor != 1:
            raise ValueError("role encoder must preserve the frame rate")
        rng = np.random.default_rng(seed)
        encoder = Encoder(encoder_config, rng, name="rd_encoder")
        predictor = None
        if predictor_config is not None:
            predictor = build_predictor(predictor_config, num_pred_tokens, rng, name="rd_predictor")
            predictor_dim = predictor_config.hidden_dim
        joiner = Joiner(joint_dim, encoder_config.hidden_dim, predictor_dim,
                        num_roles, rng, name="rd_joiner")
        return cls(encoder, predictor, joiner, num_roles)

    def forward(self, tapped, tokens, shared_G=None):
        F, _ = self.encoder.forward(tapped)
        if self.predictor is not None:
            G = self.predictor.forward_sequence(tokens)
        else:
            if shared_G is None:
                raise ValueError("shared-predictor role network needs predictor outputs")
            G = shared_G
        return self.joiner.forward_all(F, G)

    def backward(self, dlogits):
        dF, dG = self.joiner.backward(dlogits)
        self.encoder.backward(dF)
        if self.predictor is not None:
            self.predictor.backward(dG)

    def parameters(self):
        out = self.encoder.parameters() + self.joiner.parameters()
        if self.predictor is not None:
            out = self.predictor.parameters() + out
        return out


def set_frozen(params, frozen: bool):
    for p in params:
        p.frozen = frozen


def zero_grads(params):
    for p in params:
        p.zero_grad()


# --- checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    tensors: dict
    config: dict = field(default_factory=dict)
    step: int = 0
    metric: Optional[float] = None

    def __post_init__(self):
        self.tensors = {str(k): np.asarray(v, dtype=np.float64) for k, v in self.tensors.items()}


def state_dict(network) -> dict:
    return {p.name: p.value.copy() for p in network.parameters()}


def load_state_dict(network, tensors: dict):
    params = {p.name: p for p in network.parameters()}
    missing = set(params) - set(tensors)
    if missing:
        raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
    for name, p in params.items():
        t = np.asarray(tensors[name], dtype=np.float64)
        if t.shape != p.value.shape:
            raise ValueError(f"shape mismatch for {name}: {t.shape} vs {p.value.shape}")
        p.value[...] = t


def checkpoint_to_json(ckpt: Checkpoint) -> str:
    doc = {
        "tensors": {
            name: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
            for name, v in sorted(ckpt.tensors.items())
        },
        "config": ckpt.config,
        "step": ckpt.step,
        "metric": ckpt.metric,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def checkpoint_from_json(text: str) -> Checkpoint:
    doc = json.loads(text)
    tensors = {
        name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["tensors"].items()
    }
    return Checkpoint(tensors=tensors, config=doc.get("config", {}),
                      step=int(doc.get("step", 0)), metric=doc.get("metric"))


def save_checkpoint(path, ckpt: Checkpoint):
    from .fileio import atomic_write_text

    atomic_write_text(path, checkpoint_to_json(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        return checkpoint_from_json(fh.read())


def checkpoint_hash(ckpt: Checkpoint) -> str:
    return hashlib.sha256(checkpoint_to_json(ckpt).encode("utf-8")).hexdigest()


def average_checkpoints(checkpoints) -> Checkpoint:
    """Elementwise mean of named tensors across checkpoints."""
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ValueError("no checkpoints to average")
    names = set(checkpoints[0].tensors)
    for c in checkpoints[1:]:
        if set(c.tensors) != names:
            raise ValueError("checkpoints carry different tensor names")
    out = {}
    for name in names:
        shapes = {c.tensors[name].shape for c in checkpoints}
        if len(shapes) != 1:
            raise ValueError(f"shape mismatch for tensor {name!r}")
        out[name] = np.mean([c.tensors[name] for c in checkpoints], axis=0)
    return Checkpoint(tensors=out, config=dict(checkpoints[0].config),
                      step=checkpoints[0].step, metric=None)


def init_rd_predictor_from(checkpoint: Checkpoint, rd_predictor):
    """Copy predictor weights from a trained checkpoint into an RD predictor.

    Kinds must match (cnn with the same context, or rnn with equal dims).
    The source may have a larger embedding table (role-augmented vocabulary);
    the leading rows, which are the shared subword ids, are copied.
    """
    src_cfg = checkpoint.config.get("predictor", {})
    kind = src_cfg.get("kind")
    if kind != rd_predictor.config.kind:
        raise ValueError(
            f"incompatible predictor kinds: checkpoint has {kind!r}, "
            f"target is {rd_predictor.config.kind!r}"
        )
    if kind == "cnn" and int(src_cfg.get("context_n", -1)) != rd_predictor.config.context_n:
        raise ValueError("cnn context lengths differ")
    src = {
        name.split(".", 1)[1]: value
        for name, value in checkpoint.tensors.items()
        if name.startswith("predictor.")
    }
    if not src:
        raise ValueError("checkpoint has no predictor tensors")
    for p in rd_predictor.parameters():
        local = p.name.split(".", 1)[1]
        if local not in src:
            raise ValueError(f"checkpoint is missing predictor tensor {local!r}")
        t = src[local]
        if local == "embed":
            if t.shape[0] < p.value.shape[0] or t.shape[1] != p.value.shape[1]:
                raise ValueError("embedding tables are incompatible")
            rows = p.value.shape[0]
            if rd_predictor.config.kind == "cnn":
                # keep the start row (last) aligned with the source's start row
                p.value[: rows - 1] = t[: rows - 1]
                p.value[rows - 1] = t[t.shape[0] - 1]
            else:
                p.value[...] = t[:rows]
        else:
            if t.shape != p.value.shape:
                raise ValueError(f"shape mismatch for predictor tensor {local!r}")
            p.value[...] = t
