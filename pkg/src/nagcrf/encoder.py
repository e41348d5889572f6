"""Vocabulary, model input construction and the transformer encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .tensor import Tensor

PAD, CLS, SEP, EOS, UNK = 0, 1, 2, 3, 4
RESERVED_TOKENS = ("[pad]", "[cls]", "[sep]", "[eos]", "[unk]")
RESERVED_IDS = frozenset(range(len(RESERVED_TOKENS)))

MASK_VALUE = -1e9


class VocabularyError(ValueError):
    pass


class InputLengthError(ValueError):
    pass


class Vocabulary:
    """Token/id bijection. Ids 0-4 always hold the reserved tokens."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:5]) != RESERVED_TOKENS:
            raise VocabularyError(f"first five tokens must be {RESERVED_TOKENS}, got {tokens[:5]}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise VocabularyError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        self.tokens = tokens
        self.index = index

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __contains__(self, token):
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.splitlines())


@dataclass
class EncoderConfig:
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ffn: int = 256
    max_len: int = 64
    pad_to_max: bool = True
    plain_eq_mode: bool = False  # literal equations: no residuals, no layer norm

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")


def build_input(source_ids, config: EncoderConfig, task_kind: str = "general") -> list[int]:
    """``[cls] source [sep]``, padded to ``max_len`` for general tasks.

    Length-reducing tasks (summarization, compression) skip the padding since
    the source already has enough positions for the output.
    """
    if task_kind not in ("general", "length-reducing"):
        raise ValueError(f"unknown task kind {task_kind!r}")
    ids = [CLS, *source_ids, SEP]
    if len(ids) > config.max_len:
        raise InputLengthError(f"source of length {len(source_ids)} exceeds max_len={config.max_len} - 2")
    if task_kind == "general" and config.pad_to_max:
        ids += [PAD] * (config.max_len - len(ids))
    return ids


def _uniform(rng, shape, a=0.1):
    return tn.parameter(rng.uniform(-a, a, size=shape))


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class LayerParams:
    attn: AttentionParams
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class EncoderModel:
    config: EncoderConfig
    vocab_size: int
    token_embedding: Tensor
    position_embedding: Tensor
    layers: list[LayerParams] = field(default_factory=list)
    final_ln_g: Tensor | None = None
    final_ln_b: Tensor | None = None

    @classmethod
    def init(cls, config: EncoderConfig, vocab_size: int, rng: np.random.Generator) -> "EncoderModel":
        d, f = config.d_model, config.d_ffn
        zeros = lambda *s: tn.parameter(np.zeros(s))
        ones = lambda *s: tn.parameter(np.ones(s))
        layers = []
        for _ in range(config.n_layers):
            attn = AttentionParams(
                _uniform(rng, (d, d)), zeros(d), _uniform(rng, (d, d)), zeros(d),
                _uniform(rng, (d, d)), zeros(d), _uniform(rng, (d, d)), zeros(d),
            )
            layers.append(LayerParams(
                attn, _uniform(rng, (d, f)), zeros(f), _uniform(rng, (f, d)), zeros(d),
                ones(d), zeros(d), ones(d), zeros(d),
            ))
        return cls(
            config, vocab_size,
            _uniform(rng, (vocab_size, d)), _uniform(rng, (config.max_len, d)),
            layers, ones(d), zeros(d),
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("encoder.token_embedding", self.token_embedding),
               ("encoder.position_embedding", self.position_embedding)]
        for i, layer in enumerate(self.layers):
            p = f"encoder.layer{i}."
            for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
                out.append((p + "attn." + name, getattr(layer.attn, name)))
            for name in ("w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                if name.startswith("ln") and self.config.plain_eq_mode:
                    continue
                out.append((p + name, getattr(layer, name)))
        if not self.config.plain_eq_mode:
            out += [("encoder.final_ln_g", self.final_ln_g), ("encoder.final_ln_b", self.final_ln_b)]
        return out


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, key_mask, params: AttentionParams,
                         n_heads: int) -> Tensor:
    """Scaled dot-product attention over ``(B, T, d)`` inputs.

    ``key_mask`` is a boolean ``(B, T)`` array, True where the key is padding;
    those keys get exactly zero attention weight.
    """
    B, T, d = q.shape
    dh = d // n_heads

    def heads(x, w, b):
        y = tn.add(tn.matmul(x, w), b)
        return tn.transpose(tn.reshape(y, (B, -1, n_heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = heads(q, params.wq, params.bq), heads(k, params.wk, params.bk), heads(v, params.wv, params.bv)
    scores = tn.scale(tn.matmul(qh, tn.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if key_mask is not None:
        scores = tn.masked_fill(scores, np.asarray(key_mask)[:, None, None, :], MASK_VALUE)
    weights = tn.softmax(scores, axis=-1)
    ctx = tn.reshape(tn.transpose(tn.matmul(weights, vh), (0, 2, 1, 3)), (B, T, d))
    return tn.add(tn.matmul(ctx, params.wo), params.bo)


def _ffn(x: Tensor, layer: LayerParams) -> Tensor:
    h = tn.relu(tn.add(tn.matmul(x, layer.w1), layer.b1))
    return tn.add(tn.matmul(h, layer.w2), layer.b2)


def encode_batch(model: EncoderModel, ids: np.ndarray, key_mask: np.ndarray | None = None) -> Tensor:
    """Hidden states ``(B, T, d_model)`` for a batch of padded id rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ValueError(f"ids must be (batch, length), got shape {ids.shape}")
    B, T = ids.shape
    if ids.size and (ids.min() < 0 or ids.max() >= model.vocab_size):
        raise VocabularyError(f"token id out of range for vocabulary of size {model.vocab_size}")
    if T > model.config.max_len:
        raise InputLengthError(f"input length {T} exceeds max_len={model.config.max_len}")
    if key_mask is None:
        key_mask = ids == PAD
    cfg = model.config
    x = tn.add(tn.gather_rows(model.token_embedding, ids), model.position_embedding[:T])
    for layer in model.layers:
        if cfg.plain_eq_mode:
            x = _ffn(multi_head_attention(x, x, x, key_mask, layer.attn, cfg.n_heads), layer)
            continue
        h = tn.layer_norm(x, layer.ln1_g, layer.ln1_b)
        x = tn.add(x, multi_head_attention(h, h, h, key_mask, layer.attn, cfg.n_heads))
        h = tn.layer_norm(x, layer.ln2_g, layer.ln2_b)
        x = tn.add(x, _ffn(h, layer))
    if not cfg.plain_eq_mode:
        x = tn.layer_norm(x, model.final_ln_g, model.final_ln_b)
    return x


def encode(model: EncoderModel, ids) -> Tensor:
    """Hidden states ``H`` of shape ``(T, d_model)`` for one id sequence."""
    h = encode_batch(model, np.asarray(ids, dtype=np.int64)[None, :])
    return tn.reshape(h, h.shape[1:])
