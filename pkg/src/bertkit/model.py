"""Bidirectional transformer encoder with tied-embedding MLM and NSP heads.

Post-layer-norm residual blocks, learned absolute position embeddings, GELU
feed-forward, additive pad masking in attention. All math runs on the
float64 autograd tensors from :mod:`bertkit.autograd`.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor

# Large negative attention bias; exp() underflows to exactly 0 for pad keys.
_PAD_BIAS = -1e9

INIT_STD = 0.02
INIT_TRUNCATION = 2.0  # in units of std


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 2
    intermediate_size: int = 256
    max_seq_length: int = 100
    type_vocab_size: int = 2
    dropout: float = 0.1
    layer_norm_epsilon: float = 1e-12

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.max_seq_length < 5:
            raise ValueError(f"max_seq_length must be >= 5, got {self.max_seq_length}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.vocab_size < 6:
            raise ValueError(f"vocab_size must cover the special tokens, got {self.vocab_size}")
        if self.num_layers < 1 or self.intermediate_size < 1:
            raise ValueError("num_layers and intermediate_size must be >= 1")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


class Parameters:
    """Named, ordered collection of learnable tensors for one ModelConfig."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def entry_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grads(self) -> None:
        ag.zero_grads(self.tensors.values())

    def copy(self) -> "Parameters":
        out = {}
        for name, t in self.tensors.items():
            nt = Tensor(t.data.copy(), requires_grad=True)
            out[name] = nt
        return Parameters(self.config, out)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}


@dataclass
class EncoderOutput:
    """hidden_states[0] is the layer-normed embedding sum; [i] is layer i's output."""

    hidden_states: list[Tensor]
    attention_maps: list[np.ndarray] | None = None  # per layer: [B, heads, S, S]

    @property
    def final(self) -> Tensor:
        return self.hidden_states[-1]


def _truncated_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Normal(0, INIT_STD) resampled until within +/- INIT_TRUNCATION stds."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > INIT_TRUNCATION
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > INIT_TRUNCATION
    return out * INIT_STD


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every tensor name and shape, derived solely from the config."""
    h, inter, v = config.hidden_size, config.intermediate_size, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (v, h),
        "embeddings.position": (config.max_seq_length, h),
        "embeddings.segment": (config.type_vocab_size, h),
        "embeddings.norm.gain": (h,),
        "embeddings.norm.bias": (h,),
    }
    for i in range(config.num_layers):
        p = f"layer{i}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.{proj}.weight"] = (h, h)
            shapes[p + f"attn.{proj}.bias"] = (h,)
        shapes[p + "attn.norm.gain"] = (h,)
        shapes[p + "attn.norm.bias"] = (h,)
        shapes[p + "ffn.inner.weight"] = (h, inter)
        shapes[p + "ffn.inner.bias"] = (inter,)
        shapes[p + "ffn.outer.weight"] = (inter, h)
        shapes[p + "ffn.outer.bias"] = (h,)
        shapes[p + "ffn.norm.gain"] = (h,)
        shapes[p + "ffn.norm.bias"] = (h,)
    shapes["mlm.transform.weight"] = (h, h)
    shapes["mlm.transform.bias"] = (h,)
    shapes["mlm.norm.gain"] = (h,)
    shapes["mlm.norm.bias"] = (h,)
    shapes["mlm.output_bias"] = (v,)  # output projection is the tied token table
    shapes["nsp.weight"] = (h, 2)
    shapes["nsp.bias"] = (2,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Closed-form learnable-entry count (always equals the allocated tally)."""
    h, inter, v = config.hidden_size, config.intermediate_size, config.vocab_size
    embeddings = v * h + config.max_seq_length * h + config.type_vocab_size * h + 2 * h
    per_layer = 4 * (h * h + h) + (h * inter + inter) + (inter * h + h) + 4 * h
    heads = (h * h + h) + 2 * h + v + (h * 2 + 2)
    return embeddings + config.num_layers * per_layer + heads


def init_params(config: ModelConfig, seed: int) -> Parameters:
    """Deterministic initial weights: truncated normal matrices, unit norm gains."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(("bias", ".norm.bias")):
            data = np.zeros(shape)
        else:
            data = _truncated_normal(rng, shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return Parameters(config, tensors)


def _check_inputs(config: ModelConfig, input_ids, segment_ids, pad_mask):
    input_ids = np.asarray(input_ids, dtype=np.int64)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    pad_mask = np.asarray(pad_mask, dtype=np.int64)
    if input_ids.ndim != 2:
        raise ValueError(f"input_ids must be [batch, seq], got shape {input_ids.shape}")
    if input_ids.shape != segment_ids.shape or input_ids.shape != pad_mask.shape:
        raise ValueError("input_ids, segment_ids, and pad_mask must share a shape")
    if input_ids.shape[1] > config.max_seq_length:
        raise ValueError(
            f"sequence length {input_ids.shape[1]} exceeds max_seq_length "
            f"{config.max_seq_length}"
        )
    if input_ids.max() >= config.vocab_size or input_ids.min() < 0:
        raise ValueError(
            f"token id out of range for vocab_size {config.vocab_size}: "
            f"ids span [{input_ids.min()}, {input_ids.max()}]"
        )
    return input_ids, segment_ids, pad_mask


def forward(params: Parameters, input_ids, segment_ids, pad_mask, mode: str = "eval",
            rng: np.random.Generator | None = None,
            collect_attention: bool = False) -> EncoderOutput:
    """Run the encoder over a [batch, seq] id batch.

    mode "train" applies dropout (needs rng when config.dropout > 0); "eval" is
    fully deterministic. pad_mask marks real positions with 1; attention weight
    on pad keys is exactly zero.
    """
    cfg = params.config
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    input_ids, segment_ids, pad_mask = _check_inputs(cfg, input_ids, segment_ids, pad_mask)
    drop_rate = cfg.dropout if mode == "train" else 0.0
    if drop_rate > 0 and rng is None:
        raise ValueError("train mode with dropout > 0 requires an rng")
    batch, seq = input_ids.shape
    heads, d_head = cfg.num_heads, cfg.head_size

    def maybe_dropout(t: Tensor) -> Tensor:
        return ag.dropout(t, drop_rate, rng) if drop_rate > 0 else t

    tok = ag.embedding_lookup(params["embeddings.token"], input_ids)
    pos = ag.embedding_lookup(params["embeddings.position"], np.arange(seq))
    seg = ag.embedding_lookup(params["embeddings.segment"], segment_ids)
    x = ag.layer_norm(ag.add(ag.add(tok, seg), pos),
                      params["embeddings.norm.gain"], params["embeddings.norm.bias"],
                      cfg.layer_norm_epsilon)
    x = maybe_dropout(x)

    # [B, 1, 1, S] additive bias: 0 on real keys, -1e9 on pad keys
    attn_bias = Tensor(((1 - pad_mask) * _PAD_BIAS)[:, None, None, :].astype(np.float64))

    hidden_states = [x]
    attention_maps: list[np.ndarray] | None = [] if collect_attention else None
    scale = 1.0 / np.sqrt(d_head)

    def split_heads(t: Tensor) -> Tensor:
        return ag.transpose(ag.reshape(t, (batch, seq, heads, d_head)), (0, 2, 1, 3))

    for i in range(cfg.num_layers):
        p = f"layer{i}."
        q = split_heads(ag.add(ag.matmul(x, params[p + "attn.q.weight"]), params[p + "attn.q.bias"]))
        k = split_heads(ag.add(ag.matmul(x, params[p + "attn.k.weight"]), params[p + "attn.k.bias"]))
        v = split_heads(ag.add(ag.matmul(x, params[p + "attn.v.weight"]), params[p + "attn.v.bias"]))

        scores = ag.add(ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), scale), attn_bias)
        weights = ag.softmax(scores, axis=-1)
        if attention_maps is not None:
            attention_maps.append(weights.data.copy())
        context = ag.reshape(ag.transpose(ag.matmul(weights, v), (0, 2, 1, 3)),
                             (batch, seq, cfg.hidden_size))
        attn_out = ag.add(ag.matmul(context, params[p + "attn.o.weight"]), params[p + "attn.o.bias"])
        x = ag.layer_norm(ag.add(x, maybe_dropout(attn_out)),
                          params[p + "attn.norm.gain"], params[p + "attn.norm.bias"],
                          cfg.layer_norm_epsilon)

        inner = ag.gelu(ag.add(ag.matmul(x, params[p + "ffn.inner.weight"]),
                               params[p + "ffn.inner.bias"]))
        ffn_out = ag.add(ag.matmul(inner, params[p + "ffn.outer.weight"]),
                         params[p + "ffn.outer.bias"])
        x = ag.layer_norm(ag.add(x, maybe_dropout(ffn_out)),
                          params[p + "ffn.norm.gain"], params[p + "ffn.norm.bias"],
                          cfg.layer_norm_epsilon)
        hidden_states.append(x)

    return EncoderOutput(hidden_states=hidden_states, attention_maps=attention_maps)


def mlm_logits(params: Parameters, output: EncoderOutput,
               batch_index, position_index) -> Tensor:
    """[n_masked, vocab] logits at the given positions of the final hidden layer.

    Head: dense transform + GELU + layer norm, projected through the transposed
    token embedding table (weight tying) plus a per-token output bias.
    """
    batch_index = np.asarray(batch_index, dtype=np.int64)
    if batch_index.size == 0:
        raise ValueError("mlm_logits called with no masked positions")
    h = ag.gather_rows(output.final, batch_index, position_index)
    t = ag.layer_norm(ag.gelu(ag.add(ag.matmul(h, params["mlm.transform.weight"]),
                                     params["mlm.transform.bias"])),
                      params["mlm.norm.gain"], params["mlm.norm.bias"],
                      params.config.layer_norm_epsilon)
    return ag.add(ag.matmul(t, ag.transpose(params["embeddings.token"])),
                  params["mlm.output_bias"])


def nsp_logits(params: Parameters, output: EncoderOutput) -> Tensor:
    """[batch, 2] next-sentence logits from the position-0 ([CLS]) hidden state."""
    batch = output.final.shape[0]
    cls = ag.gather_rows(output.final, np.arange(batch), np.zeros(batch, dtype=np.int64))
    return ag.add(ag.matmul(cls, params["nsp.weight"]), params["nsp.bias"])
