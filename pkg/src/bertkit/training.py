"""Pretraining / fine-tuning loop: combined MLM+NSP loss, Adam with decoupled
weight decay, linear warmup-decay schedule, deterministic batching, and a
versioned binary checkpoint format with an integrity hash and parent chaining.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .model import ModelConfig, Parameters, forward, init_params, mlm_logits, nsp_logits
from .pretrain_data import Dataset, PretrainExample

CKPT_MAGIC = b"BKCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    learning_rate: float = 1e-3
    warmup_fraction: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    max_seq_length: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")


@dataclass(frozen=True)
class LossRecord:
    step: int
    mlm_loss: float
    nsp_loss: float
    total_loss: float


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    content_hash: str | None = None  # sha256 of the serialized body, set on save/load

    def to_params(self) -> Parameters:
        return Parameters(self.config, {
            name: ag.Tensor(arr.copy(), requires_grad=True)
            for name, arr in self.tensors.items()
        })


@dataclass
class Batch:
    input_ids: np.ndarray        # [B, S]
    segment_ids: np.ndarray      # [B, S]
    pad_mask: np.ndarray         # [B, S]
    masked_batch_index: np.ndarray
    masked_positions: np.ndarray
    masked_labels: np.ndarray
    nsp_labels: np.ndarray       # [B]


def collate(examples: Sequence[PretrainExample]) -> Batch:
    if not examples:
        raise ValueError("cannot collate an empty batch")
    batch_idx, positions, labels = [], [], []
    for i, ex in enumerate(examples):
        batch_idx.extend([i] * len(ex.masked_positions))
        positions.extend(ex.masked_positions)
        labels.extend(ex.masked_label_ids)
    return Batch(
        input_ids=np.stack([ex.input_ids for ex in examples]),
        segment_ids=np.stack([ex.segment_ids for ex in examples]),
        pad_mask=np.stack([ex.pad_mask for ex in examples]),
        masked_batch_index=np.asarray(batch_idx, dtype=np.int64),
        masked_positions=np.asarray(positions, dtype=np.int64),
        masked_labels=np.asarray(labels, dtype=np.int64),
        nsp_labels=np.asarray([ex.nsp_label for ex in examples], dtype=np.int64),
    )


def loss(params: Parameters, batch: Batch, mode: str = "train",
         rng: np.random.Generator | None = None) -> tuple[ag.Tensor, ag.Tensor, ag.Tensor]:
    """(total, mlm, nsp): mean masked-token CE plus mean next-sentence CE."""
    if batch.masked_positions.size == 0:
        raise ValueError("batch has zero masked positions")
    out = forward(params, batch.input_ids, batch.segment_ids, batch.pad_mask,
                  mode=mode, rng=rng)
    mlm = ag.cross_entropy(
        mlm_logits(params, out, batch.masked_batch_index, batch.masked_positions),
        batch.masked_labels)
    nsp = ag.cross_entropy(nsp_logits(params, out), batch.nsp_labels)
    return ag.add(mlm, nsp), mlm, nsp


def lr_schedule(step_index: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup for warmup_fraction of steps, then linear decay toward 0.

    step_index is 0-based. warmup_fraction == 0 disables the schedule entirely
    (constant learning rate), which keeps shorter training budgets exact
    prefixes of longer ones.
    """
    if cfg.warmup_fraction == 0.0:
        return cfg.learning_rate
    warmup = max(1, round(cfg.warmup_fraction * total_steps))
    if step_index < warmup:
        return cfg.learning_rate * (step_index + 1) / warmup
    remaining = max(1, total_steps - warmup)
    return cfg.learning_rate * (total_steps - step_index) / remaining


def _decayed(name: str, tensor: ag.Tensor) -> bool:
    # weight matrices and embedding tables decay; biases and norm gains do not
    return tensor.data.ndim >= 2


def init_moments(params: Parameters) -> dict[str, np.ndarray]:
    moments = {}
    for name, t in params.items():
        moments["m." + name] = np.zeros_like(t.data)
        moments["v." + name] = np.zeros_like(t.data)
    return moments


def adam_step(params: Parameters, moments: dict[str, np.ndarray], step_index: int,
              cfg: TrainConfig, lr: float | None = None) -> None:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    step_index is 1-based; lr defaults to cfg.learning_rate (the training loop
    passes the scheduled rate). Raises on non-finite gradients, naming the step.
    """
    if step_index < 1:
        raise ValueError(f"step_index must be >= 1, got {step_index}")
    if lr is None:
        lr = cfg.learning_rate
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    bias1 = 1.0 - b1 ** step_index
    bias2 = 1.0 - b2 ** step_index
    for name, t in params.items():
        g = t.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient for {name!r} at step {step_index}")
        m = moments["m." + name]
        v = moments["v." + name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        update = (m / bias1) / (np.sqrt(v / bias2) + eps)
        if cfg.weight_decay > 0 and _decayed(name, t):
            update = update + cfg.weight_decay * t.data
        t.data -= lr * update


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch, 0])))
    return rng.permutation(n)


def _train_loop(params: Parameters, dataset: Dataset, cfg: TrainConfig,
                out_dir: Path | None, checkpoint_interval: int | None,
                metadata: dict) -> tuple[Checkpoint, list[LossRecord]]:
    examples = dataset.examples
    steps_per_epoch = len(examples) // cfg.batch_size
    if cfg.epochs > 0 and steps_per_epoch == 0:
        raise ValueError(
            f"dataset of {len(examples)} examples is smaller than one batch "
            f"of {cfg.batch_size}")
    total_steps = steps_per_epoch * cfg.epochs

    moments = init_moments(params)
    records: list[LossRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = _epoch_order(len(examples), cfg.seed, epoch)
        dropout_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([cfg.seed, epoch, 1])))
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = collate([examples[i] for i in idx])
            params.zero_grads()
            total, mlm, nsp = loss(params, batch, mode="train", rng=dropout_rng)
            if not np.isfinite(total.item()):
                raise RuntimeError(f"non-finite loss at step {step + 1}")
            ag.backward(total)
            adam_step(params, moments, step + 1, cfg,
                      lr=lr_schedule(step, total_steps, cfg))
            step += 1
            records.append(LossRecord(step, mlm.item(), nsp.item(), total.item()))
            if (out_dir is not None and checkpoint_interval
                    and step % checkpoint_interval == 0 and step < total_steps):
                ckpt = _snapshot(params, moments, cfg, metadata, records)
                save_checkpoint(ckpt, Path(out_dir) / f"step{step:08d}.ckpt")

    ckpt = _snapshot(params, moments, cfg, metadata, records)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / "model.ckpt")
        write_loss_log(records, out_dir / "loss_log.csv")
    return ckpt, records


def _snapshot(params: Parameters, moments: dict[str, np.ndarray], cfg: TrainConfig,
              metadata: dict, records: list[LossRecord]) -> Checkpoint:
    meta = dict(metadata)
    meta.update({
        "steps_completed": len(records),
        "final_loss": records[-1].total_loss if records else None,
        "seed": cfg.seed,
        "train_config": dataclasses.asdict(cfg),
    })
    return Checkpoint(
        config=params.config,
        tensors=params.as_arrays(),
        moments={k: v.copy() for k, v in moments.items()},
        metadata=meta,
    )


def _check_dataset_match(config: ModelConfig, dataset: Dataset) -> None:
    if config.vocab_size != dataset.vocab_size:
        raise ValueError(
            f"model vocab_size {config.vocab_size} does not match dataset "
            f"vocab_size {dataset.vocab_size}")
    if config.max_seq_length != dataset.max_seq_length:
        raise ValueError(
            f"model max_seq_length {config.max_seq_length} does not match dataset "
            f"max_seq_length {dataset.max_seq_length}")


def pretrain(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
             out_dir: str | Path | None = None,
             checkpoint_interval: int | None = None) -> tuple[Checkpoint, list[LossRecord]]:
    """Train from random init; returns the final checkpoint and per-step losses."""
    _check_dataset_match(model_cfg, dataset)
    params = init_params(model_cfg, train_cfg.seed)
    metadata = {"phase": "pretrain", "parent_hash": None,
                "dataset_vocab_sha256": dataset.vocab_hash}
    return _train_loop(params, dataset,
                       train_cfg, Path(out_dir) if out_dir else None,
                       checkpoint_interval, metadata)


def finetune(base: Checkpoint, dataset: Dataset, train_cfg: TrainConfig,
             out_dir: str | Path | None = None,
             checkpoint_interval: int | None = None) -> tuple[Checkpoint, list[LossRecord]]:
    """Continue training every parameter of a base checkpoint on a domain dataset.

    Optimizer moments start fresh; the result records the base checkpoint's
    content hash as its parent. epochs == 0 is the identity (useful for
    round-trip checks).
    """
    _check_dataset_match(base.config, dataset)
    params = base.to_params()
    metadata = {"phase": "finetune", "parent_hash": base.content_hash,
                "dataset_vocab_sha256": dataset.vocab_hash}
    return _train_loop(params, dataset,
                       train_cfg, Path(out_dir) if out_dir else None,
                       checkpoint_interval, metadata)


def write_loss_log(records: Sequence[LossRecord], path: str | Path) -> None:
    lines = ["step,mlm_loss,nsp_loss,total_loss"]
    lines += [f"{r.step},{r.mlm_loss!r},{r.nsp_loss!r},{r.total_loss!r}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _pack_tensor_block(name: str, arr: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    out = struct.pack("<H", len(name_b)) + name_b
    out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return out


def _read_tensor_block(raw: bytes, off: int) -> tuple[str, np.ndarray, int]:
    (name_len,) = struct.unpack_from("<H", raw, off)
    off += 2
    name = raw[off:off + name_len].decode("utf-8")
    off += name_len
    (ndim,) = struct.unpack_from("<B", raw, off)
    off += 1
    shape = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(raw, "<f8", count, off).reshape(shape).astype(np.float64)
    off += 8 * count
    return name, arr, off


def save_checkpoint(ckpt: Checkpoint, path: str | Path,
                    include_moments: bool = True) -> str:
    """Serialize (magic, version, config, tensors, moments, metadata) + sha256.

    Returns the content hash, also stored on the checkpoint for parent chaining.
    """
    body = bytearray()
    body += CKPT_MAGIC
    body += struct.pack("<I", CKPT_VERSION)
    cfg_b = ckpt.config.to_json().encode("utf-8")
    body += struct.pack("<I", len(cfg_b)) + cfg_b
    body += struct.pack("<I", len(ckpt.tensors))
    for name in ckpt.tensors:
        body += _pack_tensor_block(name, ckpt.tensors[name])
    moments = ckpt.moments if include_moments else {}
    body += struct.pack("<I", len(moments))
    for name in moments:
        body += _pack_tensor_block(name, moments[name])
    meta_b = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(meta_b)) + meta_b
    digest = hashlib.sha256(bytes(body)).hexdigest()
    Path(path).write_bytes(bytes(body) + bytes.fromhex(digest))
    ckpt.content_hash = digest
    return digest


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 40 or raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    body, stored = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != stored:
        raise ValueError(f"{path}: checkpoint corrupt (integrity hash mismatch)")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", body, off)
    off += 4
    config = ModelConfig.from_json(body[off:off + cfg_len].decode("utf-8"))
    off += cfg_len
    (n_tensors,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name, arr, off = _read_tensor_block(body, off)
        tensors[name] = arr
    (n_moments,) = struct.unpack_from("<I", body, off)
    off += 4
    moments: dict[str, np.ndarray] = {}
    for _ in range(n_moments):
        name, arr, off = _read_tensor_block(body, off)
        moments[name] = arr
    (meta_len,) = struct.unpack_from("<I", body, off)
    off += 4
    metadata = json.loads(body[off:off + meta_len].decode("utf-8"))
    return Checkpoint(config=config, tensors=tensors, moments=moments,
                      metadata=metadata, content_hash=stored.hex())
