"""Teacher-forced training: smoothed KL loss, Adam, warmup schedule, checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .codec import PAD
from .errors import (
    InvalidInputError,
    NotACheckpointError,
    TrainingAborted,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from .net import ModelConfig, backward, forward, log_softmax, softmax

log = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
CHECKPOINT_MAGIC = b"DSV2"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    warmup_steps: int = 100
    total_steps: int = 1000
    batch_size: int = 16
    label_smoothing: float = 0.1
    grad_clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError("lr must be positive")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise InvalidInputError("label_smoothing must be in [0, 1)")
        if self.batch_size < 1 or self.warmup_steps < 0 or self.total_steps < 0:
            raise InvalidInputError("batch_size >= 1, warmup_steps >= 0, total_steps >= 0 required")

    def to_dict(self) -> dict:
        return asdict(self)


def smoothed_target(token: int, V: int, eps: float) -> np.ndarray:
    if not 0 <= token < V:
        raise InvalidInputError(f"token {token} outside [0, {V})")
    q = np.full(V, eps / (V - 1) if V > 1 else 0.0)
    q[token] = 1.0 - eps
    return q


def loss_kl(logits, targets, pad_mask=None, eps: float = 0.0):
    """Mean KL(smoothed target || softmax(logits)) over non-pad positions.

    ``pad_mask`` is True where the target is padding (defaults to ``targets == PAD``).
    Returns ``(loss, d_logits)`` where ``d_logits`` is the gradient of the mean loss.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise InvalidInputError(f"logits {logits.shape} do not match targets {targets.shape}")
    V = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise InvalidInputError("target outside vocabulary")
    keep = ~(targets == PAD) if pad_mask is None else ~np.asarray(pad_mask, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        raise InvalidInputError("empty batch: every target position is padding")
    off = eps / (V - 1) if V > 1 else 0.0
    logp = log_softmax(logits)
    lp_true = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    cross = (1.0 - eps) * lp_true + off * (logp.sum(-1) - lp_true)
    neg_entropy = 0.0
    if eps < 1.0:
        neg_entropy += (1.0 - eps) * math.log(1.0 - eps)
    if off > 0:
        neg_entropy += eps * math.log(off)
    per_pos = neg_entropy - cross.astype(np.float64)
    loss = float(per_pos[keep].sum() / n)

    q = np.full(logits.shape, off, dtype=logits.dtype)
    np.put_along_axis(q, targets[..., None], 1.0 - eps, axis=-1)
    d = (softmax(logits) - q) / n
    d[~keep] = 0.0
    return loss, d


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr`` over ``warmup_steps``, then constant."""
    if step < 1:
        raise InvalidInputError("step counts from 1")
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    return cfg.lr


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


def adam_update(params: dict, grads: dict, state: OptimizerState, lr: float, clip: Optional[float] = 1.0) -> float:
    """Clip then apply one bias-corrected Adam step, in place. Returns the pre-clip gradient norm.

    Non-finite gradients abort the step before anything is modified.
    """
    if set(grads) != set(params):
        raise InvalidInputError("gradient names do not match parameters")
    bad = sorted(k for k, g in grads.items() if not np.all(np.isfinite(g)))
    if bad:
        raise TrainingAborted(f"non-finite gradients in {len(bad)} tensors", {"tensors": bad, "step": state.step + 1})
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise InvalidInputError(f"gradient shape mismatch for {k}")
    norm = clip_gradients(grads, clip)
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype, copy=False)
    return norm


def pad_batch(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    T = max(len(s) for s in seqs)
    out = np.full((len(seqs), T), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def fits_context(seq: Sequence[int], cfg: ModelConfig) -> bool:
    # inputs drop the final token
    return len(seq) - 1 <= cfg.context_length


def filter_sequences(seqs: Iterable[Sequence[int]], cfg: ModelConfig) -> tuple[list, int]:
    kept, skipped = [], 0
    for s in seqs:
        if fits_context(s, cfg):
            kept.append(list(s))
        else:
            skipped += 1
    if skipped:
        log.warning("skipped %d sequences longer than the context (%d)", skipped, cfg.context_length)
    return kept, skipped


def train_step(params: dict, opt: OptimizerState, model_cfg: ModelConfig, cfg: TrainConfig,
               batch: Sequence[Sequence[int]], dropout_rng=None) -> float:
    """One teacher-forced update on a batch of token sequences; returns the batch loss."""
    tokens = pad_batch(batch)
    inputs, targets = tokens[:, :-1], tokens[:, 1:]
    if inputs.shape[1] > model_cfg.context_length:
        raise InvalidInputError("batch holds a sequence longer than the context; filter it first")
    logits, tape = forward(params, model_cfg, inputs, dropout_rng=dropout_rng)
    loss, d_logits = loss_kl(logits, targets, eps=cfg.label_smoothing)
    grads = backward(params, tape, d_logits)
    adam_update(params, grads, opt, lr_schedule(opt.step + 1, cfg), cfg.grad_clip_norm)
    return loss


def batch_indices(n: int, step: int, cfg: TrainConfig) -> np.ndarray:
    """Indices for ``step``; a pure function of (seed, step) so resumed runs see the same data."""
    if n <= cfg.batch_size:
        return np.arange(n)
    rng = np.random.default_rng([cfg.seed, step])
    return np.sort(rng.choice(n, cfg.batch_size, replace=False))


def train(params: dict, opt: OptimizerState, model_cfg: ModelConfig, cfg: TrainConfig,
          sequences: Sequence[Sequence[int]], until_step: Optional[int] = None,
          on_step: Optional[Callable[[dict], None]] = None, stop_loss: Optional[float] = None) -> list[float]:
    """Run updates from ``opt.step`` to ``until_step`` (default ``cfg.total_steps``).

    ``on_step`` receives one metrics record per step. Training halts early once the step loss
    drops below ``stop_loss`` when given. Returns the per-step losses.
    """
    seqs, _ = filter_sequences(sequences, model_cfg)
    if not seqs:
        raise InvalidInputError("no trainable sequences")
    until = cfg.total_steps if until_step is None else until_step
    losses = []
    while opt.step < until:
        step = opt.step + 1
        idx = batch_indices(len(seqs), step, cfg)
        batch = [seqs[i] for i in idx]
        drng = np.random.default_rng([cfg.seed, step, 1]) if model_cfg.dropout > 0 else None
        t0 = time.perf_counter()
        lr = lr_schedule(step, cfg)
        loss = train_step(params, opt, model_cfg, cfg, batch, dropout_rng=drng)
        dt = time.perf_counter() - t0
        losses.append(loss)
        if on_step is not None:
            n_tok = sum(len(s) - 1 for s in batch)
            on_step({"step": step, "loss": loss, "lr": lr, "tokens_per_sec": n_tok / dt if dt > 0 else 0.0})
        if stop_loss is not None and loss < stop_loss:
            break
    return losses


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    vocab: dict
    params: dict
    opt: OptimizerState
    step: int = 0
    extra: dict = field(default_factory=dict)


def _tensor_records(ck: Checkpoint):
    for name, arr in ck.params.items():
        yield "param/" + name, arr
    for name, arr in ck.opt.m.items():
        yield "adam.m/" + name, arr
    for name, arr in ck.opt.v.items():
        yield "adam.v/" + name, arr


def save_checkpoint(path, ck: Checkpoint) -> None:
    """Binary layout: magic, u32 version, u64-prefixed JSON header, then named float32 tensors."""
    tensors = list(_tensor_records(ck))
    header = {
        "model_config": ck.model_config.to_dict(),
        "train_config": ck.train_config.to_dict(),
        "vocab": ck.vocab,
        "step": ck.step,
        "opt_step": ck.opt.step,
        "n_tensors": len(tensors),
        "extra": ck.extra,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, arr in tensors:
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise NotACheckpointError(f"{path}: not a checkpoint (bad magic)")
    r = _Reader(data)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    (n,) = r.unpack("<Q")
    header = json.loads(r.take(n).decode("utf-8"))
    params, m, v = {}, {}, {}
    for _ in range(header["n_tensors"]):
        (ln,) = r.unpack("<I")
        name = r.take(ln).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        kind, key = name.split("/", 1)
        {"param": params, "adam.m": m, "adam.v": v}[kind][key] = arr
    mc = dict(header["model_config"])
    return Checkpoint(
        ModelConfig(**mc),
        TrainConfig(**header["train_config"]),
        header["vocab"],
        params,
        OptimizerState(m, v, header["opt_step"]),
        header["step"],
        header.get("extra", {}),
    )
