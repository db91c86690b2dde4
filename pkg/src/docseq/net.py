"""Decoder-only transformer in numpy with hand-written reverse-mode gradients.

The forward pass records every intermediate it needs on a :class:`Tape`; :func:`backward`
walks the tape in reverse and returns a gradient array for every parameter.
Architecture is GPT-2 style: learned absolute positions, pre-norm blocks, fused QKV
projection, causal multi-head attention, tanh-GELU feed-forward, final norm, untied head.

Parameters are a plain ``dict[str, np.ndarray]``, ordered as :func:`param_shapes` lists them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ContextOverflowError, InvalidInputError

LN_EPS = 1e-5
INIT_STD = 0.02
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    context_length: int = 1024
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    d_ff: Optional[int] = None
    dropout: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.d_model % self.n_heads:
            raise InvalidInputError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.vocab_size < 1 or self.context_length < 1 or self.n_layers < 1:
            raise InvalidInputError("vocab_size, context_length and n_layers must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError("dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise InvalidInputError(f"unsupported dtype {self.dtype}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, V = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes = {"wte": (V, d), "wpe": (cfg.context_length, d)}
    for i in range(cfg.n_layers):
        p = f"h{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.wqkv": (d, 3 * d), p + "attn.bqkv": (3 * d,),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.w1": (d, f), p + "mlp.b1": (f,),
            p + "mlp.w2": (f, d), p + "mlp.b2": (d,),
        })
    shapes.update({"lnf.g": (d,), "lnf.b": (d,), "head.w": (d, V)})
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Weights ~ N(0, 0.02), biases/shifts 0, norm scales 1.

    Draws come from numpy's PCG64 generator seeded with the 64-bit ``seed`` and are consumed
    in :func:`param_shapes` order, so a seed fully determines the parameters.
    """
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    dt = np.dtype(cfg.dtype)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape, dtype=dt)
        elif leaf.startswith("b"):
            params[name] = np.zeros(shape, dtype=dt)
        else:
            params[name] = (rng.standard_normal(shape) * INIT_STD).astype(dt)
    return params


def infer_config(params: dict, n_heads: int, **kw) -> ModelConfig:
    V, d = params["wte"].shape
    n_layers = sum(1 for k in params if k.endswith(".ln1.g"))
    return ModelConfig(V, params["wpe"].shape[0], d, n_layers, n_heads, params["h0.mlp.w1"].shape[1],
                       dtype=str(params["wte"].dtype), **kw)


# ---------------------------------------------------------------------------
# primitives


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dout, g, cache):
    xhat, rstd = cache
    dxhat = dout * g
    dg = (dout * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dout.reshape(-1, dout.shape[-1]).sum(0)
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * (x * x * x))))


def _gelu_back(dout, x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


def _linear(x, w, b=None):
    # 2-D matmul keeps BLAS calls shape-identical across batch layouts
    y = x.reshape(-1, x.shape[-1]) @ w
    if b is not None:
        y += b
    return y.reshape(*x.shape[:-1], w.shape[1])


def _linear_back(dy, x, w):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(0)
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


def _causal_mask(T: int) -> np.ndarray:
    return np.triu(np.ones((T, T), dtype=bool), k=1)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class Tape:
    cfg: ModelConfig
    ids: np.ndarray
    layers: list = field(default_factory=list)
    lnf: tuple = None
    z: np.ndarray = None


def _dropout(x, p, rng):
    if p <= 0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def forward(params: dict, cfg: ModelConfig, ids, dropout_rng=None):
    """Logits for every position of ``ids`` (shape ``(T,)`` or ``(B, T)``) plus the tape.

    Right padding needs no special handling: the causal mask keeps real positions from
    seeing later pad tokens, and the loss ignores pad targets.
    """
    ids = np.asarray(ids, dtype=np.int64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    B, T = ids.shape
    if T > cfg.context_length:
        raise ContextOverflowError(f"sequence length {T} exceeds context {cfg.context_length}")
    if T == 0:
        raise InvalidInputError("empty input")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InvalidInputError("token id outside vocabulary")
    H, hd = cfg.n_heads, cfg.head_dim
    p_drop = cfg.dropout
    tape = Tape(cfg, ids)
    x = params["wte"][ids] + params["wpe"][:T]
    mask = _causal_mask(T)
    scale = 1.0 / math.sqrt(hd)
    for i in range(cfg.n_layers):
        p = f"h{i}."
        c = {}
        a, c["ln1"] = layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        c["a"] = a
        qkv = _linear(a, params[p + "attn.wqkv"], params[p + "attn.bqkv"])
        q, k, v = (qkv[..., j * cfg.d_model:(j + 1) * cfg.d_model].reshape(B, T, H, hd).transpose(0, 2, 1, 3)
                   for j in range(3))
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        s[..., mask] = -np.inf
        P = softmax(s)
        y = (P @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
        c.update(q=q, k=k, v=v, P=P, y=y)
        o = _linear(y, params[p + "attn.wo"], params[p + "attn.bo"])
        o, c["drop1"] = _dropout(o, p_drop, dropout_rng)
        x = x + o
        m, c["ln2"] = layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        c["m"] = m
        hpre = _linear(m, params[p + "mlp.w1"], params[p + "mlp.b1"])
        hg = gelu(hpre)
        c.update(hpre=hpre, hg=hg)
        f = _linear(hg, params[p + "mlp.w2"], params[p + "mlp.b2"])
        f, c["drop2"] = _dropout(f, p_drop, dropout_rng)
        x = x + f
        tape.layers.append(c)
    z, tape.lnf = layer_norm(x, params["lnf.g"], params["lnf.b"])
    tape.z = z
    logits = _linear(z, params["head.w"])
    return (logits[0] if squeeze else logits), tape


def backward(params: dict, tape: Tape, d_logits) -> dict[str, np.ndarray]:
    """Gradients of ``sum(logits * d_logits)`` with respect to every parameter."""
    cfg = tape.cfg
    B, T = tape.ids.shape
    d_logits = np.asarray(d_logits)
    if d_logits.ndim == 2:
        d_logits = d_logits[None]
    if d_logits.shape != (B, T, cfg.vocab_size):
        raise InvalidInputError(f"upstream gradient shape {d_logits.shape} != {(B, T, cfg.vocab_size)}")
    d_logits = d_logits.astype(tape.z.dtype, copy=False)
    H, hd, d = cfg.n_heads, cfg.head_dim, cfg.d_model
    scale = 1.0 / math.sqrt(hd)
    grads = {name: np.zeros_like(w) for name, w in params.items()}

    dz, grads["head.w"], _ = _linear_back(d_logits, tape.z, params["head.w"])
    dx, grads["lnf.g"], grads["lnf.b"] = _layer_norm_back(dz, params["lnf.g"], tape.lnf)

    for i in reversed(range(cfg.n_layers)):
        p = f"h{i}."
        c = tape.layers[i]
        # feed-forward branch
        df = dx if c["drop2"] is None else dx * c["drop2"]
        dhg, grads[p + "mlp.w2"], grads[p + "mlp.b2"] = _linear_back(df, c["hg"], params[p + "mlp.w2"])
        dhpre = _gelu_back(dhg, c["hpre"])
        dm, grads[p + "mlp.w1"], grads[p + "mlp.b1"] = _linear_back(dhpre, c["m"], params[p + "mlp.w1"])
        dln, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layer_norm_back(dm, params[p + "ln2.g"], c["ln2"])
        dx = dx + dln
        # attention branch
        do = dx if c["drop1"] is None else dx * c["drop1"]
        dy, grads[p + "attn.wo"], grads[p + "attn.bo"] = _linear_back(do, c["y"], params[p + "attn.wo"])
        dy = dy.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        P, q, k, v = c["P"], c["q"], c["k"], c["v"]
        dP = dy @ v.transpose(0, 1, 3, 2)
        dv = P.transpose(0, 1, 3, 2) @ dy
        ds = P * (dP - np.sum(dP * P, axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.concatenate([t.transpose(0, 2, 1, 3).reshape(B, T, d) for t in (dq, dk, dv)], axis=-1)
        da, grads[p + "attn.wqkv"], grads[p + "attn.bqkv"] = _linear_back(dqkv, c["a"], params[p + "attn.wqkv"])
        dln, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layer_norm_back(da, params[p + "ln1.g"], c["ln1"])
        dx = dx + dln

    dwte = np.zeros_like(params["wte"])
    np.add.at(dwte, tape.ids.reshape(-1), dx.reshape(-1, d))
    grads["wte"] = dwte
    grads["wpe"][:T] = dx.sum(0)
    return grads


# ---------------------------------------------------------------------------
# incremental decoding


class IncrementalDecoder:
    """Single-sequence decoding with cached keys/values.

    ``step(token)`` feeds one token and returns the next-token logits; it computes the same
    function as :func:`forward` restricted to the last position.
    """

    def __init__(self, params: dict, cfg: ModelConfig):
        self.params = params
        self.cfg = cfg
        dt = params["wte"].dtype
        L, H, hd = cfg.context_length, cfg.n_heads, cfg.head_dim
        self.keys = [np.zeros((H, L, hd), dtype=dt) for _ in range(cfg.n_layers)]
        self.values = [np.zeros((H, L, hd), dtype=dt) for _ in range(cfg.n_layers)]
        self.pos = 0

    def step(self, token: int) -> np.ndarray:
        cfg, prm = self.cfg, self.params
        t = self.pos
        if t >= cfg.context_length:
            raise ContextOverflowError(f"decoding past context length {cfg.context_length}")
        if not 0 <= token < cfg.vocab_size:
            raise InvalidInputError(f"token id {token} outside vocabulary")
        H, hd, d = cfg.n_heads, cfg.head_dim, cfg.d_model
        scale = 1.0 / math.sqrt(hd)
        x = prm["wte"][token] + prm["wpe"][t]
        for i in range(cfg.n_layers):
            p = f"h{i}."
            a, _ = layer_norm(x, prm[p + "ln1.g"], prm[p + "ln1.b"])
            qkv = a @ prm[p + "attn.wqkv"] + prm[p + "attn.bqkv"]
            q = qkv[:d].reshape(H, hd)
            self.keys[i][:, t] = qkv[d:2 * d].reshape(H, hd)
            self.values[i][:, t] = qkv[2 * d:].reshape(H, hd)
            K = self.keys[i][:, :t + 1]
            Vv = self.values[i][:, :t + 1]
            s = np.einsum("hd,htd->ht", q, K) * scale
            P = softmax(s)
            y = np.einsum("ht,htd->hd", P, Vv).reshape(d)
            x = x + (y @ prm[p + "attn.wo"] + prm[p + "attn.bo"])
            m, _ = layer_norm(x, prm[p + "ln2.g"], prm[p + "ln2.b"])
            x = x + (gelu(m @ prm[p + "mlp.w1"] + prm[p + "mlp.b1"]) @ prm[p + "mlp.w2"] + prm[p + "mlp.b2"])
        z, _ = layer_norm(x, prm["lnf.g"], prm["lnf.b"])
        self.pos += 1
        return z @ prm["head.w"]
