"""Bidirectional transformer encoder in numpy, with hand-written backprop.

Pre-norm residual blocks, exact-erf GELU feed-forward, learned absolute
position embeddings, untied output projection. Small enough that the full
analytic gradient is checked against central finite differences in the tests.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import erf

from .masking import MaskSpec, MaskingError, log_softmax

INV_SQRT2 = 1.0 / np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
LN_EPS = 1e-5


class DenoiserError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_len: int = 256
    vocab_size: int = 32
    seed: int = 0
    dtype: str = "float32"  # "float64" is the gradient-check mode
    # "learned" absolute embeddings, "sinusoidal" (fixed additive table), or
    # "rope" (rotary positions applied to queries/keys; attention then depends
    # on relative offsets only, which extrapolates best to canvases longer
    # than the trained one)
    pos_encoding: str = "learned"
    # when >= 0, positions holding this token id (the mask token) are excluded
    # as attention KEYS: every position then reads only from visible tokens,
    # so its attention pattern does not depend on how many masked positions
    # the canvas happens to contain (critical when decoding into a longer
    # canvas than was trained)
    key_exclude_token: int = -1
    # when > 0, attention is local: query i reads only keys j with
    # |i - j| <= attn_window. Offsets beyond the trained canvas are never
    # fit by training, so restricting inference to the trained offset range
    # keeps behaviour on longer canvases defined by trained attention only.
    # A query whose whole window is excluded gets a zero attention output
    # (residual stream passes through unchanged).
    attn_window: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise DenoiserError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.pos_encoding not in ("learned", "sinusoidal", "rope"):
            raise DenoiserError(
                f"pos_encoding must be 'learned', 'sinusoidal' or 'rope', "
                f"got {self.pos_encoding!r}"
            )
        if self.pos_encoding == "rope" and (self.d_model // self.n_heads) % 2:
            raise DenoiserError("rope needs an even head dimension")
        if self.attn_window < 0:
            raise DenoiserError("attn_window must be >= 0 (0 disables)")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def _init_params(cfg: DenoiserConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype
    d, f, V = cfg.d_model, cfg.d_ff, cfg.vocab_size

    def w(*shape, scale=0.02):
        return (rng.standard_normal(shape) * scale).astype(dt)

    p: dict[str, np.ndarray] = {
        "tok_emb": w(V, d),
        "ln_f.g": np.ones(d, dtype=dt),
        "ln_f.b": np.zeros(d, dtype=dt),
        "out.w": w(d, V),
        "out.b": np.zeros(V, dtype=dt),
    }
    if cfg.pos_encoding == "learned":
        p["pos_emb"] = w(cfg.max_len, d)
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        p[pre + "ln1.g"] = np.ones(d, dtype=dt)
        p[pre + "ln1.b"] = np.zeros(d, dtype=dt)
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + "attn." + name] = w(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + "attn." + name] = np.zeros(d, dtype=dt)
        p[pre + "ln2.g"] = np.ones(d, dtype=dt)
        p[pre + "ln2.b"] = np.zeros(d, dtype=dt)
        p[pre + "ff.w1"] = w(d, f)
        p[pre + "ff.b1"] = np.zeros(f, dtype=dt)
        p[pre + "ff.w2"] = w(f, d)
        p[pre + "ff.b2"] = np.zeros(d, dtype=dt)
    return p


def sinusoidal_table(max_len: int, d_model: int, dtype, scale: float = 0.1
                     ) -> np.ndarray:
    """Classic interleaved sin/cos table, scaled down so the positional
    component is comparable to the token embeddings at init."""
    pos = np.arange(max_len)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angles = pos / np.power(10000.0, 2 * i / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return (scale * table).astype(dtype)


def rope_tables(max_len: int, head_dim: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (max_len, head_dim) for rotary positions,
    with each frequency repeated over its (even, odd) coordinate pair."""
    pos = np.arange(max_len)[:, None]
    i = np.arange(head_dim // 2)[None, :]
    theta = pos / np.power(10000.0, 2 * i / head_dim)
    cos = np.repeat(np.cos(theta), 2, axis=1).astype(dtype)
    sin = np.repeat(np.sin(theta), 2, axis=1).astype(dtype)
    return cos, sin


def _rotate_half(x: np.ndarray) -> np.ndarray:
    """Per-pair 90-degree rotation: (x0, x1) -> (-x1, x0)."""
    out = np.empty_like(x)
    out[..., 0::2] = -x[..., 1::2]
    out[..., 1::2] = x[..., 0::2]
    return out


def _rope_apply(x, cos, sin):
    """x: (..., L, head_dim); cos/sin: (L, head_dim)."""
    return x * cos + _rotate_half(x) * sin


def _rope_apply_adjoint(dy, cos, sin):
    # the rotation is orthogonal, so the adjoint is the inverse rotation
    return dy * cos - _rotate_half(dy) * sin


class Denoiser:
    """Parameter container plus forward/backward. Single-writer, multi-reader:
    forward never mutates parameters."""

    def __init__(self, config: DenoiserConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else _init_params(config)
        if config.pos_encoding == "sinusoidal":
            self._pos_table = sinusoidal_table(config.max_len, config.d_model,
                                               config.np_dtype)
        elif config.pos_encoding == "rope":
            self._rope = rope_tables(config.max_len,
                                     config.d_model // config.n_heads,
                                     config.np_dtype)

    @property
    def pos_table(self) -> np.ndarray:
        if self.config.pos_encoding == "rope":
            raise DenoiserError("rope models have no additive position table")
        return (self.params["pos_emb"]
                if self.config.pos_encoding == "learned" else self._pos_table)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, tokens) -> np.ndarray:
        logits, _, _ = _forward_with_cache(self, tokens)
        return logits

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        buf = io.BytesIO()
        np.savez(buf, **self.params)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            zf.writestr("config.json", json.dumps(asdict(self.config)))
            zf.writestr("params.npz", buf.getvalue())

    @classmethod
    def load(cls, path) -> "Denoiser":
        with zipfile.ZipFile(path) as zf:
            cfg = DenoiserConfig(**json.loads(zf.read("config.json")))
            with np.load(io.BytesIO(zf.read("params.npz"))) as npz:
                params = {k: npz[k] for k in npz.files}
        return cls(cfg, params)


# -- primitive layers (forward returns cache for backward) ------------------


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return g * xhat + b, (xhat, inv_std, g)


def _layer_norm_backward(dy, cache):
    xhat, inv_std, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv_std * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * INV_SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x * INV_SQRT2)) + x * np.exp(-0.5 * x * x) * INV_SQRT_2PI


def _linear(x, w, b):
    return x @ w + b


def _linear_backward(dy, x, w):
    xf = x.reshape(-1, x.shape[-1])
    dyf = dy.reshape(-1, dy.shape[-1])
    dw = xf.T @ dyf
    db = dyf.sum(0)
    dx = dy @ w.T
    return dx, dw, db


def _split_heads(x, n_heads):
    B, L, d = x.shape
    return x.reshape(B, L, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dh)


# -- forward -----------------------------------------------------------------


def _forward_with_cache(m: Denoiser, tokens: np.ndarray):
    cfg, p = m.config, m.params
    tokens = np.asarray(tokens, dtype=np.int64)
    squeeze = tokens.ndim == 1
    if squeeze:
        tokens = tokens[None, :]
    B, L = tokens.shape
    if L > cfg.max_len:
        raise DenoiserError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise DenoiserError("token id out of range for vocab_size")

    H = cfg.n_heads
    scale = 1.0 / np.sqrt(cfg.d_model // H)
    rope = m._rope if cfg.pos_encoding == "rope" else None
    h = p["tok_emb"][tokens]
    if rope is None:
        h = h + m.pos_table[:L]
    key_bias = None
    if cfg.key_exclude_token >= 0:
        excluded = tokens == cfg.key_exclude_token  # (B, L)
        if excluded.all(axis=1).any():
            raise DenoiserError("every sequence needs at least one visible key")
        # additive -inf bias on excluded keys, broadcast over heads and queries
        key_bias = np.where(excluded, -np.inf, 0.0)[:, None, None, :]
    win_bias = None
    if cfg.attn_window > 0:
        offs = np.abs(np.arange(L)[:, None] - np.arange(L)[None, :])
        win_bias = np.where(offs <= cfg.attn_window, 0.0, -np.inf)[None, None]
    cache: dict = {"tokens": tokens, "L": L, "blocks": []}

    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        a1, ln1_cache = _layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = _split_heads(_linear(a1, p[pre + "attn.wq"], p[pre + "attn.bq"]), H)
        k = _split_heads(_linear(a1, p[pre + "attn.wk"], p[pre + "attn.bk"]), H)
        v = _split_heads(_linear(a1, p[pre + "attn.wv"], p[pre + "attn.bv"]), H)
        if rope is not None:
            q = _rope_apply(q, rope[0][:L], rope[1][:L])
            k = _rope_apply(k, rope[0][:L], rope[1][:L])
        scores = q @ k.transpose(0, 1, 3, 2) * scale
        if key_bias is not None:
            scores = scores + key_bias
        if win_bias is not None:
            scores = scores + win_bias
        # rows whose every key is excluded get all-zero attention weights
        # (zero context vector) instead of NaN from an all--inf softmax
        rowmax = scores.max(-1, keepdims=True)
        attn = np.exp(scores - np.where(np.isfinite(rowmax), rowmax, 0.0))
        denom = attn.sum(-1, keepdims=True)
        attn = attn / np.where(denom > 0.0, denom, 1.0)
        ctx = _merge_heads(attn @ v)
        attn_out = _linear(ctx, p[pre + "attn.wo"], p[pre + "attn.bo"])
        h1 = h + attn_out

        a2, ln2_cache = _layer_norm(h1, p[pre + "ln2.g"], p[pre + "ln2.b"])
        z = _linear(a2, p[pre + "ff.w1"], p[pre + "ff.b1"])
        g = _gelu(z)
        ff_out = _linear(g, p[pre + "ff.w2"], p[pre + "ff.b2"])
        h2 = h1 + ff_out

        cache["blocks"].append(
            dict(a1=a1, ln1=ln1_cache, q=q, k=k, v=v, attn=attn, ctx=ctx,
                 a2=a2, ln2=ln2_cache, z=z, g=g)
        )
        h = h2

    hf, lnf_cache = _layer_norm(h, p["ln_f.g"], p["ln_f.b"])
    logits = _linear(hf, p["out.w"], p["out.b"])
    cache["hf"] = hf
    cache["lnf"] = lnf_cache
    if not np.isfinite(logits).all():
        raise DenoiserError("non-finite logits")
    return (logits[0] if squeeze else logits), cache, squeeze


def forward(m: Denoiser, tokens) -> np.ndarray:
    """Per-position logits, shape (L, vocab_size) or (B, L, vocab_size)."""
    logits, _, _ = _forward_with_cache(m, tokens)
    return logits


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


# -- backward ----------------------------------------------------------------


def _backward_from_dlogits(m: Denoiser, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
    cfg, p = m.config, m.params
    H = cfg.n_heads
    scale = 1.0 / np.sqrt(cfg.d_model // H)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    tokens, L = cache["tokens"], cache["L"]

    dhf, grads["out.w"], grads["out.b"] = _linear_backward(dlogits, cache["hf"], p["out.w"])
    dh, grads["ln_f.g"], grads["ln_f.b"] = _layer_norm_backward(dhf, cache["lnf"])

    for i in reversed(range(cfg.n_layers)):
        pre = f"layers.{i}."
        blk = cache["blocks"][i]

        # feed-forward branch
        dg, grads[pre + "ff.w2"], grads[pre + "ff.b2"] = _linear_backward(
            dh, blk["g"], p[pre + "ff.w2"]
        )
        dz = dg * _gelu_grad(blk["z"])
        da2, grads[pre + "ff.w1"], grads[pre + "ff.b1"] = _linear_backward(
            dz, blk["a2"], p[pre + "ff.w1"]
        )
        dh1_ln, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _layer_norm_backward(
            da2, blk["ln2"]
        )
        dh1 = dh + dh1_ln

        # attention branch
        dctx, grads[pre + "attn.wo"], grads[pre + "attn.bo"] = _linear_backward(
            dh1, blk["ctx"], p[pre + "attn.wo"]
        )
        dctx_h = _split_heads(dctx, H)
        attn, q, k, v = blk["attn"], blk["q"], blk["k"], blk["v"]
        dattn = dctx_h @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx_h
        dscores = attn * (dattn - (dattn * attn).sum(-1, keepdims=True))
        dq = dscores @ k * scale
        dk = dscores.transpose(0, 1, 3, 2) @ q * scale
        if cfg.pos_encoding == "rope":
            cos, sin = m._rope[0][:L], m._rope[1][:L]
            dq = _rope_apply_adjoint(dq, cos, sin)
            dk = _rope_apply_adjoint(dk, cos, sin)

        da1 = np.zeros_like(blk["a1"])
        for dmat, wname, bname in (
            (dq, "attn.wq", "attn.bq"),
            (dk, "attn.wk", "attn.bk"),
            (dv, "attn.wv", "attn.bv"),
        ):
            dx, dw, db = _linear_backward(_merge_heads(dmat), blk["a1"], p[pre + wname])
            da1 += dx
            grads[pre + wname] = dw
            grads[pre + bname] = db
        dh_ln, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _layer_norm_backward(
            da1, blk["ln1"]
        )
        dh = dh1 + dh_ln

    # embeddings
    d = cfg.d_model
    np.add.at(grads["tok_emb"], tokens.reshape(-1), dh.reshape(-1, d))
    if "pos_emb" in grads:  # sinusoidal tables are fixed
        grads["pos_emb"][:L] = dh.sum(0)
    return grads


def loss_and_grads_batch(
    m: Denoiser,
    tokens: np.ndarray,
    mask: np.ndarray,
    lams: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Masked-CE loss (per-sequence sums weighted by 1/lambda, averaged over
    the batch) and its analytic gradient for every parameter.

    tokens/targets: (B, L) int; mask: (B, L) bool; lams: (B,).
    """
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    B, L = tokens.shape
    if not mask.any(axis=1).all():
        raise MaskingError("every batch element needs at least one masked position")

    logits, cache, _ = _forward_with_cache(m, tokens)
    logp = log_softmax(logits)
    probs = np.exp(logp)

    weight = mask / (lams[:, None] * B)                      # (B, L)
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float((nll * weight).sum())

    dlogits = probs.copy()
    np.put_along_axis(
        dlogits, targets[..., None],
        np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1,
    )
    dlogits *= weight[..., None]
    grads = _backward_from_dlogits(m, dlogits.astype(logits.dtype), cache)
    return loss, grads


def backward(
    m: Denoiser, tokens, spec: MaskSpec, targets
) -> tuple[float, dict[str, np.ndarray]]:
    """Single-example convenience wrapper around the batched path."""
    return loss_and_grads_batch(
        m,
        np.asarray(tokens)[None, :],
        spec.mask[None, :],
        np.array([spec.lam]),
        np.asarray(targets)[None, :],
    )
