"""A small numpy segmentation network built around text-to-patch cross-attention.

Pipeline: non-overlapping patches -> linear patch embedding; prompt tokens
-> mean of embedding rows; one text query per head attends over the patch
tokens; the attended vector is projected and added to every patch token;
the token grid is upsampled by stride-2 transposed convolutions with batch
normalization and ReLU, ending in a single-channel sigmoid map.

Everything is float64 and differentiated by hand so gradients can be
checked against finite differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

ENCODER_PREFIXES = ("patch_embed", "prompt_table", "attn.")


@dataclass(frozen=True)
class Geometry:
    image_size: int = 64
    patch_size: int = 8
    d_vis: int = 32
    d_shared: int = 16
    n_heads: int = 8
    d_k: int = 4
    vocab_size: int = 16
    decoder_channels: tuple = ()

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ShapeError(f"image size {self.image_size} not divisible by patch {self.patch_size}")
        stages = int(round(math.log2(self.patch_size)))
        if 2 ** stages != self.patch_size:
            raise ShapeError("patch size must be a power of two (one x2 decoder stage per octave)")
        if not self.decoder_channels:
            chans = [max(self.d_vis >> (i + 1), 1) for i in range(stages - 1)]
            object.__setattr__(self, "decoder_channels", tuple(chans))
        elif len(self.decoder_channels) != stages - 1:
            raise ShapeError(f"need {stages - 1} hidden decoder widths, got {len(self.decoder_channels)}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def n_stages(self) -> int:
        return len(self.decoder_channels) + 1

    @property
    def attn_width(self) -> int:
        return self.n_heads * self.d_k

    def stage_channels(self):
        chans = (self.d_vis, *self.decoder_channels, 1)
        return list(zip(chans[:-1], chans[1:]))


def _glorot(rng, shape, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(geom: Geometry, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform matrices, unit BN scale, zero shifts and biases."""
    rng = np.random.default_rng(seed)
    P2 = geom.patch_size ** 2
    A = geom.attn_width
    params = {
        "patch_embed": _glorot(rng, (P2, geom.d_vis), P2, geom.d_vis),
        "prompt_table": _glorot(rng, (geom.vocab_size, geom.d_shared), geom.vocab_size, geom.d_shared),
        "attn.W_q": _glorot(rng, (geom.d_shared, A), geom.d_shared, A),
        "attn.W_k": _glorot(rng, (geom.d_vis, A), geom.d_vis, A),
        "attn.W_v": _glorot(rng, (geom.d_vis, A), geom.d_vis, A),
        "attn.W_o": _glorot(rng, (A, geom.d_vis), A, geom.d_vis),
    }
    for i, (cin, cout) in enumerate(geom.stage_channels()):
        params[f"decoder.{i}.weight"] = _glorot(rng, (cin, cout, 2, 2), cin * 4, cout * 4)
        if i < geom.n_stages - 1:
            params[f"decoder.{i}.gamma"] = np.ones(cout)
            params[f"decoder.{i}.beta"] = np.zeros(cout)
        else:
            params[f"decoder.{i}.bias"] = np.zeros(cout)
    return params


def init_buffers(geom: Geometry) -> dict[str, np.ndarray]:
    bufs = {}
    for i, (_, cout) in enumerate(geom.stage_channels()[:-1]):
        bufs[f"decoder.{i}.running_mean"] = np.zeros(cout)
        bufs[f"decoder.{i}.running_var"] = np.ones(cout)
    return bufs


def param_group(name: str) -> str:
    return "encoder" if name.startswith(ENCODER_PREFIXES) else "decoder"


# --------------------------------------------------------------------------
# Component operations (single-example views over the batched kernels)


def extract_patches(imgs: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W) -> (B, n_patches, patch*patch), row-major over the patch grid."""
    B, H, W = imgs.shape
    if H % patch or W % patch:
        raise ShapeError(f"image {H}x{W} is not divisible by patch size {patch}")
    gh, gw = H // patch, W // patch
    x = imgs.reshape(B, gh, patch, gw, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(B, gh * gw, patch * patch)


def embed_patches(img, params, patch_size: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return extract_patches(img[None], patch_size)[0] @ params["patch_embed"]


def embed_prompt(tokens, params) -> np.ndarray:
    table = params["prompt_table"]
    tokens = list(tokens)
    if not tokens:
        raise InputError("prompt has no tokens")
    if any(t < 0 or t >= table.shape[0] for t in tokens):
        raise InputError(f"prompt token outside vocabulary of size {table.shape[0]}")
    return table[tokens].mean(axis=0)


def _split_heads(x, n_heads):
    return x.reshape(*x.shape[:-1], n_heads, x.shape[-1] // n_heads)


def cross_attention(text, patches, params, n_heads: int):
    """Single example: returns ``(F_attn, weights)`` with weights shaped (heads, n_patches)."""
    text = np.asarray(text, dtype=np.float64)
    patches = np.asarray(patches, dtype=np.float64)
    try:
        out, weights, _ = _attention_forward(text[None], patches[None], params, n_heads)
    except ValueError as exc:
        raise ShapeError(f"attention dimension mismatch: {exc}") from None
    return out[0], weights[0]


def _attention_forward(ft, fv, params, n_heads):
    Wq, Wk, Wv, Wo = (params[f"attn.{k}"] for k in ("W_q", "W_k", "W_v", "W_o"))
    d_k = Wq.shape[1] // n_heads
    q = _split_heads(ft @ Wq, n_heads)                    # B,h,dk
    k = _split_heads(fv @ Wk, n_heads)                    # B,N,h,dk
    v = _split_heads(fv @ Wv, n_heads)                    # B,N,h,dk
    scale = 1.0 / math.sqrt(d_k)
    logits = np.einsum("bhd,bnhd->bhn", q, k) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)                    # B,h,N
    ctx = np.einsum("bhn,bnhd->bhd", w, v)                # B,h,dk
    concat = ctx.reshape(ctx.shape[0], -1)                # B,h*dk
    delta = concat @ Wo                                   # B,Dv
    out = fv + delta[:, None, :]
    cache = dict(ft=ft, fv=fv, q=q, k=k, v=v, w=w, concat=concat, scale=scale)
    return out, w, cache


def _attention_backward(d_out, params, cache, grads):
    n_heads = cache["q"].shape[1]
    Wq, Wk, Wv, Wo = (params[f"attn.{k}"] for k in ("W_q", "W_k", "W_v", "W_o"))
    ft, fv, q, k, v, w = (cache[key] for key in ("ft", "fv", "q", "k", "v", "w"))
    B = fv.shape[0]

    d_fv = d_out.copy()
    d_delta = d_out.sum(axis=1)                           # B,Dv
    grads["attn.W_o"] += cache["concat"].T @ d_delta
    d_ctx = (d_delta @ Wo.T).reshape(B, n_heads, -1)      # B,h,dk
    d_w = np.einsum("bhd,bnhd->bhn", d_ctx, v)
    d_v = np.einsum("bhn,bhd->bnhd", w, d_ctx)
    d_logits = w * (d_w - np.sum(d_w * w, axis=-1, keepdims=True)) * cache["scale"]
    d_q = np.einsum("bhn,bnhd->bhd", d_logits, k)
    d_k = np.einsum("bhn,bhd->bnhd", d_logits, q)

    d_q = d_q.reshape(B, -1)
    d_k = d_k.reshape(*d_k.shape[:2], -1)
    d_v = d_v.reshape(*d_v.shape[:2], -1)
    grads["attn.W_q"] += ft.T @ d_q
    grads["attn.W_k"] += np.einsum("bni,bnj->ij", fv, d_k)
    grads["attn.W_v"] += np.einsum("bni,bnj->ij", fv, d_v)
    d_fv += d_k @ Wk.T + d_v @ Wv.T
    d_ft = d_q @ Wq.T
    return d_ft, d_fv


def transposed_conv2x(x, weight, bias=None):
    """Stride-2, 2x2 transposed convolution on channels-last input.

    ``x`` is (B, h, w, Cin) and ``weight`` (Cin, Cout, 2, 2); output is
    (B, 2h, 2w, Cout) with ``out[b, 2i+a, 2j+c] = x[b, i, j] @ weight[:, :, a, c]``.
    """
    B, h, w, _ = x.shape
    cout = weight.shape[1]
    y = np.einsum("bhwi,ioac->bhawco", x, weight).reshape(B, 2 * h, 2 * w, cout)
    if bias is not None:
        y = y + bias
    return y


def _tconv_backward(dy, x, weight):
    B, h, w, _ = x.shape
    cout = weight.shape[1]
    dyr = dy.reshape(B, h, 2, w, 2, cout)
    d_x = np.einsum("bhawco,ioac->bhwi", dyr, weight)
    d_w = np.einsum("bhwi,bhawco->ioac", x, dyr)
    return d_x, d_w


def decode_mask(f_attn, params, geom: Geometry, buffers=None, train: bool = False):
    """Single example: (n_patches, D_vis) tokens -> (H, W) probability map."""
    f_attn = np.asarray(f_attn, dtype=np.float64)
    grid = int(round(math.sqrt(f_attn.shape[0])))
    if grid * grid != f_attn.shape[0] or grid != geom.grid:
        raise ShapeError(f"{f_attn.shape[0]} tokens do not form the expected {geom.grid}x{geom.grid} grid")
    buffers = init_buffers(geom) if buffers is None else buffers
    probs, _ = _decoder_forward(f_attn[None], params, geom, buffers, train)
    return probs[0]


def _decoder_forward(f_attn, params, geom, buffers, train):
    B = f_attn.shape[0]
    x = f_attn.reshape(B, geom.grid, geom.grid, geom.d_vis)
    caches = []
    last = geom.n_stages - 1
    for i in range(geom.n_stages):
        W = params[f"decoder.{i}.weight"]
        if i == last:
            z = transposed_conv2x(x, W, params[f"decoder.{i}.bias"])
            probs = 1.0 / (1.0 + np.exp(-z[..., 0]))
            caches.append(dict(x=x))
            return probs, caches
        y = transposed_conv2x(x, W)
        if train:
            mean = y.mean(axis=(0, 1, 2))
            var = y.var(axis=(0, 1, 2))
            rm, rv = f"decoder.{i}.running_mean", f"decoder.{i}.running_var"
            buffers[rm] = (1 - BN_MOMENTUM) * buffers[rm] + BN_MOMENTUM * mean
            buffers[rv] = (1 - BN_MOMENTUM) * buffers[rv] + BN_MOMENTUM * var
        else:
            mean = buffers[f"decoder.{i}.running_mean"]
            var = buffers[f"decoder.{i}.running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (y - mean) * inv_std
        pre = params[f"decoder.{i}.gamma"] * xhat + params[f"decoder.{i}.beta"]
        caches.append(dict(x=x, xhat=xhat, inv_std=inv_std, pre=pre, train=train))
        x = np.maximum(pre, 0.0)


def _decoder_backward(d_probs, probs, params, geom, caches, grads):
    last = geom.n_stages - 1
    d_z = (d_probs * probs * (1.0 - probs))[..., None]
    grads[f"decoder.{last}.bias"] += d_z.sum(axis=(0, 1, 2))
    d_x, d_w = _tconv_backward(d_z, caches[last]["x"], params[f"decoder.{last}.weight"])
    grads[f"decoder.{last}.weight"] += d_w
    for i in range(last - 1, -1, -1):
        c = caches[i]
        d_pre = d_x * (c["pre"] > 0)
        grads[f"decoder.{i}.beta"] += d_pre.sum(axis=(0, 1, 2))
        grads[f"decoder.{i}.gamma"] += (d_pre * c["xhat"]).sum(axis=(0, 1, 2))
        d_xhat = d_pre * params[f"decoder.{i}.gamma"]
        if c["train"]:
            m = d_xhat.shape[0] * d_xhat.shape[1] * d_xhat.shape[2]
            d_y = (c["inv_std"] / m) * (
                m * d_xhat
                - d_xhat.sum(axis=(0, 1, 2))
                - c["xhat"] * (d_xhat * c["xhat"]).sum(axis=(0, 1, 2))
            )
        else:
            d_y = d_xhat * c["inv_std"]
        d_x, d_w = _tconv_backward(d_y, c["x"], params[f"decoder.{i}.weight"])
        grads[f"decoder.{i}.weight"] += d_w
    return d_x


# --------------------------------------------------------------------------
# Batched model


@dataclass
class ForwardResult:
    probs: np.ndarray          # (B, H, W)
    attn: np.ndarray           # (B, heads, n_patches)
    pooled: np.ndarray         # (B, D_vis) mean patch feature
    cache: dict = field(repr=False, default_factory=dict)


def forward(imgs, prompts, params, geom: Geometry, buffers=None, train: bool = False) -> ForwardResult:
    """Batched forward pass.

    ``imgs`` is (B, H, W) (a single (H, W) image is promoted); ``prompts``
    is a list of token-id lists, one per image. In train mode batch
    normalization uses batch statistics and updates ``buffers`` in place.
    """
    imgs = np.asarray(imgs, dtype=np.float64)
    if imgs.ndim == 2:
        imgs = imgs[None]
        if prompts and not isinstance(prompts[0], (list, tuple, np.ndarray)):
            prompts = [prompts]
    if imgs.shape[1:] != (geom.image_size, geom.image_size):
        raise ShapeError(f"image {imgs.shape[1:]} does not match geometry {geom.image_size}")
    if len(prompts) != imgs.shape[0]:
        raise InputError("need one prompt per image")
    if buffers is None:
        buffers = init_buffers(geom)

    patches = extract_patches(imgs, geom.patch_size)
    fv = patches @ params["patch_embed"]
    ft = np.stack([embed_prompt(p, params) for p in prompts])
    f_attn, w, attn_cache = _attention_forward(ft, fv, params, geom.n_heads)
    probs, dec_caches = _decoder_forward(f_attn, params, geom, buffers, train)
    if not np.all(np.isfinite(probs)):
        raise NumericError("non-finite activations in decoder output")
    cache = dict(patches=patches, prompts=[list(p) for p in prompts], attn=attn_cache, dec=dec_caches)
    return ForwardResult(probs=probs, attn=w, pooled=fv.mean(axis=1), cache=cache)


def backward(result: ForwardResult, d_probs, params, geom: Geometry) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss given ``dL/dprobs``."""
    d_probs = np.asarray(d_probs, dtype=np.float64)
    if not np.all(np.isfinite(d_probs)):
        raise NumericError("non-finite loss gradient reaching the decoder")
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    c = result.cache
    d_fattn = _decoder_backward(d_probs, result.probs, params, geom, c["dec"], grads)
    d_fattn = d_fattn.reshape(d_fattn.shape[0], -1, geom.d_vis)
    if not np.all(np.isfinite(d_fattn)):
        raise NumericError("non-finite gradient leaving the decoder")
    d_ft, d_fv = _attention_backward(d_fattn, params, c["attn"], grads)
    grads["patch_embed"] += np.einsum("bnp,bnd->pd", c["patches"], d_fv)
    for b, toks in enumerate(c["prompts"]):
        np.add.at(grads["prompt_table"], toks, d_ft[b] / len(toks))
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return grads


# --------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AdamWConfig:
    encoder_lr: float = 1e-5
    decoder_lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def lr_for(self, name: str) -> float:
        return self.encoder_lr if param_group(name) == "encoder" else self.decoder_lr


def optimizer_step(params, grads, state: AdamWState, cfg: AdamWConfig) -> AdamWState:
    """Decoupled-weight-decay Adam step, updating ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
    state.step += 1
    t = state.step
    bc1 = 1 - cfg.beta1 ** t
    bc2 = 1 - cfg.beta2 ** t
    for name in sorted(params):
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = cfg.beta1 * (m if m is not None else 0.0) + (1 - cfg.beta1) * g
        v = cfg.beta2 * (v if v is not None else 0.0) + (1 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        lr = cfg.lr_for(name)
        p = params[name]
        p *= 1 - lr * cfg.weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return state
