"""Bidirectional domain attention fusion: a small numpy forward/backward pass.

Spatial and Doppler feature maps are patchified into token sequences of a
shared width ``C``.  Stage one lets spatial tokens query the Doppler tokens
and fuses the result back into the Doppler stream; a residual bottleneck
projects the fused Doppler tokens into the spatial domain; stage two lets
those projected tokens query the spatial tokens and fuses the result into
the spatial stream.  Tokens are rows, so projections are right-multiplied.

The backward pass is hand-written and exists so that the forward pass can
be verified against finite differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .errors import ConfigError, FileFormatError

BUNDLE_MAGIC = b"BDAF"
BUNDLE_VERSION = 1
_BUNDLE_HEADER = struct.Struct("<4sIIII")


def softplus(x):
    return np.logaddexp(0.0, x)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def positional_encoding(length: int, channels: int) -> np.ndarray:
    """Fixed sinusoidal encoding indexed by token position."""
    pos = np.arange(length)[:, None]
    i = np.arange(channels)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / channels)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def patchify(f: np.ndarray, p: int, positional: bool = True) -> np.ndarray:
    """Split an ``(H, W, C)`` map into ``L = HW/p^2`` tokens of width ``C p^2``.

    Patches are taken in row-major order; inside a token the values are
    channel-major, then patch row, then patch column.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3:
        raise ConfigError("feature map must have shape (H, W, C)")
    H, W, C = f.shape
    if p < 1 or H % p or W % p:
        raise ConfigError(f"patch size {p} must divide H={H} and W={W}")
    tokens = (
        f.reshape(H // p, p, W // p, p, C)
        .transpose(0, 2, 4, 1, 3)
        .reshape((H // p) * (W // p), C * p * p)
    )
    if positional:
        tokens = tokens + positional_encoding(*tokens.shape)
    return tokens


def unpatchify(tokens: np.ndarray, H: int, W: int, p: int) -> np.ndarray:
    L, width = tokens.shape
    C = width // (p * p)
    if L != (H // p) * (W // p) or C * p * p != width:
        raise ConfigError("token shape does not match the requested map size")
    return (
        np.asarray(tokens)
        .reshape(H // p, W // p, C, p, p)
        .transpose(0, 3, 1, 4, 2)
        .reshape(H, W, C)
    )


@dataclass
class AttentionWeights:
    """All learnable parameters, in bundle-file declaration order.

    ``fuse_d_*`` and ``fuse_s_*`` are the residual fusion blocks
    ``x + softplus([x, y] w1 + b1) w2 + b2``; ``proj_*`` is the domain
    projection bottleneck ``x + softplus(x w1 + b1) w2 + b2`` of width
    ``max(1, C // 2)``.
    """

    w_sq: np.ndarray
    w_dk: np.ndarray
    w_dv: np.ndarray
    w_dq: np.ndarray
    w_sk: np.ndarray
    w_sv: np.ndarray
    fuse_d_w1: np.ndarray
    fuse_d_b1: np.ndarray
    fuse_d_w2: np.ndarray
    fuse_d_b2: np.ndarray
    proj_w1: np.ndarray
    proj_b1: np.ndarray
    proj_w2: np.ndarray
    proj_b2: np.ndarray
    fuse_s_w1: np.ndarray
    fuse_s_b1: np.ndarray
    fuse_s_w2: np.ndarray
    fuse_s_b2: np.ndarray

    @staticmethod
    def shapes(C: int, d_k: int) -> dict[str, tuple[int, ...]]:
        h = max(1, C // 2)
        out = {n: (C, d_k) for n in ("w_sq", "w_dk", "w_dv", "w_dq", "w_sk", "w_sv")}
        for pre in ("fuse_d", "proj", "fuse_s"):
            hidden = h if pre == "proj" else C
            width_in = C if pre == "proj" else C + d_k
            out[f"{pre}_w1"] = (width_in, hidden)
            out[f"{pre}_b1"] = (hidden,)
            out[f"{pre}_w2"] = (hidden, C)
            out[f"{pre}_b2"] = (C,)
        return out

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def random(cls, C: int, d_k: int, rng: np.random.Generator, scale: float = 0.1):
        return cls(**{n: rng.uniform(-scale, scale, s) for n, s in cls.shapes(C, d_k).items()})

    @classmethod
    def zeros(cls, C: int, d_k: int):
        return cls(**{n: np.zeros(s) for n, s in cls.shapes(C, d_k).items()})

    @property
    def channels(self) -> int:
        return self.w_sq.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_sq.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.names()}

    def copy(self) -> "AttentionWeights":
        return AttentionWeights(**{n: a.copy() for n, a in self.as_dict().items()})


def _attention_fwd(xq, xkv, wq, wk, wv):
    q, k, v = xq @ wq, xkv @ wk, xkv @ wv
    scale = 1.0 / math.sqrt(wq.shape[1])
    a = softmax_rows((q @ k.T) * scale)
    return a @ v, (xq, xkv, q, k, v, a, scale)


def _attention_bwd(g, cache, wq, wk, wv):
    xq, xkv, q, k, v, a, scale = cache
    da = g @ v.T
    dv = a.T @ g
    dlogits = a * (da - np.sum(da * a, axis=1, keepdims=True)) * scale
    dq = dlogits @ k
    dk = dlogits.T @ q
    grads = (xq.T @ dq, xkv.T @ dk, xkv.T @ dv)
    return dq @ wq.T, dk @ wk.T + dv @ wv.T, grads


def cross_attention(q_src: np.ndarray, kv_src: np.ndarray, wq, wk, wv) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d_k)) V`` with Q from ``q_src``, K and V from ``kv_src``."""
    return _attention_fwd(q_src, kv_src, wq, wk, wv)[0]


def attention_matrix(q_src, kv_src, wq, wk) -> np.ndarray:
    q, k = q_src @ wq, kv_src @ wk
    return softmax_rows((q @ k.T) / math.sqrt(wq.shape[1]))


def _resblock_fwd(x, y, w1, b1, w2, b2):
    z = x if y is None else np.concatenate([x, y], axis=1)
    h = z @ w1 + b1
    p = softplus(h)
    return x + p @ w2 + b2, (z, h, p, x.shape[1])


def _resblock_bwd(g, cache, w1, w2):
    z, h, p, cx = cache
    dp = g @ w2.T
    dh = dp * expit(h)
    dz = dh @ w1.T
    grads = (z.T @ dh, dh.sum(axis=0), p.T @ g, g.sum(axis=0))
    dx = g + dz[:, :cx]
    dy = dz[:, cx:] if dz.shape[1] > cx else None
    return dx, dy, grads


def domain_projection(d_tilde: np.ndarray, w: AttentionWeights) -> np.ndarray:
    return _resblock_fwd(d_tilde, None, w.proj_w1, w.proj_b1, w.proj_w2, w.proj_b2)[0]


def _check_tokens(s_p, d_p, w):
    if s_p.ndim != 2 or s_p.shape != d_p.shape:
        raise ConfigError(f"token shapes differ: {s_p.shape} vs {d_p.shape}")
    if s_p.shape[1] != w.channels:
        raise ConfigError(f"token width {s_p.shape[1]} != weight channels {w.channels}")


def _forward(s_p, d_p, w):
    d1, c_att1 = _attention_fwd(s_p, d_p, w.w_sq, w.w_dk, w.w_dv)
    d_t, c_fd = _resblock_fwd(d_p, d1, w.fuse_d_w1, w.fuse_d_b1, w.fuse_d_w2, w.fuse_d_b2)
    d2, c_pr = _resblock_fwd(d_t, None, w.proj_w1, w.proj_b1, w.proj_w2, w.proj_b2)
    s1, c_att2 = _attention_fwd(d2, s_p, w.w_dq, w.w_sk, w.w_sv)
    f_s, c_fs = _resblock_fwd(s_p, s1, w.fuse_s_w1, w.fuse_s_b1, w.fuse_s_w2, w.fuse_s_b2)
    return f_s, d_t, (c_att1, c_fd, c_pr, c_att2, c_fs)


def bdaf_forward(s_p: np.ndarray, d_p: np.ndarray, w: AttentionWeights):
    """Two-stage fusion; returns ``(enhanced spatial tokens, fused Doppler tokens)``."""
    s_p = np.asarray(s_p, dtype=np.float64)
    d_p = np.asarray(d_p, dtype=np.float64)
    _check_tokens(s_p, d_p, w)
    f_s, d_t, _ = _forward(s_p, d_p, w)
    return f_s, d_t


def bdaf_backward(s_p, d_p, w: AttentionWeights, g_s, g_d):
    """Vector-Jacobian product of :func:`bdaf_forward`.

    ``g_s`` and ``g_d`` are upstream gradients for the two outputs.  Returns
    a dict with one entry per weight plus ``"s_p"`` and ``"d_p"``.
    """
    s_p = np.asarray(s_p, dtype=np.float64)
    d_p = np.asarray(d_p, dtype=np.float64)
    _check_tokens(s_p, d_p, w)
    _, _, (c_att1, c_fd, c_pr, c_att2, c_fs) = _forward(s_p, d_p, w)
    out = {}

    gs_direct, g_s1, gr = _resblock_bwd(np.asarray(g_s, float), c_fs, w.fuse_s_w1, w.fuse_s_w2)
    out.update(zip(("fuse_s_w1", "fuse_s_b1", "fuse_s_w2", "fuse_s_b2"), gr))
    g_d2, gs_kv, gr = _attention_bwd(g_s1, c_att2, w.w_dq, w.w_sk, w.w_sv)
    out.update(zip(("w_dq", "w_sk", "w_sv"), gr))
    g_dt, _, gr = _resblock_bwd(g_d2, c_pr, w.proj_w1, w.proj_w2)
    out.update(zip(("proj_w1", "proj_b1", "proj_w2", "proj_b2"), gr))
    g_dt = g_dt + np.asarray(g_d, float)
    gd_direct, g_d1, gr = _resblock_bwd(g_dt, c_fd, w.fuse_d_w1, w.fuse_d_w2)
    out.update(zip(("fuse_d_w1", "fuse_d_b1", "fuse_d_w2", "fuse_d_b2"), gr))
    gs_q, gd_kv, gr = _attention_bwd(g_d1, c_att1, w.w_sq, w.w_dk, w.w_dv)
    out.update(zip(("w_sq", "w_dk", "w_dv"), gr))

    out["s_p"] = gs_direct + gs_kv + gs_q
    out["d_p"] = gd_direct + gd_kv
    return out


def relative_error(analytic, numeric, floor: float = 1e-5) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def jacobians(s_p, d_p, w: AttentionWeights, step: float = 1e-6):
    """Full output-by-parameter Jacobians, analytic and central-difference.

    Returns ``{name: (analytic, numeric)}`` where each array has shape
    ``(2*L*C, param.size)``; rows stack the spatial output then the Doppler
    output, flattened row-major.
    """
    s_p = np.asarray(s_p, dtype=np.float64)
    d_p = np.asarray(d_p, dtype=np.float64)
    L, C = s_p.shape
    n_out = 2 * L * C
    analytic = {n: np.empty((n_out, a.size)) for n, a in w.as_dict().items()}
    analytic["s_p"] = np.empty((n_out, s_p.size))
    analytic["d_p"] = np.empty((n_out, d_p.size))
    for row in range(n_out):
        g = np.zeros(n_out)
        g[row] = 1.0
        grads = bdaf_backward(s_p, d_p, w, g[: L * C].reshape(L, C), g[L * C :].reshape(L, C))
        for n, gr in grads.items():
            analytic[n][row] = gr.ravel()

    def flat_out(ww, ss, dd):
        f_s, d_t = bdaf_forward(ss, dd, ww)
        return np.concatenate([f_s.ravel(), d_t.ravel()])

    numeric = {}
    for n in analytic:
        if n in ("s_p", "d_p"):
            base = s_p if n == "s_p" else d_p
        else:
            base = getattr(w, n)
        jac = np.empty((n_out, base.size))
        for j in range(base.size):
            plus, minus = base.copy(), base.copy()
            plus.flat[j] += step
            minus.flat[j] -= step
            if n == "s_p":
                hi, lo = flat_out(w, plus, d_p), flat_out(w, minus, d_p)
            elif n == "d_p":
                hi, lo = flat_out(w, s_p, plus), flat_out(w, s_p, minus)
            else:
                wp, wm = w.copy(), w.copy()
                setattr(wp, n, plus)
                setattr(wm, n, minus)
                hi, lo = flat_out(wp, s_p, d_p), flat_out(wm, s_p, d_p)
            jac[:, j] = (hi - lo) / (2 * step)
        numeric[n] = jac
    return {n: (analytic[n], numeric[n]) for n in analytic}


def gradient_check(s_p, d_p, w: AttentionWeights, step: float = 1e-6, floor: float = 1e-5) -> float:
    """Maximum relative error between analytic and finite-difference Jacobians."""
    return max(float(relative_error(a, n, floor).max()) for a, n in jacobians(s_p, d_p, w, step).values())


def weights_to_bytes(w: AttentionWeights, length: int) -> bytes:
    head = _BUNDLE_HEADER.pack(BUNDLE_MAGIC, BUNDLE_VERSION, length, w.channels, w.d_k)
    return head + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in w.as_dict().values())


def weights_from_bytes(buf: bytes) -> tuple[AttentionWeights, int]:
    if len(buf) < _BUNDLE_HEADER.size:
        raise FileFormatError("bundle shorter than header")
    magic, version, length, C, d_k = _BUNDLE_HEADER.unpack_from(buf)
    if magic != BUNDLE_MAGIC:
        raise FileFormatError(f"bad magic {magic!r}")
    if version != BUNDLE_VERSION:
        raise FileFormatError(f"unsupported version {version}")
    offset = _BUNDLE_HEADER.size
    arrays = {}
    for name, shape in AttentionWeights.shapes(C, d_k).items():
        count = int(np.prod(shape))
        if offset + 8 * count > len(buf):
            raise FileFormatError(f"bundle truncated at {name}")
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(buf):
        raise FileFormatError("trailing bytes after last matrix")
    return AttentionWeights(**arrays), length


def write_weights(path, w: AttentionWeights, length: int) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(w, length))


def read_weights(path) -> tuple[AttentionWeights, int]:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())
