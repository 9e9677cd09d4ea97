"""MCformer network and the linear baseline.

Forward pipeline for a batch ``B x L x M``:

1. RevIN-normalize every (sample, channel) series over time.
2. Flatten channels into ``B * M`` single-channel instances.
3. For each instance stack ``m`` further channels picked at interval
   ``M // m`` (the target stays in column 0).
4. Cut the ``L x (m+1)`` block into ``N = (L - p) // S + 2`` patches
   (the series is padded by repeating its last row ``S`` times), flatten each
   patch time-major and project it to width ``P``; add the positional table.
5. Run the transformer encoder over the ``N`` tokens.
6. Map the flattened ``N * P`` encoder output to ``h`` values, unflatten to
   ``B x h x M`` and undo the RevIN normalization.

Token tensors are laid out token-major (``N x P``, one row per token).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import numerics as nx
from .errors import ConfigError, McformerWarning, NumericError, ShapeError
from .numerics import Tensor, tensor_new


@dataclass(frozen=True)
class ModelConfig:
    M: int = 8
    L: int = 96
    h: int = 96
    m: int = 2
    p: int = 16
    S: int = 8
    P: int = 128
    n_heads: int = 4
    n_layers: int = 3
    d_ff: int = 256
    dropout: float = 0.1
    activation: str = "gelu"
    revin_affine: bool = True
    revin_eps: float = 1e-5
    norm_first: bool = False
    ln_eps: float = 1e-5
    seed: int = 0

    def validate(self) -> "ModelConfig":
        for name in ("M", "L", "h", "p", "S", "P", "n_heads", "d_ff"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", key=name)
        if self.n_layers < 0:
            raise ConfigError("must be >= 0", key="n_layers")
        if not 0 <= self.m <= self.M - 1:
            raise ConfigError(f"m must be < M (got m={self.m}, M={self.M})", key="m")
        if not 1 <= self.p <= self.L:
            raise ConfigError(f"p must satisfy 1 <= p <= L (got p={self.p}, L={self.L})", key="p")
        if not 1 <= self.S <= self.p:
            raise ConfigError(f"S must satisfy 1 <= S <= p (got S={self.S}, p={self.p})", key="S")
        if self.P % self.n_heads:
            raise ConfigError(f"P={self.P} is not divisible by n_heads={self.n_heads}", key="P")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("must lie in [0, 1)", key="dropout")
        if self.activation not in ("gelu", "relu"):
            raise ConfigError("must be 'gelu' or 'relu'", key="activation")
        if self.revin_eps <= 0:
            raise ConfigError("must be > 0", key="revin_eps")
        return self

    @property
    def n_tokens(self) -> int:
        return token_count(self.L, self.p, self.S)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", key="model")
        return cls(**d)


@dataclass(frozen=True)
class LinearConfig:
    M: int = 8
    L: int = 96
    h: int = 96
    revin_affine: bool = True
    revin_eps: float = 1e-5
    seed: int = 0

    def validate(self) -> "LinearConfig":
        for name in ("M", "L", "h"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", key=name)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# RevIN


@dataclass
class RevinStats:
    mean: np.ndarray
    var: np.ndarray
    gamma: Optional[Tensor]
    beta: Optional[Tensor]
    eps: float


def revin_normalize(x, gamma=None, beta=None, eps: float = 1e-5):
    """Per-instance, per-channel normalization over the time axis.

    ``x`` is ``(..., L, C)`` (a bare length-``L`` vector is treated as one
    channel). Mean and population variance are taken over ``L`` and treated
    as constants; ``gamma``/``beta`` (length ``C``) apply the learnable affine.
    Returns the normalized tensor and the :class:`RevinStats` for undoing it.
    """
    x = nx.as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(x.shape[0], 1)
    mean = x.data.mean(axis=-2, keepdims=True)
    var = x.data.var(axis=-2, keepdims=True)
    out = (x - mean) * (1.0 / np.sqrt(var + eps))
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    if squeeze:
        out = out.reshape(-1)
    return out, RevinStats(mean, var, gamma, beta, eps)


def revin_denormalize(y, stats: RevinStats):
    """Exact inverse of :func:`revin_normalize` applied to ``y`` (``(..., h, C)``)."""
    y = nx.as_tensor(y)
    squeeze = y.ndim == 1
    if squeeze:
        y = y.reshape(y.shape[0], 1)
    if stats.beta is not None:
        y = y - stats.beta
    if stats.gamma is not None:
        y = y / stats.gamma
    out = y * np.sqrt(stats.var + stats.eps) + stats.mean
    if squeeze:
        out = out.reshape(-1)
    return out


# ---------------------------------------------------------------------------
# Mixed channels and patches


def mixed_channel_indices(M: int, m: int, i: int, warn: bool = True) -> list[int]:
    """Channels stacked for target ``i``: ``(i + k * (M // m)) % M`` for ``k = 0..m``.

    A wraparound duplicate (only possible when ``m`` divides ``M``) is
    replaced by the lowest-index channel not already in the list.
    """
    if M < 1:
        raise ConfigError(f"M must be >= 1, got {M}")
    if not 0 <= m:
        raise ConfigError(f"m must be >= 0, got {m}")
    if m >= M:
        raise ConfigError(f"m must be < M (got m={m}, M={M})")
    if not 0 <= i < M:
        raise ConfigError(f"target channel {i} out of range for M={M}")
    if m == 0:
        return [i]
    step = M // m
    out: list[int] = []
    for k in range(m + 1):
        c = (i + k * step) % M
        if c in out:
            c = min(set(range(M)) - set(out))
            if warn:
                warnings.warn(
                    f"mixed-channel walk wrapped onto channel {(i + k * step) % M} "
                    f"(M={M}, m={m}, i={i}); substituted channel {c}",
                    McformerWarning,
                    stacklevel=2,
                )
        out.append(c)
    return out


def mixing_table(M: int, m: int) -> np.ndarray:
    """``M x (m+1)`` table of mixed-channel indices, one row per target."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", McformerWarning)
        return np.array([mixed_channel_indices(M, m, i) for i in range(M)], dtype=np.intp)


def mix_channels(x, i: int, m: int):
    """Stack target column ``i`` of ``x`` (``(..., L, M)``) with its ``m`` mixed
    companions, giving ``(..., L, m+1)``."""
    x = nx.as_tensor(x)
    idx = mixed_channel_indices(x.shape[-1], m, i)
    return x[(Ellipsis, np.array(idx))]


def mix_all_channels(x, table: np.ndarray):
    """Mixed blocks for every target at once: ``(B, L, M) -> (B, M, L, m+1)``."""
    x = nx.as_tensor(x)
    u = x[:, :, table]  # B x L x M x (m+1)
    return nx.transpose(u, (0, 2, 1, 3))


def token_count(L: int, p: int, S: int) -> int:
    if not 1 <= p <= L:
        raise ConfigError(f"patch length p={p} must satisfy 1 <= p <= L={L}")
    if not 1 <= S:
        raise ConfigError(f"stride S={S} must be >= 1")
    return (L - p) // S + 2


def patch_time_index(L: int, p: int, S: int) -> np.ndarray:
    """``N x p`` row indices into the series padded by ``S`` copies of its last
    row; padding is expressed by clamping to ``L - 1``."""
    N = token_count(L, p, S)
    idx = np.arange(N)[:, None] * S + np.arange(p)[None, :]
    return np.minimum(idx, L - 1)


def patchify_project(U, p: int, S: int, W_proj, b_proj, W_pos):
    """Patch ``U`` (``(..., L, C)``) and project each patch to width ``P``.

    Patch ``n`` covers padded rows ``[n*S, n*S + p)``; its ``p*C`` values are
    flattened time-major (all channels of the first step, then the next ...).
    Returns tokens ``(..., N, P)`` with the positional table ``W_pos`` (``N x P``)
    already added.
    """
    U = nx.as_tensor(U)
    L, C = U.shape[-2], U.shape[-1]
    if p > L:
        raise ConfigError(f"patch length p={p} exceeds L={L}")
    tidx = patch_time_index(L, p, S)
    N = tidx.shape[0]
    patches = U[(Ellipsis, tidx, slice(None))]  # (..., N, p, C)
    patches = patches.reshape(U.shape[:-2] + (N, p * C))
    tokens = patches @ W_proj
    if b_proj is not None:
        tokens = tokens + b_proj
    return tokens + W_pos


# ---------------------------------------------------------------------------
# Encoder


def _activation(name):
    return nx.gelu if name == "gelu" else nx.relu


def multi_head_attention(x, wq, wk, wv, wo, bo, n_heads, dropout=0.0, training=False, rng=None, attn_out=None):
    """Scaled dot-product self-attention over the token axis of ``x`` (``(B, N, P)``)."""
    B, N, P = x.shape
    if P % n_heads:
        raise ShapeError(f"width {P} is not divisible by {n_heads} heads")
    dk = P // n_heads

    def heads(t):
        return nx.transpose(t.reshape(B, N, n_heads, dk), (0, 2, 1, 3))

    q, k, v = heads(x @ wq), heads(x @ wk), heads(x @ wv)
    scores = nx.scale(q @ nx.swapaxes(k, -1, -2), 1.0 / math.sqrt(dk))
    weights = nx.softmax(scores, axis=-1)
    if attn_out is not None:
        attn_out.append(weights.data)
    weights = nx.dropout(weights, dropout, rng, training)
    ctx = nx.transpose(weights @ v, (0, 2, 1, 3)).reshape(B, N, P)
    return ctx @ wo + bo


def encoder_layer(x, lp: dict, cfg: ModelConfig, training=False, rng=None, attn_out=None):
    act = _activation(cfg.activation)

    def attn(t):
        return multi_head_attention(
            t, lp["attn.wq"], lp["attn.wk"], lp["attn.wv"], lp["attn.wo"], lp["attn.bo"],
            cfg.n_heads, cfg.dropout, training, rng, attn_out,
        )

    def ffn(t):
        hdn = nx.dropout(act(t @ lp["ffn.w1"] + lp["ffn.b1"]), cfg.dropout, rng, training)
        return nx.dropout(hdn @ lp["ffn.w2"] + lp["ffn.b2"], cfg.dropout, rng, training)

    def norm(t, which):
        return nx.layer_norm(t, lp[f"{which}.gamma"], lp[f"{which}.beta"], axis=-1, eps=cfg.ln_eps)

    if cfg.norm_first:
        x = x + attn(norm(x, "norm1"))
        return x + ffn(norm(x, "norm2"))
    x = norm(x + attn(x), "norm1")
    return norm(x + ffn(x), "norm2")


def encoder_forward(tokens, params: dict, cfg: ModelConfig, training=False, rng=None, attn_out=None):
    """Apply ``cfg.n_layers`` encoder layers to tokens ``(B, N, P)``."""
    x = nx.as_tensor(tokens)
    if cfg.P % cfg.n_heads:
        raise ShapeError(f"P={cfg.P} is not divisible by n_heads={cfg.n_heads}")
    for layer in range(cfg.n_layers):
        prefix = f"layers.{layer}."
        lp = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
        x = encoder_layer(x, lp, cfg, training, rng, attn_out)
        _check_finite(x, f"encoder layer {layer}")
    return x


# ---------------------------------------------------------------------------
# Parameters


def _seed_for(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every MCformer parameter, in canonical order."""
    M, P, F = cfg.M, cfg.P, cfg.d_ff
    N = cfg.n_tokens
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.revin_affine:
        shapes["revin.gamma"] = (M,)
        shapes["revin.beta"] = (M,)
    shapes["proj.weight"] = (cfg.p * (cfg.m + 1), P)
    shapes["proj.bias"] = (P,)
    shapes["pos"] = (N, P)
    for layer in range(cfg.n_layers):
        pre = f"layers.{layer}."
        for w in ("wq", "wk", "wv", "wo"):
            shapes[pre + f"attn.{w}"] = (P, P)
        shapes[pre + "attn.bo"] = (P,)
        shapes[pre + "ffn.w1"] = (P, F)
        shapes[pre + "ffn.b1"] = (F,)
        shapes[pre + "ffn.w2"] = (F, P)
        shapes[pre + "ffn.b2"] = (P,)
        for n in ("norm1", "norm2"):
            shapes[pre + f"{n}.gamma"] = (P,)
            shapes[pre + f"{n}.beta"] = (P,)
    shapes["head.weight"] = (N * P, cfg.h)
    shapes["head.bias"] = (cfg.h,)
    return shapes


def _init_tensor(name: str, shape, seed: int) -> Tensor:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return tensor_new(shape, "value", value=1.0, requires_grad=True, name=name)
    if leaf in ("beta", "bias") or leaf.startswith("b"):
        return tensor_new(shape, "zeros", requires_grad=True, name=name)
    std = 0.02 if name == "pos" else 1.0 / math.sqrt(shape[0])
    return tensor_new(shape, "normal", seed=seed, std=std, requires_grad=True, name=name)


def init_params(shapes: dict, seed: int) -> dict[str, Tensor]:
    return {name: _init_tensor(name, shape, _seed_for(seed, k)) for k, (name, shape) in enumerate(shapes.items())}


def _check_finite(t: Tensor, where: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values after {where}")


# ---------------------------------------------------------------------------
# Forecast


def forecast(batch, params: dict, cfg: ModelConfig, training=False, rng=None, attn_out=None, table=None):
    """Full MCformer forward: ``B x L x M`` history to ``B x h x M`` forecast."""
    x = nx.as_tensor(batch)
    if x.ndim != 3 or x.shape[1:] != (cfg.L, cfg.M):
        raise ShapeError(f"expected batch shape [B, {cfg.L}, {cfg.M}], got {list(x.shape)}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("non-finite values in input batch")
    B = x.shape[0]
    xn, stats = revin_normalize(x, params.get("revin.gamma"), params.get("revin.beta"), cfg.revin_eps)
    if table is None:
        table = mixing_table(cfg.M, cfg.m)
    U = mix_all_channels(xn, table)  # B x M x L x (m+1)
    tokens = patchify_project(U, cfg.p, cfg.S, params["proj.weight"], params["proj.bias"], params["pos"])
    N = tokens.shape[-2]
    tokens = tokens.reshape(B * cfg.M, N, cfg.P)
    _check_finite(tokens, "patch projection")
    enc = encoder_forward(tokens, params, cfg, training, rng, attn_out)
    out = enc.reshape(B * cfg.M, N * cfg.P) @ params["head.weight"] + params["head.bias"]
    _check_finite(out, "prediction head")
    out = nx.transpose(out.reshape(B, cfg.M, cfg.h), (0, 2, 1))
    y = revin_denormalize(out, stats)
    _check_finite(y, "denormalization")
    return y


class MCformer:
    """Parameter container plus forward for the mixed-channels transformer."""

    kind = "mcformer"

    def __init__(self, config: ModelConfig, params: Optional[dict] = None):
        self.config = config.validate()
        self.shapes = param_shapes(config)
        self.params = params if params is not None else init_params(self.shapes, config.seed)
        self.table = mixing_table(config.M, config.m)

    def forward(self, x, training: bool = False, rng=None, attn_out=None) -> Tensor:
        return forecast(x, self.params, self.config, training, rng, attn_out, self.table)

    def predict(self, x) -> np.ndarray:
        return self.forward(x).data

    def n_params(self) -> int:
        return sum(t.size for t in self.params.values())


def linear_param_shapes(cfg: LinearConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.revin_affine:
        shapes["revin.gamma"] = (cfg.M,)
        shapes["revin.beta"] = (cfg.M,)
    shapes["linear.weight"] = (cfg.L, cfg.h)
    shapes["linear.bias"] = (cfg.h,)
    return shapes


def linear_baseline_forecast(batch, params: dict, cfg: LinearConfig):
    """Shared per-channel linear map ``L -> h`` on RevIN-normalized input."""
    x = nx.as_tensor(batch)
    if x.ndim != 3 or x.shape[1:] != (cfg.L, cfg.M):
        raise ShapeError(f"expected batch shape [B, {cfg.L}, {cfg.M}], got {list(x.shape)}")
    xn, stats = revin_normalize(x, params.get("revin.gamma"), params.get("revin.beta"), cfg.revin_eps)
    out = nx.swapaxes(xn, 1, 2) @ params["linear.weight"] + params["linear.bias"]
    return revin_denormalize(nx.swapaxes(out, 1, 2), stats)


class LinearBaseline:
    kind = "linear"

    def __init__(self, config: LinearConfig, params: Optional[dict] = None):
        self.config = config.validate()
        self.shapes = linear_param_shapes(config)
        self.params = params if params is not None else init_params(self.shapes, config.seed)

    def forward(self, x, training: bool = False, rng=None, attn_out=None) -> Tensor:
        return linear_baseline_forecast(x, self.params, self.config)

    def predict(self, x) -> np.ndarray:
        return self.forward(x).data


def build_model(kind: str, config_dict: dict, params: Optional[dict] = None):
    if kind == "mcformer":
        return MCformer(ModelConfig.from_dict(config_dict), params)
    if kind == "linear":
        return LinearBaseline(LinearConfig(**config_dict), params)
    raise ConfigError(f"unknown model kind {kind!r}")
