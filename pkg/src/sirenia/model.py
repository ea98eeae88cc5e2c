"""Spectrogram transformer with exact hand-written reverse-mode gradients.

Architecture: overlapping 16x16 patches (stride 10) of the (64, 128)
feature are linearly projected into tokens; a trainable classification
token is prepended and a trainable positional embedding added; pre-norm
encoder blocks (multi-head self-attention + GELU MLP, both residual)
feed a final layer norm whose classification-token output goes through a
linear head and a sigmoid. Full size (768 wide, 12 layers, 12 heads)
is expressible; the desk default is 64/2/4.

Forward/backward operate on whole batches in float64. The backward pass
is checked against central finite differences parameter by parameter in
the test suite, so every formula here is load-bearing.
"""

from __future__ import annotations

import json
import math
import os
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError, StateError
from .features import FEATURE_SHAPE, FilterbankFeature

CHECKPOINT_VERSION = 1
LN_EPS = 1e-5
SCORE_CLAMP = 1e-7
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple = FEATURE_SHAPE
    patch_size: tuple = (16, 16)
    stride: tuple = (10, 10)
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    mlp_ratio: int = 4
    head_layers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "patch_size", tuple(self.patch_size))
        object.__setattr__(self, "stride", tuple(self.stride))
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        for name, value in (("n_layers", self.n_layers), ("head_layers", self.head_layers)):
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        h, w = self.input_shape
        (ph, pw), (sh, sw) = self.patch_size, self.stride
        if ph > h or pw > w:
            raise ValueError(f"patch {self.patch_size} larger than input {self.input_shape}")
        if sh < 1 or sw < 1:
            raise ValueError(f"strides must be >= 1, got {self.stride}")

    @property
    def patch_grid(self) -> tuple:
        h, w = self.input_shape
        (ph, pw), (sh, sw) = self.patch_size, self.stride
        return ((h - ph) // sh + 1, (w - pw) // sw + 1)

    @property
    def n_patches(self) -> int:
        nf, nt = self.patch_grid
        return nf * nt

    @property
    def patch_dim(self) -> int:
        return self.patch_size[0] * self.patch_size[1]

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads


def parameter_shapes(config: ModelConfig) -> dict:
    """Name -> shape for every learnable tensor, in canonical order."""
    d, n = config.embed_dim, config.n_patches
    shapes = {
        "patch.w": (config.patch_dim, d),
        "patch.b": (d,),
        "cls": (d,),
        "pos": (n + 1, d),
    }
    for i in range(config.n_layers):
        p = f"layer{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.bq"] = (d,)
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.bk"] = (d,)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.bv"] = (d,)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "attn.bo"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "mlp.w1"] = (d, config.mlp_ratio * d)
        shapes[p + "mlp.b1"] = (config.mlp_ratio * d,)
        shapes[p + "mlp.w2"] = (config.mlp_ratio * d, d)
        shapes[p + "mlp.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    width = d
    for j in range(config.head_layers):
        out = 1 if j == config.head_layers - 1 else d
        shapes[f"head{j}.w"] = (width, out)
        shapes[f"head{j}.b"] = (out,)
        width = out
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def init_params(config: ModelConfig, seed: int = 0) -> dict:
    """Truncated-normal (std 0.02, clipped at 2 sigma) projections; zero
    biases and norm offsets; unit norm scales."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2"):
            params[name] = np.zeros(shape)
        elif leaf == "g":
            params[name] = np.ones(shape)
        else:
            draw = rng.normal(0.0, 0.02, size=shape)
            params[name] = np.clip(draw, -0.04, 0.04)
    return params


def patchify(feature: FilterbankFeature, config: ModelConfig | None = None) -> np.ndarray:
    """(N, patch_dim) patch matrix in frequency-major order."""
    if not feature.normalized:
        raise StateError("patchify requires a normalized feature")
    config = config or ModelConfig()
    return _patchify_batch(feature.values[None], config)[0]


def _patchify_batch(x: np.ndarray, config: ModelConfig) -> np.ndarray:
    (ph, pw), (sh, sw) = config.patch_size, config.stride
    nf, nt = config.patch_grid
    view = np.lib.stride_tricks.sliding_window_view(x, (ph, pw), axis=(1, 2))
    return view[:, ::sh, ::sw].reshape(x.shape[0], nf * nt, ph * pw)


def _gelu(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def _gelu_grad(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)


def _layer_norm(x, g, b):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = centered * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_grad(dy, g, cache):
    xhat, inv = cache
    d = xhat.shape[-1]
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv / d * (d * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dg, db


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(x, where: str):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values produced in {where}")


def forward_batch(params: dict, x: np.ndarray, config: ModelConfig, want_cache: bool = True):
    """Scores for a batch of normalized feature matrices (B, 64, 128).

    Returns (scores, cache); the cache carries every intermediate the
    backward pass needs, plus per-layer attention probabilities.
    """
    b = x.shape[0]
    n_heads, head_dim = config.n_heads, config.head_dim
    patches = _patchify_batch(x, config)
    tokens = patches @ params["patch.w"] + params["patch.b"]
    tokens = np.concatenate([np.broadcast_to(params["cls"], (b, 1, config.embed_dim)), tokens], axis=1)
    h = tokens + params["pos"]
    _check_finite(h, "patch embedding")

    layer_caches = []
    for i in range(config.n_layers):
        p = f"layer{i}."
        x_in = h
        normed1, ln1_cache = _layer_norm(x_in, params[p + "ln1.g"], params[p + "ln1.b"])
        q = normed1 @ params[p + "attn.wq"] + params[p + "attn.bq"]
        k = normed1 @ params[p + "attn.wk"] + params[p + "attn.bk"]
        v = normed1 @ params[p + "attn.wv"] + params[p + "attn.bv"]
        t = q.shape[1]

        def heads(m):
            return m.reshape(b, t, n_heads, head_dim).transpose(0, 2, 1, 3)

        qh, kh, vh = heads(q), heads(k), heads(v)
        scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(head_dim)
        attn = _softmax(scores)
        ctx = attn @ vh
        ctx_merged = ctx.transpose(0, 2, 1, 3).reshape(b, t, config.embed_dim)
        attn_out = ctx_merged @ params[p + "attn.wo"] + params[p + "attn.bo"]
        h_mid = x_in + attn_out
        _check_finite(h_mid, f"layer {i} attention")

        normed2, ln2_cache = _layer_norm(h_mid, params[p + "ln2.g"], params[p + "ln2.b"])
        pre_act = normed2 @ params[p + "mlp.w1"] + params[p + "mlp.b1"]
        act = _gelu(pre_act)
        mlp_out = act @ params[p + "mlp.w2"] + params[p + "mlp.b2"]
        h = h_mid + mlp_out
        _check_finite(h, f"layer {i} mlp")

        if want_cache:
            layer_caches.append(
                dict(
                    x_in=x_in, normed1=normed1, ln1=ln1_cache, qh=qh, kh=kh, vh=vh,
                    attn=attn, ctx_merged=ctx_merged, h_mid=h_mid, normed2=normed2,
                    ln2=ln2_cache, pre_act=pre_act, act=act,
                )
            )
        else:
            layer_caches.append(dict(attn=attn))

    final, final_cache = _layer_norm(h, params["final_ln.g"], params["final_ln.b"])
    cls_out = final[:, 0, :]
    head_caches = []
    y = cls_out
    for j in range(config.head_layers):
        pre = y @ params[f"head{j}.w"] + params[f"head{j}.b"]
        if j < config.head_layers - 1:
            head_caches.append((y, pre))
            y = _gelu(pre)
        else:
            head_caches.append((y, pre))
    logits = pre[:, 0]
    _check_finite(logits, "classifier head")
    scores_out = sigmoid(logits)

    cache = dict(
        patches=patches, layers=layer_caches, final_ln=final_cache, final=final,
        head=head_caches, logits=logits, scores=scores_out,
    ) if want_cache else dict(layers=layer_caches, logits=logits, scores=scores_out)
    return scores_out, cache


def backward_batch(params: dict, x: np.ndarray, dlogits: np.ndarray, config: ModelConfig, cache: dict) -> dict:
    """Gradients for every parameter given d(loss)/d(logit) per sample."""
    b = x.shape[0]
    n_heads, head_dim = config.n_heads, config.head_dim
    grads = {}

    dy = dlogits[:, None]
    for j in reversed(range(config.head_layers)):
        y_in, pre = cache["head"][j]
        if j < config.head_layers - 1:
            dy = dy * _gelu_grad(pre)
        grads[f"head{j}.w"] = y_in.T @ dy
        grads[f"head{j}.b"] = dy.sum(axis=0)
        dy = dy @ params[f"head{j}.w"].T

    dfinal = np.zeros_like(cache["final"])
    dfinal[:, 0, :] = dy
    dh, dg, db = _layer_norm_grad(dfinal, params["final_ln.g"], cache["final_ln"])
    grads["final_ln.g"] = dg
    grads["final_ln.b"] = db

    for i in reversed(range(config.n_layers)):
        p = f"layer{i}."
        c = cache["layers"][i]
        t = c["normed1"].shape[1]

        # MLP branch: h = h_mid + act @ w2 + b2
        dmlp_out = dh
        grads[p + "mlp.w2"] = c["act"].reshape(-1, c["act"].shape[-1]).T @ dmlp_out.reshape(-1, dmlp_out.shape[-1])
        grads[p + "mlp.b2"] = dmlp_out.sum(axis=(0, 1))
        dact = dmlp_out @ params[p + "mlp.w2"].T
        dpre = dact * _gelu_grad(c["pre_act"])
        grads[p + "mlp.w1"] = c["normed2"].reshape(-1, c["normed2"].shape[-1]).T @ dpre.reshape(-1, dpre.shape[-1])
        grads[p + "mlp.b1"] = dpre.sum(axis=(0, 1))
        dnormed2 = dpre @ params[p + "mlp.w1"].T
        dh_mid_from_ln, dg2, db2 = _layer_norm_grad(dnormed2, params[p + "ln2.g"], c["ln2"])
        grads[p + "ln2.g"] = dg2
        grads[p + "ln2.b"] = db2
        dh_mid = dh + dh_mid_from_ln  # residual

        # attention branch: h_mid = x_in + (ctx_merged @ wo + bo)
        dattn_out = dh_mid
        grads[p + "attn.wo"] = c["ctx_merged"].reshape(-1, config.embed_dim).T @ dattn_out.reshape(-1, config.embed_dim)
        grads[p + "attn.bo"] = dattn_out.sum(axis=(0, 1))
        dctx_merged = dattn_out @ params[p + "attn.wo"].T
        dctx = dctx_merged.reshape(b, t, n_heads, head_dim).transpose(0, 2, 1, 3)

        dattn = dctx @ c["vh"].transpose(0, 1, 3, 2)
        dvh = c["attn"].transpose(0, 1, 3, 2) @ dctx
        # softmax rows: dS = (dA - sum(dA*A)) * A
        dscores = (dattn - (dattn * c["attn"]).sum(-1, keepdims=True)) * c["attn"]
        dscores /= math.sqrt(head_dim)
        dqh = dscores @ c["kh"]
        dkh = dscores.transpose(0, 1, 3, 2) @ c["qh"]

        def merge(m):
            return m.transpose(0, 2, 1, 3).reshape(b, t, config.embed_dim)

        dq, dk, dv = merge(dqh), merge(dkh), merge(dvh)
        normed1_flat = c["normed1"].reshape(-1, config.embed_dim)
        grads[p + "attn.wq"] = normed1_flat.T @ dq.reshape(-1, config.embed_dim)
        grads[p + "attn.bq"] = dq.sum(axis=(0, 1))
        grads[p + "attn.wk"] = normed1_flat.T @ dk.reshape(-1, config.embed_dim)
        grads[p + "attn.bk"] = dk.sum(axis=(0, 1))
        grads[p + "attn.wv"] = normed1_flat.T @ dv.reshape(-1, config.embed_dim)
        grads[p + "attn.bv"] = dv.sum(axis=(0, 1))
        dnormed1 = dq @ params[p + "attn.wq"].T + dk @ params[p + "attn.wk"].T + dv @ params[p + "attn.wv"].T
        dx_from_ln, dg1, db1 = _layer_norm_grad(dnormed1, params[p + "ln1.g"], c["ln1"])
        grads[p + "ln1.g"] = dg1
        grads[p + "ln1.b"] = db1
        dh = dh_mid + dx_from_ln  # residual

    grads["pos"] = dh.sum(axis=0)
    grads["cls"] = dh[:, 0, :].sum(axis=0)
    dtokens = dh[:, 1:, :]
    patches = cache["patches"]
    grads["patch.w"] = patches.reshape(-1, config.patch_dim).T @ dtokens.reshape(-1, config.embed_dim)
    grads["patch.b"] = dtokens.sum(axis=(0, 1))
    return grads


def forward(params: dict, feature: FilterbankFeature, config: ModelConfig | None = None) -> float:
    """Score in (0, 1) for one normalized feature."""
    config = config or ModelConfig()
    if not feature.normalized:
        raise StateError("forward requires a normalized feature")
    scores, _ = forward_batch(params, feature.values[None], config, want_cache=False)
    return float(scores[0])


def loss(score: float, label: int, w_pos: float = 1.0, w_neg: float = 1.0) -> float:
    """Class-weighted binary cross-entropy on a clamped score."""
    s = min(max(float(score), SCORE_CLAMP), 1.0 - SCORE_CLAMP)
    return -(w_pos * label * math.log(s) + w_neg * (1 - label) * math.log(1.0 - s))


def loss_batch(scores: np.ndarray, labels: np.ndarray, w_pos: float, w_neg: float):
    """Mean weighted BCE and d(mean loss)/d(logit) for a batch.

    d loss/d logit = w * (score - label) for the active class weight, which
    the clamp never bends at trainable operating points.
    """
    s = np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    per = -(w_pos * labels * np.log(s) + w_neg * (1 - labels) * np.log(1.0 - s))
    w = np.where(labels == 1, w_pos, w_neg)
    inside = (scores > SCORE_CLAMP) & (scores < 1.0 - SCORE_CLAMP)
    dlogits = w * (s - labels) * inside / len(scores)
    return float(per.mean()), dlogits


def backward(
    params: dict,
    feature: FilterbankFeature,
    label: int,
    weights: tuple = (1.0, 1.0),
    config: ModelConfig | None = None,
) -> dict:
    """Exact gradients of loss(forward(feature), label) for every parameter."""
    config = config or ModelConfig()
    if not feature.normalized:
        raise StateError("backward requires a normalized feature")
    x = feature.values[None]
    scores, cache = forward_batch(params, x, config, want_cache=True)
    _, dlogits = loss_batch(scores, np.array([float(label)]), weights[0], weights[1])
    return backward_batch(params, x, dlogits, config, cache)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    weight_decay: float = 5e-7,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Bias-corrected Adam with decoupled weight decay (applied before the
    Adam delta). Mutates and returns (params, state)."""
    state.step += 1
    t = state.step
    for k, p in params.items():
        g = grads[k]
        if weight_decay:
            p -= lr * weight_decay * p
        state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1 - beta2) * (g * g)
        m_hat = state.m[k] / (1 - beta1**t)
        v_hat = state.v[k] / (1 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def lr_at_epoch(base: float = 1e-6, epoch: int = 0) -> float:
    """base * 0.5^floor(epoch / 5): halve the rate every 5 epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base * 0.5 ** (epoch // 5)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    opt_state: AdamState
    epoch: int = 0
    norm_stats: tuple | None = None  # (mean, std) the model expects

    def score_batch(self, x: np.ndarray) -> np.ndarray:
        scores, _ = forward_batch(self.params, x, self.config, want_cache=False)
        return scores


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Bit-exact .npz round-trip of parameters and optimizer state."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(ckpt.config),
        "epoch": ckpt.epoch,
        "step": ckpt.opt_state.step,
        "norm_stats": list(ckpt.norm_stats) if ckpt.norm_stats else None,
        "param_names": list(ckpt.params.keys()),
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)}
    for k, p in ckpt.params.items():
        arrays["p:" + k] = p
        arrays["m:" + k] = ckpt.opt_state.m[k]
        arrays["v:" + k] = ckpt.opt_state.v[k]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path) as data:
            header = json.loads(bytes(data["__header__"]).decode("utf-8"))
            if header.get("version") != CHECKPOINT_VERSION:
                raise FormatError(
                    f"{path}: checkpoint version {header.get('version')!r}, "
                    f"this build reads version {CHECKPOINT_VERSION}"
                )
            cfg_doc = header["config"]
            config = ModelConfig(
                input_shape=tuple(cfg_doc["input_shape"]),
                patch_size=tuple(cfg_doc["patch_size"]),
                stride=tuple(cfg_doc["stride"]),
                embed_dim=cfg_doc["embed_dim"],
                n_layers=cfg_doc["n_layers"],
                n_heads=cfg_doc["n_heads"],
                mlp_ratio=cfg_doc["mlp_ratio"],
                head_layers=cfg_doc.get("head_layers", 1),
            )
            params, m, v = {}, {}, {}
            for k in header["param_names"]:
                params[k] = data["p:" + k]
                m[k] = data["m:" + k]
                v[k] = data["v:" + k]
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError, EOFError) as e:
        if isinstance(e, FileNotFoundError):
            raise
        raise FormatError(f"{path}: unreadable or truncated checkpoint ({e})") from None
    expected = parameter_shapes(config)
    for k, shape in expected.items():
        if k not in params:
            raise FormatError(f"{path}: checkpoint missing parameter {k}")
        if params[k].shape != shape:
            raise FormatError(
                f"{path}: parameter {k} has shape {params[k].shape}, "
                f"config implies {shape}"
            )
    norm_stats = header.get("norm_stats")
    return Checkpoint(
        config=config,
        params=params,
        opt_state=AdamState(m=m, v=v, step=int(header["step"])),
        epoch=int(header["epoch"]),
        norm_stats=tuple(norm_stats) if norm_stats else None,
    )


def check_compatible(ckpt: Checkpoint, config: ModelConfig) -> None:
    """Raise when a checkpoint's architecture differs from the requested one."""
    if ckpt.config.embed_dim != config.embed_dim:
        raise FormatError(
            f"checkpoint embed_dim {ckpt.config.embed_dim} != requested {config.embed_dim}"
        )
    if ckpt.config != config:
        raise FormatError(f"checkpoint config {ckpt.config} != requested {config}")
