"""Small feed-forward network engine: FC, batch-norm and ReLU layers, MSE loss, Adam.

Everything is float64 numpy. Arrays are laid out ``(..., batch, features)``;
batch-norm statistics are taken over the batch axis (-2), so extra leading
axes are treated as independent batches.

Model file layout (all integers little-endian)::

    b"AANETMLP"                 8-byte magic
    uint16 version              currently 1
    uint32 header_len
    header                      UTF-8 JSON: {"spec": ..., "arrays": [[name, shape], ...], "meta": {...}}
    payload                     float64 '<f8' arrays in header order, C order
    uint32 crc32(payload)
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.99
OUTPUT_INIT_RANGE = 3e-3

MAGIC = b"AANETMLP"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


# --------------------------------------------------------------------------
# network layout


@dataclass(frozen=True)
class MLPSpec:
    """Layer list of a network.

    ``trunk`` and each entry of ``heads`` are tuples of ``("fc", out_dim)``,
    ``("bn",)`` or ``("relu",)``. With heads, the trunk output feeds every
    head and the head outputs are concatenated in order.
    """

    input_dim: int
    trunk: tuple
    heads: tuple = ()

    def __post_init__(self):
        streams = [self.trunk] + [tuple(self.trunk) + tuple(h) for h in self.heads]
        if not any(l[0] == "fc" for s in streams for l in s):
            raise ValueError("network needs at least one fully-connected layer")
        for s in streams:
            for layer in s:
                if layer[0] not in ("fc", "bn", "relu"):
                    raise ValueError(f"unknown layer {layer!r}")

    @property
    def output_dim(self) -> int:
        if not self.heads:
            return _stream_dim(self.trunk, self.input_dim)
        trunk_out = _stream_dim(self.trunk, self.input_dim)
        return sum(_stream_dim(h, trunk_out) for h in self.heads)

    def layer_list(self) -> list[tuple[int, tuple, int]]:
        """(stream, layer, in_dim) in declaration order; stream -1 is the trunk."""
        out = []
        dim = self.input_dim
        for layer in self.trunk:
            out.append((-1, tuple(layer), dim))
            dim = layer[1] if layer[0] == "fc" else dim
        trunk_out = dim
        for h, head in enumerate(self.heads):
            dim = trunk_out
            for layer in head:
                out.append((h, tuple(layer), dim))
                dim = layer[1] if layer[0] == "fc" else dim
        return out

    def to_json(self) -> dict:
        return {"input_dim": self.input_dim, "trunk": [list(l) for l in self.trunk], "heads": [[list(l) for l in h] for h in self.heads]}

    @classmethod
    def from_json(cls, d: dict) -> MLPSpec:
        conv = lambda layers: tuple(tuple(l) for l in layers)  # noqa: E731
        return cls(int(d["input_dim"]), conv(d["trunk"]), tuple(conv(h) for h in d["heads"]))


def _stream_dim(layers, dim):
    for layer in layers:
        if layer[0] == "fc":
            dim = layer[1]
    return dim


def so_spec(K: int = 10, hidden: int = 100) -> MLPSpec:
    """Input BN, two FC-BN-ReLU blocks, linear output of K delays."""
    return MLPSpec(
        3 * (K + 2),
        (("bn",), ("fc", hidden), ("bn",), ("relu",), ("fc", hidden), ("bn",), ("relu",), ("fc", K)),
    )


def mo_spec(K: int = 40, trunk: int = 300, stream: int = 100) -> MLPSpec:
    """Shared trunk, then delay / capacity / lifetime streams of K outputs each."""
    head = (("fc", stream), ("bn",), ("relu",), ("fc", K))
    return MLPSpec(
        5 * (K + 2) + 2,
        (("bn",), ("fc", trunk), ("bn",), ("relu",), ("fc", trunk), ("bn",), ("relu",)),
        (head, head, head),
    )


# --------------------------------------------------------------------------
# parameters


@dataclass
class MLPParams:
    spec: MLPSpec
    layers: list[dict[str, np.ndarray]]

    def trainable(self) -> list[tuple[int, str]]:
        """(layer index, name) of every trainable array, in declaration order."""
        out = []
        for li, (_, layer, _) in enumerate(self.spec.layer_list()):
            if layer[0] == "fc":
                out += [(li, "W"), (li, "b")]
            elif layer[0] == "bn":
                out += [(li, "gamma"), (li, "beta")]
        return out

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every stored array (trainable and running moments) in declaration order."""
        out = []
        for li, d in enumerate(self.layers):
            for name in ("W", "b", "gamma", "beta", "mean", "var"):
                if name in d:
                    out.append((f"{li}.{name}", d[name]))
        return out

    def n_trainable(self) -> int:
        return sum(self.layers[li][name].size for li, name in self.trainable())

    def copy(self) -> MLPParams:
        return MLPParams(self.spec, [{k: v.copy() for k, v in d.items()} for d in self.layers])


def _output_fc_indices(spec: MLPSpec) -> set[int]:
    last = {}
    for li, (stream, layer, _) in enumerate(spec.layer_list()):
        if layer[0] == "fc":
            last[stream] = li
    if spec.heads:
        last.pop(-1, None)
    return set(last.values())


def init(spec: MLPSpec, seed: int) -> MLPParams:
    """He-normal hidden FC weights (zero bias); output FC weights and biases U[-3e-3, 3e-3]."""
    rng = np.random.default_rng(seed)
    outputs = _output_fc_indices(spec)
    layers = []
    for li, (_, layer, dim) in enumerate(spec.layer_list()):
        if layer[0] == "fc":
            out = layer[1]
            if li in outputs:
                W = rng.uniform(-OUTPUT_INIT_RANGE, OUTPUT_INIT_RANGE, size=(out, dim))
                b = rng.uniform(-OUTPUT_INIT_RANGE, OUTPUT_INIT_RANGE, size=out)
            else:
                W = rng.normal(0.0, np.sqrt(2.0 / dim), size=(out, dim))
                b = np.zeros(out)
            layers.append({"W": W, "b": b})
        elif layer[0] == "bn":
            layers.append({"gamma": np.ones(dim), "beta": np.zeros(dim), "mean": np.zeros(dim), "var": np.ones(dim)})
        else:
            layers.append({})
    return MLPParams(spec, layers)


# --------------------------------------------------------------------------
# forward / backward


def _run(params: MLPParams, x: np.ndarray, train: bool, update_stats: bool, cache: list | None):
    spec = params.spec
    todo = spec.layer_list()
    trunk_n = len(spec.trunk)
    h = _run_stream(params, range(trunk_n), todo, x, train, update_stats, cache)
    if not spec.heads:
        return h
    outs = []
    start = trunk_n
    for head in spec.heads:
        idx = range(start, start + len(head))
        outs.append(_run_stream(params, idx, todo, h, train, update_stats, cache))
        start += len(head)
    return np.concatenate(outs, axis=-1)


def _run_stream(params, indices, todo, h, train, update_stats, cache):
    for li in indices:
        kind = todo[li][1][0]
        p = params.layers[li]
        if kind == "fc":
            if cache is not None:
                cache.append((li, "fc", h))
            h = h @ p["W"].T + p["b"]
        elif kind == "bn":
            if train:
                n = h.shape[-2]
                if n < 2:
                    raise ValueError("training-mode batch norm needs at least 2 rows")
                mu = h.mean(axis=-2, keepdims=True)
                var = h.var(axis=-2, keepdims=True)
                if update_stats:
                    m = BN_MOMENTUM
                    bm = mu.reshape(-1, mu.shape[-1]).mean(axis=0)
                    bv = var.reshape(-1, var.shape[-1]).mean(axis=0) * n / (n - 1)
                    p["mean"] = m * p["mean"] + (1 - m) * bm
                    p["var"] = m * p["var"] + (1 - m) * bv
            else:
                mu, var = p["mean"], p["var"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (h - mu) * inv
            if cache is not None:
                cache.append((li, "bn", (xhat, inv)))
            h = p["gamma"] * xhat + p["beta"]
        else:
            if cache is not None:
                cache.append((li, "relu", h > 0))
            h = np.maximum(h, 0.0)
    return h


def forward(params: MLPParams, batch: np.ndarray, mode: str = "infer", update_stats: bool = True) -> np.ndarray:
    """Network output. ``mode`` is "train" (batch moments) or "infer" (running moments)."""
    batch = np.asarray(batch, dtype=float)
    if batch.shape[-1] != params.spec.input_dim:
        raise ValueError(f"input width {batch.shape[-1]} != {params.spec.input_dim}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    return _run(params, batch, mode == "train", update_stats, None)


def loss_mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    n = mask.sum()
    if n == 0:
        raise ValueError("loss over an empty mask")
    diff = np.where(mask, pred - target, 0.0)
    return float((diff**2).sum() / n)


def backward(params: MLPParams, batch, target, mask=None, update_stats: bool = False):
    """Training-mode loss and exact gradients of every trainable array.

    Returns ``(loss, grads)`` with ``grads[(layer, name)]`` shaped like the parameter.
    """
    batch = np.asarray(batch, dtype=float)
    target = np.asarray(target, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != params.spec.input_dim:
        raise ValueError(f"batch shape {batch.shape} does not match input_dim {params.spec.input_dim}")
    cache: list = []
    pred = _run(params, batch, True, update_stats, cache)
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    if target.shape != pred.shape:
        raise ValueError(f"target shape {target.shape} != output shape {pred.shape}")
    n = mask.sum()
    if n == 0:
        raise ValueError("loss over an empty mask")
    diff = np.where(mask, pred - target, 0.0)
    loss = float((diff**2).sum() / n)
    dout = 2.0 * diff / n

    spec = params.spec
    by_layer = {li: (kind, val) for li, kind, val in cache}
    grads = {}
    trunk_n = len(spec.trunk)
    if spec.heads:
        dtrunk = 0.0
        start = trunk_n
        col = 0
        for head in spec.heads:
            width = _stream_dim(head, 0)
            idx = range(start, start + len(head))
            dtrunk = dtrunk + _back_stream(params, idx, by_layer, dout[:, col : col + width], grads)
            start += len(head)
            col += width
        _back_stream(params, range(trunk_n), by_layer, dtrunk, grads)
    else:
        _back_stream(params, range(trunk_n), by_layer, dout, grads)
    return loss, grads


def _back_stream(params, indices, by_layer, g, grads):
    for li in reversed(list(indices)):
        kind, val = by_layer[li]
        p = params.layers[li]
        if kind == "fc":
            x = val
            grads[(li, "W")] = g.T @ x
            grads[(li, "b")] = g.sum(axis=0)
            g = g @ p["W"]
        elif kind == "bn":
            xhat, inv = val
            grads[(li, "gamma")] = (g * xhat).sum(axis=0)
            grads[(li, "beta")] = g.sum(axis=0)
            dxhat = g * p["gamma"]
            n = g.shape[0]
            g = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            g = g * val
    return g


# --------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: MLPParams, grads: dict, state: AdamState) -> None:
    """In-place bias-corrected Adam update of ``params``."""
    state.step += 1
    t = state.step
    for key, g in grads.items():
        li, name = key
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
        v = state.v[key]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        params.layers[li][name] -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class TrainResult:
    params: MLPParams
    losses: list[float]


def train(
    spec: MLPSpec,
    x: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray | None = None,
    iters: int = 2000,
    batch: int = 1000,
    lr: float = 1e-3,
    seed: int = 0,
    params: MLPParams | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Mini-batch Adam on the masked MSE; reshuffles every epoch."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise ValueError("empty training set")
    if mask is None:
        mask = np.ones(y.shape, dtype=bool)
    rng = np.random.default_rng(seed)
    params = init(spec, int(rng.integers(2**31))) if params is None else params
    state = AdamState(lr=lr)
    bs = min(batch, len(x))
    order = rng.permutation(len(x))
    pos = 0
    losses = []
    for it in range(iters):
        if pos + bs > len(x):
            order = rng.permutation(len(x))
            pos = 0
        idx = order[pos : pos + bs]
        pos += bs
        mb = mask[idx]
        if not mb.any():
            continue
        loss, grads = backward(params, x[idx], y[idx], mb, update_stats=True)
        adam_step(params, grads, state)
        losses.append(loss)
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d loss %.6g", it + 1, loss)
    return TrainResult(params, losses)


# --------------------------------------------------------------------------
# serialization


def save_model(params: MLPParams, path, meta: dict | None = None) -> None:
    arrays = params.arrays()
    header = json.dumps(
        {"spec": params.spec.to_json(), "arrays": [[name, list(a.shape)] for name, a in arrays], "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_model(path) -> tuple[MLPParams, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ModelFileError(f"{path}: not a model file")
    if len(blob) < 14:
        raise ModelFileError(f"{path}: truncated header")
    version, hlen = struct.unpack("<HI", blob[8:14])
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(blob[14 : 14 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupt header ({exc})") from None
    spec = MLPSpec.from_json(header["spec"])
    sizes = [int(np.prod(shape)) for _, shape in header["arrays"]]
    start = 14 + hlen
    end = start + 8 * sum(sizes)
    if len(blob) != end + 4:
        raise ModelFileError(f"{path}: expected {end + 4} bytes, found {len(blob)} (truncated or padded)")
    payload = blob[start:end]
    if struct.unpack("<I", blob[end:])[0] != zlib.crc32(payload):
        raise ModelFileError(f"{path}: checksum mismatch")
    params = init(spec, 0)
    flat = np.frombuffer(payload, dtype="<f8")
    off = 0
    for (name, shape), size in zip(header["arrays"], sizes):
        li, key = name.split(".")
        params.layers[int(li)][key] = flat[off : off + size].reshape(shape).astype(float)
        off += size
    return params, header["meta"]
