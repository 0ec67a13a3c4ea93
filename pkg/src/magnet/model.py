"""Multi-level attention graph network for bin-resolution expression prediction.

Forward pass, per graph node (bin):

1. encode the bin, spot and region patch inputs to width ``d``;
2. fuse spot and region context into the bin feature with cross-attention
   (query from the bin, keys/values from the other level) and concatenate
   the three streams;
3. project each level's features to the graph width ``heads * head_dim``
   and run them through a shared block of multi-head graph-attention rounds
   followed by a transformer layer that aggregates the per-round outputs;
4. map each level through its own affine regression head.

All computations go through :mod:`magnet.autodiff`, so gradients of any
scalar built from the outputs are available via :meth:`MagNet.backward`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tensor, as_tensor, concat, elu, gelu, leaky_relu, softmax, stack, take
from .errors import ConfigurationError, InvalidArgumentError, InvalidDataError, NumericError, StateError
from .graph import SpatialGraph

ENCODER_KINDS = ("precomputed", "builtin-mlp", "builtin-smallconv")
AGGREGATE_MODES = ("rounds", "neighbors")
LEVELS = ("bin", "spot", "region")
GAT_SLOPE = 0.2
LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderSpec:
    kind: str
    input_dim: int
    output_dim: int
    trainable: bool
    hidden_dim: int = 32
    patch_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigurationError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "precomputed" and self.input_dim != self.output_dim:
            raise ConfigurationError(
                f"precomputed features have width {self.input_dim} but the model expects d={self.output_dim}")
        if self.kind == "builtin-smallconv":
            if self.patch_shape is None or int(np.prod(self.patch_shape)) != self.input_dim:
                raise ConfigurationError(
                    f"patch_shape {self.patch_shape} does not match input width {self.input_dim}")


@dataclass(frozen=True)
class ModelConfig:
    n_genes: int
    input_dims: tuple[int, int, int]  # bin, spot, region
    d: int = 16
    heads: int = 2
    head_dim: int = 8
    rounds: int = 2
    encoders: tuple[str, str, str] = ("builtin-mlp", "builtin-mlp", "builtin-mlp")
    encoder_hidden: int = 32
    patch_shape: tuple[int, int, int] | None = None
    ffn_mult: int = 2
    residual: bool = True
    multires: bool = True
    use_gat: bool = True
    aggregate: str = "rounds"
    target_level: str = "bin"

    def __post_init__(self):
        for name in ("n_genes", "d", "heads", "head_dim", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.rounds < 0:
            raise ConfigurationError("rounds must be >= 0")
        if self.aggregate not in AGGREGATE_MODES:
            raise ConfigurationError(f"aggregate must be one of {AGGREGATE_MODES}")
        if self.target_level not in ("bin", "spot"):
            raise ConfigurationError("target_level must be 'bin' or 'spot'")
        if self.target_level == "spot" and not self.multires:
            raise ConfigurationError("spot-level training needs the multi-resolution paths")
        object.__setattr__(self, "input_dims", tuple(int(x) for x in self.input_dims))
        object.__setattr__(self, "encoders", tuple(self.encoders))
        if self.patch_shape is not None:
            object.__setattr__(self, "patch_shape", tuple(int(x) for x in self.patch_shape))
        for level in LEVELS:
            self.encoder_spec(level)

    @property
    def width(self) -> int:
        return self.heads * self.head_dim

    @property
    def levels(self) -> tuple[str, ...]:
        return LEVELS if self.multires else ("bin",)

    def encoder_spec(self, level: str) -> EncoderSpec:
        i = LEVELS.index(level)
        return EncoderSpec(
            kind=self.encoders[i], input_dim=self.input_dims[i], output_dim=self.d,
            trainable=level == self.target_level, hidden_dim=self.encoder_hidden,
            patch_shape=self.patch_shape,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        d = dict(d)
        for key in ("input_dims", "encoders", "patch_shape"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


# --------------------------------------------------------------------------
# Building blocks
# --------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gamma + beta


def _conv_index(patch_shape: tuple[int, int, int]) -> np.ndarray:
    """Gather table turning a flat ``C*H*W`` patch (plus a trailing zero) into 3x3 columns."""
    c, h, w = patch_shape
    pad = c * h * w
    idx = np.full((h * w, c * 9), pad, dtype=np.intp)
    for y in range(h):
        for x in range(w):
            col = 0
            for ch in range(c):
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w:
                            idx[y * w + x, col] = ch * h * w + yy * w + xx
                        col += 1
    return idx


def encode(x, params: Mapping[str, Tensor], spec: EncoderSpec, prefix: str) -> Tensor:
    """Map raw level inputs ``[..., input_dim]`` to features ``[..., d]``."""
    x = as_tensor(x)
    if x.shape[-1] != spec.input_dim:
        raise ConfigurationError(
            f"{prefix}: inputs have width {x.shape[-1]}, encoder expects {spec.input_dim}")
    if spec.kind == "precomputed":
        return x
    if spec.kind == "builtin-mlp":
        h = elu(x @ params[f"{prefix}.W1"] + params[f"{prefix}.b1"])
        return h @ params[f"{prefix}.W2"] + params[f"{prefix}.b2"]
    lead = x.shape[:-1]
    flat = x.reshape(-1, spec.input_dim)
    flat = concat([flat, Tensor(np.zeros((flat.shape[0], 1), dtype=x.dtype))], axis=1)
    cols = take(flat, _conv_index(spec.patch_shape), axis=1)  # [N, HW, C*9]
    h = elu(cols @ params[f"{prefix}.Wc"] + params[f"{prefix}.bc"]).mean(axis=1)
    out = h @ params[f"{prefix}.W2"] + params[f"{prefix}.b2"]
    return out.reshape(*lead, spec.output_dim)


def cross_attention(query: Tensor, tokens: Tensor, Wq, Wk, Wv) -> tuple[Tensor, np.ndarray]:
    """Attend from one query vector per node to that node's key/value tokens.

    ``query`` is ``[n, d]``, ``tokens`` is ``[n, m, d]``; returns ``[n, d]``
    and the ``[n, m]`` attention weights.
    """
    query, tokens = as_tensor(query), as_tensor(tokens)
    q = (query @ Wq).reshape(query.shape[0], 1, -1)
    k = tokens @ Wk
    v = tokens @ Wv
    scale = 1.0 / np.sqrt(q.shape[-1])
    att = softmax((q @ k.swapaxes(-1, -2)) * scale, axis=-1)  # [n, 1, m]
    out = (att @ v).reshape(query.shape[0], -1)
    return out, att.data[:, 0, :]


@dataclass
class FusedFeatures:
    F: Tensor
    from_spot: Tensor
    from_region: Tensor
    weights: dict[str, np.ndarray]


def cross_attention_fuse(f_b, f_s, f_r, params: Mapping[str, Tensor], residual: bool = True) -> FusedFeatures:
    """Fuse spot and region context into the bin feature; ``F`` has width ``3d``."""
    f_b, f_s, f_r = as_tensor(f_b), as_tensor(f_s), as_tensor(f_r)
    for name, t in (("f_b", f_b), ("f_s", f_s), ("f_r", f_r)):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"{name} contains non-finite values")
    if f_s.ndim == 2:
        f_s = f_s.reshape(f_s.shape[0], 1, -1)
    if f_r.ndim == 2:
        f_r = f_r.reshape(f_r.shape[0], 1, -1)
    out_s, w_s = cross_attention(f_b, f_s, params["xattn.spot.Wq"], params["xattn.spot.Wk"],
                                 params["xattn.spot.Wv"])
    out_r, w_r = cross_attention(f_b, f_r, params["xattn.region.Wq"], params["xattn.region.Wk"],
                                 params["xattn.region.Wv"])
    refined = f_b + out_s + out_r if residual else f_b
    return FusedFeatures(concat([refined, out_s, out_r], axis=-1), out_s, out_r, {"spot": w_s, "region": w_r})


def _neighborhood(graph) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(graph, SpatialGraph):
        return graph.padded(self_loop=True)
    index, mask = graph
    return np.asarray(index), np.asarray(mask, dtype=bool)


def gat_round(node_features, graph, round_params: Mapping[str, Tensor],
              return_attention: bool = False):
    """One multi-head graph-attention round; heads are concatenated.

    ``graph`` is a :class:`SpatialGraph` (self-loops are added) or a padded
    ``(index, mask)`` pair whose rows already include the node itself.
    Attention logits are LeakyReLU(a_self . W h_i + a_neigh . W h_j) and the
    per-head output is ELU of the attention-weighted sum.
    """
    h = as_tensor(node_features)
    index, mask = _neighborhood(graph)
    if index.shape[0] != h.shape[0]:
        raise InvalidArgumentError(f"graph has {index.shape[0]} nodes but features have {h.shape[0]} rows")
    W, a_self, a_neigh = round_params["W"], round_params["a_self"], round_params["a_neigh"]
    heads, head_dim = a_self.shape
    n = h.shape[0]
    z = (h @ W).reshape(n, heads, head_dim)
    s_self = (z * a_self).sum(axis=-1)  # [n, K]
    s_neigh = (z * a_neigh).sum(axis=-1)
    logits = leaky_relu(s_self.reshape(n, 1, heads) + take(s_neigh, index), GAT_SLOPE)  # [n, m, K]
    alpha = softmax(logits, axis=1, mask=mask[:, :, None])
    agg = (alpha.reshape(n, index.shape[1], heads, 1) * take(z, index)).sum(axis=1)
    out = elu(agg).reshape(n, heads * head_dim)
    if return_attention:
        return out, alpha.data
    return out


def transformer_aggregate(tokens, params: Mapping[str, Tensor], mask: np.ndarray | None = None,
                          return_attention: bool = False):
    """Post-norm transformer encoder layer over ``[n, L, H]`` tokens, mean-pooled over tokens.

    ``mask`` (``[n, L]``) excludes padded tokens from attention and pooling.
    """
    x = stack(tokens, axis=1) if isinstance(tokens, (list, tuple)) else as_tensor(tokens)
    if x.ndim != 3 or x.shape[1] == 0:
        raise InvalidArgumentError("transformer_aggregate needs a non-empty [n, L, H] token sequence")
    n, length, width = x.shape
    q = x @ params["tf.Wq"]
    k = x @ params["tf.Wk"]
    v = x @ params["tf.Wv"]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(width))
    att = softmax(scores, axis=-1, mask=None if mask is None else mask[:, None, :])
    h = layer_norm(x + (att @ v) @ params["tf.Wo"] + params["tf.bo"], params["tf.ln1_g"], params["tf.ln1_b"])
    ff = gelu(h @ params["tf.W1"] + params["tf.b1"]) @ params["tf.W2"] + params["tf.b2"]
    h = layer_norm(h + ff, params["tf.ln2_g"], params["tf.ln2_b"])
    if mask is None:
        out = h.mean(axis=1)
    else:
        w = mask / mask.sum(axis=1, keepdims=True)
        out = (h * w[:, :, None]).sum(axis=1)
    if return_attention:
        return out, att.data
    return out


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


@dataclass
class ModelInputs:
    """Raw per-node inputs: ``x_b`` is ``[n, in_b]``; ``x_s``/``x_r`` are ``[n, tokens, in]``."""

    x_b: np.ndarray
    x_s: np.ndarray
    x_r: np.ndarray

    @classmethod
    def from_samples(cls, samples) -> "ModelInputs":
        return cls(samples.x_b, samples.x_s, samples.x_r)


@dataclass
class ForwardOutput:
    p_b: Tensor
    p_s: Tensor | None
    p_r: Tensor | None
    attention: dict[str, np.ndarray] = field(default_factory=dict)
    features: dict[str, Tensor] = field(default_factory=dict)

    def prediction(self, level: str) -> Tensor | None:
        return {"bin": self.p_b, "spot": self.p_s, "region": self.p_r}[level]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Name -> shape for every tensor implied by ``cfg`` (insertion order is canonical)."""
    shapes: dict[str, tuple] = {}
    d, width = cfg.d, cfg.width
    for level in LEVELS:
        if level != "bin" and not cfg.multires:
            continue
        spec = cfg.encoder_spec(level)
        p = f"enc.{level}"
        if spec.kind == "builtin-mlp":
            shapes.update({f"{p}.W1": (spec.input_dim, spec.hidden_dim), f"{p}.b1": (spec.hidden_dim,),
                           f"{p}.W2": (spec.hidden_dim, d), f"{p}.b2": (d,)})
        elif spec.kind == "builtin-smallconv":
            c = spec.patch_shape[0]
            shapes.update({f"{p}.Wc": (c * 9, spec.hidden_dim), f"{p}.bc": (spec.hidden_dim,),
                           f"{p}.W2": (spec.hidden_dim, d), f"{p}.b2": (d,)})
    if cfg.multires:
        for src in ("spot", "region"):
            for m in ("Wq", "Wk", "Wv"):
                shapes[f"xattn.{src}.{m}"] = (d, d)
    for level in cfg.levels:
        in_dim = 3 * d if (level == "bin" and cfg.multires) else d
        shapes[f"proj.{level}.W"] = (in_dim, width)
        shapes[f"proj.{level}.b"] = (width,)
    if cfg.use_gat:
        for r in range(cfg.rounds):
            shapes[f"gat.{r}.W"] = (width, width)
            shapes[f"gat.{r}.a_self"] = (cfg.heads, cfg.head_dim)
            shapes[f"gat.{r}.a_neigh"] = (cfg.heads, cfg.head_dim)
    hidden = cfg.ffn_mult * width
    shapes.update({
        "tf.Wq": (width, width), "tf.Wk": (width, width), "tf.Wv": (width, width),
        "tf.Wo": (width, width), "tf.bo": (width,),
        "tf.ln1_g": (width,), "tf.ln1_b": (width,),
        "tf.W1": (width, hidden), "tf.b1": (hidden,), "tf.W2": (hidden, width), "tf.b2": (width,),
        "tf.ln2_g": (width,), "tf.ln2_b": (width,),
    })
    for level in cfg.levels:
        shapes[f"head.{level}.W"] = (width, cfg.n_genes)
        shapes[f"head.{level}.b"] = (cfg.n_genes,)
    return shapes


class MagNet:
    """Parameters plus the forward/backward computation."""

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray], seed: int = 0,
                 dtype=np.float64):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        shapes = parameter_shapes(config)
        missing = set(shapes) - set(params)
        extra = set(params) - set(shapes)
        if missing or extra:
            raise ConfigurationError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        self.params: dict[str, Tensor] = {}
        for name, shape in shapes.items():
            arr = np.asarray(params[name], dtype=self.dtype)
            if arr.shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} contains non-finite values")
            self.params[name] = Tensor(arr.copy(), requires_grad=self._is_trainable(name), name=name)
        self._graph_cache: tuple | None = None
        self._recorded = False

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float64) -> "MagNet":
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in parameter_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.startswith("ln") and leaf.endswith("_g"):
                arrays[name] = np.ones(shape)
            elif len(shape) == 1:
                arrays[name] = np.zeros(shape)
            elif leaf in ("a_self", "a_neigh"):
                arrays[name] = _glorot(rng, shape[1], 1, shape)
            else:
                arrays[name] = _glorot(rng, shape[0], shape[1])
        return cls(config, arrays, seed=seed, dtype=dtype)

    def _is_trainable(self, name: str) -> bool:
        if name.startswith("enc."):
            return name.split(".")[1] == self.config.target_level
        return True

    # -- parameter views ------------------------------------------------------

    def trainable_names(self) -> list[str]:
        return [n for n, t in self.params.items() if t.requires_grad]

    def frozen_names(self) -> list[str]:
        return [n for n, t in self.params.items() if not t.requires_grad]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def set_array(self, name: str, value: np.ndarray) -> None:
        self.params[name].data = np.asarray(value, dtype=self.dtype).reshape(self.params[name].shape)

    def parameter_count(self, trainable_only: bool = False) -> int:
        return int(sum(t.data.size for t in self.params.values() if t.requires_grad or not trainable_only))

    # -- computation ----------------------------------------------------------

    def _neighborhoods(self, graph: SpatialGraph, copies: int) -> tuple[np.ndarray, np.ndarray]:
        key = (id(graph), copies, self.config.aggregate)
        if self._graph_cache is None or self._graph_cache[0] != key:
            index, mask = graph.padded(self_loop=True)
            n = graph.n_nodes
            index = np.concatenate([index + c * n for c in range(copies)])
            mask = np.concatenate([mask] * copies)
            self._graph_cache = (key, (index, mask), graph)
        return self._graph_cache[1]

    def graph_block(self, h: Tensor, index: np.ndarray, mask: np.ndarray,
                    attention: dict | None = None) -> Tensor:
        """Shared GAT rounds followed by transformer aggregation."""
        cfg = self.config
        tokens = [h]
        if cfg.use_gat:
            for r in range(cfg.rounds):
                rp = {"W": self.params[f"gat.{r}.W"], "a_self": self.params[f"gat.{r}.a_self"],
                      "a_neigh": self.params[f"gat.{r}.a_neigh"]}
                h, alpha = gat_round(h, (index, mask), rp, return_attention=True)
                if attention is not None:
                    attention[f"gat.{r}"] = alpha
                tokens.append(h)
        if cfg.aggregate == "rounds":
            out, att = transformer_aggregate(tokens, self.params, return_attention=True)
        else:
            out, att = transformer_aggregate(take(tokens[-1], index), self.params, mask=mask,
                                             return_attention=True)
        if attention is not None:
            attention["transformer"] = att
        return out

    def forward(self, inputs, graph: SpatialGraph, batch=None) -> ForwardOutput:
        """Predict all nodes of ``graph``; ``batch`` selects (and orders) the returned rows."""
        cfg = self.config
        if not isinstance(inputs, ModelInputs):
            inputs = ModelInputs.from_samples(inputs)
        n = graph.n_nodes
        x_b = np.asarray(inputs.x_b, dtype=self.dtype)
        if x_b.shape[0] != n:
            raise InvalidArgumentError(f"graph has {n} nodes but inputs have {x_b.shape[0]} rows")
        attention: dict[str, np.ndarray] = {}
        features: dict[str, Tensor] = {}
        p = self.params
        f_b = encode(x_b, p, cfg.encoder_spec("bin"), "enc.bin")
        features["f_b"] = f_b
        h0 = []
        if cfg.multires:
            x_s = np.asarray(inputs.x_s, dtype=self.dtype)
            x_r = np.asarray(inputs.x_r, dtype=self.dtype)
            if x_s.ndim == 2:
                x_s = x_s[:, None, :]
            if x_r.ndim == 2:
                x_r = x_r[:, None, :]
            if x_s.shape[0] != n or x_r.shape[0] != n:
                raise InvalidArgumentError("spot/region inputs must have one row per graph node")
            f_s = encode(x_s, p, cfg.encoder_spec("spot"), "enc.spot")
            f_r = encode(x_r, p, cfg.encoder_spec("region"), "enc.region")
            features.update(f_s=f_s, f_r=f_r)
            fused = cross_attention_fuse(f_b, f_s, f_r, p, residual=cfg.residual)
            features["F"] = fused.F
            attention.update({f"xattn.{k}": v for k, v in fused.weights.items()})
            h0.append(fused.F @ p["proj.bin.W"] + p["proj.bin.b"])
            h0.append(f_s.mean(axis=1) @ p["proj.spot.W"] + p["proj.spot.b"])
            h0.append(f_r.mean(axis=1) @ p["proj.region.W"] + p["proj.region.b"])
        else:
            h0.append(f_b @ p["proj.bin.W"] + p["proj.bin.b"])
        # levels share the block: run them as disjoint copies of the graph in one pass
        index, mask = self._neighborhoods(graph, len(h0))
        h = h0[0] if len(h0) == 1 else concat(h0, axis=0)
        z = self.graph_block(h, index, mask, attention)
        preds: dict[str, Tensor] = {}
        for c, level in enumerate(cfg.levels):
            zl = z[c * n:(c + 1) * n] if len(h0) > 1 else z
            out = zl @ p[f"head.{level}.W"] + p[f"head.{level}.b"]
            if batch is not None:
                out = take(out, np.asarray(batch, dtype=np.intp))
            preds[level] = out
        self._recorded = True
        return ForwardOutput(preds["bin"], preds.get("spot"), preds.get("region"), attention, features)

    def predict(self, inputs, graph: SpatialGraph, level: str = "bin", batch=None) -> np.ndarray:
        out = self.forward(inputs, graph, batch).prediction(level)
        if out is None:
            raise ConfigurationError(f"this model has no {level}-level head")
        return out.data

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of ``loss`` for every trainable tensor (frozen ones are absent)."""
        if not self._recorded or not isinstance(loss, Tensor) or not loss.requires_grad:
            raise StateError("backward() needs a loss computed from a recorded forward pass")
        self.zero_grad()
        loss.backward()
        grads = {}
        for name in self.trainable_names():
            g = self.params[name].grad
            grads[name] = np.zeros_like(self.params[name].data) if g is None else g
        return grads


# --------------------------------------------------------------------------
# Checkpoints: magic, header length (u64 LE), JSON header, raw LE payloads
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MAGNETCK"


def save_checkpoint(model: MagNet, path: Path, meta: Mapping | None = None) -> Path:
    path = Path(path)
    tensors, payloads, offset = [], [], 0
    for name, t in model.params.items():
        arr = np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                        "trainable": bool(t.requires_grad), "offset": offset, "nbytes": len(blob)})
        payloads.append(blob)
        offset += len(blob)
    header = {
        "format": "magnet-checkpoint", "version": 1,
        "hyperparameters": model.config.to_dict(),
        "seed": model.seed,
        "tensors": tensors,
        "meta": dict(meta or {}),
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in payloads:
            fh.write(blob)
    return path


def load_checkpoint(path: Path) -> tuple[MagNet, dict]:
    path = Path(path)
    if not path.exists():
        raise InvalidDataError(f"checkpoint {path} not found")
    buf = path.read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC or len(buf) < 16:
        raise InvalidDataError(f"{path} is not a checkpoint archive")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    try:
        header = json.loads(buf[16:16 + hlen])
    except json.JSONDecodeError as exc:
        raise InvalidDataError(f"{path}: corrupt header ({exc})") from None
    base = 16 + hlen
    arrays = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        chunk = buf[start:start + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise InvalidDataError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
    config = ModelConfig.from_dict(header["hyperparameters"])
    dtype = np.dtype(header["tensors"][0]["dtype"]).newbyteorder("=") if header["tensors"] else np.float64
    model = MagNet(config, arrays, seed=header.get("seed", 0), dtype=dtype)
    return model, header.get("meta", {})
