"""Spatial-attention + Inception classifier and its ablation variants."""
from __future__ import annotations

import enum
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, no_grad
from .formats import read_kv, write_kv

TARGET_TOTAL_PARAMS = 562_995
TARGET_TRAINABLE_PARAMS = 562_227
HEAD = "head"


class Variant(str, enum.Enum):
    PROPOSED = "proposed"
    WITH_INITIAL_CONVS = "with_initial_convs"        # a) two convs before Part II
    NAIVE_INCEPTION_BOTH = "naive_inception_both"    # b) both stages naive
    NAIVE_FIRST_INCEPTION = "naive_first_inception"  # c) first stage naive
    NO_SPATIAL_ATTENTION = "no_spatial_attention"    # d) no attention, no concat


@dataclass(frozen=True)
class InceptionWidths:
    conv1: int
    reduce3: int
    conv3: int
    reduce5: int
    conv5: int
    pool_proj: int

    def __post_init__(self):
        if min(asdict(self).values()) <= 0:
            raise ValueError(f"inception widths must be positive: {self}")

    @property
    def out_channels(self) -> int:
        return self.conv1 + self.conv3 + self.conv5 + self.pool_proj

    def naive_out_channels(self, in_channels: int) -> int:
        return self.conv1 + self.conv3 + self.conv5 + in_channels

    @classmethod
    def parse(cls, text: str) -> "InceptionWidths":
        return cls(*(int(v) for v in text.replace(",", " ").split()))

    def format(self) -> str:
        return ",".join(str(v) for v in asdict(self).values())


@dataclass(frozen=True)
class ArchitectureSpec:
    patch_size: int = 23
    n_features: int = 40
    n_classes: int = 17
    variant: Variant = Variant.PROPOSED
    stem_filters: int = 16
    stage1: InceptionWidths = InceptionWidths(24, 16, 32, 16, 16, 24)
    stage2: InceptionWidths = InceptionWidths(16, 48, 48, 88, 208, 16)
    dropout: tuple[float, float, float] = (0.2, 0.4, 0.2)
    leaky_alpha: float = 0.1
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    attention_central: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and positive, got {self.patch_size}")
        if self.n_features < 1 or self.n_classes < 2 or self.stem_filters < 1:
            raise ValueError("n_features >= 1, n_classes >= 2 and stem_filters >= 1 required")
        if len(self.dropout) != 3 or not all(0.0 <= r < 1.0 for r in self.dropout):
            raise ValueError(f"dropout must be three rates in [0, 1), got {self.dropout}")

    def to_kv(self) -> dict[str, str]:
        return {
            "variant": self.variant.value,
            "patch_size": self.patch_size,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "stem_filters": self.stem_filters,
            "stage1": self.stage1.format(),
            "stage2": self.stage2.format(),
            "dropout": ",".join(repr(r) for r in self.dropout),
            "leaky_alpha": repr(self.leaky_alpha),
            "bn_momentum": repr(self.bn_momentum),
            "bn_eps": repr(self.bn_eps),
            "attention_central": int(self.attention_central),
        }

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ArchitectureSpec":
        kw = {}
        for key in ("patch_size", "n_features", "n_classes", "stem_filters"):
            if key in kv:
                kw[key] = int(kv[key])
        for key in ("leaky_alpha", "bn_momentum", "bn_eps"):
            if key in kv:
                kw[key] = float(kv[key])
        if "variant" in kv:
            kw["variant"] = Variant(kv["variant"])
        for key in ("stage1", "stage2"):
            if key in kv:
                kw[key] = InceptionWidths.parse(kv[key])
        if "dropout" in kv:
            kw["dropout"] = tuple(float(v) for v in kv["dropout"].split(","))
        if "attention_central" in kv:
            kw["attention_central"] = bool(int(kv["attention_central"]))
        return cls(**kw)


def save_architecture(path: str | os.PathLike, spec: ArchitectureSpec) -> Path:
    return write_kv(path, spec.to_kv())


def load_architecture(path: str | os.PathLike) -> ArchitectureSpec:
    return ArchitectureSpec.from_kv(read_kv(path))


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[-2] * receptive, shape[-1] * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    def __init__(self):
        self._params: dict[str, tuple[Tensor, bool]] = {}
        self._children: dict[str, Layer] = {}

    def add_param(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        t = Tensor(data, requires_grad=trainable, name=name)
        self._params[name] = (t, trainable)
        return t

    def add_child(self, name: str, layer: "Layer") -> "Layer":
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix: str = ""):
        for name, (t, trainable) in self._params.items():
            yield prefix + name, t, trainable
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}/")


class Conv2D(Layer):
    def __init__(self, cin, cout, size, stride, rng, dtype, padding="same"):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.kernel = self.add_param("kernel", glorot_uniform(rng, (size, size, cin, cout), dtype))
        self.bias = self.add_param("bias", np.zeros(cout, dtype=dtype))

    def __call__(self, x):
        return ops.conv2d(x, self.kernel, self.bias, self.stride, self.padding)


class Dense(Layer):
    def __init__(self, cin, cout, rng, dtype):
        super().__init__()
        self.kernel = self.add_param("kernel", glorot_uniform(rng, (cin, cout), dtype))
        self.bias = self.add_param("bias", np.zeros(cout, dtype=dtype))

    def __call__(self, x):
        return ops.dense(x, self.kernel, self.bias)


class BatchNorm(Layer):
    def __init__(self, channels, dtype, momentum=0.99, eps=1e-3):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=dtype))
        self.moving_mean = self.add_param("moving_mean", np.zeros(channels, dtype=dtype), trainable=False)
        self.moving_var = self.add_param("moving_var", np.ones(channels, dtype=dtype), trainable=False)

    def __call__(self, x, training):
        return ops.batch_norm(x, self.gamma, self.beta, self.moving_mean.data, self.moving_var.data,
                              training, self.momentum, self.eps)


class SpatialAttention(Layer):
    """Per-pixel weights from the cosine-similarity matrix of the patch pixels.

    With P the M^2 x F patch and Pn its row-normalized copy, the scores are
    (Pn Pn^T) K + B, softmax-normalized over the M^2 pixels and multiplied
    back onto the rows of P.  ``(Pn Pn^T) K`` is evaluated as
    ``Pn (Pn^T K)`` unless ``explicit`` is set.
    """

    def __init__(self, patch_size, dtype, compute_central=False):
        super().__init__()
        m2 = patch_size * patch_size
        self.kernel = self.add_param("kernel", np.ones((m2, 1), dtype=dtype))
        self.bias = self.add_param("bias", np.zeros((m2, 1), dtype=dtype))
        self.compute_central = compute_central
        self.explicit = False
        self.last_weights = None
        self.last_central = None

    def __call__(self, x):
        n, m, m_, f = x.shape
        p = ops.reshape(x, (n, m * m, f))
        pn = ops.l2_normalize(p, axis=-1)
        if self.explicit:
            scores = ops.matmul(ops.matmul(pn, ops.swap_last(pn)), self.kernel)
        else:
            scores = ops.matmul(pn, ops.matmul(ops.swap_last(pn), self.kernel))
        if self.compute_central:
            centre = (m * m) // 2
            sim_centre = np.einsum("nf,npf->np", pn.data[:, centre, :], pn.data)
            self.last_central = sim_centre * self.kernel.data[:, 0]
        weights = ops.softmax(ops.add(scores, self.bias), axis=1)
        self.last_weights = weights.data[:, :, 0]
        return ops.reshape(ops.mul(weights, p), (n, m, m, f))


def similarity_matrix(patch: np.ndarray) -> np.ndarray:
    """M^2 x M^2 cosine similarities of one M x M x F patch (zero rows stay zero)."""
    p = patch.reshape(-1, patch.shape[-1]).astype(np.float64)
    norm = np.linalg.norm(p, axis=1, keepdims=True)
    pn = np.divide(p, norm, out=np.zeros_like(p), where=norm > 0)
    return pn @ pn.T


class InceptionV2(Layer):
    """Four branches with 1x1 reducers; spatial convs and pooling carry the stride."""

    def __init__(self, cin, widths: InceptionWidths, stride, rng, dtype):
        super().__init__()
        self.stride = stride
        self.b1 = self.add_child("b1_1x1", Conv2D(cin, widths.conv1, 1, stride, rng, dtype))
        self.b3r = self.add_child("b3_reduce", Conv2D(cin, widths.reduce3, 1, 1, rng, dtype))
        self.b3 = self.add_child("b3_3x3", Conv2D(widths.reduce3, widths.conv3, 3, stride, rng, dtype))
        self.b5r = self.add_child("b5_reduce", Conv2D(cin, widths.reduce5, 1, 1, rng, dtype))
        self.b5 = self.add_child("b5_5x5", Conv2D(widths.reduce5, widths.conv5, 5, stride, rng, dtype))
        self.bp = self.add_child("pool_proj", Conv2D(cin, widths.pool_proj, 1, 1, rng, dtype))
        self.out_channels = widths.out_channels

    def __call__(self, x):
        a = self.b1(x)
        b = self.b3(ops.relu(self.b3r(x)))
        c = self.b5(ops.relu(self.b5r(x)))
        d = self.bp(ops.max_pool2d(x, 3, self.stride, "same"))
        return ops.concat([a, b, c, d], axis=-1)


class InceptionNaive(Layer):
    """1x1, 3x3, 5x5 convs and a max-pool passthrough, no reducers."""

    def __init__(self, cin, widths: InceptionWidths, stride, rng, dtype):
        super().__init__()
        self.stride = stride
        self.b1 = self.add_child("b1_1x1", Conv2D(cin, widths.conv1, 1, stride, rng, dtype))
        self.b3 = self.add_child("b3_3x3", Conv2D(cin, widths.conv3, 3, stride, rng, dtype))
        self.b5 = self.add_child("b5_5x5", Conv2D(cin, widths.conv5, 5, stride, rng, dtype))
        self.out_channels = widths.naive_out_channels(cin)

    def __call__(self, x):
        pooled = ops.max_pool2d(x, 3, self.stride, "same")
        return ops.concat([self.b1(x), self.b3(x), self.b5(x), pooled], axis=-1)


def _spatial(size: int, times: int) -> int:
    for _ in range(times):
        size = ops.conv_output_size(size, 3, 2, "same")
    return size


class ModelGraph:
    """The classifier: Part I attention, Part II stem, Parts III-IV Inception, Part V head."""

    def __init__(self, spec: ArchitectureSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        init_seq, drop_seq = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(init_seq)
        self.dropout_rng = np.random.default_rng(drop_seq)
        self.layers: dict[str, Layer] = {}
        v = spec.variant
        f = spec.n_features
        channels = f
        if v is not Variant.NO_SPATIAL_ATTENTION:
            self.layers["attention"] = SpatialAttention(spec.patch_size, dtype, spec.attention_central)
            channels = 2 * f
        if v is Variant.WITH_INITIAL_CONVS:
            self.layers["pre_conv1"] = Conv2D(channels, channels, 3, 1, rng, dtype)
            self.layers["pre_conv2"] = Conv2D(channels, channels, 3, 1, rng, dtype)
        self.layers["stem_1x1"] = Conv2D(channels, spec.stem_filters, 1, 1, rng, dtype)
        self.layers["stem_3x3"] = Conv2D(spec.stem_filters, spec.stem_filters, 3, 2, rng, dtype)
        self.layers["stem_bn"] = BatchNorm(spec.stem_filters, dtype, spec.bn_momentum, spec.bn_eps)
        channels = spec.stem_filters
        naive1 = v in (Variant.NAIVE_INCEPTION_BOTH, Variant.NAIVE_FIRST_INCEPTION)
        naive2 = v is Variant.NAIVE_INCEPTION_BOTH
        block1 = (InceptionNaive if naive1 else InceptionV2)(channels, spec.stage1, 2, rng, dtype)
        self.layers["inception1"] = block1
        self.layers["inception1_bn"] = BatchNorm(block1.out_channels, dtype, spec.bn_momentum, spec.bn_eps)
        block2 = (InceptionNaive if naive2 else InceptionV2)(block1.out_channels, spec.stage2, 2, rng, dtype)
        self.layers["inception2"] = block2
        self.layers["inception2_bn"] = BatchNorm(block2.out_channels, dtype, spec.bn_momentum, spec.bn_eps)
        side = _spatial(spec.patch_size, 3)
        self.flat_width = side * side * block2.out_channels
        self.layers[HEAD] = Dense(self.flat_width, spec.n_classes, rng, dtype)
        for name, t, _ in self.named_parameters():
            t.name = name

    def named_parameters(self):
        for lname, layer in self.layers.items():
            yield from layer.named_parameters(lname + "/")

    def parameters(self, trainable_only: bool = False) -> dict[str, Tensor]:
        return {n: t for n, t, tr in self.named_parameters() if tr or not trainable_only}

    def param_counts(self) -> tuple[int, int, int]:
        """(total, trainable, non-trainable) scalar counts."""
        trainable = sum(t.data.size for _, t, tr in self.named_parameters() if tr)
        frozen = sum(t.data.size for _, t, tr in self.named_parameters() if not tr)
        return trainable + frozen, trainable, frozen

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t, _ in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state is missing tensors: {missing[:5]}")
        for name, t in own.items():
            value = np.asarray(state[name])
            if value.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: model {t.shape}, state {value.shape}")
            t.data[...] = value

    def _body(self, x: Tensor, training: bool, trace: list | None) -> Tensor:
        spec, L = self.spec, self.layers
        alpha = spec.leaky_alpha

        def note(label, t):
            if trace is not None:
                trace.append((label, tuple(t.shape[1:])))
            return t

        note("input", x)
        if "attention" in L:
            att = note("spatial_attention", L["attention"](x))
            x = note("concatenate", ops.concat([x, att], axis=-1))
        if "pre_conv1" in L:
            x = note("pre_conv1", ops.leaky_relu(L["pre_conv1"](x), alpha))
            x = note("pre_conv2", ops.leaky_relu(L["pre_conv2"](x), alpha))
        x = note("stem_conv_1x1", L["stem_1x1"](x))
        x = note("stem_conv_3x3", L["stem_3x3"](x))
        x = note("stem_leaky_relu", ops.leaky_relu(x, alpha))
        x = note("stem_batch_norm", L["stem_bn"](x, training))
        x = note("stem_dropout", ops.dropout(x, spec.dropout[0], training, self.dropout_rng))
        x = note("inception1", L["inception1"](x))
        x = note("inception1_batch_norm", L["inception1_bn"](x, training))
        x = note("inception1_leaky_relu", ops.leaky_relu(x, alpha))
        x = note("inception1_dropout", ops.dropout(x, spec.dropout[1], training, self.dropout_rng))
        x = note("inception2", L["inception2"](x))
        x = note("inception2_batch_norm", L["inception2_bn"](x, training))
        x = note("inception2_leaky_relu", ops.leaky_relu(x, alpha))
        return note("flatten", ops.flatten(x))

    def forward(self, x, training: bool = False, trace: list | None = None) -> Tensor:
        """Logits (pre-softmax) for an N x M x M x F batch."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1:] != (self.spec.patch_size,) * 2 + (self.spec.n_features,):
            raise ValueError(f"expected N x {self.spec.patch_size} x {self.spec.patch_size} x "
                             f"{self.spec.n_features} input, got {x.shape}")
        h = self._body(x, training, trace)
        h = ops.dropout(h, self.spec.dropout[2], training, self.dropout_rng)
        if trace is not None:
            trace.append(("flatten_dropout", tuple(h.shape[1:])))
        logits = self.layers[HEAD](h)
        if trace is not None:
            trace.append(("softmax", tuple(logits.shape[1:])))
        return logits

    __call__ = forward

    def predict_logits(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = []
        with no_grad():
            for start in range(0, len(x), batch_size):
                out.append(self.forward(x[start:start + batch_size], training=False).data)
        if not out:
            return np.zeros((0, self.spec.n_classes), dtype=self.dtype)
        return np.concatenate(out)

    def embed(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Flatten activations (before the final dropout and dense layer)."""
        out = []
        with no_grad():
            for start in range(0, len(x), batch_size):
                xb = Tensor(np.asarray(x[start:start + batch_size], dtype=self.dtype))
                out.append(self._body(xb, False, None).data)
        if not out:
            return np.zeros((0, self.flat_width), dtype=self.dtype)
        return np.concatenate(out)


def build_model(spec: ArchitectureSpec, seed: int = 0, dtype=np.float32) -> ModelGraph:
    return ModelGraph(spec, seed, dtype)


def expected_shapes(spec: ArchitectureSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Output shape of every Table-style stage for the Proposed layout."""
    m, f, s = spec.patch_size, spec.n_features, spec.stem_filters
    m1, m2, m3 = _spatial(m, 1), _spatial(m, 2), _spatial(m, 3)
    c1, c2 = spec.stage1.out_channels, spec.stage2.out_channels
    return [
        ("input", (m, m, f)), ("spatial_attention", (m, m, f)), ("concatenate", (m, m, 2 * f)),
        ("stem_conv_1x1", (m, m, s)), ("stem_conv_3x3", (m1, m1, s)),
        ("stem_leaky_relu", (m1, m1, s)), ("stem_batch_norm", (m1, m1, s)), ("stem_dropout", (m1, m1, s)),
        ("inception1", (m2, m2, c1)), ("inception1_batch_norm", (m2, m2, c1)),
        ("inception1_leaky_relu", (m2, m2, c1)), ("inception1_dropout", (m2, m2, c1)),
        ("inception2", (m3, m3, c2)), ("inception2_batch_norm", (m3, m3, c2)),
        ("inception2_leaky_relu", (m3, m3, c2)), ("flatten", (m3 * m3 * c2,)),
        ("flatten_dropout", (m3 * m3 * c2,)), ("softmax", (spec.n_classes,)),
    ]


def shape_trace(model: ModelGraph, batch: int = 2) -> list[tuple[str, tuple[int, ...]]]:
    spec = model.spec
    x = np.zeros((batch, spec.patch_size, spec.patch_size, spec.n_features), dtype=model.dtype)
    x[:, :, :, 0] = 1.0
    trace: list = []
    with no_grad():
        model.forward(x, training=False, trace=trace)
    return trace


def parameter_audit(spec: ArchitectureSpec) -> dict:
    model = build_model(spec)
    total, trainable, frozen = model.param_counts()
    per_layer = {}
    for name, t, _ in model.named_parameters():
        top = name.split("/")[0]
        per_layer[top] = per_layer.get(top, 0) + t.data.size
    return {
        "variant": spec.variant.value,
        "total": total,
        "trainable": trainable,
        "non_trainable": frozen,
        "flatten": model.flat_width,
        "target_total": TARGET_TOTAL_PARAMS,
        "target_trainable": TARGET_TRAINABLE_PARAMS,
        "delta_total": total - TARGET_TOTAL_PARAMS,
        "delta_total_pct": 100.0 * (total - TARGET_TOTAL_PARAMS) / TARGET_TOTAL_PARAMS,
        "delta_trainable": trainable - TARGET_TRAINABLE_PARAMS,
        "stage1_widths": spec.stage1.format(),
        "stage2_widths": spec.stage2.format(),
        "per_layer": per_layer,
    }


def format_audit(audit: dict) -> str:
    lines = [f"{k}={audit[k]:.3f}" if isinstance(audit[k], float) else f"{k}={audit[k]}"
             for k in audit if k != "per_layer"]
    lines.append("widths_order=conv1,reduce3,conv3,reduce5,conv5,pool_proj")
    lines += [f"layer.{k}={v}" for k, v in audit["per_layer"].items()]
    return "\n".join(lines)


def load_pretrained(model: ModelGraph, tensors: dict[str, np.ndarray], reinit_head: bool = False) -> ModelGraph:
    """Copy checkpoint tensors into ``model``; with ``reinit_head`` the head keeps
    its fresh initialization (and may have a different class count)."""
    for name, t in model.parameters().items():
        if reinit_head and name.startswith(HEAD + "/"):
            continue
        if name not in tensors:
            raise KeyError(f"checkpoint has no tensor {name!r}")
        value = tensors[name]
        if value.shape != t.shape:
            raise ValueError(f"shape mismatch for {name}: model {t.shape}, checkpoint {value.shape}")
        t.data[...] = value
    return model
