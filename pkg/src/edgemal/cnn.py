"""From-scratch CNN kernel: declarative layer specs, seeded initialization,
forward inference, minibatch SGD training, and a per-layer compute cost model.

Conventions fixed for reproducibility:
  - activations are channels-last float32 arrays of rank <= 3;
  - convolutions use valid padding and stride 1; pooling is non-overlapping
    max with a square window (ragged border rows/columns are dropped);
  - dot products accumulate in float64 and round back to float32 at every
    layer boundary, so outputs are bit-stable on one machine and agree across
    implementations to ~1e-6;
  - weight initialization draws from a user-seeded SplitMix64 stream, element
    by element in C order (weights first, then bias, layer by layer).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    EmptyCorpus,
    LabelOutOfRange,
    ShapeMismatch,
    Unsupported,
    UnresolvedShape,
)
from .rng import SplitMix64

KIND_INPUT = "Input"
KIND_CONV = "Conv"
KIND_POOL = "Pool"
KIND_FLATTEN = "Flatten"
KIND_DENSE = "Dense"
KIND_SOFTMAX = "Softmax"

LAYER_KINDS = (KIND_INPUT, KIND_CONV, KIND_POOL, KIND_FLATTEN, KIND_DENSE, KIND_SOFTMAX)
ACTIVATIONS = ("none", "relu", "softmax")

LOG_CLAMP = 1e-12  # floor inside the cross-entropy log
WEIGHT_INIT_SPAN = 0.05


class Tensor:
    """Dense float32 array with validated shape.

    Activations are rank 1..3; convolution kernels are the one rank-4 case.
    The wrapped array must be treated as immutable.
    """

    __slots__ = ("array",)

    def __init__(self, array) -> None:
        arr = np.ascontiguousarray(array, dtype=np.float32)
        if arr.ndim < 1 or arr.ndim > 4:
            raise ShapeMismatch(f"tensor rank must be 1..4, got {arr.ndim}")
        if arr.size == 0:
            raise ShapeMismatch("tensor extents must be positive")
        if not np.all(np.isfinite(arr)):
            raise ShapeMismatch("tensor elements must be finite")
        self.array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.array.shape)

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the elements."""
        return self.array.ravel()

    def copy(self) -> "Tensor":
        return Tensor(self.array.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the network. Fields irrelevant to the kind stay None.

    `in_channels`, `prev_units` and `out_shape` may be left unset in a raw
    spec; `resolve_spec` fills them from the shape chain.
    """

    kind: str
    kernel_w: int | None = None
    kernel_h: int | None = None
    filters: int | None = None
    in_channels: int | None = None
    units: int | None = None
    prev_units: int | None = None
    pool_window: int | None = None
    activation: str = "none"
    out_shape: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer list plus the expected input image shape (H, W, C)."""

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]


@dataclass
class LayerWeights:
    weight: Tensor
    bias: Tensor


@dataclass
class Model:
    """A resolved spec plus per-trainable-layer weights, keyed by layer index."""

    spec: ModelSpec
    weights: dict[int, LayerWeights]

    def copy(self) -> "Model":
        return Model(self.spec, {i: LayerWeights(w.weight.copy(), w.bias.copy())
                                 for i, w in self.weights.items()})


def _positive(value, name: str) -> int:
    if not isinstance(value, int) or value < 1:
        raise ShapeMismatch(f"{name} must be a positive integer, got {value!r}")
    return value


def resolve_spec(spec: ModelSpec) -> ModelSpec:
    """Validate the layer chain and fill derived fields.

    Returns a new ModelSpec whose layers carry in_channels / prev_units and
    the resolved out_shape. Raises ShapeMismatch on inconsistent chains and
    Unsupported on unknown kinds or activations.
    """
    if len(spec.input_shape) != 3:
        raise ShapeMismatch(f"input_shape must be (H, W, C), got {spec.input_shape}")
    for extent in spec.input_shape:
        _positive(extent, "input extent")
    if not spec.layers:
        raise ShapeMismatch("model needs at least Input and Softmax layers")
    if spec.layers[0].kind != KIND_INPUT:
        raise ShapeMismatch("first layer must be Input")
    if spec.layers[-1].kind != KIND_SOFTMAX:
        raise ShapeMismatch("last layer must be Softmax")

    resolved: list[LayerSpec] = []
    shape: tuple[int, ...] = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if layer.kind not in LAYER_KINDS:
            raise Unsupported(f"unknown layer kind {layer.kind!r}")
        if layer.activation not in ACTIVATIONS:
            raise Unsupported(f"unknown activation {layer.activation!r}")

        if layer.kind == KIND_INPUT:
            if i != 0:
                raise ShapeMismatch("Input layer allowed only at position 0")
            resolved.append(replace(layer, activation="none", out_shape=shape))
            continue

        if layer.kind == KIND_CONV:
            if len(shape) != 3:
                raise ShapeMismatch(f"Conv at layer {i} needs an image input, got {shape}")
            h, w, c = shape
            kh = _positive(layer.kernel_h, "kernel_h")
            kw = _positive(layer.kernel_w, "kernel_w")
            f = _positive(layer.filters, "filters")
            if kh > h or kw > w:
                raise ShapeMismatch(f"kernel {kh}x{kw} exceeds input {h}x{w} at layer {i}")
            if layer.in_channels is not None and layer.in_channels != c:
                raise ShapeMismatch(f"in_channels {layer.in_channels} != {c} at layer {i}")
            if layer.activation == "softmax":
                raise Unsupported("softmax activation is reserved for the Softmax layer")
            shape = (h - kh + 1, w - kw + 1, f)
            resolved.append(replace(layer, in_channels=c, out_shape=shape))
        elif layer.kind == KIND_POOL:
            if len(shape) != 3:
                raise ShapeMismatch(f"Pool at layer {i} needs an image input, got {shape}")
            h, w, c = shape
            win = _positive(layer.pool_window, "pool_window")
            if win > h or win > w:
                raise ShapeMismatch(f"pool window {win} exceeds input {h}x{w} at layer {i}")
            if layer.activation != "none":
                raise Unsupported("Pool takes no activation")
            shape = (h // win, w // win, c)
            resolved.append(replace(layer, out_shape=shape))
        elif layer.kind == KIND_FLATTEN:
            if len(shape) != 3:
                raise ShapeMismatch(f"Flatten at layer {i} needs an image input, got {shape}")
            if layer.activation != "none":
                raise Unsupported("Flatten takes no activation")
            shape = (shape[0] * shape[1] * shape[2],)
            resolved.append(replace(layer, out_shape=shape))
        else:  # Dense or Softmax
            if len(shape) != 1:
                raise ShapeMismatch(
                    f"{layer.kind} at layer {i} needs a flat input (add Flatten), got {shape}")
            units = _positive(layer.units, "units")
            prev = shape[0]
            if layer.prev_units is not None and layer.prev_units != prev:
                raise ShapeMismatch(
                    f"prev_units {layer.prev_units} != incoming size {prev} at layer {i}")
            if layer.kind == KIND_SOFTMAX:
                if i != len(spec.layers) - 1:
                    raise ShapeMismatch("Softmax allowed only as the last layer")
                activation = "softmax"
            else:
                if layer.activation == "softmax":
                    raise Unsupported("softmax activation is reserved for the Softmax layer")
                activation = layer.activation
            shape = (units,)
            resolved.append(replace(layer, prev_units=prev, activation=activation,
                                    out_shape=shape))

    return ModelSpec(tuple(spec.input_shape), tuple(resolved))


def layer_output_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Output shape of every layer, in order."""
    rspec = resolve_spec(spec)
    return [layer.out_shape for layer in rspec.layers]


def build_model(spec: ModelSpec, seed: int) -> Model:
    """Validate the spec and initialize weights uniformly in
    [-WEIGHT_INIT_SPAN, WEIGHT_INIT_SPAN] from a SplitMix64 stream.

    The same seed always produces byte-identical weights.
    """
    rspec = resolve_spec(spec)
    rng = SplitMix64(seed)
    weights: dict[int, LayerWeights] = {}
    for i, layer in enumerate(rspec.layers):
        if layer.kind == KIND_CONV:
            w_shape = (layer.kernel_h, layer.kernel_w, layer.in_channels, layer.filters)
            b_len = layer.filters
        elif layer.kind in (KIND_DENSE, KIND_SOFTMAX):
            w_shape = (layer.prev_units, layer.units)
            b_len = layer.units
        else:
            continue
        n = int(np.prod(w_shape))
        w = np.empty(n, dtype=np.float32)
        for j in range(n):
            w[j] = np.float32(rng.uniform(-WEIGHT_INIT_SPAN, WEIGHT_INIT_SPAN))
        b = np.empty(b_len, dtype=np.float32)
        for j in range(b_len):
            b[j] = np.float32(rng.uniform(-WEIGHT_INIT_SPAN, WEIGHT_INIT_SPAN))
        weights[i] = LayerWeights(Tensor(w.reshape(w_shape)), Tensor(b))
    return Model(rspec, weights)


# --- layer application -------------------------------------------------------
#
# The private kernels take and return plain ndarrays (weights as a (w, b)
# pair). `out_dtype` is float32 on the public path; the gradient checker runs
# the same kernels end to end in float64.

def _conv_cols(a: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """im2col with patch layout (kh, kw, channels), matching the kernel layout."""
    windows = np.lib.stride_tricks.sliding_window_view(a, (kh, kw), axis=(0, 1))
    oh, ow = windows.shape[0], windows.shape[1]
    return windows.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * a.shape[2])


def _apply_conv(layer: LayerSpec, w: np.ndarray, b: np.ndarray, a: np.ndarray,
                out_dtype) -> np.ndarray:
    kh, kw, f = layer.kernel_h, layer.kernel_w, layer.filters
    oh, ow = a.shape[0] - kh + 1, a.shape[1] - kw + 1
    cols = _conv_cols(a, kh, kw).astype(np.float64)
    w2 = w.reshape(kh * kw * a.shape[2], f).astype(np.float64)
    z = cols @ w2 + b.astype(np.float64)
    z = z.reshape(oh, ow, f)
    if layer.activation == "relu":
        z = np.maximum(z, 0.0)
    return z.astype(out_dtype)


def _apply_pool(layer: LayerSpec, a: np.ndarray) -> np.ndarray:
    win = layer.pool_window
    oh, ow = a.shape[0] // win, a.shape[1] // win
    trimmed = a[: oh * win, : ow * win, :]
    blocks = trimmed.reshape(oh, win, ow, win, a.shape[2])
    return blocks.max(axis=(1, 3))


def _apply_dense(layer: LayerSpec, w: np.ndarray, b: np.ndarray, a: np.ndarray,
                 out_dtype) -> np.ndarray:
    z = a.astype(np.float64) @ w.astype(np.float64) + b.astype(np.float64)
    if layer.activation == "relu":
        z = np.maximum(z, 0.0)
    elif layer.activation == "softmax":
        e = np.exp(z - z.max())
        z = e / e.sum()
    return z.astype(out_dtype)


def _apply_layer(layer: LayerSpec, wb: tuple[np.ndarray, np.ndarray] | None,
                 a: np.ndarray, out_dtype=np.float32) -> np.ndarray:
    if layer.kind == KIND_INPUT:
        return a.astype(out_dtype)
    if layer.kind == KIND_CONV:
        return _apply_conv(layer, wb[0], wb[1], a, out_dtype)
    if layer.kind == KIND_POOL:
        return _apply_pool(layer, a).astype(out_dtype)
    if layer.kind == KIND_FLATTEN:
        return a.reshape(-1).astype(out_dtype)
    if layer.kind in (KIND_DENSE, KIND_SOFTMAX):
        return _apply_dense(layer, wb[0], wb[1], a, out_dtype)
    raise Unsupported(f"unknown layer kind {layer.kind!r}")


def _check_layer_input(layer: LayerSpec, shape: tuple[int, ...]) -> None:
    if layer.out_shape is None:
        raise UnresolvedShape(f"layer {layer.kind} is not shape-resolved")
    if layer.kind == KIND_INPUT:
        if shape != layer.out_shape:
            raise ShapeMismatch(f"expected input {layer.out_shape}, got {shape}")
    elif layer.kind == KIND_CONV:
        if len(shape) != 3 or shape[2] != layer.in_channels:
            raise ShapeMismatch(f"Conv expects (H, W, {layer.in_channels}), got {shape}")
        if shape[0] < layer.kernel_h or shape[1] < layer.kernel_w:
            raise ShapeMismatch(f"kernel exceeds input {shape}")
    elif layer.kind == KIND_POOL:
        if len(shape) != 3 or shape[0] < layer.pool_window or shape[1] < layer.pool_window:
            raise ShapeMismatch(f"Pool window {layer.pool_window} does not fit {shape}")
    elif layer.kind == KIND_FLATTEN:
        if len(shape) != 3:
            raise ShapeMismatch(f"Flatten expects an image input, got {shape}")
    else:
        if len(shape) != 1 or shape[0] != layer.prev_units:
            raise ShapeMismatch(f"{layer.kind} expects ({layer.prev_units},), got {shape}")


def layer_forward(layer: LayerSpec, weights: LayerWeights | None, x: Tensor) -> Tensor:
    """Apply one resolved layer to an activation tensor.

    This is the unit the partitioner schedules: composing layer_forward over
    all layers in order is bit-identical to forward().
    """
    _check_layer_input(layer, x.shape)
    wb = None
    if layer.kind in (KIND_CONV, KIND_DENSE, KIND_SOFTMAX):
        if weights is None:
            raise ShapeMismatch(f"{layer.kind} needs weights")
        wb = (weights.weight.array, weights.bias.array)
    return Tensor(_apply_layer(layer, wb, x.array))


def forward(model: Model, x: Tensor) -> Tensor:
    """Run the full network; returns the class-probability vector.

    Pure function: identical model and input give a bit-identical output.
    """
    if x.shape != model.spec.input_shape:
        raise ShapeMismatch(f"expected input {model.spec.input_shape}, got {x.shape}")
    act = x
    for i, layer in enumerate(model.spec.layers):
        act = layer_forward(layer, model.weights.get(i), act)
    return act


# --- cost model ---------------------------------------------------------------

def layer_flops(layer: LayerSpec) -> int:
    """Deterministic per-layer flop count used by the fleet simulator.

    Conv counts multiply-adds over every output position; Dense/Softmax count
    the matrix product; Pool counts window comparisons. Input and Flatten move
    data only.
    """
    if layer.out_shape is None:
        raise UnresolvedShape(f"layer {layer.kind} is not shape-resolved")
    if layer.kind == KIND_CONV:
        oh, ow, f = layer.out_shape
        return 2 * layer.kernel_h * layer.kernel_w * layer.in_channels * f * oh * ow
    if layer.kind in (KIND_DENSE, KIND_SOFTMAX):
        return 2 * layer.prev_units * layer.units
    if layer.kind == KIND_POOL:
        oh, ow, c = layer.out_shape
        return oh * ow * c * layer.pool_window ** 2
    return 0


def model_flops(spec: ModelSpec) -> int:
    rspec = resolve_spec(spec)
    return sum(layer_flops(layer) for layer in rspec.layers)


# --- training -----------------------------------------------------------------

def _collect_params(model: Model) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Float64 copies of all weights, for the check/gradient path."""
    return {i: (lw.weight.array.astype(np.float64), lw.bias.array.astype(np.float64))
            for i, lw in model.weights.items()}


def _forward_acts(spec: ModelSpec, params: dict, x: np.ndarray,
                  out_dtype) -> list[np.ndarray]:
    """Per-layer post-activation values; acts[i] is the output of layer i."""
    acts = []
    a = x
    for i, layer in enumerate(spec.layers):
        a = _apply_layer(layer, params.get(i), a, out_dtype)
        acts.append(a)
    return acts


def _loss_from_probs(probs: np.ndarray, label: int) -> float:
    return float(-math.log(max(float(probs[label]), LOG_CLAMP)))


def _backward(spec: ModelSpec, params: dict, x: np.ndarray, acts: list[np.ndarray],
              label: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Gradients of the cross-entropy loss w.r.t. every weight and bias.

    Float64 throughout; callers round to float32 for SGD updates. The Softmax
    layer folds the loss derivative into probs - onehot, exact whenever the
    log clamp is inactive.
    """
    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    d = None  # gradient w.r.t. the current layer's output
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        a_prev = acts[i - 1] if i > 0 else x
        if layer.kind == KIND_SOFTMAX:
            probs = acts[i].astype(np.float64)
            dz = probs.copy()
            dz[label] -= 1.0
            w, _ = params[i]
            grads[i] = (np.outer(a_prev.astype(np.float64), dz), dz)
            d = w @ dz
        elif layer.kind == KIND_DENSE:
            out = acts[i].astype(np.float64)
            dz = d if layer.activation != "relu" else d * (out > 0)
            w, _ = params[i]
            grads[i] = (np.outer(a_prev.astype(np.float64), dz), dz)
            d = w @ dz
        elif layer.kind == KIND_FLATTEN:
            d = d.reshape(a_prev.shape)
        elif layer.kind == KIND_POOL:
            d = _pool_backward(layer, a_prev.astype(np.float64), d)
        elif layer.kind == KIND_CONV:
            out = acts[i].astype(np.float64)
            dz = d if layer.activation != "relu" else d * (out > 0)
            w, _ = params[i]
            dw, db, d = _conv_backward(layer, a_prev.astype(np.float64), dz, w)
            grads[i] = (dw, db)
        else:  # Input
            break
    return grads


def _pool_backward(layer: LayerSpec, a_prev: np.ndarray, d: np.ndarray) -> np.ndarray:
    win = layer.pool_window
    oh, ow, c = d.shape
    trimmed = a_prev[: oh * win, : ow * win, :]
    blocks = trimmed.reshape(oh, win, ow, win, c).transpose(0, 2, 4, 1, 3) \
                    .reshape(oh, ow, c, win * win)
    idx = blocks.argmax(axis=3)  # first maximum, deterministic
    dblocks = np.zeros_like(blocks)
    np.put_along_axis(dblocks, idx[..., None], d[..., None], axis=3)
    da = np.zeros_like(a_prev)
    da[: oh * win, : ow * win, :] = dblocks.reshape(oh, ow, c, win, win) \
        .transpose(0, 3, 1, 4, 2).reshape(oh * win, ow * win, c)
    return da


def _conv_backward(layer: LayerSpec, a_prev: np.ndarray, dz: np.ndarray,
                   weight: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kh, kw, f = layer.kernel_h, layer.kernel_w, layer.filters
    cin = a_prev.shape[2]
    oh, ow = dz.shape[0], dz.shape[1]
    cols = _conv_cols(a_prev, kh, kw)  # (oh*ow, kh*kw*cin)
    dz2 = dz.reshape(oh * ow, f)
    dw = (cols.T @ dz2).reshape(kh, kw, cin, f)
    db = dz2.sum(axis=0)
    # scatter the column gradient back onto the input image
    w2 = weight.reshape(kh * kw * cin, f)
    dcols = (dz2 @ w2.T).reshape(oh, ow, kh, kw, cin)
    da = np.zeros_like(a_prev)
    for di in range(kh):
        for dj in range(kw):
            da[di:di + oh, dj:dj + ow, :] += dcols[:, :, di, dj, :]
    return dw, db, da


def train_model(model: Model, images: list[Tensor], labels: list[int], *,
                epochs: int, learning_rate: float, batch_size: int,
                seed: int, clip_norm: float | None = None) -> tuple[Model, list[float]]:
    """Minibatch SGD with cross-entropy loss.

    The input model is untouched; a trained copy is returned together with
    the per-epoch mean training loss. The shuffle order comes from the given
    seed, so the whole run is reproducible.

    clip_norm bounds the global l2 norm of each batch gradient. The small
    uniform init leaves the deep default network with vanishing logits, and
    the learning rates needed to escape that plateau overshoot once the
    signal grows; clipping keeps those rates stable.
    """
    if not images:
        raise EmptyCorpus("no training samples")
    if len(images) != len(labels):
        raise EmptyCorpus("images and labels differ in length")
    classes = model.spec.layers[-1].units
    for lab in labels:
        if not 0 <= lab < classes:
            raise LabelOutOfRange(f"label {lab} outside [0, {classes})")
    for img in images:
        if img.shape != model.spec.input_shape:
            raise ShapeMismatch(f"sample shape {img.shape} != {model.spec.input_shape}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")

    trained = model.copy()
    rng = SplitMix64(seed)
    lr = np.float32(learning_rate)
    history: list[float] = []
    for _ in range(epochs):
        order = list(range(len(images)))
        rng.shuffle(order)
        batch_losses: list[float] = []
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            params = _collect_params(trained)
            acc: dict[int, tuple[np.ndarray, np.ndarray]] = {}
            loss_sum = 0.0
            for idx in batch:
                x = images[idx].array.astype(np.float64)
                acts = _forward_acts(trained.spec, params, x, np.float64)
                loss_sum += _loss_from_probs(acts[-1], labels[idx])
                grads = _backward(trained.spec, params, x, acts, labels[idx])
                for i, (gw, gb) in grads.items():
                    if i in acc:
                        acc[i] = (acc[i][0] + gw, acc[i][1] + gb)
                    else:
                        acc[i] = (gw, gb)
            scale = 1.0 / len(batch)
            if clip_norm is not None:
                sq = sum(float(np.sum((gw * scale) ** 2) + np.sum((gb * scale) ** 2))
                         for gw, gb in acc.values())
                norm = math.sqrt(sq)
                if norm > clip_norm:
                    scale *= clip_norm / norm
            for i, (gw, gb) in acc.items():
                lw = trained.weights[i]
                lw.weight = Tensor(lw.weight.array - lr * (gw * scale).astype(np.float32))
                lw.bias = Tensor(lw.bias.array - lr * (gb * scale).astype(np.float32))
            batch_losses.append(loss_sum / len(batch))
        history.append(sum(batch_losses) / len(batch_losses))
    return trained, history


def backward_check(model: Model, x: Tensor, label: int, step: float = 1e-3) -> float:
    """Max relative error between backprop and central finite differences.

    Both sides run the float64 path so the comparison is limited by the
    algorithms, not by float32 rounding. 0/0 cases report 0.
    """
    params = _collect_params(model)
    x64 = x.array.astype(np.float64)
    acts = _forward_acts(model.spec, params, x64, np.float64)
    grads = _backward(model.spec, params, x64, acts, label)

    def loss() -> float:
        a = _forward_acts(model.spec, params, x64, np.float64)
        return _loss_from_probs(a[-1], label)

    worst = 0.0
    for i, (gw, gb) in grads.items():
        for analytic, arr in ((gw, params[i][0]), (gb, params[i][1])):
            flat = arr.ravel()
            gflat = analytic.ravel()
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + step
                lp = loss()
                flat[j] = old - step
                lm = loss()
                flat[j] = old
                fd = (lp - lm) / (2.0 * step)
                denom = max(abs(gflat[j]), abs(fd))
                if denom > 0.0:
                    worst = max(worst, abs(gflat[j] - fd) / denom)
    return worst


# --- JSON interchange -----------------------------------------------------------

_SPEC_FIELDS = ("kernel_w", "kernel_h", "filters", "in_channels", "units",
                "prev_units", "pool_window")


def spec_to_json(spec: ModelSpec) -> dict:
    layers = []
    for layer in spec.layers:
        entry: dict = {"kind": layer.kind}
        for name in _SPEC_FIELDS:
            value = getattr(layer, name)
            if value is not None:
                entry[name] = value
        if layer.activation != "none":
            entry["activation"] = layer.activation
        layers.append(entry)
    return {"input_shape": list(spec.input_shape), "layers": layers}


def spec_from_json(doc: dict) -> ModelSpec:
    layers = tuple(
        LayerSpec(kind=entry["kind"],
                  activation=entry.get("activation", "none"),
                  **{name: entry.get(name) for name in _SPEC_FIELDS})
        for entry in doc["layers"])
    return ModelSpec(tuple(doc["input_shape"]), layers)


def load_spec(path) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_json(json.load(fh))


def save_spec(spec: ModelSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_json(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def weights_to_json(model: Model) -> dict:
    layers = {}
    for i, lw in model.weights.items():
        layers[str(i)] = {
            "weight_shape": list(lw.weight.shape),
            "weight": [float(v) for v in lw.weight.data],
            "bias": [float(v) for v in lw.bias.data],
        }
    return {"layers": layers}


def weights_from_json(doc: dict, spec: ModelSpec) -> Model:
    """Rebuild a Model from serialized weights; exact at float32 precision."""
    rspec = resolve_spec(spec)
    weights: dict[int, LayerWeights] = {}
    for key, entry in doc["layers"].items():
        w = np.asarray(entry["weight"], dtype=np.float32).reshape(entry["weight_shape"])
        b = np.asarray(entry["bias"], dtype=np.float32)
        weights[int(key)] = LayerWeights(Tensor(w), Tensor(b))
    return Model(rspec, weights)


def load_weights(path, spec: ModelSpec) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        return weights_from_json(json.load(fh), spec)


def save_weights(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(weights_to_json(model), fh, sort_keys=True)
        fh.write("\n")
