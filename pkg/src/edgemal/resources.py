"""Per-layer parameter counting, inference-memory estimation, and the
logistic regressor that decides on-device vs. offloaded inference.

The memory model is deliberately coarse: every parameter costs a fixed
number of kilobytes (default 1 KB = 1024 bytes), scaled by batch count and
batch size. All byte arithmetic uses Python integers, so totals never
overflow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import cnn
from .errors import DegenerateLabels, UnfittedModel, UnresolvedShape
from .rng import SplitMix64

KB = 1024

FEATURE_NAMES = (
    "total_params",
    "total_weights",
    "total_biases",
    "total_activations",
    "res_model_bytes",
    "res_node_bytes",
    "res_node_minus_model",
)

ON_DEVICE = "OnDevice"
OFFLOAD = "Offload"

_FIT_ITERATIONS = 500
_FIT_RATE = 0.1


@dataclass(frozen=True)
class ParamProfile:
    """Learnable-parameter count per layer plus the total."""

    per_layer: tuple[int, ...]
    total: int


@dataclass(frozen=True)
class MemoryQuery:
    profile: ParamProfile
    n_batches: int = 1
    batch_size: int = 1
    kb_per_param: int = 1


@dataclass
class RegressorModel:
    """Linear model with sigmoid link over standardized features.

    beta holds one weight per feature plus a trailing bias term; mean/std are
    the training-set standardization constants.
    """

    beta: np.ndarray
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class OffloadDecision:
    verdict: str   # ON_DEVICE or OFFLOAD
    score: float   # in [0, 1]; ON_DEVICE iff score >= 0.5


def count_layer_params(layer: cnn.LayerSpec) -> int:
    """Learnable parameters of one layer.

    Conv: (kernel area * input channels + 1 bias) per filter.
    Dense/Softmax: one weight per input-output pair plus one bias per unit.
    Input, Pool and Flatten have none.
    """
    if layer.kind == cnn.KIND_CONV:
        if layer.in_channels is None:
            raise UnresolvedShape("Conv layer needs in_channels resolved")
        return (layer.kernel_w * layer.kernel_h * layer.in_channels + 1) * layer.filters
    if layer.kind in (cnn.KIND_DENSE, cnn.KIND_SOFTMAX):
        if layer.prev_units is None:
            raise UnresolvedShape(f"{layer.kind} layer needs prev_units resolved")
        return layer.units * layer.prev_units + layer.units
    return 0


def count_model_params(spec: cnn.ModelSpec) -> ParamProfile:
    """Per-layer counts in layer order; resolves the spec first."""
    rspec = cnn.resolve_spec(spec)
    per_layer = tuple(count_layer_params(layer) for layer in rspec.layers)
    return ParamProfile(per_layer, sum(per_layer))


def estimate_model_memory(query: MemoryQuery) -> int:
    """Bytes needed to host inference: batches x batch size x params x KB."""
    if query.n_batches < 1 or query.batch_size < 1 or query.kb_per_param < 1:
        raise ValueError("n_batches, batch_size and kb_per_param must be >= 1")
    return (query.n_batches * query.batch_size * query.profile.total
            * query.kb_per_param * KB)


def model_bytes(spec: cnn.ModelSpec, *, n_batches: int = 1, batch_size: int = 1,
                kb_per_param: int = 1) -> int:
    return estimate_model_memory(MemoryQuery(count_model_params(spec),
                                             n_batches, batch_size, kb_per_param))


def layer_bytes(spec: cnn.ModelSpec, *, n_batches: int = 1, batch_size: int = 1,
                kb_per_param: int = 1) -> list[int]:
    """Per-layer byte costs under the same memory model; sums to model_bytes."""
    profile = count_model_params(spec)
    scale = n_batches * batch_size * kb_per_param * KB
    return [count * scale for count in profile.per_layer]


# --- feature assembly -------------------------------------------------------------

def _weight_bias_counts(rspec: cnn.ModelSpec) -> tuple[int, int]:
    weights = 0
    biases = 0
    for layer in rspec.layers:
        if layer.kind == cnn.KIND_CONV:
            weights += layer.kernel_h * layer.kernel_w * layer.in_channels * layer.filters
            biases += layer.filters
        elif layer.kind in (cnn.KIND_DENSE, cnn.KIND_SOFTMAX):
            weights += layer.prev_units * layer.units
            biases += layer.units
    return weights, biases


def feature_vector(spec: cnn.ModelSpec, node_free_bytes: int, *,
                   n_batches: int = 1, batch_size: int = 1,
                   kb_per_param: int = 1) -> np.ndarray:
    """Regressor input in FEATURE_NAMES order. total_activations counts every
    layer's output elements, the input passthrough included."""
    rspec = cnn.resolve_spec(spec)
    profile = count_model_params(rspec)
    weights, biases = _weight_bias_counts(rspec)
    activations = sum(int(np.prod(layer.out_shape)) for layer in rspec.layers)
    mem = estimate_model_memory(MemoryQuery(profile, n_batches, batch_size,
                                            kb_per_param))
    return np.array([profile.total, weights, biases, activations,
                     mem, node_free_bytes, node_free_bytes - mem],
                    dtype=np.float64)


def sample_model_spec(rng: SplitMix64) -> cnn.ModelSpec:
    """Random small-but-valid model spec: optional conv/pool stages, an
    optional dense layer, and a softmax head."""
    side = 6 + rng.randint(11)
    channels = 1 + rng.randint(2)
    layers = [cnn.LayerSpec(cnn.KIND_INPUT)]
    cur = (side, side, channels)
    for _ in range(rng.randint(3)):
        max_k = min(3, cur[0], cur[1])
        if max_k < 1:
            break
        k = 1 + rng.randint(max_k)
        filters = 1 + rng.randint(8)
        act = "relu" if rng.randint(2) else "none"
        layers.append(cnn.LayerSpec(cnn.KIND_CONV, kernel_w=k, kernel_h=k,
                                    filters=filters, activation=act))
        cur = (cur[0] - k + 1, cur[1] - k + 1, filters)
        if rng.randint(2) and min(cur[0], cur[1]) >= 2:
            layers.append(cnn.LayerSpec(cnn.KIND_POOL, pool_window=2))
            cur = (cur[0] // 2, cur[1] // 2, cur[2])
    layers.append(cnn.LayerSpec(cnn.KIND_FLATTEN))
    if rng.randint(2):
        act = "relu" if rng.randint(2) else "none"
        layers.append(cnn.LayerSpec(cnn.KIND_DENSE, units=2 + rng.randint(15),
                                    activation=act))
    layers.append(cnn.LayerSpec(cnn.KIND_SOFTMAX, units=2 + rng.randint(7)))
    return cnn.ModelSpec((side, side, channels), tuple(layers))


def build_regressor_dataset(seed: int, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample random specs and node capacities; the label is the ground-truth
    comparator: 1 (fits on device) iff model bytes <= node free bytes.

    Two distribution choices keep the target learnable by a linear model at
    the fixed fitting budget: batch scaling lands every model's memory in a
    bounded 1..16 MB window (raw byte features would otherwise span four
    orders of magnitude and drown small models in the standardization), and
    node capacities stay at least 10% away from the boundary except for the
    one case in ten that pins node == model exactly, which trains the tie
    rule (<= means on-device).
    """
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10")
    rng = SplitMix64(seed)
    xs = np.zeros((n_samples, len(FEATURE_NAMES)), dtype=np.float64)
    ys = np.zeros(n_samples, dtype=np.float64)
    for i in range(n_samples):
        spec = sample_model_spec(rng)
        params = count_model_params(spec).total
        target = (1 + rng.randint(16)) * 1024 * KB
        scale = max(1, round(target / (params * KB)))
        if rng.randint(2):
            n_batches, batch_size = 1, scale
        else:
            n_batches, batch_size = scale, 1
        mem = model_bytes(spec, n_batches=n_batches, batch_size=batch_size)
        roll = rng.randint(10)
        if roll == 0:
            node = mem
        elif roll <= 4:
            node = int(mem * rng.uniform(0.2, 0.9))
        else:
            node = int(mem * rng.uniform(1.1, 1.8))
        xs[i] = feature_vector(spec, node, n_batches=n_batches, batch_size=batch_size)
        ys[i] = 1.0 if mem <= node else 0.0
    return xs, ys


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_regressor(dataset: tuple[np.ndarray, np.ndarray]) -> RegressorModel:
    """Gradient descent on the mean log-loss: fixed 500 iterations at rate
    0.1, features standardized by training mean/std. Deterministic."""
    xs, ys = dataset
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if not (np.any(ys == 0.0) and np.any(ys == 1.0)):
        raise DegenerateLabels("need both label classes to fit")
    mean = xs.mean(axis=0)
    std = xs.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    xn = (xs - mean) / std
    n, d = xn.shape
    design = np.hstack([xn, np.ones((n, 1))])
    beta = np.zeros(d + 1, dtype=np.float64)
    for _ in range(_FIT_ITERATIONS):
        p = _sigmoid(design @ beta)
        grad = design.T @ (p - ys) / n
        beta -= _FIT_RATE * grad
    return RegressorModel(beta, FEATURE_NAMES, mean, std)


def regressor_score(reg: RegressorModel, features: np.ndarray) -> float:
    xn = (np.asarray(features, dtype=np.float64) - reg.mean) / reg.std
    z = float(xn @ reg.beta[:-1] + reg.beta[-1])
    return float(_sigmoid(np.array([z]))[0])


def predict_offload(reg: RegressorModel | None, spec: cnn.ModelSpec,
                    node_free_bytes: int, *, n_batches: int = 1,
                    batch_size: int = 1, kb_per_param: int = 1) -> OffloadDecision:
    """Assemble the feature vector, apply the fitted model, threshold at 0.5."""
    if reg is None or reg.beta is None or len(reg.beta) != len(FEATURE_NAMES) + 1:
        raise UnfittedModel("predict_offload needs a fitted regressor")
    feats = feature_vector(spec, node_free_bytes, n_batches=n_batches,
                           batch_size=batch_size, kb_per_param=kb_per_param)
    score = regressor_score(reg, feats)
    verdict = ON_DEVICE if score >= 0.5 else OFFLOAD
    return OffloadDecision(verdict, score)


# --- JSON interchange ---------------------------------------------------------------

def regressor_to_json(reg: RegressorModel) -> dict:
    return {
        "beta": [float(v) for v in reg.beta],
        "feature_names": list(reg.feature_names),
        "mean": [float(v) for v in reg.mean],
        "std": [float(v) for v in reg.std],
    }


def regressor_from_json(doc: dict) -> RegressorModel:
    return RegressorModel(
        np.asarray(doc["beta"], dtype=np.float64),
        tuple(doc["feature_names"]),
        np.asarray(doc["mean"], dtype=np.float64),
        np.asarray(doc["std"], dtype=np.float64),
    )


def load_regressor(path) -> RegressorModel:
    with open(path, "r", encoding="utf-8") as fh:
        return regressor_from_json(json.load(fh))


def save_regressor(reg: RegressorModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(regressor_to_json(reg), fh, indent=2, sort_keys=True)
        fh.write("\n")
