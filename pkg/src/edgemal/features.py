"""Trace and binary-byte featurization.

Turns labeled hardware-counter traces plus raw binary bytes into grayscale
images for the classifier, ranks counter events by correlation with the class
labels, and generates the seeded synthetic corpus used throughout the tests
and the CLI.

Pixel conventions fixed for reproducibility: trace values are min-max scaled
to 0..255 with rounding half away from zero; a constant trace maps to 0; the
pixel stream is trace values followed by binary bytes, truncated or
zero-padded to 256*256; downsampling averages 8x8 blocks with the same
rounding rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .cnn import Tensor
from .errors import EmptyInput, EmptyTraceSet, KOutOfRange, ShapeMismatch, WrongSide
from .rng import SplitMix64

FULL_SIDE = 256
SMALL_SIDE = 32
PIXELS = FULL_SIDE * FULL_SIDE

CLASS_NAMES = ("benign", "backdoor", "rootkit", "trojan", "virus", "worm")


@dataclass
class TraceSet:
    """Labeled event matrix: one row per sample, one column per event."""

    event_names: list[str]
    rows: np.ndarray          # (samples, events) float64
    labels: np.ndarray        # (samples,) int
    class_names: list[str]

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.event_names):
            raise ShapeMismatch("trace row width must equal event count")
        if self.labels.shape != (self.rows.shape[0],):
            raise ShapeMismatch("one label per trace row required")
        if not np.all(np.isfinite(self.rows)):
            raise ShapeMismatch("trace values must be finite")
        n_classes = len(self.class_names)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= n_classes):
            raise ShapeMismatch("labels must lie in [0, class count)")


@dataclass(frozen=True)
class EventRank:
    name: str
    rho: float
    rank: int


@dataclass
class GrayImage:
    """Square grayscale image stored as a flat byte vector."""

    side: int
    pixels: np.ndarray  # (side*side,) uint8
    label: int

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.side * self.side,):
            raise ShapeMismatch(f"expected {self.side * self.side} pixels")


def _round_half_away(values: np.ndarray) -> np.ndarray:
    """Round half away from zero; inputs here are always non-negative."""
    return np.floor(values + 0.5)


# --- event ranking ------------------------------------------------------------

def rank_events(traces: TraceSet) -> list[EventRank]:
    """Rank events by correlation against one-vs-rest class indicators.

    For each event the score is the correlation of largest magnitude over all
    classes, sign preserved. Accumulation is single-pass (sums of x, x^2 and
    per-class sums); zero-variance columns or indicators contribute 0.
    """
    n, e = traces.rows.shape
    if n < 2 or e < 1:
        raise EmptyTraceSet(f"need >= 2 samples and >= 1 event, got {n}x{e}")

    class_count = len(traces.class_names)
    counts = np.zeros(class_count, dtype=np.float64)
    for lab in traces.labels:
        counts[lab] += 1.0

    rhos: list[float] = []
    for i in range(e):
        x = traces.rows[:, i]
        sx = 0.0
        sxx = 0.0
        sxy = np.zeros(class_count, dtype=np.float64)
        for s in range(n):
            v = float(x[s])
            sx += v
            sxx += v * v
            sxy[traces.labels[s]] += v
        mean_x = sx / n
        var_x = sxx / n - mean_x * mean_x
        best = 0.0
        best_abs = 0.0
        for k in range(class_count):
            p = counts[k] / n
            var_y = p * (1.0 - p)
            if var_x <= 0.0 or var_y <= 0.0:
                continue
            cov = sxy[k] / n - mean_x * p
            r = cov / math.sqrt(var_x * var_y)
            r = max(-1.0, min(1.0, r))
            if abs(r) > best_abs:
                best_abs = abs(r)
                best = r
        rhos.append(best)

    order = sorted(range(e), key=lambda i: (-abs(rhos[i]), traces.event_names[i]))
    ranked = [EventRank(traces.event_names[i], rhos[i], pos + 1)
              for pos, i in enumerate(order)]
    return ranked


def select_top_events(ranked: list[EventRank], k: int) -> list[str]:
    """Names of the k best-ranked events, best first."""
    if k < 1 or k > len(ranked):
        raise KOutOfRange(f"k must be in [1, {len(ranked)}], got {k}")
    return [entry.name for entry in ranked[:k]]


# --- image construction ---------------------------------------------------------

def to_grayscale(trace_values, binary_bytes: bytes, label: int = 0) -> GrayImage:
    """Pack scaled trace values followed by raw bytes into a 256x256 image."""
    values = np.asarray(trace_values, dtype=np.float64).ravel()
    blob = np.frombuffer(bytes(binary_bytes), dtype=np.uint8)
    if values.size == 0 and blob.size == 0:
        raise EmptyInput("need at least one trace value or byte")

    pixels = np.zeros(PIXELS, dtype=np.uint8)
    if values.size:
        vmin = values.min()
        vmax = values.max()
        if vmax > vmin:
            scaled = _round_half_away(255.0 * (values - vmin) / (vmax - vmin))
        else:
            scaled = np.zeros_like(values)
        take = min(values.size, PIXELS)
        pixels[:take] = scaled[:take].astype(np.uint8)
    start = min(values.size, PIXELS)
    take = min(blob.size, PIXELS - start)
    if take > 0:
        pixels[start:start + take] = blob[:take]
    return GrayImage(FULL_SIDE, pixels, label)


def downsample(img: GrayImage) -> GrayImage:
    """Reduce 256x256 to 32x32 by averaging 8x8 blocks; label is kept."""
    if img.side != FULL_SIDE:
        raise WrongSide(f"expected side {FULL_SIDE}, got {img.side}")
    grid = img.pixels.reshape(FULL_SIDE, FULL_SIDE).astype(np.float64)
    means = grid.reshape(SMALL_SIDE, 8, SMALL_SIDE, 8).mean(axis=(1, 3))
    return GrayImage(SMALL_SIDE, _round_half_away(means).astype(np.uint8).ravel(),
                     img.label)


def image_to_tensor(img: GrayImage) -> Tensor:
    """Classifier input: bytes centered at 128, shaped (side, side, 1).

    Keeping the byte scale (rather than [0, 1]) matters for trainability:
    with the small uniform weight init, unit-scale inputs leave the deep
    default network with logits too small for SGD to escape.
    """
    arr = img.pixels.astype(np.float32).reshape(img.side, img.side, 1)
    return Tensor(arr - np.float32(128.0))


# --- synthetic corpus ------------------------------------------------------------

@dataclass
class CorpusBundle:
    """Generator output: traces, per-sample binary blobs, and the planted
    ground truth (class id -> shifted event columns) used by the tests."""

    traces: TraceSet
    blobs: list[bytes]
    planted: dict[int, list[int]]


def gen_synthetic_corpus(*, samples_per_class: int, events: int = 16,
                         noise: float = 4.0, classes: int = 6,
                         seed: int = 42) -> CorpusBundle:
    """Seeded stand-in corpus: traces with per-class mean shifts and binary
    blobs with a per-class block texture.

    Class 0 is the benign baseline; each malware class k >= 1 shifts event
    column k-1. Every class draws from its own seed substream, so per-class
    generation is order-independent. noise=0 makes rows (and blobs) identical
    within a class.
    """
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    if classes < 2:
        raise ValueError("need at least two classes")
    if events < classes - 1:
        raise ValueError(f"need >= {classes - 1} events for {classes} classes")

    names = list(CLASS_NAMES[:classes])
    while len(names) < classes:
        names.append(f"malware{len(names)}")

    base_mean = 100.0
    shift = 50.0
    planted = {k: [k - 1] for k in range(1, classes)}

    root = SplitMix64(seed)
    rows = np.zeros((classes * samples_per_class, events), dtype=np.float64)
    labels = np.zeros(classes * samples_per_class, dtype=np.int64)
    blobs: list[bytes] = []
    row = 0
    for k in range(classes):
        stream = root.substream(k)
        shifted = set(planted.get(k, ()))
        for _ in range(samples_per_class):
            for j in range(events):
                mean = base_mean + (shift if j in shifted else 0.0)
                rows[row, j] = mean + noise * stream.normal()
            blobs.append(_class_blob(k, stream, noise))
            labels[row] = k
            row += 1

    traces = TraceSet([f"event_{j}" for j in range(events)], rows, labels, names)
    return CorpusBundle(traces, blobs, planted)


def _class_blob(k: int, stream: SplitMix64, noise: float) -> bytes:
    """Binary blob with an 8x8-block texture specific to class k.

    Block values survive downsampling exactly (every 8x8 block is constant),
    so the 32x32 image keeps the class texture. The per-block jitter scales
    with the corpus noise level.
    """
    modulus = k + 2
    step = 255 // (modulus - 1) if modulus > 1 else 0
    rows_idx = np.arange(SMALL_SIDE)
    base = ((rows_idx[:, None] + rows_idx[None, :] * (k + 1)) % modulus) * step
    base = base.astype(np.float64)
    if noise > 0.0:
        jitter = np.empty((SMALL_SIDE, SMALL_SIDE), dtype=np.float64)
        flat = jitter.ravel()
        for j in range(flat.size):
            flat[j] = noise * stream.normal()
        base = base + jitter
    blocks = np.clip(_round_half_away(np.maximum(base, 0.0)), 0, 255).astype(np.uint8)
    full = np.kron(blocks, np.ones((8, 8), dtype=np.uint8))
    return full.tobytes()


def corpus_images(bundle: CorpusBundle, selected_events: list[int]) -> list[GrayImage]:
    """32x32 labeled images for every corpus sample, using the given event
    column order for the trace pixels."""
    images = []
    for i in range(bundle.traces.rows.shape[0]):
        values = bundle.traces.rows[i, selected_events]
        img = to_grayscale(values, bundle.blobs[i], int(bundle.traces.labels[i]))
        images.append(downsample(img))
    return images


def split_corpus(labels, train_frac: float, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic stratified train/test index split."""
    by_class: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(int(lab), []).append(i)
    rng = SplitMix64(seed)
    train: list[int] = []
    test: list[int] = []
    for lab in sorted(by_class):
        idx = by_class[lab]
        rng.shuffle(idx)
        cut = int(round(train_frac * len(idx)))
        train.extend(idx[:cut])
        test.extend(idx[cut:])
    return sorted(train), sorted(test)


# --- file formats ---------------------------------------------------------------

def write_pgm(img: GrayImage, path) -> None:
    """Binary PGM (P5), one byte per pixel, maxval 255."""
    header = f"P5\n{img.side} {img.side}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + img.pixels.tobytes())


def read_pgm(path, label: int = 0) -> GrayImage:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ShapeMismatch(f"not a supported PGM file: {path}")
    w, h = (int(tok) for tok in parts[1].split())
    if w != h:
        raise ShapeMismatch("only square images are supported")
    pixels = np.frombuffer(parts[3][: w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ShapeMismatch(f"truncated PGM file: {path}")
    return GrayImage(w, pixels.copy(), label)


def write_traces_csv(traces: TraceSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(traces.event_names + ["label"])
        for row, lab in zip(traces.rows, traces.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(lab)])


def read_traces_csv(path, class_names: list[str] | None = None) -> TraceSet:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ShapeMismatch("trace CSV must end with a label column")
        names = header[:-1]
        rows = []
        labels = []
        for rec in reader:
            rows.append([float(v) for v in rec[:-1]])
            labels.append(int(rec[-1]))
    if class_names is None:
        top = max(labels) + 1 if labels else 1
        class_names = list(CLASS_NAMES[:top])
        while len(class_names) < top:
            class_names.append(f"malware{len(class_names)}")
    return TraceSet(names, np.asarray(rows, dtype=np.float64),
                    np.asarray(labels, dtype=np.int64), class_names)


def ranked_to_json(ranked: list[EventRank]) -> list[dict]:
    return [{"name": r.name, "rho": r.rho, "rank": r.rank} for r in ranked]


def ranked_from_json(doc: list[dict]) -> list[EventRank]:
    return [EventRank(d["name"], float(d["rho"]), int(d["rank"])) for d in doc]
