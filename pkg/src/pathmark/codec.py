"""Watermark message extractor.

A fixed linear feature map (luma -> 32x32 antialiased resize -> orthonormal
DCT -> first ``d`` zigzag AC coefficients) feeds a trainable linear bit
projection. After training, a PCA-whitening affine layer fitted on clean
images is appended so that logits are centred and decorrelated.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import attacks
from .grid import dct_matrix, resize_matrix, zigzag
from .tensorio import FormatError, atomic_write_bytes

VERSION = "pathmark-wmk/1"
MODEL_MAGIC = b"WMK1"
LUMA = np.array([0.299, 0.587, 0.114])
CARRIER_GRID = 32
CARRIER_AMPLITUDE = 0.02
EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureSpec:
    canonical_size: int = 32
    dct_coeff_count: int = 256

    def __post_init__(self):
        if not 1 <= self.dct_coeff_count < self.canonical_size**2:
            raise ValueError("dct_coeff_count must leave out the DC term")


@dataclass
class ExtractorModel:
    projection: np.ndarray  # (k, d)
    bias: np.ndarray  # (k,)
    feature_spec: FeatureSpec = field(default_factory=FeatureSpec)
    whitening_weight: np.ndarray | None = None  # (k, k)
    whitening_bias: np.ndarray | None = None  # (k,)
    seed: int = 0
    meta: dict = field(default_factory=dict)
    version: str = VERSION

    @property
    def k(self) -> int:
        return self.projection.shape[0]

    @property
    def whitened(self) -> bool:
        return self.whitening_weight is not None

    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        """Collapse projection and whitening into one ``(A, c)`` with logits = A f + c."""
        if not self.whitened:
            return self.projection, self.bias
        ww = self.whitening_weight
        return ww @ self.projection, ww @ self.bias + self.whitening_bias


def random_message(k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=k).astype(np.uint8)


def message_to_hex(bits) -> str:
    bits = np.asarray(bits, dtype=np.uint8)
    pad = -len(bits) % 4
    padded = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    nibbles = padded.reshape(-1, 4) @ np.array([8, 4, 2, 1])
    return "".join(f"{v:x}" for v in nibbles)


def message_from_hex(text: str, k: int | None = None) -> np.ndarray:
    text = text.strip().lower().removeprefix("0x")
    try:
        vals = [int(ch, 16) for ch in text]
    except ValueError:
        raise ValueError(f"message {text!r} is not a hex string") from None
    bits = np.array([(v >> s) & 1 for v in vals for s in (3, 2, 1, 0)], dtype=np.uint8)
    if k is not None:
        if len(bits) < k or np.any(bits[k:]):
            raise ValueError(f"hex message {text!r} does not hold exactly {k} bits")
        bits = bits[:k]
    return bits


def message_to_binary(bits) -> str:
    return "".join(str(int(b)) for b in bits)


# -- features ---------------------------------------------------------------


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA if img.ndim == 3 else img


def extract_features(img: np.ndarray, spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    y = to_luma(img)
    n = spec.canonical_size
    x = resize_matrix(y.shape[0], n) @ y @ resize_matrix(y.shape[1], n).T
    x = x - x.mean()
    c = dct_matrix(n)
    coef = c @ x @ c.T
    zr, zc = zigzag(n)
    return coef[zr[1 : spec.dct_coeff_count + 1], zc[1 : spec.dct_coeff_count + 1]]


def features_vjp(grad_f: np.ndarray, shape: tuple, spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    """Pull a feature-space gradient back to image space (transpose of extract_features)."""
    n = spec.canonical_size
    zr, zc = zigzag(n)
    g = np.zeros((n, n))
    g[zr[1 : spec.dct_coeff_count + 1], zc[1 : spec.dct_coeff_count + 1]] = grad_f
    c = dct_matrix(n)
    g = c.T @ g @ c
    g = g - g.mean()
    gy = resize_matrix(shape[0], n).T @ g @ resize_matrix(shape[1], n)
    if len(shape) == 3:
        return gy[..., None] * LUMA
    return gy


# -- decoding ---------------------------------------------------------------


def decode_logits(model: ExtractorModel, img: np.ndarray) -> np.ndarray:
    logits = model.projection @ extract_features(img, model.feature_spec) + model.bias
    if model.whitened:
        logits = model.whitening_weight @ logits + model.whitening_bias
    return logits


def decode_bits(logits) -> np.ndarray:
    return (np.asarray(logits) > 0).astype(np.uint8)


def decode(model: ExtractorModel, img: np.ndarray) -> np.ndarray:
    return decode_bits(decode_logits(model, img))


def bit_accuracy(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"message length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty messages")
    return float(np.count_nonzero(a == b)) / a.size


def msg_loss(logits, m) -> tuple[float, np.ndarray]:
    """Summed binary cross-entropy on logits and its gradient ``sigmoid(z) - m``."""
    z = np.asarray(logits, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if z.shape != m.shape:
        raise ValueError(f"length mismatch: {z.shape} vs {m.shape}")
    # -[m log s(z) + (1-m) log(1-s(z))] = softplus(z) - m z
    value = float(np.sum(np.logaddexp(0.0, z) - m * z))
    return value, expit(z) - m


# -- training ---------------------------------------------------------------


def init_model(k: int, seed: int, spec: FeatureSpec = FeatureSpec()) -> ExtractorModel:
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    rng = np.random.default_rng([seed, 0])
    d = spec.dct_coeff_count
    return ExtractorModel(
        projection=rng.normal(0.0, 1.0 / np.sqrt(d), size=(k, d)),
        bias=np.zeros(k),
        feature_spec=spec,
        seed=seed,
    )


def carrier_patterns(k: int, shape: tuple, seed: int) -> np.ndarray:
    """Per-bit +/-1 patterns on a coarse grid, block-upsampled to ``shape``."""
    rng = np.random.default_rng([seed, 1])
    coarse = rng.choice(np.array([-1.0, 1.0]), size=(k, CARRIER_GRID, CARRIER_GRID))
    h, w = shape[:2]
    ri = np.arange(h) * CARRIER_GRID // h
    ci = np.arange(w) * CARRIER_GRID // w
    return coarse[:, ri][:, :, ci]


def embed_carriers(img: np.ndarray, m, carriers: np.ndarray) -> np.ndarray:
    signs = 2.0 * np.asarray(m, dtype=np.float64) - 1.0
    pattern = CARRIER_AMPLITUDE * np.tensordot(signs, carriers, axes=1)
    if img.ndim == 3:
        pattern = pattern[..., None]
    return np.clip(img + pattern, 0.0, 1.0)


def train_extractor(
    corpus,
    k: int = 48,
    transforms=(),
    steps: int = 4000,
    seed: int = 0,
    lr: float = 5e-4,
    betas=(0.9, 0.999),
    spec: FeatureSpec = FeatureSpec(),
) -> ExtractorModel:
    """Fit projection and bias with Adam on BCE over carrier-watermarked, transformed images.

    Each step draws one image, a random message and one transform (identity
    included). The carrier encoder is only a training device and is not kept.
    """
    if len(corpus) == 0:
        raise ValueError("empty training corpus")
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    model = init_model(k, seed, spec)
    choices = [attacks.AttackSpec("none")] + [t for t in transforms if t.kind != "none"]
    model.meta = {"transforms": [str(t) for t in choices], "steps": steps, "lr": lr}
    if steps == 0:
        return model
    rng = np.random.default_rng([seed, 2])
    w, b = model.projection.copy(), model.bias.copy()
    mw, vw = np.zeros_like(w), np.zeros_like(w)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    b1, b2 = betas
    carriers = {}
    for step in range(1, steps + 1):
        img = np.asarray(corpus[rng.integers(len(corpus))], dtype=np.float64)
        m = random_message(k, rng)
        t = choices[rng.integers(len(choices))]
        if img.shape[:2] not in carriers:
            carriers[img.shape[:2]] = carrier_patterns(k, img.shape, seed)
        marked = attacks.apply(embed_carriers(img, m, carriers[img.shape[:2]]), t)
        f = extract_features(marked, spec)
        _, g = msg_loss(w @ f + b, m)
        gw, gb = np.outer(g, f), g
        mw = b1 * mw + (1 - b1) * gw
        vw = b2 * vw + (1 - b2) * gw * gw
        mb = b1 * mb + (1 - b1) * gb
        vb = b2 * vb + (1 - b2) * gb * gb
        c1, c2 = 1 - b1**step, 1 - b2**step
        w -= lr * (mw / c1) / (np.sqrt(vw / c2) + 1e-8)
        b -= lr * (mb / c1) / (np.sqrt(vb / c2) + 1e-8)
    model.projection, model.bias = w, b
    return model


def whiten_fit(model: ExtractorModel, corpus, null_mean: bool = True) -> ExtractorModel:
    """Append PCA whitening fitted on the raw logits of unmarked images.

    With ``null_mean`` the projection is first made orthogonal to the corpus
    mean feature vector. The composite affine offset then vanishes, so
    logits scale exactly with image contrast (a brightness gain cannot flip
    bits while nothing clips).
    """
    n = len(corpus)
    if n < 10 * model.k:
        raise ValueError(f"whitening needs at least {10 * model.k} images, got {n}")
    feats = np.stack([extract_features(img, model.feature_spec) for img in corpus])
    projection = model.projection
    if null_mean:
        mu_f = feats.mean(axis=0)
        norm2 = float(mu_f @ mu_f)
        if norm2 > 0:
            projection = projection - np.outer(projection @ mu_f, mu_f) / norm2
    logits = feats @ projection.T + model.bias
    mu = logits.mean(axis=0)
    centred = logits - mu
    sigma = centred.T @ centred / n
    evals, evecs = np.linalg.eigh(sigma)
    evals = np.maximum(evals, EIG_FLOOR)
    weight = (evecs / np.sqrt(evals)).T  # Lambda^{-1/2} U^T
    meta = dict(model.meta, whitening_corpus=n, null_mean=null_mean)
    return replace(
        model, projection=projection, whitening_weight=weight, whitening_bias=-weight @ mu, meta=meta
    )


# -- persistence ------------------------------------------------------------


def encode_model(model: ExtractorModel) -> bytes:
    k, d = model.projection.shape
    header = {
        "version": model.version,
        "k": k,
        "d": d,
        "canonical_size": model.feature_spec.canonical_size,
        "seed": model.seed,
        "whitened": model.whitened,
        "meta": model.meta,
    }
    arrays = [model.projection, model.bias]
    if model.whitened:
        arrays += [model.whitening_weight, model.whitening_bias]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    hdr = json.dumps(header, sort_keys=True).encode()
    return MODEL_MAGIC + struct.pack("<I", len(hdr)) + hdr + payload


def decode_model(buf: bytes, path=None) -> ExtractorModel:
    if buf[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic", 0, path)
    if len(buf) < 8:
        raise FormatError("truncated model header", len(buf), path)
    (hlen,) = struct.unpack_from("<I", buf, 4)
    try:
        header = json.loads(buf[8 : 8 + hlen])
        k, d = int(header["k"]), int(header["d"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"bad model header ({exc})", 8, path) from exc
    sizes = [k * d, k] + ([k * k, k] if header["whitened"] else [])
    off = 8 + hlen
    if len(buf) - off != 8 * sum(sizes):
        raise FormatError(f"payload size {len(buf) - off} does not match header", off, path)
    arrays = []
    for n in sizes:
        arrays.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64))
        off += 8 * n
    model = ExtractorModel(
        projection=arrays[0].reshape(k, d),
        bias=arrays[1],
        feature_spec=FeatureSpec(int(header["canonical_size"]), d),
        seed=int(header["seed"]),
        meta=header.get("meta", {}),
        version=header["version"],
    )
    if header["whitened"]:
        model.whitening_weight = arrays[2].reshape(k, k)
        model.whitening_bias = arrays[3]
    if not np.all(np.isfinite(model.projection)):
        raise FormatError("non-finite projection", 8 + hlen, path)
    return model


def save_model(model: ExtractorModel, path) -> None:
    atomic_write_bytes(path, encode_model(model))


def load_model(path) -> ExtractorModel:
    return decode_model(Path(path).read_bytes(), path)
