"""Synthetic phantoms with known lesion masks and matching attention bundles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import resize
from .tensorio import (
    AttentionBundle,
    AttentionSlice,
    Token,
    Word,
    atomic_write_bytes,
    save_bundle,
    save_field,
    save_image,
)

FWHM_SIGMA = np.sqrt(2.0 * np.log(2.0))  # half-max radius of a unit Gaussian


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    size: tuple = (128, 128)
    lesion_count: int = 1
    lesion_radius: float = 8.0
    distractor_tokens: int = 2
    distractor_blob_count: int = 2
    noise_level: float = 0.004
    attention_resolutions: tuple = (8, 16, 32)
    layers: int = 3
    heads: int = 2
    timesteps: int = 2
    attention_noise: float = 0.02
    background_level: float = 0.22
    mode_amplitude: float = 0.012
    lesion_amplitude: float = 0.12

    def __post_init__(self):
        h, w = self.size
        if h < 8 or w < 8:
            raise ValueError(f"phantom size must be at least 8x8, got {self.size}")
        if not 1 <= self.lesion_count <= 4:
            raise ValueError(f"lesion_count must be in 1..4, got {self.lesion_count}")
        if self.lesion_radius <= 0 or 4 * self.lesion_radius >= min(h, w):
            raise ValueError(f"lesion_radius {self.lesion_radius} does not fit a {h}x{w} image")
        if self.distractor_tokens < 0 or self.distractor_blob_count < 2:
            raise ValueError("need distractor_tokens >= 0 and distractor_blob_count >= 2")
        if min(self.layers, self.heads, self.timesteps) < 1 or not self.attention_resolutions:
            raise ValueError("layers, heads, timesteps and resolutions must be non-empty")
        if self.noise_level < 0 or self.attention_noise < 0:
            raise ValueError("noise levels must be non-negative")

    def to_json(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        d["attention_resolutions"] = list(self.attention_resolutions)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        doc["size"] = tuple(doc["size"])
        doc["attention_resolutions"] = tuple(doc["attention_resolutions"])
        return cls(**doc)


@dataclass
class Phantom:
    image: np.ndarray
    mask: np.ndarray
    centers: list = field(default_factory=list)


def _place(rng, h, w, margin, avoid, min_dist, tries=1000):
    for _ in range(tries):
        c = (rng.uniform(margin, h - 1 - margin), rng.uniform(margin, w - 1 - margin))
        if all(np.hypot(c[0] - a[0], c[1] - a[1]) >= min_dist for a in avoid):
            return c
    raise PlacementError(f"could not place a blob after {tries} tries")


def _gaussian(h, w, center, sigma):
    yy, xx = np.mgrid[0:h, 0:w]
    return np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2.0 * sigma**2))


def gen_phantom(spec: SynthSpec, seed: int) -> Phantom:
    """Smooth cosine-mode background with vignetting plus Gaussian lesions.

    Intensities stay below 0.45 so that a doubling attack does not clip.
    """
    rng = np.random.default_rng([seed, 10])
    h, w = spec.size
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    bg = np.full((h, w), spec.background_level)
    for u in range(4):
        for v in range(4):
            if u == v == 0:
                continue
            amp = spec.mode_amplitude * rng.uniform(-1, 1) / (u + v)
            phase = rng.uniform(0, 2 * np.pi)
            bg += amp * np.cos(np.pi * (u * yy + v * xx) + phase)
    r2 = (yy - 0.5) ** 2 + (xx - 0.5) ** 2
    bg *= 1.0 - 0.6 * r2

    sigma = spec.lesion_radius / FWHM_SIGMA
    profile = np.zeros((h, w))
    centers = []
    for _ in range(spec.lesion_count):
        c = _place(rng, h, w, 2 * spec.lesion_radius, centers, 4 * spec.lesion_radius)
        centers.append(c)
        profile = np.maximum(profile, _gaussian(h, w, c, sigma))
    img = bg + spec.lesion_amplitude * profile
    if spec.noise_level > 0:
        img = img + rng.normal(0.0, spec.noise_level, size=(h, w))
    mask = (profile > 0.5).astype(np.float64)
    return Phantom(np.clip(img, 0.0, 1.0), mask, centers)


def _slices_for(base: np.ndarray, spec: SynthSpec, rng) -> list[AttentionSlice]:
    slices = []
    res = spec.attention_resolutions
    for layer in range(spec.layers):
        r = res[layer % len(res)]
        small = np.maximum(resize(base, r, r), 0.0)
        for head in range(spec.heads):
            for t in range(spec.timesteps):
                gain = rng.uniform(0.6, 1.4)
                noise = spec.attention_noise * rng.uniform(0, 1, size=(r, r))
                m = gain * small + noise
                m = m / m.max()
                slices.append(AttentionSlice(layer, head, t, m.astype(np.float32).astype(np.float64)))
    return slices


def gen_bundle(phantom: Phantom, spec: SynthSpec, seed: int, word: str = "opacity") -> AttentionBundle:
    """One pathology word: a clean token on the lesions and multi-blob distractors.

    Distractors keep a weaker copy of the lesion response and add
    ``distractor_blob_count`` equally bright blobs away from every lesion.
    """
    rng = np.random.default_rng([seed, 20])
    h, w = spec.size
    blur = max(1.0, spec.lesion_radius)
    lesion_field = gaussian_filter(phantom.mask, blur)
    lesion_field /= lesion_field.max()
    tokens = [Token(f"{word}#clean", _slices_for(lesion_field, spec, rng))]
    sigma = spec.lesion_radius / FWHM_SIGMA
    spacing = 6 * spec.lesion_radius
    for d in range(spec.distractor_tokens):
        taken = list(phantom.centers)
        fld = 0.9 * lesion_field
        for _ in range(spec.distractor_blob_count):
            c = _place(rng, h, w, 2 * spec.lesion_radius, taken, spacing)
            taken.append(c)
            fld = np.maximum(fld, _gaussian(h, w, c, sigma * 1.4))
        tokens.append(Token(f"{word}#noisy{d}", _slices_for(fld, spec, rng)))
    # shuffle token positions so the clean token is not always first
    order = rng.permutation(len(tokens))
    tokens = [tokens[i] for i in order]
    bundle = AttentionBundle(tokens, [Word(word, list(range(len(tokens))))], (h, w))
    return bundle.validate()


def clean_token_index(bundle: AttentionBundle) -> int:
    return next(i for i, t in enumerate(bundle.tokens) if t.text.endswith("#clean"))


def gen_instance(spec: SynthSpec, seed: int):
    ph = gen_phantom(spec, seed)
    return ph, gen_bundle(ph, spec, seed)


def gen_corpus(spec: SynthSpec, n: int, seed: int, out_dir) -> Path:
    """Write ``n`` (image, mask, bundle) triples and a ``corpus.json`` manifest."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = Path(out_dir)
    items = []
    for i in range(n):
        s = seed + i
        ph, bundle = gen_instance(spec, s)
        stem = f"{i:05d}"
        save_image(ph.image, out / "images" / f"{stem}.pgm")
        save_field(ph.mask, out / "masks" / f"{stem}.fld")
        save_bundle(bundle, out / "bundles" / stem / "bundle.json")
        items.append(
            {
                "index": i,
                "seed": s,
                "image": f"images/{stem}.pgm",
                "mask": f"masks/{stem}.fld",
                "bundle": f"bundles/{stem}/bundle.json",
                "clean_token": clean_token_index(bundle),
            }
        )
    manifest = out / "corpus.json"
    doc = {"spec": spec.to_json(), "seed": seed, "n": n, "items": items}
    atomic_write_bytes(manifest, json.dumps(doc, indent=1).encode())
    return manifest
