"""Deterministic image attacks: brightness, centre crop, JPEG, rotation, resize."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import dct_matrix, resize, rotate
from .tensorio import check_image

# ITU-T T.81 Annex K, table K.1 (luminance)
ANNEX_K_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

# short name -> (column label, default parameter)
KINDS = {
    "none": ("None", None),
    "brt": ("Brt", 2.0),
    "crp": ("Crp", 0.5),
    "jpg": ("JPG", 50),
    "rot": ("Rot", 25.0),
    "res": ("Res", 0.7),
}


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {sorted(KINDS)}")
        if self.param is None and self.kind != "none":
            object.__setattr__(self, "param", KINDS[self.kind][1])
        p = self.param
        if self.kind == "brt" and not p > 0:
            raise ValueError(f"brightness factor must be > 0, got {p}")
        if self.kind in ("crp", "res") and not 0 < p <= 1:
            raise ValueError(f"{self.kind} fraction must be in (0, 1], got {p}")
        if self.kind == "jpg" and not (float(p).is_integer() and 1 <= p <= 100):
            raise ValueError(f"JPEG quality must be an integer in [1, 100], got {p}")
        if self.kind == "rot" and not np.isfinite(p):
            raise ValueError(f"rotation must be finite, got {p}")

    @property
    def label(self) -> str:
        return KINDS[self.kind][0]

    def __str__(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}:{self.param:g}"

    @classmethod
    def parse(cls, text: str) -> "AttackSpec":
        """Parse ``name`` or ``name:param``, e.g. ``jpg:50`` or ``rot:25``."""
        name, _, arg = text.strip().lower().partition(":")
        if name not in KINDS:
            raise ValueError(f"unknown attack {name!r} in {text!r}")
        if not arg:
            return cls(name)
        try:
            value = float(arg)
        except ValueError:
            raise ValueError(f"bad attack parameter in {text!r}") from None
        return cls(name, value)


def default_suite() -> list[AttackSpec]:
    return [AttackSpec(k) for k in ("none", "brt", "crp", "jpg", "rot", "res")]


def jpeg_table(quality: int) -> np.ndarray:
    """Annex K luminance table scaled by the IJG quality rule."""
    q = int(quality)
    if not 1 <= q <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    s = 5000 // q if q < 50 else 200 - 2 * q
    return np.clip((ANNEX_K_LUMA * s + 50) // 100, 1, 255)


def jpeg_roundtrip(img: np.ndarray, quality: int) -> np.ndarray:
    """Block-DCT quantisation round trip in 8-bit units; no entropy coding."""
    table = jpeg_table(quality).astype(np.float64)
    c = dct_matrix(8)
    chans = img[..., None] if img.ndim == 2 else img
    h, w, nc = chans.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(chans, ((0, ph), (0, pw), (0, 0)), mode="edge")
    H, W = padded.shape[:2]
    # (by, 8, bx, 8, c) -> (by, bx, c, 8, 8)
    blocks = padded.reshape(H // 8, 8, W // 8, 8, nc).transpose(0, 2, 4, 1, 3)
    coef = c @ ((blocks - 0.5) * 255.0) @ c.T
    coef = np.floor(coef / table + 0.5) * table
    rec = (c.T @ coef @ c) / 255.0 + 0.5
    out = rec.transpose(0, 3, 1, 4, 2).reshape(H, W, nc)[:h, :w]
    out = np.clip(out, 0.0, 1.0)
    return out[..., 0] if img.ndim == 2 else out


def center_crop(img: np.ndarray, keep: float) -> np.ndarray:
    h, w = img.shape[:2]
    ch, cw = max(1, int(np.floor(keep * h))), max(1, int(np.floor(keep * w)))
    top, left = (h - ch) // 2, (w - cw) // 2
    return img[top : top + ch, left : left + cw].copy()


def apply(img: np.ndarray, spec: AttackSpec) -> np.ndarray:
    img = check_image(img)
    kind, p = spec.kind, spec.param
    if kind == "none":
        return img.copy()
    if kind == "brt":
        return np.clip(img * p, 0.0, 1.0)
    if kind == "crp":
        return center_crop(img, p)
    if kind == "jpg":
        return jpeg_roundtrip(img, int(p))
    if kind == "rot":
        return np.clip(rotate(img, p), 0.0, 1.0)
    h, w = img.shape[:2]
    nh, nw = max(1, int(np.floor(h * p + 0.5))), max(1, int(np.floor(w * p + 0.5)))
    return np.clip(resize(img, nh, nw), 0.0, 1.0)


def attack_then_decode(img_w: np.ndarray, spec: AttackSpec, model) -> np.ndarray:
    from .codec import decode_bits, decode_logits

    return decode_bits(decode_logits(model, apply(img_w, spec)))
