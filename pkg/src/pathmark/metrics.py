"""Image-quality and watermark metrics, and robustness report assembly."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .attacks import AttackSpec, attack_then_decode, default_suite
from .codec import bit_accuracy, to_luma

SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WIN = 0.01, 0.03, 1.5, 11
LEAK_EPS = 1e-12


class UndefinedMetricError(ValueError):
    pass


def _same(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB on [0, 1] floats; identical images give ``inf``."""
    a, b = _same(a, b)
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


@lru_cache(maxsize=4)
def _gauss_taps(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter(x: np.ndarray) -> np.ndarray:
    taps = _gauss_taps()
    r = len(taps) // 2
    p = np.pad(x, r, mode="symmetric")
    # separable correlation: rows, then columns
    rows = sum(t * p[:, i : i + x.shape[1]] for i, t in enumerate(taps))
    return sum(t * rows[i : i + x.shape[0], :] for i, t in enumerate(taps))


def ssim(a, b) -> float:
    """Mean SSIM, 11x11 Gaussian window (sigma 1.5), symmetric borders, L = 1."""
    a, b = _same(a, b)
    a, b = to_luma(a), to_luma(b)
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_a, mu_b = _filter(a), _filter(b)
    saa = _filter(a * a) - mu_a**2
    sbb = _filter(b * b) - mu_b**2
    sab = _filter(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def diff_map(i_w, i_o) -> np.ndarray:
    """Tenfold absolute difference, clipped to [0, 1] for display."""
    i_w, i_o = _same(i_w, i_o)
    return np.clip(np.abs(i_w - i_o) * 10.0, 0.0, 1.0)


def mask_leakage(i_w, i_o, mask) -> float:
    """In-mask perturbation energy density over whole-image energy density."""
    i_w, i_o = _same(i_w, i_o)
    mask = np.asarray(mask) > 0.5
    if mask.shape != i_w.shape[:2]:
        raise ValueError(f"dimension mismatch: mask {mask.shape} vs image {i_w.shape[:2]}")
    if not mask.any():
        raise UndefinedMetricError("mask is empty")
    e = (i_w - i_o) ** 2
    if e.ndim == 3:
        e = e.sum(axis=2)
    inside = float(e[mask].sum()) / int(mask.sum())
    overall = float(e.sum()) / e.size
    return inside / (overall + LEAK_EPS)


@dataclass
class EvalReport:
    psnr: float
    ssim: float
    bit_acc: dict
    avg_bit_acc: float
    mask_leakage: float
    n_images: int
    psnr_infinite: int = 0
    per_image: list = field(default_factory=list)

    def to_json(self) -> dict:
        d = asdict(self)
        if math.isinf(d["psnr"]) or math.isnan(d["psnr"]):
            d["psnr"] = None
        return d

    def row(self) -> dict:
        """Flat report row: PSNR, SSIM, per-attack accuracies and Avg."""
        out = {"PSNR": self.psnr, "SSIM": self.ssim}
        out.update(self.bit_acc)
        out["Avg"] = self.avg_bit_acc
        return out


def _score_pair(args):
    (i_o, i_w, mask, m), model, suite = args
    row = {
        "psnr": psnr(i_w, i_o),
        "ssim": ssim(i_w, i_o),
        "mask_leakage": mask_leakage(i_w, i_o, mask),
        "bit_acc": {},
    }
    for spec in suite:
        row["bit_acc"][spec.label] = bit_accuracy(attack_then_decode(i_w, spec, model), m)
    return row


def _mean(values) -> float:
    # fsum is exactly rounded, so the mean does not depend on summation order
    values = list(values)
    return math.fsum(values) / len(values) if values else math.nan


def evaluate(pairs, model, attacks_list=None, workers: int = 1) -> EvalReport:
    """Score ``(I_o, I_w, mask, message)`` pairs under every attack in the suite."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("nothing to evaluate")
    suite = list(attacks_list) if attacks_list is not None else default_suite()
    labels = [s.label for s in suite]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate attack columns in {labels}")
    jobs = [(p, model, suite) for p in pairs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_score_pair, jobs))
    else:
        rows = [_score_pair(j) for j in jobs]
    finite = [r["psnr"] for r in rows if not math.isinf(r["psnr"])]
    bit_acc = {lab: _mean(r["bit_acc"][lab] for r in rows) for lab in labels}
    return EvalReport(
        psnr=_mean(finite) if finite else math.inf,
        ssim=_mean(r["ssim"] for r in rows),
        bit_acc=bit_acc,
        avg_bit_acc=_mean(bit_acc.values()),
        mask_leakage=_mean(r["mask_leakage"] for r in rows),
        n_images=len(rows),
        psnr_infinite=len(rows) - len(finite),
        per_image=rows,
    )


def parse_attacks(text: str) -> list[AttackSpec]:
    """Comma- or pipe-separated attack specs, e.g. ``none,brt:2,jpg:50``."""
    parts = [p for p in text.replace("|", ",").split(",") if p.strip()]
    return [AttackSpec.parse(p) for p in parts]
