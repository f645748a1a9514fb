"""Corpus-level orchestration shared by the CLI and the test-suite.

Every item is processed independently from its own seed, so results do not
depend on worker count or scheduling order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attention, metrics
from .codec import ExtractorModel, random_message
from .config import ABLATION_MODES, RunConfig
from .optimize import embed
from .tensorio import ValidationError, load_bundle, load_field, load_image

MESSAGE_TAG = 7


@dataclass
class CorpusItem:
    index: int
    seed: int
    image: Path
    mask: Path
    bundle: Path
    clean_token: int


def load_corpus(path) -> list[CorpusItem]:
    """Read a ``corpus.json`` manifest (or the directory holding one)."""
    p = Path(path)
    manifest = p / "corpus.json" if p.is_dir() else p
    if not manifest.is_file():
        raise ValidationError(f"corpus manifest not found: {manifest}")
    try:
        doc = json.loads(manifest.read_text())
        root = manifest.parent
        items = [
            CorpusItem(
                int(it["index"]),
                int(it["seed"]),
                root / it["image"],
                root / it["mask"],
                root / it["bundle"],
                int(it["clean_token"]),
            )
            for it in doc["items"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed corpus manifest {manifest}: {exc}") from None
    for it in items:
        for f in (it.image, it.mask, it.bundle):
            if not f.is_file():
                raise ValidationError(f"corpus file missing: {f}")
    return items


def item_message(seed: int, index: int, k: int) -> np.ndarray:
    """Per-item message; identical across ablation modes for paired runs."""
    return random_message(k, np.random.default_rng([seed, MESSAGE_TAG, index]))


def localize_for_mode(bundle, cfg: RunConfig, mode: str):
    loc_mode = mode if mode in attention.MODES else "full"
    return attention.localize(bundle, 0, cfg.cas, cfg.aas, loc_mode)


@dataclass
class ItemResult:
    index: int
    original: np.ndarray
    watermarked: np.ndarray
    mask: np.ndarray
    message: np.ndarray
    selected_token: int
    final_loss: dict


def process_item(job) -> ItemResult:
    item, model, cfg, mode = job
    i_o = load_image(item.image)
    mask = load_field(item.mask)
    loc = localize_for_mode(load_bundle(item.bundle), cfg, mode)
    m = item_message(cfg.run.seed, item.index, model.k)
    res = embed(i_o, loc.field, m, model, cfg.embed.ablated(mode))
    return ItemResult(item.index, i_o, res.watermarked, mask, m, loc.selected_token, res.loss_trace[-1])


def _pool_map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def run_mode(items, model: ExtractorModel, cfg: RunConfig, mode: str = "full", workers: int = 1):
    """Localize and embed every item under one ablation mode, then evaluate."""
    if mode not in ABLATION_MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {ABLATION_MODES}")
    results = _pool_map(process_item, [(it, model, cfg, mode) for it in items], workers)
    pairs = [(r.original, r.watermarked, r.mask, r.message) for r in results]
    report = metrics.evaluate(pairs, model, cfg.attacks, workers=workers)
    return results, report


def directional_findings(reports: dict) -> dict:
    """Check the ablation directions on per-image rows of paired reports."""
    out = {}
    full = reports.get("full")
    if full is None:
        return out
    if "no_pre" in reports:
        nopre = reports["no_pre"]
        wins = [
            a["mask_leakage"] < b["mask_leakage"] for a, b in zip(full.per_image, nopre.per_image, strict=True)
        ]
        frac = sum(wins) / len(wins)
        diff = abs(full.avg_bit_acc - nopre.avg_bit_acc)
        out["no_pre_leakage_higher"] = {"fraction": frac, "pass": frac >= 0.95}
        out["full_leakage_bound"] = {"mean": full.mask_leakage, "pass": full.mask_leakage <= 0.25}
        out["no_pre_accuracy_unchanged"] = {"abs_diff": diff, "pass": diff < 0.03}
    if "no_tv" in reports:
        a, b = full.psnr, reports["no_tv"].psnr
        ok = math.isfinite(a) and math.isfinite(b) and a > b
        out["no_tv_psnr_lower"] = {"full": a, "no_tv": b, "pass": ok}
    return out
