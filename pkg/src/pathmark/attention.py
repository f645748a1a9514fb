"""Pathology localization maps from cross-attention bundles.

The pipeline upsamples every attention slice to the image grid, picks the
token whose supra-quantile support forms the fewest density clusters, and
rescales that token's map into a soft protection mask in (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cluster import dbscan
from .grid import corner_aligned_matrix
from .tensorio import AttentionBundle, ValidationError, check_field

MODES = ("full", "no_cas", "no_aas")
HARD_EPS = 1e-3


class NoLocalizedTokenError(ValueError):
    """Every token of the word clustered to pure noise."""


class DegenerateMapError(ValueError):
    """A map with zero spread cannot be z-scored."""


@dataclass(frozen=True)
class CasParams:
    support_quantile: float = 0.90
    eps: float = 1.5
    min_pts: int = 5

    def __post_init__(self):
        if not 0 < self.support_quantile < 1:
            raise ValueError(f"support_quantile must be in (0, 1), got {self.support_quantile}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.min_pts < 1:
            raise ValueError(f"min_pts must be >= 1, got {self.min_pts}")


@dataclass(frozen=True)
class AasParams:
    tau_quantile: float = 0.7
    gain: float = 10.0

    def __post_init__(self):
        if not 0 < self.tau_quantile < 1:
            raise ValueError(f"tau_quantile must be in (0, 1), got {self.tau_quantile}")
        if self.gain <= 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")


@dataclass
class LocalizationResult:
    word: str
    selected_token: int
    cluster_counts: list
    tau: float
    field: np.ndarray
    mode: str = "full"
    params: dict = field(default_factory=dict)

    def sidecar(self) -> dict:
        """JSON-ready metadata; infinite cluster counts are written as null."""
        return {
            "word": self.word,
            "selected_token": self.selected_token,
            "cluster_counts": [None if math.isinf(k) else int(k) for k in self.cluster_counts],
            "tau": self.tau,
            "mode": self.mode,
            "params": self.params,
        }


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def upsample_bilinear(fld: np.ndarray, h: int, w: int) -> np.ndarray:
    fld = np.asarray(fld, dtype=np.float64)
    if fld.ndim != 2 or fld.size == 0:
        raise ValueError("cannot upsample an empty field")
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {h}x{w}")
    rows = corner_aligned_matrix(fld.shape[0], h)
    cols = corner_aligned_matrix(fld.shape[1], w)
    return rows @ fld @ cols.T


def token_map(bundle: AttentionBundle, token_index: int) -> np.ndarray:
    """Sum of the token's upsampled slices, accumulated in (layer, head, timestep) order."""
    tok = bundle.tokens[token_index]
    if not tok.slices:
        raise ValidationError(f"token {token_index} ({tok.text!r}) has no attention slices")
    h, w = bundle.target_size
    acc = np.zeros((h, w))
    for sl in sorted(tok.slices, key=lambda s: s.key):
        acc += upsample_bilinear(sl.map, h, w)
    return acc


def aggregate_word(bundle: AttentionBundle, word_index: int) -> np.ndarray:
    word = bundle.words[word_index]
    h, w = bundle.target_size
    acc = np.zeros((h, w))
    for t in word.tokens:
        acc += token_map(bundle, t)
    return acc / len(word.tokens)


def cluster_count(tmap: np.ndarray, params: CasParams) -> float:
    """DBSCAN cluster count of the supra-quantile support; +inf when all noise."""
    thresh = np.quantile(tmap, params.support_quantile)
    pts = np.argwhere(tmap > thresh)
    _, k = dbscan(pts, params.eps, params.min_pts)
    return float(k) if k > 0 else math.inf


def cas_select(bundle: AttentionBundle, word_index: int, params: CasParams = CasParams()):
    word = bundle.words[word_index]
    counts = [cluster_count(token_map(bundle, t), params) for t in word.tokens]
    if all(math.isinf(k) for k in counts):
        raise NoLocalizedTokenError(f"word {word.text!r}: no token forms a dense cluster")
    best = min(range(len(counts)), key=lambda i: (counts[i], i))
    return word.tokens[best], counts


def minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi == lo:
        raise DegenerateMapError("map is constant")
    return (a - lo) / (hi - lo)


def aas(selected_map: np.ndarray, params: AasParams = AasParams()) -> tuple[float, np.ndarray]:
    """Z-score, logistic squash, min-max, then a sigmoid step at the tau quantile."""
    a = check_field(selected_map)
    std = a.std()
    if std == 0 or np.ptp(a) == 0:
        raise DegenerateMapError("cannot z-score a constant map")
    scaled = minmax(sigmoid((a - a.mean()) / std))
    tau = float(np.quantile(scaled, params.tau_quantile))
    return tau, sigmoid(params.gain * (scaled - tau))


def localize(
    bundle: AttentionBundle,
    word_index: int,
    cas: CasParams = CasParams(),
    aas_params: AasParams = AasParams(),
    mode: str = "full",
) -> LocalizationResult:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    word = bundle.words[word_index]
    params = {"cas": asdict(cas), "aas": asdict(aas_params)}
    if mode == "no_cas":
        # every token contributes, so no single token is selected
        selected, counts = -1, []
        tau, fld = aas(aggregate_word(bundle, word_index), aas_params)
    else:
        selected, counts = cas_select(bundle, word_index, cas)
        smap = token_map(bundle, selected)
        if mode == "full":
            tau, fld = aas(smap, aas_params)
        else:
            scaled = minmax(smap)
            tau = float(np.quantile(scaled, aas_params.tau_quantile))
            fld = np.where(scaled > tau, 1.0 - HARD_EPS, HARD_EPS)
    return LocalizationResult(word.text, selected, counts, tau, fld, mode, params)


def combine_words(results) -> np.ndarray:
    """Pixelwise maximum over per-word localization maps."""
    fields = [r.field if isinstance(r, LocalizationResult) else np.asarray(r) for r in results]
    if not fields:
        raise ValueError("need at least one localization result")
    shape = fields[0].shape
    for f in fields[1:]:
        if f.shape != shape:
            raise ValueError(f"dimension mismatch: {f.shape} vs {shape}")
    return np.maximum.reduce(fields)
