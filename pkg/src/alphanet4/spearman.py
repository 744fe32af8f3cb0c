"""Deterministic feature dropping via Spearman rank correlation.

Fitted once on the first extracted batch of the primary window, then frozen
for the whole run; later extraction skips dropped columns entirely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BatchError, MaskError, ShapeError
from .feature_ops import ColumnSpec, FeatureImage, registry_hash

DEFAULT_THRESHOLD = 0.8


@dataclass(frozen=True)
class FeatureMask:
    kept: tuple[int, ...]
    threshold: float
    registry_hash: str
    fitted_on: str = ""

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.kept, self.kept[1:])):
            raise MaskError("kept indices must be strictly increasing")

    @property
    def n_keep(self) -> int:
        return len(self.kept)

    def to_json(self) -> str:
        return json.dumps(
            {
                "threshold": self.threshold,
                "kept": list(self.kept),
                "registry_hash": self.registry_hash,
                "fitted_on": self.fitted_on,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "FeatureMask":
        obj = json.loads(text)
        return cls(
            kept=tuple(obj["kept"]),
            threshold=float(obj["threshold"]),
            registry_hash=obj["registry_hash"],
            fitted_on=obj.get("fitted_on", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMask":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    ranks[order] = np.arange(1, len(x) + 1, dtype=float)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(a, b) -> float:
    """Pearson correlation of average-tie ranks; 0 when either side is flat."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"series shapes differ: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise ShapeError("spearman_rho needs length >= 2")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if den == 0.0:
        return 0.0
    return float(np.clip((ra * rb).sum() / den, -1.0, 1.0))


def _rank_zscores(columns: np.ndarray) -> np.ndarray:
    """Standardized rank vectors per column; zero vector marks a flat column."""
    n, m = columns.shape
    out = np.empty((m, n))
    for c in range(m):
        r = _average_ranks(columns[:, c])
        r -= r.mean()
        norm = np.sqrt((r * r).sum())
        out[c] = r / norm if norm > 0.0 else 0.0
    return out


def fit_mask(
    batch: np.ndarray,
    registry: tuple[ColumnSpec, ...],
    threshold: float = DEFAULT_THRESHOLD,
    fitted_on: str = "",
) -> FeatureMask:
    """Greedy first-kept-wins pass over registry columns.

    `batch` is (B, seq_len, n_cols); correlations are computed on values
    flattened over samples and time steps. A candidate is dropped when
    |rho| against any already-kept column exceeds the threshold; exact
    |rho| = 1 duplicates are dropped at any threshold.
    """
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 3:
        raise ShapeError(f"batch must be (B, seq_len, n_cols), got {batch.shape}")
    if batch.shape[0] < 2:
        raise BatchError("mask fitting needs >= 2 samples")
    n_cols = batch.shape[2]
    if n_cols != len(registry):
        raise ShapeError("batch width does not match registry")
    flat = batch.reshape(-1, n_cols)
    z = _rank_zscores(flat)
    kept: list[int] = []
    for cand in range(n_cols):
        ok = True
        for k in kept:
            rho = abs(float(z[cand] @ z[k]))
            if rho > threshold or rho >= 1.0 - 1e-12:
                ok = False
                break
        if ok:
            kept.append(cand)
    return FeatureMask(
        kept=tuple(kept),
        threshold=threshold,
        registry_hash=registry_hash(registry),
        fitted_on=fitted_on,
    )


def random_mask(
    n_cols: int,
    n_keep: int,
    registry: tuple[ColumnSpec, ...],
    rng: np.random.Generator,
) -> FeatureMask:
    """Random-sampling stand-in for ablation comparisons against fit_mask."""
    kept = np.sort(rng.choice(n_cols, size=n_keep, replace=False))
    return FeatureMask(
        kept=tuple(int(i) for i in kept),
        threshold=float("nan"),
        registry_hash=registry_hash(registry),
        fitted_on="random",
    )


def apply_mask(img: FeatureImage, mask: FeatureMask) -> FeatureImage:
    """Restrict an image (and its registry) to the kept columns."""
    if img.values.shape[1] != len(img.registry):
        raise ShapeError("image width does not match its registry")
    if mask.registry_hash != registry_hash(img.registry):
        raise MaskError("mask was fitted on a differently-ordered registry")
    kept = list(mask.kept)
    return FeatureImage(
        window=img.window,
        values=img.values[:, kept],
        registry=tuple(img.registry[i] for i in kept),
    )
