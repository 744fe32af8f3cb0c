"""Rolling feature-extraction operators and the (seq_len x 208) feature image.

Column layout, fixed: the ts_corr block over all ordered pairs (i, j), i < j,
in lexicographic order, then the ts_cov block over the same pairs, then one
block per unary operator (ts_stddev, ts_zscore, ts_return, ts_decaylinear)
over the inputs in canonical order. For 13 inputs: 2 * 78 + 4 * 13 = 208.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, WindowError
from .market_data import DataImage, FEATURE_NAMES

PAIR_OPERATORS = ("ts_corr", "ts_cov")
UNARY_OPERATORS = ("ts_stddev", "ts_zscore", "ts_return", "ts_decaylinear")
OPERATOR_ORDER = PAIR_OPERATORS + UNARY_OPERATORS


@dataclass(frozen=True)
class ColumnSpec:
    """One output column: operator plus its input index or ordered pair."""

    operator: str
    inputs: tuple[int, ...]


@dataclass(frozen=True)
class WindowSpec:
    d: int
    stride: int = 1
    seq_len: int = 20

    def __post_init__(self) -> None:
        if self.d < 1 or self.stride < 1 or self.seq_len < 1:
            raise WindowError("d, stride, and seq_len must be >= 1")

    @property
    def k(self) -> int:
        """Input columns required: d + (seq_len - 1) * stride."""
        return self.d + (self.seq_len - 1) * self.stride


@dataclass
class FeatureImage:
    window: int
    values: np.ndarray  # (seq_len, n_cols)
    registry: tuple[ColumnSpec, ...]

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.registry):
            raise ShapeError(
                f"values {self.values.shape} vs registry of {len(self.registry)}"
            )


def build_registry(n_inputs: int) -> tuple[ColumnSpec, ...]:
    """Column registry for n_inputs rows; width = 2*C(n,2) + 4*n."""
    pairs = [(i, j) for i in range(n_inputs) for j in range(i + 1, n_inputs)]
    cols: list[ColumnSpec] = []
    for op in PAIR_OPERATORS:
        cols += [ColumnSpec(op, p) for p in pairs]
    for op in UNARY_OPERATORS:
        cols += [ColumnSpec(op, (i,)) for i in range(n_inputs)]
    return tuple(cols)


def registry_width(n_inputs: int) -> int:
    return n_inputs * (n_inputs - 1) + 4 * n_inputs


def registry_hash(
    registry: tuple[ColumnSpec, ...], feature_names: tuple[str, ...] = FEATURE_NAMES
) -> str:
    """Digest guarding masks against differently-ordered registries."""
    payload = json.dumps(
        {
            "features": list(feature_names),
            "columns": [[c.operator, list(c.inputs)] for c in registry],
        },
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()


FULL_REGISTRY = build_registry(len(FEATURE_NAMES))


def _require_window(x: np.ndarray, min_len: int = 2) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) < min_len:
        raise WindowError(f"window of length >= {min_len} required, got shape {x.shape}")
    return x


def ts_corr(x, y) -> float:
    """Pearson correlation over the window; 0 when either side is constant."""
    x, y = _require_window(x), _require_window(y)
    if len(x) != len(y):
        raise WindowError("ts_corr windows must have equal length")
    xd, yd = x - x.mean(), y - y.mean()
    den = np.sqrt((xd * xd).sum() * (yd * yd).sum())
    if den == 0.0:
        return 0.0
    return float(np.clip((xd * yd).sum() / den, -1.0, 1.0))


def ts_cov(x, y) -> float:
    """Sample covariance (divisor d - 1)."""
    x, y = _require_window(x), _require_window(y)
    if len(x) != len(y):
        raise WindowError("ts_cov windows must have equal length")
    return float(((x - x.mean()) * (y - y.mean())).sum() / (len(x) - 1))


def ts_stddev(x) -> float:
    """Sample standard deviation (divisor d - 1)."""
    x = _require_window(x)
    return float(np.sqrt(((x - x.mean()) ** 2).sum() / (len(x) - 1)))


def ts_zscore(x) -> float:
    """Window mean over sample std; 0 when the window is constant."""
    x = _require_window(x)
    sd = ts_stddev(x)
    if sd == 0.0:
        return 0.0
    return float(x.mean() / sd)


def ts_return(x) -> float:
    """Endpoint growth x[d-1] / x[0] - 1; 0 when the base is 0."""
    x = _require_window(x)
    if x[0] == 0.0:
        return 0.0
    return float(x[-1] / x[0] - 1.0)


def ts_decaylinear(x) -> float:
    """Linearly decayed mean: weight (i+1)/(d(d+1)/2), newest heaviest."""
    x = _require_window(x, min_len=1)
    d = len(x)
    weights = np.arange(1, d + 1, dtype=float) / (d * (d + 1) / 2.0)
    return float((weights * x).sum())


def decay_weights(d: int) -> np.ndarray:
    return np.arange(1, d + 1, dtype=float) / (d * (d + 1) / 2.0)


def extract_batch(
    batch: np.ndarray,
    spec: WindowSpec,
    kept: np.ndarray | None = None,
    registry: tuple[ColumnSpec, ...] | None = None,
) -> np.ndarray:
    """Vectorized extraction over a (B, n_inputs, k) batch of data images.

    Returns (B, seq_len, n_cols) in registry order, or (B, seq_len, len(kept))
    when `kept` lists retained registry columns; dropped columns are never
    computed (the compute-skipping that makes the persistent mask pay off).
    """
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 3:
        raise ShapeError(f"batch must be (B, n_inputs, k), got {batch.shape}")
    n_inputs, k = batch.shape[1], batch.shape[2]
    if k != spec.k:
        raise ShapeError(f"image has {k} columns, spec requires {spec.k}")
    if spec.d < 2:
        raise WindowError("extraction requires d >= 2")
    reg = registry if registry is not None else (
        FULL_REGISTRY if n_inputs == len(FEATURE_NAMES) else build_registry(n_inputs)
    )
    if len(reg) != registry_width(n_inputs):
        raise ShapeError("registry does not match input row count")
    if kept is None:
        kept_idx = np.arange(len(reg))
    else:
        kept_idx = np.asarray(kept, dtype=int)

    # (B, seq_len, n_inputs, d): stride-spaced window placements.
    w = sliding_window_view(batch, spec.d, axis=2)[:, :, :: spec.stride, :]
    w = w.transpose(0, 2, 1, 3)
    if w.shape[1] != spec.seq_len:
        raise ShapeError("window placements disagree with seq_len")

    mean = w.mean(axis=3)
    dev = w - mean[..., None]
    ss = np.einsum("bpit,bpit->bpi", dev, dev)
    std = np.sqrt(ss / (spec.d - 1))

    out = np.empty((batch.shape[0], spec.seq_len, len(kept_idx)))
    by_op: dict[str, tuple[list[int], list[tuple[int, ...]]]] = {}
    for pos, col in enumerate(kept_idx):
        op = reg[col].operator
        by_op.setdefault(op, ([], []))
        by_op[op][0].append(pos)
        by_op[op][1].append(reg[col].inputs)

    for op, (positions, inputs) in by_op.items():
        if op in PAIR_OPERATORS:
            ii = np.array([p[0] for p in inputs])
            jj = np.array([p[1] for p in inputs])
            cross = np.einsum("bpnt,bpnt->bpn", dev[:, :, ii, :], dev[:, :, jj, :])
            if op == "ts_cov":
                vals = cross / (spec.d - 1)
            else:
                den = np.sqrt(ss[:, :, ii] * ss[:, :, jj])
                with np.errstate(divide="ignore", invalid="ignore"):
                    vals = np.where(den > 0.0, cross / np.where(den > 0, den, 1.0), 0.0)
                vals = np.clip(vals, -1.0, 1.0)
        else:
            sel = np.array([p[0] for p in inputs])
            if op == "ts_stddev":
                vals = std[:, :, sel]
            elif op == "ts_zscore":
                s = std[:, :, sel]
                vals = np.where(s > 0.0, mean[:, :, sel] / np.where(s > 0, s, 1.0), 0.0)
            elif op == "ts_return":
                first = w[:, :, sel, 0]
                last = w[:, :, sel, -1]
                vals = np.where(first != 0.0, last / np.where(first != 0, first, 1.0) - 1.0, 0.0)
            else:  # ts_decaylinear
                vals = np.tensordot(w[:, :, sel, :], decay_weights(spec.d), axes=([3], [0]))
        out[:, :, positions] = vals
    return out


def extract_feature_image(img: DataImage, spec: WindowSpec) -> FeatureImage:
    """Extract all registry columns for one data image."""
    values = extract_batch(img.values[None, :, :], spec)[0]
    n_inputs = img.values.shape[0]
    reg = FULL_REGISTRY if n_inputs == len(FEATURE_NAMES) else build_registry(n_inputs)
    return FeatureImage(window=spec.d, values=values, registry=reg)


# --- flat binary batch layout (reused between CLI stages) --------------------


def save_feature_batch(
    path: str | Path,
    values: np.ndarray,
    spec: WindowSpec,
    registry: tuple[ColumnSpec, ...],
    sample_keys: list[tuple[str, int]] | None = None,
) -> None:
    """Row-major float64 blob plus a JSON sidecar with shape and registry."""
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    sidecar = {
        "shape": list(values.shape),
        "window": {"d": spec.d, "stride": spec.stride, "seq_len": spec.seq_len},
        "registry": [[c.operator, list(c.inputs)] for c in registry],
        "registry_hash": registry_hash(registry),
    }
    if sample_keys is not None:
        sidecar["samples"] = [[sid, int(t)] for sid, t in sample_keys]
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    values.tofile(path)


def load_feature_batch(path: str | Path):
    """Inverse of save_feature_batch; returns (values, spec, registry, keys)."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    shape = tuple(sidecar["shape"])
    values = np.fromfile(path, dtype="<f8").reshape(shape)
    wj = sidecar["window"]
    spec = WindowSpec(d=wj["d"], stride=wj["stride"], seq_len=wj["seq_len"])
    registry = tuple(ColumnSpec(op, tuple(ix)) for op, ix in sidecar["registry"])
    keys = [(sid, int(t)) for sid, t in sidecar.get("samples", [])]
    return values, spec, registry, keys
