"""Long-form per-stock per-day market panel and its CSV schema."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError

BASE_COLUMNS = (
    "open",
    "high",
    "low",
    "close",
    "vwap",
    "volume",
    "turnover",
    "free_turnover",
    "market_cap",
)

# Optional fundamental inputs consumed by the style-factor blends.
FUNDAMENTAL_COLUMNS = (
    "epibs",
    "etop",
    "cetop",
    "sgro",
    "egro",
    "egibs",
    "egibs_s",
    "book_to_price",
    "mlev",
    "dtoa",
    "blev",
)

CSV_HEADER = ("stock_id", "date") + BASE_COLUMNS + ("industry_id", "excluded")


@dataclass
class StockSeries:
    """All rows for one stock, dates strictly increasing."""

    stock_id: str
    dates: np.ndarray  # int trading-day indices
    columns: dict[str, np.ndarray]
    industry_id: int
    excluded: np.ndarray  # bool per row
    usable: np.ndarray = field(init=False)  # bool per row, denominators ok

    def __post_init__(self) -> None:
        n = len(self.dates)
        for name, arr in self.columns.items():
            if len(arr) != n:
                raise ShapeError(f"column {name!r} length {len(arr)} != {n}")
        if n > 1 and not np.all(np.diff(self.dates) > 0):
            raise ParameterError(f"dates not strictly increasing for {self.stock_id!r}")
        c = self.columns
        # Zero denominators make a row unusable for feature construction;
        # imputing instead would poison the correlation operators.
        self.usable = (
            (c["turnover"] != 0.0)
            & (c["free_turnover"] != 0.0)
            & (c["low"] > 0.0)
            & (c["high"] > 0.0)
            & (c["open"] > 0.0)
            & (c["close"] > 0.0)
            & (c["vwap"] > 0.0)
        )

    def __len__(self) -> int:
        return len(self.dates)

    def position(self, date: int) -> int | None:
        """Row index of `date`, or None when the stock has no row there."""
        i = int(np.searchsorted(self.dates, date))
        if i < len(self.dates) and self.dates[i] == date:
            return i
        return None


class Panel:
    """Read-only collection of StockSeries keyed by stock_id."""

    def __init__(self, series: dict[str, StockSeries]):
        self._series = dict(sorted(series.items()))
        self.stock_ids = list(self._series)
        all_dates: set[int] = set()
        for s in self._series.values():
            all_dates.update(int(d) for d in s.dates)
        self.dates = np.array(sorted(all_dates), dtype=np.int64)
        self.has_fundamentals = any(
            name in s.columns for s in self._series.values() for name in FUNDAMENTAL_COLUMNS
        )

    def __contains__(self, stock_id: str) -> bool:
        return stock_id in self._series

    def __getitem__(self, stock_id: str) -> StockSeries:
        return self._series[stock_id]

    def __iter__(self):
        return iter(self._series.values())

    def __len__(self) -> int:
        return len(self._series)

    def stocks_at(self, date: int) -> list[str]:
        """Stock ids that have a row at `date`."""
        return [sid for sid, s in self._series.items() if s.position(date) is not None]

    def to_csv(self, path: str | Path) -> None:
        """Serialize in the canonical schema; float formatting is round-trip exact."""
        fundamentals = [
            name
            for name in FUNDAMENTAL_COLUMNS
            if any(name in s.columns for s in self._series.values())
        ]
        header = list(CSV_HEADER) + fundamentals
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for sid in self.stock_ids:
                s = self._series[sid]
                for i, date in enumerate(s.dates):
                    row = [sid, int(date)]
                    row += [repr(float(s.columns[c][i])) for c in BASE_COLUMNS]
                    row += [s.industry_id, int(s.excluded[i])]
                    row += [repr(float(s.columns[c][i])) for c in fundamentals]
                    writer.writerow(row)

    @classmethod
    def from_csv(cls, path: str | Path) -> "Panel":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            required = list(CSV_HEADER)
            if header[: len(required)] != required:
                raise ParameterError(f"bad panel header in {path}: {header[:len(required)]}")
            extra = header[len(required) :]
            unknown = [c for c in extra if c not in FUNDAMENTAL_COLUMNS]
            if unknown:
                raise ParameterError(f"unknown panel columns: {unknown}")
            rows_by_stock: dict[str, list[list[str]]] = {}
            for row in reader:
                rows_by_stock.setdefault(row[0], []).append(row)
        series = {}
        value_cols = list(BASE_COLUMNS)
        for sid, rows in rows_by_stock.items():
            rows.sort(key=lambda r: int(r[1]))
            dates = np.array([int(r[1]) for r in rows], dtype=np.int64)
            columns = {
                name: np.array([float(r[2 + j]) for r in rows])
                for j, name in enumerate(value_cols)
            }
            industry = int(rows[0][2 + len(value_cols)])
            excluded = np.array(
                [r[3 + len(value_cols)].strip().lower() in ("1", "true") for r in rows]
            )
            for j, name in enumerate(extra):
                columns[name] = np.array([float(r[4 + len(value_cols) + j]) for r in rows])
            series[sid] = StockSeries(sid, dates, columns, industry, excluded)
        return cls(series)
