"""Series loading, scaling, windowing, sharding and evaluation metrics.

Each file is min-max scaled on its own, as a data holder would do without
knowing the ranges of the others. Train/test splits are chronological and
taken per file before windowing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .exceptions import DataError

SCHEMAS = ("plain", "hec", "stock")


@dataclass(frozen=True, eq=False)
class SeriesFile:
    """One scaled series. ``features`` is (n, d) in [0, 1] with the target in
    column 0; ``vmin``/``vmax`` invert the target scaling."""

    name: str
    features: np.ndarray
    vmin: float
    vmax: float
    timestamps: tuple = ()

    def __len__(self):
        return self.features.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.features[:, 0]

    def unscale(self, x):
        return unscale(x, self.vmin, self.vmax)

    def split(self, frac: float = 0.8) -> tuple["SeriesFile", "SeriesFile"]:
        """Chronological head/tail split."""
        if not 0 < frac < 1:
            raise ValueError("frac must be in (0, 1)")
        k = int(round(frac * len(self)))
        ts = self.timestamps
        head = SeriesFile(self.name, self.features[:k], self.vmin, self.vmax, ts[:k])
        tail = SeriesFile(self.name, self.features[k:], self.vmin, self.vmax, ts[k:])
        return head, tail


@dataclass(frozen=True, eq=False)
class WindowedSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 3 or self.targets.ndim != 3 or len(self.inputs) != len(self.targets):
            raise DataError("inputs must be (B, T, d) and targets (B, kappa, o) with equal B")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "WindowedSet":
        return WindowedSet(self.inputs[idx], self.targets[idx])

    def as_pair(self):
        return self.inputs, self.targets


def minmax(x):
    """Scale to [0, 1]; returns (scaled, min, max)."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = float(np.min(x)), float(np.max(x))
    if not lo < hi:
        raise DataError("cannot min-max scale a constant column (min == max)")
    return (x - lo) / (hi - lo), lo, hi


def unscale(x, lo: float, hi: float):
    return np.asarray(x, dtype=np.float64) * (hi - lo) + lo


def _rows(path: Path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty file")
            rows = [(i + 2, r) for i, r in enumerate(reader) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return [h.strip() for h in header], rows


def _float(cell: str, path, lineno: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{path}: row {lineno}: column {col!r}: not a number: {cell!r}") from None
    if not np.isfinite(v):
        raise DataError(f"{path}: row {lineno}: column {col!r}: non-finite value")
    return v


def _column(header, name, path):
    if name not in header:
        raise DataError(f"{path}: missing column {name!r}")
    return header.index(name)


def calendar_features(stamps) -> np.ndarray:
    """hour, day-of-week, day-of-month, month scaled by their fixed ranges;
    year min-max scaled over the file (0 if the file spans one year)."""
    hour = np.array([s.hour / 23.0 for s in stamps])
    dow = np.array([s.weekday() / 6.0 for s in stamps])
    dom = np.array([(s.day - 1) / 30.0 for s in stamps])
    month = np.array([(s.month - 1) / 11.0 for s in stamps])
    years = np.array([float(s.year) for s in stamps])
    span = years.max() - years.min() if len(years) else 0.0
    year = (years - years.min()) / span if span > 0 else np.zeros_like(years)
    return np.stack([hour, dow, dom, month, year], axis=1)


def _parse_time(cell, path, lineno):
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d"):
        try:
            return datetime.strptime(cell.strip(), fmt)
        except ValueError:
            pass
    raise DataError(f"{path}: row {lineno}: unparseable timestamp {cell!r}")


def load_and_scale(path, schema: str = "plain", value_column: str | None = None,
                   time_column: str | None = None) -> SeriesFile:
    """Read a comma-separated series with a header row.

    plain: one value column (``value_column`` or the last column).
    hec: a timestamp column plus one consumption column; adds five calendar
    features (d = 6). Rows are sorted by time.
    stock: Date, Open, High, Low, Close; the target is the OHLC mean and the
    four prices are the remaining features, all scaled with one range.
    """
    path = Path(path)
    if schema not in SCHEMAS:
        raise DataError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    header, rows = _rows(path)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if schema == "plain":
        col = value_column or header[-1]
        j = _column(header, col, path)
        vals = [_float(r[j] if j < len(r) else "", path, n, col) for n, r in rows]
        scaled, lo, hi = minmax(vals)
        return SeriesFile(path.stem, scaled[:, None], lo, hi)
    if schema == "hec":
        tcol = time_column or header[0]
        vcol = value_column or next((h for h in header if h != tcol), None)
        ti, vi = _column(header, tcol, path), _column(header, vcol, path)
        recs = sorted((_parse_time(r[ti], path, n), _float(r[vi], path, n, vcol)) for n, r in rows)
        stamps = [s for s, _ in recs]
        scaled, lo, hi = minmax([v for _, v in recs])
        feats = np.concatenate([scaled[:, None], calendar_features(stamps)], axis=1)
        return SeriesFile(path.stem, feats, lo, hi, tuple(stamps))
    cols = [_column(header, c, path) for c in ("Open", "High", "Low", "Close")]
    ti = _column(header, time_column or "Date", path)
    recs = sorted(
        (_parse_time(r[ti], path, n), [_float(r[c], path, n, header[c]) for c in cols]) for n, r in rows
    )
    prices = np.array([p for _, p in recs])
    _, lo, hi = minmax(prices)
    ohlc = (prices - lo) / (hi - lo)
    feats = np.concatenate([ohlc.mean(axis=1, keepdims=True), ohlc], axis=1)
    return SeriesFile(path.stem, feats, lo, hi, tuple(s for s, _ in recs))


def window(series, T: int, kappa: int = 1, target_col: int = 0, inputs: str = "all") -> WindowedSet:
    """Stride-1 windows: inputs are T consecutive rows, targets the next
    ``kappa`` values of ``target_col``.

    ``inputs="features"`` drops the target column from the inputs (used for
    the stock schema, whose target is the mean of the other columns).
    """
    F = series.features if isinstance(series, SeriesFile) else np.asarray(series, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if T < 1 or kappa < 1:
        raise DataError("T and kappa must be positive")
    B = F.shape[0] - T - kappa + 1
    if B < 1:
        raise DataError(f"series of length {F.shape[0]} is too short for T={T}, kappa={kappa}")
    src = F[:, 1:] if inputs == "features" else F
    idx = np.arange(B)[:, None] + np.arange(T)[None, :]
    X = src[idx]
    tidx = np.arange(B)[:, None] + T + np.arange(kappa)[None, :]
    Y = F[tidx, target_col][:, :, None]
    return WindowedSet(X, Y)


def concat(sets) -> WindowedSet:
    sets = list(sets)
    return WindowedSet(np.concatenate([s.inputs for s in sets]), np.concatenate([s.targets for s in sets]))


def shard_even(ws: WindowedSet, n_parties: int, rng: np.random.Generator | None = None) -> list[WindowedSet]:
    """Uniform split of a pooled set (optionally shuffled first)."""
    if n_parties < 1:
        raise DataError("need at least one party")
    if len(ws) < n_parties:
        raise DataError(f"{len(ws)} samples cannot be split over {n_parties} parties")
    idx = np.arange(len(ws)) if rng is None else rng.permutation(len(ws))
    return [ws.subset(part) for part in np.array_split(idx, n_parties)]


def shard_files(files: list[WindowedSet], n_parties: int) -> list[WindowedSet]:
    """Imbalanced split by file: consecutive groups of files per party."""
    if n_parties > len(files):
        raise DataError(f"{n_parties} parties but only {len(files)} files")
    groups = np.array_split(np.arange(len(files)), n_parties)
    return [concat(files[i] for i in g) for g in groups]


def shard_half(ws: WindowedSet, n_parties: int, rng: np.random.Generator | None = None) -> list[WindowedSet]:
    """Imbalanced split: party 0 takes half, the rest share the other half evenly."""
    if n_parties < 2:
        return [ws]
    idx = np.arange(len(ws)) if rng is None else rng.permutation(len(ws))
    half = len(ws) // 2
    rest = np.array_split(idx[half:], n_parties - 1)
    return [ws.subset(idx[:half])] + [ws.subset(r) for r in rest]


def shard(data, n_parties: int, mode: str = "even", rng: np.random.Generator | None = None):
    """``data`` is a WindowedSet (even/half) or a list of per-file sets (files)."""
    if mode == "even":
        return shard_even(concat(data) if isinstance(data, list) else data, n_parties, rng)
    if mode in ("imbalanced", "files"):
        if isinstance(data, list):
            return shard_files(data, n_parties)
        return shard_half(data, n_parties, rng)
    if mode == "half":
        return shard_half(concat(data) if isinstance(data, list) else data, n_parties, rng)
    raise DataError(f"unknown shard mode {mode!r}")


def metrics(pred, truth, task: str = "regression") -> dict[str, float]:
    """MAE and R² for regression; accuracy for classification (argmax over
    the last axis, or a 0.5 threshold for a single output)."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape:
        raise DataError(f"prediction shape {p.shape} does not match truth {y.shape}")
    if task == "classification":
        if y.shape[-1] > 1:
            acc = np.mean(np.argmax(p, axis=-1) == np.argmax(y, axis=-1))
        else:
            acc = np.mean((p > 0.5) == (y > 0.5))
        return {"accuracy": float(acc)}
    mae = float(np.mean(np.abs(p - y)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("R² is undefined for zero-variance truth")
    r2 = 1.0 - float(np.sum((y - p) ** 2)) / ss_tot
    return {"mae": mae, "r2": r2}


def synth(kind: str = "sine", length: int = 1000, noise: float = 0.0, seed: int = 0, period: float = 50.0,
          coef: float = 0.8) -> SeriesFile:
    """Synthetic series, min-max scaled. sine: sin(2πt/period) + noise·ε;
    ar1: x_t = coef·x_{t-1} + noise·ε_t with x_{-1} = 0."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(length)
    if kind == "sine":
        x = np.sin(2 * np.pi * np.arange(length) / period) + noise * eps
    elif kind == "ar1":
        x = np.empty(length)
        prev = 0.0
        for t in range(length):
            prev = coef * prev + noise * eps[t]
            x[t] = prev
    else:
        raise DataError(f"unknown synthetic kind {kind!r}")
    scaled, lo, hi = minmax(x)
    return SeriesFile(f"{kind}-{seed}", scaled[:, None], lo, hi)


def load_bcw(path, seed: int = 0, n_train: int = 576):
    """Original Wisconsin breast cancer file: id, nine 1-10 attributes, class (2/4).

    Missing attributes ('?') are replaced by the column median. Attributes
    are min-max scaled and fed as T = 9 timesteps of one feature; targets
    are one-hot (benign, malignant). Returns shuffled (train, test) sets.
    """
    path = Path(path)
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, r in enumerate(csv.reader(fh), 1):
                if not r or not any(c.strip() for c in r):
                    continue
                if len(r) != 11:
                    raise DataError(f"{path}: row {lineno}: expected 11 fields, got {len(r)}")
                if not r[0].strip().isdigit():
                    continue
                rows.append((lineno, r))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    feats = np.full((len(rows), 9), np.nan)
    label = np.empty(len(rows))
    for k, (lineno, r) in enumerate(rows):
        for j in range(9):
            cell = r[j + 1].strip()
            if cell != "?":
                feats[k, j] = _float(cell, path, lineno, f"attr{j + 1}")
        cls = r[10].strip()
        if cls not in ("2", "4"):
            raise DataError(f"{path}: row {lineno}: class must be 2 or 4, got {cls!r}")
        label[k] = 1.0 if cls == "4" else 0.0
    med = np.nanmedian(feats, axis=0)
    feats = np.where(np.isnan(feats), med, feats)
    scaled = np.stack([minmax(feats[:, j])[0] for j in range(9)], axis=1)
    X = scaled[:, :, None]
    Y = np.stack([1.0 - label, label], axis=1)[:, None, :]
    perm = np.random.default_rng(seed).permutation(len(X))
    n_train = min(n_train, len(X) - 1)
    tr, te = perm[:n_train], perm[n_train:]
    return WindowedSet(X[tr], Y[tr]), WindowedSet(X[te], Y[te])
