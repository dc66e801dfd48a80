"""Reading and writing data, preprocessing transforms and chain traces."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .inference import SERIES, ChainTrace
from .model import (
    Dataset,
    FeatureAllocation,
    FeatureDictionary,
    Hyperparameters,
    InstanceWeights,
    ModelState,
)

MISSING_TOKENS = ("", "NA")
FLOAT_FMT = "%.17g"


class ParseError(ValueError):
    """A malformed input table; carries the 1-based line and column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


class DegenerateColumnError(ValueError):
    pass


# -- CSV tables --------------------------------------------------------------

def _parse_cell(tok: str, line: int, col: int) -> float:
    if tok in MISSING_TOKENS:
        return np.nan
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(f"cannot parse {tok!r} as a number", line, col) from None
    if not np.isfinite(val):
        raise ParseError(f"non-finite value {tok!r}; use NA for missing cells", line, col)
    return val


def _is_numeric_row(row: list[str]) -> bool:
    for tok in row:
        if tok in MISSING_TOKENS:
            continue
        try:
            float(tok)
        except ValueError:
            return False
    return True


def load_csv(path: str | os.PathLike) -> Dataset:
    """Load a numeric table; a non-numeric first row is taken as a header.

    Empty cells and ``NA`` are missing and become masked cells.
    """
    with open(path, newline="") as fh:
        rows = [(i + 1, [t.strip() for t in r]) for i, r in enumerate(csv.reader(fh))]
    rows = [(i, r) for i, r in rows if r and any(t != "" for t in r)]
    if not rows:
        raise ParseError("no data rows")
    names = None
    if not _is_numeric_row(rows[0][1]):
        names = rows[0][1]
        rows = rows[1:]
        if not rows:
            raise ParseError("header but no data rows")
    width = len(names) if names is not None else len(rows[0][1])
    x = np.empty((len(rows), width))
    for r, (line, toks) in enumerate(rows):
        if len(toks) != width:
            raise ParseError(f"expected {width} fields, found {len(toks)}", line)
        for c, tok in enumerate(toks):
            x[r, c] = _parse_cell(tok, line, c + 1)
    return Dataset(x, np.isfinite(x), tuple(names) if names is not None else None)


def _fmt(v: float) -> str:
    return "NA" if not np.isfinite(v) else FLOAT_FMT % v


def save_csv(path: str | os.PathLike, data: Dataset | np.ndarray, header: bool = True) -> None:
    """Write a table with 17 significant digits; masked cells are written as ``NA``."""
    if isinstance(data, Dataset):
        x = np.where(data.observed, data.x, np.nan)
        names = data.column_names
    else:
        x = np.atleast_2d(np.asarray(data, dtype=float))
        names = None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header and names is not None:
            w.writerow(names)
        for row in x:
            w.writerow([_fmt(v) for v in row])


def save_matrix(path: str | os.PathLike, m: np.ndarray, integer: bool = False) -> None:
    """Row-major CSV preceded by a ``# shape: r,c`` line."""
    m = np.atleast_2d(np.asarray(m))
    fmt = "%d" if integer else FLOAT_FMT
    with open(path, "w") as fh:
        fh.write(f"# shape: {m.shape[0]},{m.shape[1]}\n")
        if m.shape[1]:
            for row in m:
                fh.write(",".join(fmt % v for v in row) + "\n")


def load_matrix(path: str | os.PathLike, dtype=float) -> np.ndarray:
    with open(path) as fh:
        head = fh.readline()
        if not head.startswith("# shape:"):
            raise ParseError("missing '# shape:' header", 1)
        r, c = (int(v) for v in head.split(":", 1)[1].split(","))
        out = np.zeros((r, c), dtype=dtype)
        if c == 0:
            return out
        for i, line in enumerate(fh):
            if i >= r:
                raise ParseError(f"more rows than the declared {r}", i + 2)
            toks = line.rstrip("\n").split(",")
            if len(toks) != c:
                raise ParseError(f"expected {c} fields, found {len(toks)}", i + 2)
            out[i] = [dtype(t) if dtype is int else float(t) for t in toks]
        if r and i + 1 != r:
            raise ParseError(f"declared {r} rows, found {i + 1}")
    return out


# -- preprocessing -----------------------------------------------------------

@dataclass(frozen=True)
class Affine:
    """Row map ``x -> (x - offset) @ matrix.T``; diagonal maps keep missing cells local."""

    name: str
    offset: np.ndarray
    matrix: np.ndarray

    @property
    def diagonal(self) -> bool:
        return np.count_nonzero(self.matrix - np.diag(np.diag(self.matrix))) == 0

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.diagonal:
            return (x - self.offset) * np.diag(self.matrix)
        return (x - self.offset) @ self.matrix.T

    def invert(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.diagonal:
            return y / np.diag(self.matrix) + self.offset
        return np.linalg.solve(self.matrix, y.T).T + self.offset

    def to_dict(self) -> dict:
        return {"name": self.name, "offset": self.offset.tolist(), "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Affine":
        return cls(d["name"], np.asarray(d["offset"], dtype=float), np.asarray(d["matrix"], dtype=float))


def _transform(data: Dataset, t: Affine) -> Dataset:
    return Dataset(np.where(data.observed, t.apply(np.where(data.observed, data.x, 0.0)), np.nan),
                   data.observed, data.column_names)


def _column_stats(data: Dataset):
    means, sds = [], []
    for j, (col, obs) in enumerate(zip(data.x.T, data.observed.T)):
        vals = col[obs]
        if np.unique(vals).size < 2:
            raise DegenerateColumnError(f"column {j} has fewer than two distinct observed values")
        means.append(vals.mean())
        sds.append(vals.std())
    return np.array(means), np.array(sds)


def standardize_transform(data: Dataset, center: bool = True) -> Affine:
    """Per-column scaling to unit population variance, optionally centring first."""
    means, sds = _column_stats(data)
    offset = means if center else np.zeros_like(means)
    return Affine("standardize" if center else "scale", offset, np.diag(1.0 / sds))


def subtract_min_transform(data: Dataset) -> Affine:
    mins = np.array([col[obs].min() if obs.any() else 0.0 for col, obs in zip(data.x.T, data.observed.T)])
    return Affine("subtract-min", mins, np.eye(data.shape[1]))


def whiten_transform(data: Dataset) -> Affine:
    """``x -> L^{-1}(x - mean)`` with ``L L^T`` the sample covariance."""
    if not data.observed.all():
        raise ValueError("whitening needs fully observed data")
    n, d = data.shape
    if n <= d:
        raise np.linalg.LinAlgError(f"sample covariance of {n} rows in {d} dimensions is singular")
    mean = data.x.mean(axis=0)
    cov = np.cov(data.x, rowvar=False, bias=True).reshape(d, d)
    chol = np.linalg.cholesky(cov)
    return Affine("whiten", mean, np.linalg.inv(chol))


def standardize_and_shift(data: Dataset) -> Dataset:
    """Zero mean and unit population variance per column, then shift each minimum to 0."""
    out = _transform(data, standardize_transform(data))
    return _transform(out, subtract_min_transform(out))


def scale_variance(data: Dataset) -> Dataset:
    """Unit population variance per column without centring."""
    return _transform(data, standardize_transform(data, center=False))


def cholesky_whiten(data: Dataset) -> Dataset:
    return _transform(data, whiten_transform(data))


AFFINE_STEPS = {
    "standardize": standardize_transform,
    "scale": lambda d: standardize_transform(d, center=False),
    "subtract-min": subtract_min_transform,
    "whiten": whiten_transform,
}
STEPS = (*AFFINE_STEPS, "stft")


def preprocess(data: Dataset, steps) -> tuple[Dataset, list[Affine]]:
    """Apply affine steps in order and return the fitted transforms as well."""
    fitted = []
    for step in steps:
        if step not in AFFINE_STEPS:
            raise ValueError(f"unknown preprocessing step {step!r}; choose from {STEPS}")
        t = AFFINE_STEPS[step](data)
        data = _transform(data, t)
        fitted.append(t)
    return data, fitted


def apply_transforms(x: np.ndarray, transforms) -> np.ndarray:
    for t in transforms:
        x = t.apply(x)
    return x


def invert_transforms(x: np.ndarray, transforms) -> np.ndarray:
    for t in reversed(transforms):
        x = t.invert(x)
    return x


# -- audio -------------------------------------------------------------------

def stft_spectrogram(samples, n_fft: int = 128, window: str = "hanning", hop: int = 128) -> Dataset:
    """Magnitude of the windowed DFT of each frame; frame ``t`` starts at ``t * hop``."""
    if n_fft <= 0 or hop <= 0:
        raise ValueError("n_fft and hop must be positive")
    if window not in ("hanning", "hann"):
        raise ValueError(f"unsupported window {window!r}")
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < n_fft:
        raise ValueError(f"need at least {n_fft} samples, got {samples.size}")
    n_frames = (samples.size - n_fft) // hop + 1
    idx = np.arange(n_frames)[:, None] * hop + np.arange(n_fft)
    frames = samples[idx] * get_window("hann", n_fft)
    return Dataset(np.abs(np.fft.fft(frames, axis=1)))


def read_waveform(path: str | os.PathLike) -> np.ndarray:
    """Mono samples from a PCM ``.wav`` (channels averaged) or a one-column CSV."""
    path = Path(path)
    if path.suffix.lower() != ".wav":
        data = load_csv(path)
        if data.shape[1] != 1 or not data.observed.all():
            raise ParseError("waveform CSV must be one complete column")
        return data.x[:, 0]
    with wave.open(str(path), "rb") as fh:
        width, channels = fh.getsampwidth(), fh.getnchannels()
        raw = fh.readframes(fh.getnframes())
    if width == 1:
        pcm = np.frombuffer(raw, dtype=np.uint8).astype(float) - 128.0
    elif width in (2, 4):
        pcm = np.frombuffer(raw, dtype=f"<i{width}").astype(float)
    else:
        raise ParseError(f"unsupported sample width {width}")
    return pcm.reshape(-1, channels).mean(axis=1)


# -- traces ------------------------------------------------------------------

def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _hypers_dict(h: Hyperparameters) -> dict:
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(h).items()}


def save_trace(trace: ChainTrace, out: str | os.PathLike, config: dict | None = None,
               seed: int | None = None, extra: dict | None = None) -> Path:
    """Write a trace directory and its ``manifest.json``; returns the directory."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name in SERIES:
        p = out / f"{name}.csv"
        with open(p, "w") as fh:
            fh.write(name + "\n")
            for v in getattr(trace, name):
                fh.write(FLOAT_FMT % v + "\n")
        files.append(p.name)
    save_matrix(out / "imputed.csv", trace.imputed)
    save_matrix(out / "cells.csv", trace.cells, integer=True)
    files += ["imputed.csv", "cells.csv"]
    if trace.final_state is not None:
        st = trace.final_state
        save_matrix(out / "final_lam.csv", st.alloc.lam, integer=True)
        save_matrix(out / "final_b.csv", st.weights.b)
        save_matrix(out / "final_a.csv", st.features.a)
        hyp = _hypers_dict(st.hypers)
        hyp["weight_kind"] = st.weights.kind.value
        (out / "final_hypers.json").write_text(canonical_json(hyp))
        files += ["final_lam.csv", "final_b.csv", "final_a.csv", "final_hypers.json"]
    for name, content in (extra or {}).items():
        (out / name).write_text(content)
        files.append(name)
    config = config or {}
    manifest = {
        "files": {f: file_digest(out / f) for f in sorted(files)},
        "config": config,
        "config_hash": hashlib.sha256(canonical_json(config).encode()).hexdigest(),
        "seed": seed,
        "n_kept": len(trace),
    }
    (out / "manifest.json").write_text(canonical_json(manifest))
    return out


def load_trace(path: str | os.PathLike) -> ChainTrace:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"{path} holds no trace manifest")
    rec = {}
    for name in SERIES:
        with open(path / f"{name}.csv") as fh:
            head = fh.readline().strip()
            if head != name:
                raise ParseError(f"{name}.csv: unexpected header {head!r}", 1)
            rec[name] = np.array([float(v) for v in fh.read().split()])
    final = None
    if (path / "final_lam.csv").exists():
        hyp = json.loads((path / "final_hypers.json").read_text())
        kind = hyp.pop("weight_kind")
        final = ModelState(
            FeatureAllocation(load_matrix(path / "final_lam.csv", int)),
            FeatureDictionary(load_matrix(path / "final_a.csv")),
            InstanceWeights(load_matrix(path / "final_b.csv"), kind),
            Hyperparameters(**hyp),
        )
    imputed = load_matrix(path / "imputed.csv")
    cells = load_matrix(path / "cells.csv", int)
    if cells.shape[1] == 0:
        cells = np.zeros((0, 2), dtype=int)
    if imputed.shape[1] == 0:
        imputed = np.zeros((len(rec["iteration"]), len(cells)))
    return ChainTrace(imputed=imputed, cells=cells, final_state=final, **rec)
