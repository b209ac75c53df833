"""Synthetic benchmark datasets and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DISTRIBUTIONS = ("INDE", "CORR", "ANTI")
JITTER = 0.05


@dataclass(frozen=True)
class DatasetSpec:
    distribution: str = "INDE"
    n: int = 1000
    m: int = 2
    d: int = 8
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.path is None and self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS} or a CSV path")
        if self.n < 0 or self.m < 1 or self.d < 1:
            raise ValueError("n must be non-negative, m and d positive")


def generate(spec: DatasetSpec) -> np.ndarray:
    """Integer points in ``[0, 2**d)``; deterministic for a given spec."""
    if spec.path is not None:
        _, rows = read_csv(spec.path)
        return np.asarray(rows, dtype=np.int64).reshape(-1, spec.m)
    rng = np.random.default_rng(spec.seed)
    top = 2**spec.d
    n, m = spec.n, spec.m
    if spec.distribution == "INDE":
        return rng.integers(0, top, size=(n, m), dtype=np.int64)
    sigma = JITTER * top
    if spec.distribution == "CORR":
        base = rng.uniform(0, top, size=(n, 1))
        raw = base + rng.normal(0, sigma, size=(n, m))
    else:
        # constant-sum plane through the domain centre, points spread by exponentials
        weights = rng.exponential(1.0, size=(n, m))
        simplex = weights / weights.sum(axis=1, keepdims=True)
        raw = simplex * (m * top / 2) + rng.normal(0, sigma, size=(n, m))
    return np.clip(np.rint(raw), 0, top - 1).astype(np.int64)


def write_csv(path: str | Path, rows, header: list[str] | None = None) -> None:
    rows = [[int(v) for v in r] for r in rows]
    m = len(rows[0]) if rows else len(header or [])
    header = header or [f"a{j}" for j in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: str | Path, columns: list[str] | None = None) -> tuple[list[str], list[tuple[int, ...]]]:
    """Read an integer table with a header; ``columns`` selects a subset by name."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        idx = list(range(len(header)))
        if columns:
            missing = [c for c in columns if c not in header]
            if missing:
                raise ValueError(f"columns not in CSV: {missing}")
            idx = [header.index(c) for c in columns]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append(tuple(int(row[i]) for i in idx))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: expected integers") from exc
    return [header[i] for i in idx], rows


def gen_dataset(spec: DatasetSpec, out: str | Path) -> Path:
    write_csv(out, generate(spec).tolist())
    return Path(out)
