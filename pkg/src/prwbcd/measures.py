"""Discrete measures, problem instances and their file formats.

A measure file holds one atom per row: the weight first, then the ``d``
coordinates. Two encodings are supported:

* ``csv``: ``weight, x_1, ..., x_d``; an optional header row is detected by a
  non-numeric first token. Lines starting with ``#`` are comments.
* ``jsonl``: one JSON object per line, ``{"weight": w, "coords": [...]}``
  (a bare list ``[w, x_1, ..., x_d]`` is accepted too).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

SIMPLEX_TOL = 1e-12
MIN_WEIGHT = 1e-15
FORMATS = ("csv", "jsonl")


class InstanceError(ValueError):
    """Raised when measure data or an instance fails validation."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InstanceError(f"points must be an n x d matrix with n, d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            bad = int(np.argwhere(~np.isfinite(pts))[0, 0])
            raise InstanceError(f"non-finite coordinate in row {bad}")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    cloud: PointCloud
    weights: np.ndarray

    def __post_init__(self):
        if not isinstance(self.cloud, PointCloud):
            object.__setattr__(self, "cloud", PointCloud(self.cloud))
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != self.cloud.n:
            raise InstanceError(f"{w.shape[0]} weights for {self.cloud.n} atoms")
        if not np.all(np.isfinite(w)):
            raise InstanceError("non-finite weight")
        small = np.flatnonzero(w < MIN_WEIGHT)
        if small.size:
            raise InstanceError(f"zero weight in row {int(small[0])} (weights must be >= {MIN_WEIGHT:g})")
        total = math.fsum(w)
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise InstanceError(f"weights off simplex: sum = {total!r}")
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        cloud = PointCloud(points)
        return cls(cloud, np.full(cloud.n, 1.0 / cloud.n))

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    @property
    def n(self) -> int:
        return self.cloud.n

    @property
    def d(self) -> int:
        return self.cloud.d


def _max_sq_distance(X: np.ndarray, Y: np.ndarray, block: int = 1024) -> float:
    # cdist works on differences, so no cancellation from the ||x||^2 + ||y||^2 - 2<x,y> expansion
    best = 0.0
    for start in range(0, X.shape[0], block):
        D = cdist(X[start:start + block], Y, metric="sqeuclidean")
        best = max(best, float(D.max()))
    return best


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    cost_sup: float = field(init=False)

    def __post_init__(self):
        if self.mu.d != self.nu.d:
            raise InstanceError(f"dimension mismatch: mu has d={self.mu.d}, nu has d={self.nu.d}")
        if self.mu.n != self.nu.n:
            raise InstanceError(
                f"unequal atom counts: mu has n={self.mu.n}, nu has n={self.nu.n}; both measures must have n atoms"
            )
        object.__setattr__(self, "cost_sup", _max_sq_distance(self.X, self.Y))

    @classmethod
    def from_arrays(cls, X, Y, r=None, c=None) -> "ProblemInstance":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        mu = DiscreteMeasure.uniform(X) if r is None else DiscreteMeasure(PointCloud(X), r)
        nu = DiscreteMeasure.uniform(Y) if c is None else DiscreteMeasure(PointCloud(Y), c)
        return cls(mu, nu)

    @property
    def X(self) -> np.ndarray:
        return self.mu.points

    @property
    def Y(self) -> np.ndarray:
        return self.nu.points

    @property
    def r(self) -> np.ndarray:
        return self.mu.weights

    @property
    def c(self) -> np.ndarray:
        return self.nu.weights

    @property
    def n(self) -> int:
        return self.mu.n

    @property
    def d(self) -> int:
        return self.mu.d

    def cost_matrix(self) -> np.ndarray:
        """Dense squared-distance matrix C. O(n^2) memory; not used by the solvers."""
        return cdist(self.X, self.Y, metric="sqeuclidean")

    def metadata(self) -> dict:
        def stats(w):
            return {"min": float(w.min()), "max": float(w.max()), "mean": float(w.mean())}

        return {
            "n": self.n,
            "d": self.d,
            "cost_sup": self.cost_sup,
            "mu_weights": stats(self.r),
            "nu_weights": stats(self.c),
        }


def cost_sup(instance: ProblemInstance) -> float:
    """max_{i,j} ||x_i - y_j||^2 over all n^2 pairs."""
    return instance.cost_sup


# ---------------------------------------------------------------------------
# file I/O

def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _read_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#"))
        for lineno, rec in enumerate(csv.reader(lines)):
            rec = [t.strip() for t in rec]
            if lineno == 0 and rec and not _is_number(rec[0]):
                continue
            try:
                rows.append([float(t) for t in rec])
            except ValueError as exc:
                raise InstanceError(f"{path}: parse failure in row {len(rows)}: {exc}") from None
    return _split_rows(rows, path)


def _read_jsonl(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if isinstance(obj, dict):
                    rec = [float(obj["weight"])] + [float(t) for t in obj["coords"]]
                else:
                    rec = [float(t) for t in obj]
            except (ValueError, KeyError, TypeError) as exc:
                raise InstanceError(f"{path}: parse failure on line {lineno + 1}: {exc!r}") from None
            rows.append(rec)
    return _split_rows(rows, path)


def _split_rows(rows: list, path: Path) -> tuple[np.ndarray, np.ndarray]:
    if not rows:
        raise InstanceError(f"{path}: no atoms")
    width = len(rows[0])
    for i, rec in enumerate(rows):
        if len(rec) != width:
            raise InstanceError(f"{path}: row {i} has {len(rec) - 1} coordinates, expected {width - 1}")
    if width < 2:
        raise InstanceError(f"{path}: rows need a weight and at least one coordinate")
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, 0], arr[:, 1:]


def read_measure(path, format: str = "csv", normalize: bool = False) -> DiscreteMeasure:
    """Read a measure file. ``normalize=True`` rescales raw weights (e.g. counts) onto the simplex."""
    path = Path(path)
    if format not in FORMATS:
        raise InstanceError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not path.is_file():
        raise FileNotFoundError(f"no such measure file: {path}")
    w, pts = (_read_csv if format == "csv" else _read_jsonl)(path)
    if normalize:
        w = w / math.fsum(w)
    try:
        return DiscreteMeasure(PointCloud(pts), w)
    except InstanceError as exc:
        raise InstanceError(f"{path}: {exc}") from None


def load_instance(path_mu, path_nu, format: str = "csv", normalize: bool = False) -> ProblemInstance:
    mu = read_measure(path_mu, format, normalize)
    nu = read_measure(path_nu, format, normalize)
    return ProblemInstance(mu, nu)


def guess_format(path) -> str:
    return "jsonl" if Path(path).suffix.lower() in (".jsonl", ".json", ".ndjson") else "csv"


def write_measure(measure: DiscreteMeasure, path, format: str = "csv") -> None:
    """Write a measure; floats use repr so a reload is bit-identical."""
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["weight"] + [f"x{j}" for j in range(measure.d)])
            for wt, row in zip(measure.weights, measure.points):
                w.writerow([repr(float(wt))] + [repr(float(t)) for t in row])
    elif format == "jsonl":
        with open(path, "w") as fh:
            for wt, row in zip(measure.weights, measure.points):
                fh.write(json.dumps({"weight": float(wt), "coords": [float(t) for t in row]}) + "\n")
    else:
        raise InstanceError(f"unknown format {format!r}")


def save_instance(instance: ProblemInstance, path_mu, path_nu, format: str = "csv") -> None:
    write_measure(instance.mu, path_mu, format)
    write_measure(instance.nu, path_nu, format)
