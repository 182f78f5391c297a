"""Errors against exact values on a two-dimensional reference plane, and
zero-level-set extraction by marching squares."""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

TABLE_COLUMNS = ("scheme", "N", "layers", "neurons", "M", "sg_iters", "global_Linf",
                 "global_L1_rel", "local_Linf", "local_L1_rel", "cpu_seconds")
CONTOUR_COLUMNS = ("poly_id", "a", "b")
DEFAULT_ETA = 0.1


class EmptyBandError(ValueError):
    """No grid point satisfies ``|v| <= eta``."""


@dataclass
class ReferenceGrid:
    """Uniform grid ``a_i w1 + b_j w2`` on the plane spanned by ``w1, w2``.

    ``extent = (a_min, a_max, b_min, b_max)``.  The origin is a grid node when
    the extent is symmetric and ``resolution`` is odd.
    """

    w1: np.ndarray
    w2: np.ndarray
    extent: tuple[float, float, float, float]
    resolution: int = 201

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        if self.w1.shape != self.w2.shape or self.w1.ndim != 1:
            raise ValueError("w1 and w2 must be vectors of the same length")
        a0, a1, b0, b1 = (float(v) for v in self.extent)
        if not (a1 > a0 and b1 > b0):
            raise ValueError("extent must satisfy a_min < a_max and b_min < b_max")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        self.extent = (a0, a1, b0, b1)

    @classmethod
    def symmetric(cls, w1, w2, r_max: float, resolution: int = 201) -> "ReferenceGrid":
        return cls(w1, w2, (-r_max, r_max, -r_max, r_max), resolution)

    @classmethod
    def for_problem(cls, problem, resolution: int = 201) -> "ReferenceGrid":
        w1, w2 = problem.plane
        return cls(w1, w2, problem.plane_extent, resolution)

    @property
    def a(self) -> np.ndarray:
        return np.linspace(self.extent[0], self.extent[1], self.resolution)

    @property
    def b(self) -> np.ndarray:
        return np.linspace(self.extent[2], self.extent[3], self.resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.resolution, self.resolution)

    def plane_coords(self) -> np.ndarray:
        A, B = np.meshgrid(self.a, self.b, indexing="ij")
        return np.stack([A.ravel(), B.ravel()], axis=1)

    def points(self) -> np.ndarray:
        ab = self.plane_coords()
        return ab[:, :1] * self.w1 + ab[:, 1:] * self.w2


@dataclass
class ErrorReport:
    global_Linf: float
    global_L1_rel: float
    local_Linf: float | None
    local_L1_rel: float | None
    eta: float
    n_local: int
    seconds: float = 0.0

    @property
    def local_available(self) -> bool:
        return self.n_local > 0


def error_report(v_hat, v, eta: float = DEFAULT_ETA, band=None) -> ErrorReport:
    """L-infinity and mean absolute errors, globally and on ``{|band| <= eta}``.

    ``band`` defaults to ``v``.  ``eta = inf`` makes the local errors equal the
    global ones.  An empty band leaves the local fields ``None``.
    """
    v_hat = np.asarray(v_hat, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if v_hat.shape != v.shape or v.size == 0:
        raise ValueError("value arrays must be non-empty and of equal size")
    err = np.abs(v_hat - v)
    ref = v if band is None else np.asarray(band, dtype=np.float64).ravel()
    mask = np.abs(ref) <= eta
    n_local = int(mask.sum())
    loc_inf = float(err[mask].max()) if n_local else None
    loc_l1 = float(err[mask].mean()) if n_local else None
    return ErrorReport(float(err.max()), float(err.mean()), loc_inf, loc_l1, float(eta), n_local)


def compute_errors(value_fn: Callable, oracle: Callable, grid: ReferenceGrid,
                   eta: float = DEFAULT_ETA, require_local: bool = False) -> ErrorReport:
    """Compare ``value_fn(X)`` with ``oracle(X)`` on the grid points."""
    X = grid.points()
    t0 = time.perf_counter()
    v_hat = value_fn(X)
    seconds = time.perf_counter() - t0
    rep = error_report(v_hat, oracle(X), eta)
    rep.seconds = seconds
    if require_local and not rep.local_available:
        raise EmptyBandError(f"no grid point with |v| <= {eta}")
    return rep


def _fmt(x) -> str:
    if x is None:
        return "nan"
    return f"{x:.6e}"


def table_row(report: ErrorReport, scheme: str, N: int, layers: int, neurons: int, M: int,
              sg_iters: int, cpu_seconds: float) -> dict:
    return {
        "scheme": scheme, "N": N, "layers": layers, "neurons": neurons, "M": M,
        "sg_iters": sg_iters, "global_Linf": _fmt(report.global_Linf),
        "global_L1_rel": _fmt(report.global_L1_rel), "local_Linf": _fmt(report.local_Linf),
        "local_L1_rel": _fmt(report.local_L1_rel), "cpu_seconds": f"{cpu_seconds:.2f}",
    }


def append_table_rows(path, rows: Sequence[dict]) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        if new:
            w.writeheader()
        for row in rows:
            w.writerow(row)


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TABLE_COLUMNS:
            raise ValueError(f"{path}: header does not match the error table schema")
        return list(reader)


# --------------------------------------------------------- marching squares

# corner order: 0 = (i, j), 1 = (i+1, j), 2 = (i+1, j+1), 3 = (i, j+1)
# edge e joins corners e and (e + 1) % 4
_CASES = {
    0: (), 15: (),
    1: ((3, 0),), 14: ((3, 0),),
    2: ((0, 1),), 13: ((0, 1),),
    4: ((1, 2),), 11: ((1, 2),),
    8: ((2, 3),), 7: ((2, 3),),
    3: ((3, 1),), 12: ((3, 1),),
    6: ((0, 2),), 9: ((0, 2),),
}


def _edge_key(i, j, e):
    # a shared edge gets the same key from both neighbouring cells
    if e == 0:
        return ("h", i, j)
    if e == 1:
        return ("v", i + 1, j)
    if e == 2:
        return ("h", i, j + 1)
    return ("v", i, j)


def extract_zero_level(values, a=None, b=None, level: float = 0.0) -> list[np.ndarray]:
    """Polylines of ``{values = level}`` on a rectangular grid.

    ``values[i, j]`` sits at ``(a[i], b[j])``.  Crossings are placed by linear
    interpolation along cell edges.  In a saddle cell the mean of the four
    corners decides which pair of corners is joined.  Output order is
    deterministic: chains are started from the lowest cell index.
    """
    V = np.asarray(values, dtype=np.float64) - level
    if V.ndim != 2 or min(V.shape) < 2:
        raise ValueError("values must be a 2-D array with at least 2 x 2 nodes")
    if not np.all(np.isfinite(V)):
        raise ValueError("values must be finite")
    na, nb = V.shape
    a = np.arange(na, dtype=np.float64) if a is None else np.asarray(a, dtype=np.float64)
    b = np.arange(nb, dtype=np.float64) if b is None else np.asarray(b, dtype=np.float64)
    above = V >= 0.0

    points: dict = {}

    def crossing(i, j, e):
        key = _edge_key(i, j, e)
        if key not in points:
            kind, ii, jj = key
            if kind == "h":
                v0, v1 = V[ii, jj], V[ii + 1, jj]
                s = v0 / (v0 - v1)
                points[key] = (a[ii] + s * (a[ii + 1] - a[ii]), b[jj])
            else:
                v0, v1 = V[ii, jj], V[ii, jj + 1]
                s = v0 / (v0 - v1)
                points[key] = (a[ii], b[jj] + s * (b[jj + 1] - b[jj]))
        return key

    segments = []
    for i in range(na - 1):
        for j in range(nb - 1):
            c = (above[i, j], above[i + 1, j], above[i + 1, j + 1], above[i, j + 1])
            idx = c[0] | (c[1] << 1) | (c[2] << 2) | (c[3] << 3)
            if idx in (5, 10):
                centre = 0.25 * (V[i, j] + V[i + 1, j] + V[i + 1, j + 1] + V[i, j + 1])
                # the centre joins the two corners sharing its sign
                centre_like_0 = (centre >= 0.0) == c[0]
                pairs = ((0, 1), (2, 3)) if centre_like_0 else ((3, 0), (1, 2))
            else:
                pairs = _CASES[idx]
            for e0, e1 in pairs:
                segments.append((crossing(i, j, e0), crossing(i, j, e1)))

    return _link(segments, points)


def _link(segments, points) -> list[np.ndarray]:
    adj: dict = {}
    for s, (p, q) in enumerate(segments):
        adj.setdefault(p, []).append(s)
        adj.setdefault(q, []).append(s)
    used = [False] * len(segments)

    def walk(start_seg, start_pt):
        chain = [start_pt]
        seg, pt = start_seg, start_pt
        while True:
            used[seg] = True
            p, q = segments[seg]
            pt = q if p == pt else p
            chain.append(pt)
            nxt = [s for s in adj[pt] if not used[s]]
            if not nxt:
                return chain
            seg = nxt[0]

    polys = []
    # open chains first (endpoints on the grid boundary), then closed loops
    for s, (p, q) in enumerate(segments):
        if used[s]:
            continue
        for end in (p, q):
            if len(adj[end]) == 1:
                polys.append(walk(s, end))
                break
    for s, (p, _) in enumerate(segments):
        if not used[s]:
            polys.append(walk(s, p))
    return [np.array([points[k] for k in chain]) for chain in polys]


def write_contours_csv(path, polylines: Sequence[np.ndarray]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONTOUR_COLUMNS)
        for k, poly in enumerate(polylines):
            for a, b in poly:
                w.writerow((k, f"{a:.10g}", f"{b:.10g}"))
    os.replace(tmp, path)


def read_contours_csv(path) -> list[np.ndarray]:
    polys: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            polys.setdefault(int(row["poly_id"]), []).append((float(row["a"]), float(row["b"])))
    return [np.array(polys[k]) for k in sorted(polys)]


def isfinite_report(rep: ErrorReport) -> bool:
    vals = [rep.global_Linf, rep.global_L1_rel]
    if rep.local_available:
        vals += [rep.local_Linf, rep.local_L1_rel]
    return all(math.isfinite(v) for v in vals)
