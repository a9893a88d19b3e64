"""Triangle meshes, OBJ I/O, cotangent smoothing weights and iterative smoothing."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    pass


class ParseError(MeshError):
    pass


class EmptyMesh(MeshError):
    pass


class DegenerateRowWarning(UserWarning):
    """A smoothing row had no usable cotangent weight and fell back to uniform weights."""


@dataclass(frozen=True)
class TriMesh:
    positions: NDArray[np.float64]
    triangles: NDArray[np.int64]

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        tri = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise MeshError(f"positions must be (N, 3), got {pos.shape}")
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise MeshError(f"triangles must be (F, 3), got {tri.shape}")
        if len(pos) == 0 or len(tri) == 0:
            raise EmptyMesh("mesh has no vertices or no triangles")
        if not np.all(np.isfinite(pos)):
            raise MeshError("positions must be finite")
        if tri.min() < 0 or tri.max() >= len(pos):
            raise MeshError("triangle index out of range")
        if np.any((tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])):
            raise MeshError("triangle repeats a vertex")
        used = np.zeros(len(pos), dtype=bool)
        used[tri.ravel()] = True
        if not used.all():
            raise MeshError(f"isolated vertices: {np.flatnonzero(~used)[:10].tolist()}")
        pos.flags.writeable = False
        tri.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "triangles", tri)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def edges(self) -> NDArray[np.int64]:
        """Unique undirected edges as sorted ``(i, j)`` pairs, ``i < j``."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def neighbors(self) -> list[NDArray[np.int64]]:
        """One-ring neighbour indices per vertex, ascending."""
        e = self.edges()
        both = np.concatenate([e, e[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        splits = np.searchsorted(both[:, 0], np.arange(1, self.n_vertices))
        return np.split(both[:, 1], splits)

    def with_positions(self, positions: ArrayLike) -> TriMesh:
        return TriMesh(positions, self.triangles)


def _parse_index(token: str, count: int, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ParseError(f"line {lineno}: bad face index {token!r}") from None
    if idx > 0:
        idx -= 1
    elif idx < 0:
        idx += count
    else:
        raise ParseError(f"line {lineno}: face index 0 is invalid")
    if not 0 <= idx < count:
        raise ParseError(f"line {lineno}: face index {token!r} out of range ({count} vertices)")
    return idx


def load_obj(data: bytes | str) -> TriMesh:
    """Parse an ASCII OBJ; polygons are fan-triangulated, normals/UVs ignored."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                x, y, z = (float(v) for v in parts[1:4])
            except ValueError:
                raise ParseError(f"line {lineno}: bad vertex coordinate") from None
            if not all(np.isfinite((x, y, z))):
                raise ParseError(f"line {lineno}: non-finite vertex coordinate")
            verts.append((x, y, z))
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: face needs at least 3 vertices")
            idx = [_parse_index(tok, len(verts), lineno) for tok in parts[1:]]
            if len(set(idx)) != len(idx):
                raise ParseError(f"line {lineno}: face repeats a vertex")
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
    if not verts or not faces:
        raise EmptyMesh("OBJ contains no vertices or no faces")
    try:
        return TriMesh(np.array(verts), np.array(faces))
    except EmptyMesh:
        raise
    except MeshError as exc:
        raise ParseError(str(exc)) from None


def save_obj(mesh: TriMesh, positions: ArrayLike | None = None) -> bytes:
    """Serialise to OBJ text with round-trip exact coordinates."""
    pos = mesh.positions if positions is None else np.asarray(positions, dtype=np.float64)
    if pos.shape != mesh.positions.shape:
        raise MeshError(
            f"position override has shape {pos.shape}, mesh has {mesh.positions.shape}"
        )
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in pos.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return ("\n".join(lines) + "\n").encode("utf-8")


@dataclass(frozen=True)
class SmoothingConfig:
    kappa: float = 0.5
    iterations: int = 16

    def __post_init__(self):
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be a nonnegative integer, got {self.iterations}")


@dataclass(frozen=True)
class SmoothingWeights:
    """Row-stochastic one-ring weights ``W`` (CSR, sorted column indices)."""

    matrix: sp.csr_matrix
    precision: str = "double"
    degenerate_rows: NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def row_sum_error(self) -> float:
        sums = np.asarray(self.matrix.sum(axis=1)).ravel()
        return float(np.max(np.abs(sums - 1.0)))

    def dense(self) -> NDArray[np.float64]:
        return self.matrix.toarray()


def cotangent_weights(mesh: TriMesh, precision: str = "double") -> SmoothingWeights:
    """Row-normalised cotangent weights.

    Each triangle adds ``cot(angle)/2`` to the edge opposite that angle;
    negative edge totals are clamped to zero before rows are normalised.
    ``precision="single"`` rounds every intermediate to float32 and exists
    only to expose the failure mode of single-precision weights.
    """
    if precision not in ("double", "single"):
        raise ValueError(f"precision must be 'double' or 'single', got {precision!r}")
    dt = np.float64 if precision == "double" else np.float32
    p = mesh.positions.astype(dt)
    t = mesh.triangles
    n = mesh.n_vertices

    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, l = t[:, k], t[:, (k + 1) % 3], t[:, (k + 2) % 3]
        a = p[j] - p[i]
        b = p[l] - p[i]
        c = p[l] - p[j]
        cr = np.cross(a, b)
        twice_area = np.sqrt(np.sum(cr * cr, axis=1))
        longest = np.maximum(np.maximum(np.sum(a * a, axis=1), np.sum(b * b, axis=1)), np.sum(c * c, axis=1))
        good = 0.5 * twice_area >= dt(DEGENERATE_AREA) * longest
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = np.sum(a * b, axis=1) / twice_area
        half = np.where(good, cot * dt(0.5), dt(0.0)).astype(dt)
        rows += [j, l]
        cols += [l, j]
        vals += [half, half]

    coo = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n), dtype=dt
    )
    w = coo.tocsr()
    w.sum_duplicates()
    w.sort_indices()
    w.data = np.maximum(w.data, dt(0.0))

    sums = np.add.reduceat(w.data, w.indptr[:-1]).astype(dt)
    degenerate = np.flatnonzero(sums < dt(ROW_SUM_TOL))
    counts = np.diff(w.indptr)
    row_of = np.repeat(np.arange(n), counts)
    if len(degenerate):
        bad = np.isin(row_of, degenerate)
        w.data[bad] = dt(1.0) / counts[row_of[bad]].astype(dt)
        sums[degenerate] = dt(1.0)
        msg = f"{len(degenerate)} smoothing row(s) fell back to uniform weights"
        log.warning(msg)
        warnings.warn(msg, DegenerateRowWarning, stacklevel=2)
    w.data = (w.data / sums[row_of]).astype(dt)
    out = sp.csr_matrix((w.data.astype(np.float64), w.indices.copy(), w.indptr.copy()), shape=(n, n))
    return SmoothingWeights(out, precision, degenerate)


def smooth(values: ArrayLike, weights: SmoothingWeights, cfg: SmoothingConfig) -> NDArray[np.float64]:
    """Apply ``x <- (1 - kappa) x + kappa W x`` exactly ``cfg.iterations`` times.

    ``values`` is ``(N,)`` or ``(N, width)``; the payload width is arbitrary.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.shape[0] != weights.n:
        raise ValueError(f"payload has {x.shape[0]} rows, weights have {weights.n}")
    if cfg.iterations == 0:
        return x.copy()
    keep = 1.0 - cfg.kappa
    w = weights.matrix
    for _ in range(cfg.iterations):
        x = keep * x + cfg.kappa * (w @ x)
    return x
