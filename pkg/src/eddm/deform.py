"""Skinning deformers: Enhanced DDM, classic DDM, LBS and iterative Delta Mush.

Per-vertex sparse data (skin weights, omega entries) is stored CSR-style:
``indptr`` of length ``N + 1`` plus flat per-entry arrays sorted by vertex,
then by ascending joint index.
"""

from __future__ import annotations

import io
import json
import logging
import struct
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .mesh import SmoothingConfig, SmoothingWeights, TriMesh, smooth
from .numerics import AffineTransform, factor_affine_batch, polar_rotation_batch

log = logging.getLogger(__name__)

PRUNE_EPS = 1e-4

# upper triangle of a symmetric 4x4, row-major
_SYM4 = ((0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3))


class DeformError(ValueError):
    pass


class EmptyInfluence(DeformError):
    pass


class MissingJoint(DeformError):
    pass


class DegenerateFrame(DeformError):
    pass


class FallbackWarning(UserWarning):
    """Some vertices used the dominant joint's rotation because ``M_i`` was rank-deficient."""

    def __init__(self, message: str, vertices: NDArray[np.int64]):
        super().__init__(message)
        self.vertices = vertices


@dataclass(frozen=True)
class SkinWeights:
    indptr: NDArray[np.int64]
    joints: NDArray[np.int64]
    weights: NDArray[np.float64]

    @classmethod
    def from_lists(cls, rows: Sequence[Sequence[tuple[int, float]]], n_joints: int | None = None) -> SkinWeights:
        """Build from per-vertex ``(joint, weight)`` lists; rows are normalised to sum 1."""
        indptr = [0]
        joints: list[int] = []
        weights: list[float] = []
        for v, row in enumerate(rows):
            acc: dict[int, float] = {}
            for j, w in row:
                j, w = int(j), float(w)
                if not np.isfinite(w) or w < 0.0:
                    raise DeformError(f"vertex {v}: weight {w} for joint {j} is invalid")
                if j < 0 or (n_joints is not None and j >= n_joints):
                    raise DeformError(f"vertex {v}: joint index {j} out of range")
                if w > 0.0:
                    acc[j] = acc.get(j, 0.0) + w
            total = sum(acc.values())
            if total <= 0.0:
                raise DeformError(f"vertex {v} has no positive weight")
            for j in sorted(acc):
                joints.append(j)
                weights.append(acc[j] / total)
            indptr.append(len(joints))
        return cls(np.array(indptr, dtype=np.int64), np.array(joints, dtype=np.int64), np.array(weights))

    @classmethod
    def from_dense(cls, w: ArrayLike) -> SkinWeights:
        w = np.asarray(w, dtype=np.float64)
        return cls.from_lists([[(j, x) for j, x in enumerate(row) if x > 0.0] for row in w], w.shape[1])

    @property
    def n_vertices(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_joints(self) -> int:
        return int(self.joints.max()) + 1 if len(self.joints) else 0

    def rows(self) -> NDArray[np.int64]:
        return np.repeat(np.arange(self.n_vertices), np.diff(self.indptr))

    def dense(self, n_joints: int | None = None) -> NDArray[np.float64]:
        out = np.zeros((self.n_vertices, n_joints or self.n_joints))
        out[self.rows(), self.joints] = self.weights
        return out

    def to_json(self) -> str:
        rows = [
            [[int(j), float(w)] for j, w in zip(self.joints[a:b], self.weights[a:b])]
            for a, b in zip(self.indptr[:-1], self.indptr[1:])
        ]
        return json.dumps({"weights": rows})

    @classmethod
    def from_json(cls, text: str | bytes, n_joints: int | None = None) -> SkinWeights:
        data = json.loads(text)
        return cls.from_lists([[(e[0], e[1]) for e in row] for row in data["weights"]], n_joints)


@dataclass(frozen=True)
class OmegaTable:
    """Per vertex-joint symmetric 4x4 ``Omega`` stored as 10 upper-triangle coefficients."""

    indptr: NDArray[np.int64]
    joints: NDArray[np.int64]
    coeffs: NDArray[np.float64]
    config: SmoothingConfig
    prune_eps: float

    @property
    def n_vertices(self) -> int:
        return len(self.indptr) - 1

    def rows(self) -> NDArray[np.int64]:
        return np.repeat(np.arange(self.n_vertices), np.diff(self.indptr))

    def matrices(self) -> NDArray[np.float64]:
        """Full ``(nnz, 4, 4)`` matrices."""
        out = np.empty((len(self.coeffs), 4, 4))
        for k, (i, j) in enumerate(_SYM4):
            out[:, i, j] = out[:, j, i] = self.coeffs[:, k]
        return out

    def omega_sums(self) -> NDArray[np.float64]:
        """Per-vertex sum of the homogeneous ``(3, 3)`` entries."""
        return np.add.reduceat(self.coeffs[:, 9], self.indptr[:-1])

    def dominant_joint(self) -> NDArray[np.int64]:
        """Joint with the largest homogeneous entry per vertex (lowest index on ties)."""
        rows = self.rows()
        order = np.lexsort((self.joints, -self.coeffs[:, 9], rows))
        first = np.searchsorted(rows[order], np.arange(self.n_vertices))
        return self.joints[order[first]]


def outer_coefficients(points: ArrayLike) -> NDArray[np.float64]:
    """Coefficients of ``[u u^T, u; u^T, 1]`` for every point."""
    u = np.asarray(points, dtype=np.float64)
    h = np.concatenate([u, np.ones((len(u), 1))], axis=1)
    return np.stack([h[:, i] * h[:, j] for i, j in _SYM4], axis=1)


def precompute_omega(
    mesh: TriMesh,
    weights: SkinWeights,
    w: SmoothingWeights,
    cfg: SmoothingConfig,
    prune_eps: float = PRUNE_EPS,
) -> OmegaTable:
    """Smooth each joint's weighted outer-product field and sparsify it.

    ``Omega_ij = sum_k B_ik w_kj P_k`` with ``B = ((1 - kappa) I + kappa W)^p``.
    Entries whose homogeneous coefficient falls below ``prune_eps`` are
    dropped and the survivors of that vertex rescaled to sum to one.
    """
    n = mesh.n_vertices
    if weights.n_vertices != n or w.n != n:
        raise DeformError("mesh, skin weights and smoothing weights disagree on vertex count")
    if prune_eps < 0.0:
        raise ValueError("prune_eps must be nonnegative")
    outer = outer_coefficients(mesh.positions)
    rows = weights.rows()

    ent_v, ent_j, ent_c = [], [], []
    pruned_mass = np.zeros(n)
    for j in np.unique(weights.joints):
        sel = weights.joints == j
        field = np.zeros((n, 10))
        field[rows[sel]] = weights.weights[sel, None] * outer[rows[sel]]
        field = smooth(field, w, cfg)
        om = field[:, 9]
        keep = (om > 0.0) & (om >= prune_eps)
        drop = (om > 0.0) & ~keep
        pruned_mass[drop] += om[drop]
        idx = np.flatnonzero(keep)
        ent_v.append(idx)
        ent_j.append(np.full(len(idx), j, dtype=np.int64))
        ent_c.append(field[idx])

    v = np.concatenate(ent_v)
    jj = np.concatenate(ent_j)
    c = np.concatenate(ent_c)
    order = np.lexsort((jj, v))
    v, jj, c = v[order], jj[order], c[order]
    counts = np.bincount(v, minlength=n)
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0)
        raise EmptyInfluence(f"pruning removed every influence of vertices {empty[:10].tolist()}")
    indptr = np.concatenate([[0], np.cumsum(counts)])

    touched = pruned_mass > 0.0
    if np.any(touched):
        kept = np.add.reduceat(c[:, 9], indptr[:-1])
        scale = np.where(touched, 1.0 / kept, 1.0)
        c = c * scale[v, None]
    return OmegaTable(indptr, jj, c, cfg, float(prune_eps))


def _stack(m: Sequence[AffineTransform]):
    lin = np.stack([t.linear for t in m])
    tr = np.stack([t.translation for t in m])
    return lin, tr


@dataclass(frozen=True)
class JointDeformOps:
    """Per joint: proper rotation and translation of ``M_rj`` and the symmetric ``S_j``."""

    rotations: NDArray[np.float64]
    translations: NDArray[np.float64]
    scale_shear: NDArray[np.float64]

    @classmethod
    def from_skinning(cls, m: Sequence[AffineTransform]) -> JointDeformOps:
        lin, tr = _stack(m)
        rot, ss = factor_affine_batch(lin)
        return cls(rot, tr, ss)

    def __len__(self) -> int:
        return len(self.rotations)


@dataclass(frozen=True)
class BlendResult:
    Q: NDArray[np.float64]
    q: NDArray[np.float64]
    p: NDArray[np.float64]


def _omega_blocks(omega: OmegaTable):
    c = omega.coeffs
    a = np.empty((len(c), 3, 3))
    for k, (i, j) in enumerate(_SYM4):
        if i < 3 and j < 3:
            a[:, i, j] = a[:, j, i] = c[:, k]
    b = c[:, [3, 6, 8]]
    return a, b, c[:, 9]


def _accumulate(omega: OmegaTable, lin, shift) -> BlendResult:
    """Sum ``[lin | shift] @ Omega`` per vertex; ``lin``/``shift`` are per entry."""
    a, b, w = _omega_blocks(omega)
    Q = np.einsum("nik,nkj->nij", lin, a) + shift[:, :, None] * b[:, None, :]
    q = np.einsum("nik,nk->ni", lin, b) + shift * w[:, None]
    starts = omega.indptr[:-1]
    return BlendResult(
        np.add.reduceat(Q, starts, axis=0),
        np.add.reduceat(q, starts, axis=0),
        np.add.reduceat(b, starts, axis=0),
    )


def _check_joints(omega: OmegaTable, n_joints: int) -> None:
    if len(omega.joints) and int(omega.joints.max()) >= n_joints:
        raise MissingJoint(
            f"omega references joint {int(omega.joints.max())}, only {n_joints} transforms given"
        )


def blend(omega: OmegaTable, ops: JointDeformOps, rest: TriMesh) -> BlendResult:
    """``sum_j M_rj D_ij Omega_ij`` with ``D_ij`` translating by ``S_j u_i - u_i``."""
    _check_joints(omega, len(ops))
    rows, jj = omega.rows(), omega.joints
    u = rest.positions[rows]
    rot = ops.rotations[jj]
    d = np.einsum("nik,nk->ni", ops.scale_shear[jj], u) - u
    shift = np.einsum("nik,nk->ni", rot, d) + ops.translations[jj]
    return _accumulate(omega, rot, shift)


def _finish(rest: TriMesh, omega: OmegaTable, res: BlendResult, fallback_rot) -> NDArray[np.float64]:
    m = res.Q - res.q[:, :, None] * res.p[:, None, :]
    rot, bad = polar_rotation_batch(m)
    if np.any(bad):
        verts = np.flatnonzero(bad)
        dom = omega.dominant_joint()[verts]
        rot[verts] = fallback_rot(dom)
        msg = f"{len(verts)} vertex/vertices used the dominant-joint rotation fallback"
        log.warning(msg)
        warnings.warn(FallbackWarning(msg, verts), stacklevel=3)
    u = rest.positions
    return np.einsum("nij,nj->ni", rot, u - res.p) + res.q


def deform_eddm(rest: TriMesh, omega: OmegaTable, m: Sequence[AffineTransform]) -> NDArray[np.float64]:
    """Enhanced DDM: non-rigid joint parts re-enter as per-vertex displacements."""
    if omega.n_vertices != rest.n_vertices:
        raise DeformError("omega table and rest mesh disagree on vertex count")
    ops = JointDeformOps.from_skinning(m)
    res = blend(omega, ops, rest)
    return _finish(rest, omega, res, lambda dom: ops.rotations[dom])


def deform_ddm(rest: TriMesh, omega: OmegaTable, m: Sequence[AffineTransform]) -> NDArray[np.float64]:
    """Classic DDM: full joint matrices blended directly against Omega."""
    if omega.n_vertices != rest.n_vertices:
        raise DeformError("omega table and rest mesh disagree on vertex count")
    _check_joints(omega, len(m))
    lin, tr = _stack(m)
    jj = omega.joints
    res = _accumulate(omega, lin[jj], tr[jj])

    def fallback(dom):
        rot, _ = factor_affine_batch(lin[dom])
        return rot

    return _finish(rest, omega, res, fallback)


def deform_lbs(rest: TriMesh, weights: SkinWeights, m: Sequence[AffineTransform]) -> NDArray[np.float64]:
    """Linear blend skinning ``v_i = sum_j w_ij M_j u_i``."""
    if weights.n_vertices != rest.n_vertices:
        raise DeformError("skin weights and rest mesh disagree on vertex count")
    lin, tr = _stack(m)
    if len(weights.joints) and int(weights.joints.max()) >= len(lin):
        raise MissingJoint("skin weights reference a joint without a transform")
    rows, jj = weights.rows(), weights.joints
    u = rest.positions[rows]
    moved = np.einsum("nik,nk->ni", lin[jj], u) + tr[jj]
    return np.add.reduceat(moved * weights.weights[:, None], weights.indptr[:-1], axis=0)


def vertex_frames(mesh: TriMesh, positions: ArrayLike, neighbors=None) -> NDArray[np.float64]:
    """Orthonormal frames ``[normal, tangent, normal x tangent]`` as matrix columns.

    The tangent is the first one-ring edge (by neighbour index) that is not
    parallel to the area-weighted vertex normal, projected onto the normal plane.
    """
    x = np.asarray(positions, dtype=np.float64)
    t = mesh.triangles
    fn = np.cross(x[t[:, 1]] - x[t[:, 0]], x[t[:, 2]] - x[t[:, 0]])
    normal = np.zeros_like(x)
    for k in range(3):
        np.add.at(normal, t[:, k], fn)
    length = np.linalg.norm(normal, axis=1)
    if np.any(length <= 0.0):
        raise DegenerateFrame(f"zero normal at vertices {np.flatnonzero(length <= 0.0)[:10].tolist()}")
    normal /= length[:, None]

    nbrs = mesh.neighbors() if neighbors is None else neighbors
    tangent = np.empty_like(x)
    pending = np.arange(len(x))
    slot = 0
    while len(pending):
        has = np.array([slot < len(nbrs[i]) for i in pending])
        if not has.all():
            raise DegenerateFrame(f"no usable tangent edge at vertices {pending[~has][:10].tolist()}")
        k = np.array([nbrs[i][slot] for i in pending])
        e = x[k] - x[pending]
        proj = e - np.sum(e * normal[pending], axis=1)[:, None] * normal[pending]
        pl = np.linalg.norm(proj, axis=1)
        ok = pl > 1e-12 * np.linalg.norm(e, axis=1)
        tangent[pending[ok]] = proj[ok] / pl[ok, None]
        pending = pending[~ok]
        slot += 1
    bitangent = np.cross(normal, tangent)
    return np.stack([normal, tangent, bitangent], axis=-1)


def deform_delta_mush(
    rest: TriMesh,
    w: SmoothingWeights,
    cfg: SmoothingConfig,
    weights: SkinWeights,
    m: Sequence[AffineTransform],
) -> NDArray[np.float64]:
    """Reference iterative Delta Mush: LBS, smooth, then re-add frame-local rest deltas."""
    nbrs = rest.neighbors()
    smoothed_rest = smooth(rest.positions, w, cfg)
    frames = vertex_frames(rest, smoothed_rest, nbrs)
    deltas = np.einsum("nki,nk->ni", frames, rest.positions - smoothed_rest)

    skinned = deform_lbs(rest, weights, m)
    smoothed = smooth(skinned, w, cfg)
    frames = vertex_frames(rest, smoothed, nbrs)
    return smoothed + np.einsum("nij,nj->ni", frames, deltas)


_MAGIC = b"EDDM"
_VERSION = 1


def write_omega(table: OmegaTable) -> bytes:
    """Little-endian binary omega cache."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<IQ", _VERSION, table.n_vertices))
    for a, b in zip(table.indptr[:-1], table.indptr[1:]):
        count = int(b - a)
        if count > 0xFFFF:
            raise DeformError("too many influences for one vertex")
        buf.write(struct.pack("<H", count))
        for j, c in zip(table.joints[a:b], table.coeffs[a:b]):
            buf.write(struct.pack("<I", int(j)))
            buf.write(np.asarray(c, dtype="<f8").tobytes())
    buf.write(struct.pack("<dId", table.config.kappa, table.config.iterations, table.prune_eps))
    return buf.getvalue()


def read_omega(data: bytes) -> OmegaTable:
    if data[:4] != _MAGIC:
        raise DeformError("not an omega cache (bad magic)")
    version, n = struct.unpack_from("<IQ", data, 4)
    if version != _VERSION:
        raise DeformError(f"unsupported omega cache version {version}")
    off = 16
    indptr = [0]
    joints: list[int] = []
    coeffs: list[NDArray[np.float64]] = []
    entry = struct.Struct("<I")
    try:
        for _ in range(n):
            (count,) = struct.unpack_from("<H", data, off)
            off += 2
            for _ in range(count):
                (j,) = entry.unpack_from(data, off)
                off += 4
                coeffs.append(np.frombuffer(data, dtype="<f8", count=10, offset=off).astype(np.float64))
                off += 80
                joints.append(j)
            indptr.append(len(joints))
        kappa, iters, prune = struct.unpack_from("<dId", data, off)
        off += 20
    except (struct.error, ValueError) as exc:
        raise DeformError(f"truncated omega cache: {exc}") from None
    if off != len(data):
        raise DeformError("trailing bytes after omega cache")
    return OmegaTable(
        np.array(indptr, dtype=np.int64),
        np.array(joints, dtype=np.int64),
        np.array(coeffs).reshape(-1, 10),
        SmoothingConfig(kappa, iters),
        prune,
    )
