"""Small dense 3x3 kernels: symmetric eigensolver, polar rotation, affine factoring.

Every kernel accepts a single matrix of shape ``(3, 3)`` or a batch of shape
``(..., 3, 3)`` and works in float64 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

SIGMA_TOL = 1e-8
REPEATED_TOL = 1e-12

_TWO_PI_3 = 2.0 * np.pi / 3.0


class DegenerateInput(ValueError):
    """Raised when a matrix is rank-deficient beyond ``SIGMA_TOL``."""

    def __init__(self, message: str, mask: NDArray[np.bool_] | None = None):
        super().__init__(message)
        self.mask = mask


@dataclass(frozen=True)
class EigenTriple:
    """Eigenvalues sorted descending; ``vectors[..., :, k]`` pairs with ``values[..., k]``."""

    values: NDArray[np.float64]
    vectors: NDArray[np.float64]


def sym3(coeffs: ArrayLike) -> NDArray[np.float64]:
    """Build full symmetric matrices from (..., 6) coefficients (xx, xy, xz, yy, yz, zz)."""
    c = np.asarray(coeffs, dtype=np.float64)
    out = np.empty(c.shape[:-1] + (3, 3))
    out[..., 0, 0] = c[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = c[..., 1]
    out[..., 0, 2] = out[..., 2, 0] = c[..., 2]
    out[..., 1, 1] = c[..., 3]
    out[..., 1, 2] = out[..., 2, 1] = c[..., 4]
    out[..., 2, 2] = c[..., 5]
    return out


def _as_batch(m: ArrayLike) -> tuple[NDArray[np.float64], tuple[int, ...]]:
    a = np.asarray(m, dtype=np.float64)
    if a.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    lead = a.shape[:-2]
    return a.reshape(-1, 3, 3), lead


def _orthonormal_pair(x, y, z):
    """Two unit vectors completing unit ``(x, y, z)`` to a right-handed basis."""
    use_x = np.abs(x) > np.abs(y)
    zero = np.zeros_like(x)
    inv = 1.0 / np.sqrt(np.where(use_x, x * x + z * z, y * y + z * z))
    ux = np.where(use_x, -z * inv, zero)
    uy = np.where(use_x, zero, z * inv)
    uz = np.where(use_x, x * inv, -y * inv)
    vx = y * uz - z * uy
    vy = z * ux - x * uz
    vz = x * uy - y * ux
    return (ux, uy, uz), (vx, vy, vz)


def _eig_components(a00, a01, a02, a11, a12, a22):
    """Eigen-decomposition on coefficient arrays of matrices scaled to O(1).

    The best separated eigenvalue comes from the trigonometric root of the
    characteristic cubic (accurate there); its eigenvector from the largest
    cross product of shifted rows. The remaining pair is diagonalised as a
    2x2 block in the orthogonal complement.
    """
    q = (a00 + a11 + a22) / 3.0
    b00, b11, b22 = a00 - q, a11 - q, a22 - q
    p = np.sqrt((b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * (a01 * a01 + a02 * a02 + a12 * a12)) / 6.0)
    inv_p = 1.0 / np.where(p > 0.0, p, 1.0)
    c00, c11, c22 = b00 * inv_p, b11 * inv_p, b22 * inv_p
    c01, c02, c12 = a01 * inv_p, a02 * inv_p, a12 * inv_p
    det_c = c00 * (c11 * c22 - c12 * c12) - c01 * (c01 * c22 - c12 * c02) + c02 * (c01 * c12 - c11 * c02)
    phi = np.arccos(np.clip(0.5 * det_c, -1.0, 1.0)) / 3.0
    lam1 = q + 2.0 * p * np.cos(phi)
    lam3 = q + 2.0 * p * np.cos(phi + _TWO_PI_3)
    lam2 = 3.0 * q - lam1 - lam3

    first_top = (lam1 - lam2) >= (lam2 - lam3)
    lf = np.where(first_top, lam1, lam3)

    r0 = (a00 - lf, a01, a02)
    r1 = (a01, a11 - lf, a12)
    r2 = (a02, a12, a22 - lf)

    def cross(u, v):
        return (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])

    def sq(u):
        return u[0] * u[0] + u[1] * u[1] + u[2] * u[2]

    x01, x02, x12 = cross(r0, r1), cross(r0, r2), cross(r1, r2)
    n01, n02, n12 = sq(x01), sq(x02), sq(x12)
    pick02 = n02 > n01
    best = tuple(np.where(pick02, b, a) for a, b in zip(x01, x02))
    nbest = np.where(pick02, n02, n01)
    pick12 = n12 > nbest
    best = tuple(np.where(pick12, b, a) for a, b in zip(best, x12))
    nbest = np.where(pick12, n12, nbest)
    flat = nbest <= 0.0
    inv = 1.0 / np.sqrt(np.where(flat, 1.0, nbest))
    fx = np.where(flat, 1.0, best[0] * inv)
    fy = np.where(flat, 0.0, best[1] * inv)
    fz = np.where(flat, 0.0, best[2] * inv)

    (ux, uy, uz), (vx, vy, vz) = _orthonormal_pair(fx, fy, fz)
    au = (a00 * ux + a01 * uy + a02 * uz, a01 * ux + a11 * uy + a12 * uz, a02 * ux + a12 * uy + a22 * uz)
    av = (a00 * vx + a01 * vy + a02 * vz, a01 * vx + a11 * vy + a12 * vz, a02 * vx + a12 * vy + a22 * vz)
    m00 = ux * au[0] + uy * au[1] + uz * au[2]
    m01 = ux * av[0] + uy * av[1] + uz * av[2]
    m11 = vx * av[0] + vy * av[1] + vz * av[2]
    theta = 0.5 * np.arctan2(2.0 * m01, m00 - m11)
    cs, sn = np.cos(theta), np.sin(theta)
    mid = 0.5 * (m00 + m11)
    rad = np.hypot(0.5 * (m00 - m11), m01)
    big, small = mid + rad, mid - rad
    gx, gy, gz = cs * ux + sn * vx, cs * uy + sn * vy, cs * uz + sn * vz
    hx, hy, hz = -sn * ux + cs * vx, -sn * uy + cs * vy, -sn * uz + cs * vz

    ft = first_top
    l1 = np.where(ft, lf, big)
    l2 = np.where(ft, big, small)
    l3 = np.where(ft, small, lf)
    e1 = (np.where(ft, fx, gx), np.where(ft, fy, gy), np.where(ft, fz, gz))
    e2 = (np.where(ft, gx, hx), np.where(ft, gy, hy), np.where(ft, gz, hz))
    e3 = (np.where(ft, hx, fx), np.where(ft, hy, fy), np.where(ft, hz, fz))

    # restore descending order where the isolated root and the 2x2 roots interleave by roundoff
    for _ in range(2):
        s12 = l2 > l1
        if np.any(s12):
            l1, l2 = np.where(s12, l2, l1), np.where(s12, l1, l2)
            e1, e2 = (tuple(np.where(s12, b, a) for a, b in zip(e1, e2)),
                      tuple(np.where(s12, a, b) for a, b in zip(e1, e2)))
        s23 = l3 > l2
        if np.any(s23):
            l2, l3 = np.where(s23, l3, l2), np.where(s23, l2, l3)
            e2, e3 = (tuple(np.where(s23, b, a) for a, b in zip(e2, e3)),
                      tuple(np.where(s23, a, b) for a, b in zip(e2, e3)))

    handed = cross(e1, e2)
    flip = np.where(handed[0] * e3[0] + handed[1] * e3[1] + handed[2] * e3[2] < 0.0, -1.0, 1.0)
    e3 = (e3[0] * flip, e3[1] * flip, e3[2] * flip)

    repeated = (l1 - l3) <= REPEATED_TOL * np.maximum(np.abs(l1), np.abs(l3))
    repeated |= p == 0.0
    if np.any(repeated):
        one, zero = np.ones_like(q), np.zeros_like(q)
        e1 = tuple(np.where(repeated, i, c) for c, i in zip(e1, (one, zero, zero)))
        e2 = tuple(np.where(repeated, i, c) for c, i in zip(e2, (zero, one, zero)))
        e3 = tuple(np.where(repeated, i, c) for c, i in zip(e3, (zero, zero, one)))
        l1, l2, l3 = (np.where(repeated, q, v) for v in (l1, l2, l3))
    return (l1, l2, l3), (e1, e2, e3)


def _upper(a):
    return a[:, 0, 0], a[:, 0, 1], a[:, 0, 2], a[:, 1, 1], a[:, 1, 2], a[:, 2, 2]


def _scale_of(a):
    s = np.max(np.abs(a.reshape(-1, 9)), axis=1)
    return np.where(s > 0.0, s, 1.0)


def eig_sym3(s: ArrayLike) -> EigenTriple:
    """Closed-form eigen-decomposition of symmetric 3x3 matrices.

    Only the upper triangle of ``s`` is read, so symmetry holds by
    construction. Repeated spectra return the identity basis.
    """
    a, lead = _as_batch(s)
    scale = _scale_of(a)
    coeffs = [c / scale for c in _upper(a)]
    (l1, l2, l3), (e1, e2, e3) = _eig_components(*coeffs)
    values = np.stack([l1, l2, l3], axis=-1) * scale[:, None]
    vectors = np.stack([np.stack(e, axis=-1) for e in (e1, e2, e3)], axis=-1)
    return EigenTriple(values.reshape(lead + (3,)), vectors.reshape(lead + (3, 3)))


def _inv_sqrt_components(eig, negate, lam3=None):
    (l1, l2, l3), (e1, e2, e3) = eig
    if lam3 is not None:
        l3 = lam3
    bad = ~(l3 > SIGMA_TOL * l1)
    k1 = 1.0 / np.sqrt(np.where(bad, 1.0, l1))
    k2 = 1.0 / np.sqrt(np.where(bad, 1.0, l2))
    k3 = 1.0 / np.sqrt(np.where(bad, 1.0, l3))
    k3 = np.where(negate, -k3, k3)

    def entry(i, j):
        return k1 * e1[i] * e1[j] + k2 * e2[i] * e2[j] + k3 * e3[i] * e3[j]

    return [[entry(i, j) for j in range(3)] for i in range(3)], bad


def inv_sqrt_sym3(s: ArrayLike, negate_smallest: ArrayLike = False) -> NDArray[np.float64]:
    """``V diag(l1^-1/2, l2^-1/2, +-l3^-1/2) V^T`` for positive-definite ``s``.

    Raises :class:`DegenerateInput` when ``l3 <= SIGMA_TOL * l1`` for any matrix.
    """
    a, lead = _as_batch(s)
    scale = _scale_of(a)
    coeffs = [c / scale for c in _upper(a)]
    neg = np.broadcast_to(np.asarray(negate_smallest, dtype=bool).reshape(-1), scale.shape)
    x, bad = _inv_sqrt_components(_eig_components(*coeffs), neg)
    if np.any(bad):
        raise DegenerateInput(f"{int(bad.sum())} matrix(es) rank-deficient", bad.reshape(lead))
    out = np.stack([np.stack(row, axis=-1) for row in x], axis=-2) / np.sqrt(scale)[:, None, None]
    return out.reshape(lead + (3, 3))


def _det3(m):
    return (
        m[:, 0, 0] * (m[:, 1, 1] * m[:, 2, 2] - m[:, 1, 2] * m[:, 2, 1])
        - m[:, 0, 1] * (m[:, 1, 0] * m[:, 2, 2] - m[:, 1, 2] * m[:, 2, 0])
        + m[:, 0, 2] * (m[:, 1, 0] * m[:, 2, 1] - m[:, 1, 1] * m[:, 2, 0])
    )


def polar_rotation_batch(m: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Nearest proper rotations and a mask of rank-deficient inputs.

    Rows flagged in the mask hold the identity instead of a rotation.
    """
    a, lead = _as_batch(m)
    a = a / _scale_of(a)[:, None, None]
    c = [[a[:, i, j] for j in range(3)] for i in range(3)]
    det = (
        c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1])
        - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
        + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0])
    )

    def gram(i, j):
        return c[0][i] * c[0][j] + c[1][i] * c[1][j] + c[2][i] * c[2][j]

    coeffs = [gram(0, 0), gram(0, 1), gram(0, 2), gram(1, 1), gram(1, 2), gram(2, 2)]
    eig = _eig_components(*coeffs)
    (l1, l2, _), _ = eig
    # det(M)^2 / (l1 l2) keeps the smallest Gram eigenvalue relatively accurate
    with np.errstate(divide="ignore", invalid="ignore"):
        lam3 = np.where(l2 > 0.0, det * det / (l1 * l2), 0.0)
    x, bad = _inv_sqrt_components(eig, det < 0.0, lam3)
    r = [[c[i][0] * x[0][j] + c[i][1] * x[1][j] + c[i][2] * x[2][j] for j in range(3)] for i in range(3)]
    # one Newton step r <- (r + r^-T) / 2 restores orthogonality lost to forming m^T m
    cof = [
        [r[(i + 1) % 3][(j + 1) % 3] * r[(i + 2) % 3][(j + 2) % 3]
         - r[(i + 1) % 3][(j + 2) % 3] * r[(i + 2) % 3][(j + 1) % 3] for j in range(3)]
        for i in range(3)
    ]
    det_r = r[0][0] * cof[0][0] + r[0][1] * cof[0][1] + r[0][2] * cof[0][2]
    half_inv = 0.5 / np.where(bad, 1.0, det_r)
    out = np.empty_like(a)
    for i in range(3):
        for j in range(3):
            out[:, i, j] = 0.5 * r[i][j] + half_inv * cof[i][j]
    out[bad] = np.eye(3)
    r = out
    return r.reshape(lead + (3, 3)), bad.reshape(lead)


def polar_rotation(m: ArrayLike) -> NDArray[np.float64]:
    """Rotation factor ``R`` of ``m = R S`` with ``det(R) = +1``.

    Computed as ``m (m^T m)^(-1/2)``; when ``det(m) < 0`` the smallest
    eigenvalue's inverse root is negated, which equals the sign-corrected
    SVD answer ``U diag(1, 1, -1) V^T``.
    """
    r, bad = polar_rotation_batch(m)
    if np.any(bad):
        raise DegenerateInput(f"{int(np.sum(bad))} matrix(es) rank-deficient", bad)
    return r


def jacobi_svd(m: ArrayLike, max_sweeps: int = 30, tol: float = 1e-15):
    """One-sided Jacobi SVD; returns ``U, sigma, V`` with sigma descending."""
    a, lead = _as_batch(m)
    scale = _scale_of(a)
    a = a / scale[:, None, None]
    n = a.shape[0]
    v = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    pairs = ((0, 1), (0, 2), (1, 2))
    for _ in range(max_sweeps):
        worst = 0.0
        for i, j in pairs:
            ai, aj = a[:, :, i], a[:, :, j]
            alpha = np.einsum("nk,nk->n", ai, ai)
            beta = np.einsum("nk,nk->n", aj, aj)
            gamma = np.einsum("nk,nk->n", ai, aj)
            denom = np.sqrt(alpha * beta)
            off = np.abs(gamma) / np.where(denom > 0.0, denom, 1.0)
            worst = max(worst, float(off.max(initial=0.0)))
            rot = off > tol
            g = np.where(rot, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = np.where(rot, 1.0 / np.sqrt(1.0 + t * t), 1.0)
            s = np.where(rot, c * t, 0.0)
            for mat in (a, v):
                ci, cj = mat[:, :, i].copy(), mat[:, :, j]
                mat[:, :, i] = c[:, None] * ci - s[:, None] * cj
                mat[:, :, j] = s[:, None] * ci + c[:, None] * cj
        if worst <= tol:
            break

    sigma = np.sqrt(np.einsum("nki,nki->ni", a, a))
    order = np.argsort(-sigma, axis=1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=1)
    a = np.take_along_axis(a, order[:, None, :], axis=2)
    v = np.take_along_axis(v, order[:, None, :], axis=2)

    u = a / np.where(sigma > 0.0, sigma, 1.0)[:, None, :]
    top = sigma[:, :1]
    lost1 = sigma[:, 0] <= 0.0
    u[lost1, :, 0] = np.array([1.0, 0.0, 0.0])
    lost2 = sigma[:, 1] <= 1e-15 * top[:, 0]
    if np.any(lost2):
        w = u[lost2, :, 0]
        u2, _ = _orthonormal_pair(w[:, 0], w[:, 1], w[:, 2])
        u[lost2, :, 1] = np.stack(u2, axis=-1)
    lost3 = sigma[:, 2] <= 1e-15 * top[:, 0]
    if np.any(lost3):
        u[lost3, :, 2] = np.cross(u[lost3, :, 0], u[lost3, :, 1])
    sigma = sigma * scale[:, None]
    return u.reshape(lead + (3, 3)), sigma.reshape(lead + (3,)), v.reshape(lead + (3, 3))


def svd_rotation_oracle(m: ArrayLike, return_sigma: bool = False):
    """Nearest proper rotation ``U diag(1, 1, det(U V^T)) V^T`` via Jacobi SVD.

    With ``return_sigma`` the singular values come back as a second result.
    """
    u, sigma, v = jacobi_svd(m)
    a, lead = _as_batch(u)
    vb = v.reshape(-1, 3, 3)
    d = np.sign(_det3(np.einsum("nik,njk->nij", a, vb)))
    a = a.copy()
    a[:, :, 2] *= np.where(d == 0.0, 1.0, d)[:, None]
    r = np.einsum("nik,njk->nij", a, vb).reshape(lead + (3, 3))
    return (r, sigma) if return_sigma else r


@dataclass(frozen=True)
class AffineTransform:
    """``x -> linear @ x + translation``; the 4x4 form has bottom row (0, 0, 0, 1)."""

    linear: NDArray[np.float64]
    translation: NDArray[np.float64]

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(t))):
            raise ValueError("AffineTransform entries must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> AffineTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> AffineTransform:
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4) or not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("expected a 4x4 affine matrix with bottom row (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> NDArray[np.float64]:
        out = np.eye(4)
        out[:3, :3] = self.linear
        out[:3, 3] = self.translation
        return out

    def __matmul__(self, other: AffineTransform) -> AffineTransform:
        return AffineTransform(
            self.linear @ other.linear, self.linear @ other.translation + self.translation
        )

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.linear.T + self.translation

    def inverse(self) -> AffineTransform:
        inv = np.linalg.inv(self.linear)
        return AffineTransform(inv, -inv @ self.translation)


def factor_affine(m: AffineTransform) -> tuple[AffineTransform, AffineTransform]:
    """Split ``m`` into ``rigid @ scale_shear``.

    The rigid part carries the polar rotation and all of the translation; the
    scale/shear part is ``R^T L`` (symmetric) with zero translation. A
    reflection in ``m`` ends up in the scale/shear part.
    """
    rot = polar_rotation(m.linear)
    rigid = AffineTransform(rot, m.translation)
    scale_shear = AffineTransform(rot.T @ m.linear, np.zeros(3))
    return rigid, scale_shear


def factor_affine_batch(linear: ArrayLike):
    """Vectorised :func:`factor_affine` on linear parts ``(J, 3, 3)``.

    Returns ``(rotations, scale_shear)``; raises on any singular input.
    """
    lin = np.asarray(linear, dtype=np.float64)
    rot, bad = polar_rotation_batch(lin)
    if np.any(bad):
        raise DegenerateInput(
            f"joint transform(s) {np.flatnonzero(bad).tolist()} are singular", bad
        )
    return rot, np.einsum("jki,jkl->jil", rot, lin)
