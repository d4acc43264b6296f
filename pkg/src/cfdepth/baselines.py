"""Learning-free comparison methods: Poisson depth infill and pass-through.

The Poisson baseline solves the discrete Laplace equation (membrane
interpolation, zero guidance field) over the masked hole with Dirichlet
boundary values from the adjacent kept pixels. Conjugate gradients on the
SPD 5-point system do the work; a dense direct solve serves as the test
oracle. The fill smoothly interpolates the surrounding depths, which is
exactly why it fails when one side of the hidden background is closer
than the other: the true depth step cannot be reproduced from boundary
values alone.
"""

import numpy as np
from scipy import sparse

from .errors import BoundaryError, InvalidInput, NumericError
from .imgeo import DepthMap, ObjectMask

__all__ = ["poisson_fill", "do_nothing"]


def _cg(a, b, x0, tol_inf, max_iter):
    x = x0.copy()
    r = b - a @ x
    p = r.copy()
    rs = float(r @ r)
    for _ in range(max_iter):
        if float(np.max(np.abs(r))) < tol_inf:
            break
        ap = a @ p
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, float(np.max(np.abs(r)))


def poisson_fill(depth: DepthMap, mask: ObjectMask, tol_inf: float = 1e-10) -> DepthMap:
    """Fill mask-0 pixels harmonically from their mask-1 surroundings.

    Kept pixels are copied bit-exactly. Every hole pixel needs all four
    neighbors inside the image (a hole on the border has no complete
    stencil) and the mask must keep at least one pixel.
    """
    if depth.data.shape != mask.data.shape:
        raise InvalidInput(
            f"depth {depth.data.shape} and mask {mask.data.shape} disagree"
        )
    hole = mask.data == 0
    n = int(hole.sum())
    if n == 0:
        return depth
    if not (mask.data == 1).any():
        raise InvalidInput("mask keeps no pixel: the fill has no boundary")
    h, w = hole.shape
    ys, xs = np.nonzero(hole)
    if ys.min() == 0 or xs.min() == 0 or ys.max() == h - 1 or xs.max() == w - 1:
        raise BoundaryError("masked region touches the image border")

    index = np.full((h, w), -1, dtype=np.int64)
    index[hole] = np.arange(n)
    d = depth.data.astype(np.float64)

    rows, cols, vals = [], [], []
    b = np.zeros(n)
    for k, (y, x) in enumerate(zip(ys.tolist(), xs.tolist())):
        rows.append(k)
        cols.append(k)
        vals.append(4.0)
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            j = index[ny, nx]
            if j >= 0:
                rows.append(k)
                cols.append(j)
                vals.append(-1.0)
            else:
                b[k] += d[ny, nx]
    a = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    boundary_mean = float(b[b != 0].mean()) if np.any(b != 0) else 0.0
    x0 = np.full(n, boundary_mean)
    solution, residual = _cg(a, b, x0, tol_inf, max_iter=20 * n + 200)
    if residual >= 1e-8:
        raise NumericError(f"poisson fill did not converge: residual {residual:.3e}")

    out = depth.data.copy()
    out[hole] = np.maximum(solution, 0.0).astype(np.float32)
    return DepthMap(data=out, intrinsics=depth.intrinsics)


def do_nothing(depth: DepthMap) -> DepthMap:
    """The mask-ignoring baseline: the input depth, untouched."""
    return depth
