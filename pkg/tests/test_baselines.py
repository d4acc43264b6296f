"""Poisson-fill and do-nothing baseline tests.

The dense direct solve used as the oracle here is built independently of
the CG implementation: the full Laplacian system is assembled as a dense
matrix and handed to numpy.linalg.solve.
"""

import numpy as np
import pytest

from cfdepth.baselines import do_nothing, poisson_fill
from cfdepth.errors import BoundaryError, InvalidInput
from cfdepth.imgeo import DepthMap, ObjectMask, default_intrinsics


def wrap(arr):
    arr = np.asarray(arr, dtype=np.float32)
    return DepthMap(data=arr, intrinsics=default_intrinsics(arr.shape[1], arr.shape[0]))


def rect_mask(h, w, y0, y1, x0, x1):
    m = np.ones((h, w), dtype=np.uint8)
    m[y0:y1, x0:x1] = 0
    return ObjectMask(data=m)


def dense_fill_oracle(depth, mask):
    """Assemble the hole system densely and solve it directly."""
    hole = mask == 0
    ys, xs = np.nonzero(hole)
    n = len(ys)
    index = {(y, x): k for k, (y, x) in enumerate(zip(ys.tolist(), xs.tolist()))}
    a = np.zeros((n, n))
    b = np.zeros(n)
    for k, (y, x) in enumerate(zip(ys.tolist(), xs.tolist())):
        a[k, k] = 4.0
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if (ny, nx) in index:
                a[k, index[(ny, nx)]] = -1.0
            else:
                b[k] += depth[ny, nx]
    out = depth.astype(np.float64).copy()
    out[hole] = np.linalg.solve(a, b)
    return out


class TestPoissonFill:
    def test_constant_depth_constant_fill(self):
        d = wrap(np.full((12, 12), 2.0))
        out = poisson_fill(d, rect_mask(12, 12, 4, 8, 4, 8))
        np.testing.assert_allclose(out.data, 2.0, atol=1e-7)

    def test_linear_ramp_recovered(self):
        # Linear functions are harmonic: the fill reproduces the ramp.
        ys, xs = np.mgrid[0:14, 0:16]
        ramp = (1.0 + 0.01 * xs + 0.004 * ys).astype(np.float32)
        d = wrap(ramp)
        out = poisson_fill(d, rect_mask(14, 16, 3, 10, 4, 12))
        np.testing.assert_allclose(out.data, ramp, atol=1e-6)

    def test_exterior_bit_identical(self):
        rng = np.random.default_rng(3)
        arr = rng.uniform(1, 4, (15, 17)).astype(np.float32)
        mask = rect_mask(15, 17, 5, 9, 6, 11)
        out = poisson_fill(wrap(arr), mask)
        keep = mask.data == 1
        assert out.data[keep].tobytes() == arr[keep].tobytes()

    def test_maximum_principle(self):
        rng = np.random.default_rng(4)
        arr = rng.uniform(1, 4, (18, 18)).astype(np.float32)
        mask = rect_mask(18, 18, 4, 12, 5, 13)
        out = poisson_fill(wrap(arr), mask)
        hole = mask.data == 0
        # Boundary ring: kept pixels 4-adjacent to the hole.
        ring = np.zeros_like(hole)
        ring[:-1] |= hole[1:]
        ring[1:] |= hole[:-1]
        ring[:, :-1] |= hole[:, 1:]
        ring[:, 1:] |= hole[:, :-1]
        ring &= ~hole
        lo, hi = arr[ring].min(), arr[ring].max()
        assert np.all(out.data[hole] >= lo - 1e-8)
        assert np.all(out.data[hole] <= hi + 1e-8)

    def test_matches_dense_direct_solve(self):
        rng = np.random.default_rng(5)
        for trial in range(5):
            h, w = 26, 28
            arr = rng.uniform(0.5, 5.0, (h, w)).astype(np.float32)
            y0 = int(rng.integers(1, 5))
            x0 = int(rng.integers(1, 5))
            hh = int(rng.integers(3, 21))
            ww = int(rng.integers(3, 21))
            mask = rect_mask(h, w, y0, y0 + hh, x0, x0 + ww)
            out = poisson_fill(wrap(arr), mask)
            oracle = dense_fill_oracle(arr, mask.data)
            np.testing.assert_allclose(out.data, oracle, atol=1e-6)

    def test_step_background_blends_instead_of_stepping(self):
        # One side of the background at 2 m, the other at 4 m. The fill
        # crosses the step smoothly, so the center of the hole is far from
        # both true values: the documented failure mode.
        arr = np.full((16, 20), 2.0, dtype=np.float32)
        arr[:, 10:] = 4.0
        mask = rect_mask(16, 20, 5, 11, 6, 14)
        out = poisson_fill(wrap(arr), mask)
        seam = out.data[7:9, 9:11]
        assert np.all(seam > 2.4) and np.all(seam < 3.6)
        # True hidden depth is the step itself: the fill errs by ~1 m there.
        truth = arr.copy()
        err = np.abs(out.data - truth)[mask.data == 0]
        assert err.max() > 0.5

    def test_disconnected_holes(self):
        rng = np.random.default_rng(6)
        arr = rng.uniform(1, 3, (14, 22)).astype(np.float32)
        m = np.ones((14, 22), dtype=np.uint8)
        m[3:6, 3:6] = 0
        m[8:12, 14:19] = 0
        out = poisson_fill(wrap(arr), ObjectMask(data=m))
        oracle = dense_fill_oracle(arr, m)
        np.testing.assert_allclose(out.data, oracle, atol=1e-6)

    def test_hole_touching_border_rejected(self):
        d = wrap(np.full((8, 8), 2.0))
        with pytest.raises(BoundaryError):
            poisson_fill(d, rect_mask(8, 8, 0, 3, 2, 5))

    def test_all_hole_rejected(self):
        d = wrap(np.full((6, 6), 2.0))
        with pytest.raises((InvalidInput, BoundaryError)):
            poisson_fill(d, ObjectMask(data=np.zeros((6, 6), dtype=np.uint8)))

    def test_empty_hole_is_identity(self):
        d = wrap(np.full((6, 6), 2.0))
        out = poisson_fill(d, ObjectMask(data=np.ones((6, 6), dtype=np.uint8)))
        assert out.data.tobytes() == d.data.tobytes()


class TestDoNothing:
    def test_returns_same_bits(self):
        rng = np.random.default_rng(7)
        d = wrap(rng.uniform(0.5, 4, (9, 9)).astype(np.float32))
        out = do_nothing(d)
        assert out.data.tobytes() == d.data.tobytes()
