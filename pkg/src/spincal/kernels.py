"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public functions dispatch on :data:`spincal._backend.USE_NUMBA` unless a
``backend`` argument ("numba" or "numpy") is given. Both paths return the
same quantities; they agree to floating-point roundoff, not bitwise.

Segment layout: ``points`` is sorted so that segment ``g`` occupies rows
``starts[g]:starts[g + 1]``.
"""

import numpy as np

from ._backend import HAVE_NUMBA, USE_NUMBA, njit

PARALLEL_EPS = 1e-12


def _pick(backend):
    if backend is None:
        return USE_NUMBA
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")


# ---------------------------------------------------------------------------
# segment moments (centroid + population covariance)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _segment_moments_nb(points, starts):
    G = starts.shape[0] - 1
    cent = np.zeros((G, 3))
    cov = np.zeros((G, 3, 3))
    for g in range(G):
        a = starts[g]
        b = starts[g + 1]
        n = b - a
        # compensated (Kahan) sums
        for k in range(3):
            s = 0.0
            c = 0.0
            for i in range(a, b):
                y = points[i, k] - c
                t = s + y
                c = (t - s) - y
                s = t
            cent[g, k] = s / n
        for k in range(3):
            for m in range(k, 3):
                s = 0.0
                c = 0.0
                for i in range(a, b):
                    y = (points[i, k] - cent[g, k]) * (points[i, m] - cent[g, m]) - c
                    t = s + y
                    c = (t - s) - y
                    s = t
                cov[g, k, m] = s / n
                cov[g, m, k] = s / n
    return cent, cov


def _segment_moments_np(points, starts):
    counts = np.diff(starts)
    heads = starts[:-1]
    cent = np.add.reduceat(points, heads, axis=0) / counts[:, None]
    centered = points - np.repeat(cent, counts, axis=0)
    outer = centered[:, :, None] * centered[:, None, :]
    cov = np.add.reduceat(outer, heads, axis=0) / counts[:, None, None]
    return cent, cov


def segment_moments(points, starts, backend=None):
    """Per-segment centroid ``(G, 3)`` and population covariance ``(G, 3, 3)``."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    if starts.shape[0] < 2:
        return np.zeros((0, 3)), np.zeros((0, 3, 3))
    if _pick(backend):
        return _segment_moments_nb(points, starts)
    return _segment_moments_np(points, starts)


# ---------------------------------------------------------------------------
# plane thickness terms: lambda_min, gradient and Hessian w.r.t. calibration
# ---------------------------------------------------------------------------


@njit(cache=True)
def _canonical_sign_nb(v):
    k = 0
    for i in range(1, 3):
        if abs(v[i]) > abs(v[k]):
            k = i
    if v[k] < 0.0:
        return -v
    return v


@njit(cache=True)
def _plane_terms_nb(points, starts, jac, gap_floor, exact, with_derivs):
    G = starts.shape[0] - 1
    P = jac.shape[2]
    cent, cov = _segment_moments_nb(points, starts)
    lam = np.zeros((G, 3))
    normals = np.zeros((G, 3))
    skipped = np.zeros(G, dtype=np.bool_)
    grad = np.zeros(P)
    hess = np.zeros((P, P))
    for g in range(G):
        w, V = np.linalg.eigh(cov[g].copy())
        lam[g, :] = w
        u = _canonical_sign_nb(V[:, 0].copy())
        normals[g, :] = u
        if not with_derivs:
            continue
        if w[1] - w[0] < gap_floor:
            skipped[g] = True
            continue
        a0 = starts[g]
        b0 = starts[g + 1]
        n = b0 - a0
        abar = np.zeros(P)
        for i in range(a0, b0):
            for j in range(P):
                abar[j] += u[0] * jac[i, 0, j] + u[1] * jac[i, 1, j] + u[2] * jac[i, 2, j]
        for j in range(P):
            abar[j] /= n
        gg = np.zeros(P)
        hg = np.zeros((P, P))
        v1 = np.zeros(P)
        v2 = np.zeros(P)
        ai = np.zeros(P)
        for i in range(a0, b0):
            r0 = points[i, 0] - cent[g, 0]
            r1 = points[i, 1] - cent[g, 1]
            r2 = points[i, 2] - cent[g, 2]
            s = u[0] * r0 + u[1] * r1 + u[2] * r2
            for j in range(P):
                ai[j] = u[0] * jac[i, 0, j] + u[1] * jac[i, 1, j] + u[2] * jac[i, 2, j]
                gg[j] += s * ai[j]
            for j in range(P):
                cj = ai[j] - abar[j]
                for k in range(P):
                    hg[j, k] += cj * (ai[k] - abar[k])
            if exact:
                c1 = V[0, 1] * r0 + V[1, 1] * r1 + V[2, 1] * r2
                c2 = V[0, 2] * r0 + V[1, 2] * r1 + V[2, 2] * r2
                for j in range(P):
                    b1 = V[0, 1] * jac[i, 0, j] + V[1, 1] * jac[i, 1, j] + V[2, 1] * jac[i, 2, j]
                    b2 = V[0, 2] * jac[i, 0, j] + V[1, 2] * jac[i, 1, j] + V[2, 2] * jac[i, 2, j]
                    # signs of u and u_m cancel: v_m enters quadratically
                    v1[j] += s * b1 + c1 * ai[j]
                    v2[j] += s * b2 + c2 * ai[j]
        for j in range(P):
            grad[j] += 2.0 / n * gg[j]
            for k in range(P):
                hess[j, k] += 2.0 / n * hg[j, k]
        if exact:
            d1 = w[0] - w[1]
            d2 = w[0] - w[2]
            for j in range(P):
                for k in range(P):
                    extra = 0.0
                    if d1 != 0.0:
                        extra += v1[j] * v1[k] / d1
                    if d2 != 0.0:
                        extra += v2[j] * v2[k] / d2
                    hess[j, k] += 2.0 / (n * n) * extra
    return lam, normals, grad, hess, skipped


def _canonical_sign_np(vecs):
    k = np.argmax(np.abs(vecs), axis=1)
    sign = np.where(vecs[np.arange(len(vecs)), k] < 0.0, -1.0, 1.0)
    return vecs * sign[:, None]


def _plane_terms_np(points, starts, jac, gap_floor, exact, with_derivs):
    G = starts.shape[0] - 1
    P = jac.shape[2]
    cent, cov = _segment_moments_np(points, starts)
    lam, V = np.linalg.eigh(cov)
    u = _canonical_sign_np(V[:, :, 0])
    grad = np.zeros(P)
    hess = np.zeros((P, P))
    skipped = np.zeros(G, dtype=bool)
    if not with_derivs:
        return lam, u, grad, hess, skipped
    skipped = (lam[:, 1] - lam[:, 0]) < gap_floor
    counts = np.diff(starts)
    heads = starts[:-1]
    seg = np.repeat(np.arange(G), counts)
    weight = np.where(skipped, 0.0, 2.0 / counts)[seg]
    r = points - cent[seg]
    s = np.einsum("nk,nk->n", r, u[seg])
    a = np.einsum("nk,nkj->nj", u[seg], jac)
    abar = np.add.reduceat(a, heads, axis=0) / counts[:, None]
    ac = a - abar[seg]
    grad = (weight * s) @ a
    hess = (ac * weight[:, None]).T @ ac
    if exact:
        keep = ~skipped
        for m in (1, 2):
            um = V[:, :, m]
            b = np.einsum("nk,nkj->nj", um[seg], jac)
            c = np.einsum("nk,nk->n", r, um[seg])
            vm = np.add.reduceat(s[:, None] * b + c[:, None] * a, heads, axis=0)
            gap = lam[:, 0] - lam[:, m]
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(keep & (gap != 0.0), 2.0 / (counts**2 * gap), 0.0)
            hess = hess + (vm * scale[:, None]).T @ vm
    return lam, u, grad, hess, skipped


def plane_terms(points, starts, jac=None, gap_floor=1e-9, exact=False, backend=None):
    """Thickness terms for a frozen set of plane segments.

    Parameters
    ----------
    points : (N, 3) array
        Motor-frame points sorted by segment.
    starts : (G + 1,) int array
        Segment boundaries.
    jac : (N, 3, P) array, optional
        Derivative of every point w.r.t. the P calibration parameters. When
        omitted only the eigen-decomposition is computed.
    gap_floor : float
        Segments with ``lambda_mid - lambda_min`` below this are left out of
        the derivative sums and flagged in ``skipped``.
    exact : bool
        Add the eigenvector-rotation term to the Hessian. The default is the
        Gauss-Newton part only, which is positive semi-definite.

    Returns
    -------
    lam : (G, 3) ascending eigenvalues
    normals : (G, 3) unit min-eigenvectors, sign-canonicalised
    grad : (P,) gradient of sum(lam[:, 0])
    hess : (P, P) Hessian approximation
    skipped : (G,) bool
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    with_derivs = jac is not None
    if jac is None:
        jac = np.zeros((0, 3, 0))  # never read
    jac = np.ascontiguousarray(jac, dtype=np.float64)
    P = jac.shape[2]
    if starts.shape[0] < 2:
        return (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(P), np.zeros((P, P)),
                np.zeros(0, dtype=bool))
    if _pick(backend):
        lam, normals, grad, hess, skipped = _plane_terms_nb(
            points, starts, jac, float(gap_floor), bool(exact), with_derivs)
    else:
        lam, normals, grad, hess, skipped = _plane_terms_np(
            points, starts, jac, float(gap_floor), bool(exact), with_derivs)
    hess = 0.5 * (hess + hess.T)
    return lam, normals, grad, hess, skipped


# ---------------------------------------------------------------------------
# ray casting against finite rectangular plane patches
# ---------------------------------------------------------------------------


@njit(cache=True)
def _ray_cast_nb(origins, dirs, centers, normals, axes_u, axes_v, half, range_max):
    N = origins.shape[0]
    P = centers.shape[0]
    ranges = np.full(N, np.inf)
    index = np.full(N, -1, dtype=np.int64)
    for i in range(N):
        ox = origins[i, 0]
        oy = origins[i, 1]
        oz = origins[i, 2]
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        best = np.inf
        arg = -1
        for p in range(P):
            nx = normals[p, 0]
            ny = normals[p, 1]
            nz = normals[p, 2]
            denom = nx * dx + ny * dy + nz * dz
            if abs(denom) < PARALLEL_EPS:
                continue
            cx = centers[p, 0]
            cy = centers[p, 1]
            cz = centers[p, 2]
            num = nx * (cx - ox) + ny * (cy - oy) + nz * (cz - oz)
            t = num / denom
            if not (t > 0.0 and t <= range_max):
                continue
            hx = ox + t * dx - cx
            hy = oy + t * dy - cy
            hz = oz + t * dz - cz
            lu = hx * axes_u[p, 0] + hy * axes_u[p, 1] + hz * axes_u[p, 2]
            lv = hx * axes_v[p, 0] + hy * axes_v[p, 1] + hz * axes_v[p, 2]
            if abs(lu) > half[p, 0] or abs(lv) > half[p, 1]:
                continue
            if t < best:
                best = t
                arg = p
        ranges[i] = best
        index[i] = arg
    return ranges, index


def _ray_cast_np(origins, dirs, centers, normals, axes_u, axes_v, half, range_max, chunk=4096):
    N = origins.shape[0]
    ranges = np.full(N, np.inf)
    index = np.full(N, -1, dtype=np.int64)
    for lo in range(0, N, chunk):
        o = origins[lo:lo + chunk, None, :]
        d = dirs[lo:lo + chunk, None, :]
        n = normals[None]
        c = centers[None]
        denom = n[..., 0] * d[..., 0] + n[..., 1] * d[..., 1] + n[..., 2] * d[..., 2]
        num = (n[..., 0] * (c[..., 0] - o[..., 0]) + n[..., 1] * (c[..., 1] - o[..., 1])
               + n[..., 2] * (c[..., 2] - o[..., 2]))
        ok = np.abs(denom) >= PARALLEL_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(ok, num / np.where(ok, denom, 1.0), np.nan)
        ok &= (t > 0.0) & (t <= range_max)
        hx = o[..., 0] + t * d[..., 0] - c[..., 0]
        hy = o[..., 1] + t * d[..., 1] - c[..., 1]
        hz = o[..., 2] + t * d[..., 2] - c[..., 2]
        u = axes_u[None]
        v = axes_v[None]
        lu = hx * u[..., 0] + hy * u[..., 1] + hz * u[..., 2]
        lv = hx * v[..., 0] + hy * v[..., 1] + hz * v[..., 2]
        ok &= (np.abs(lu) <= half[None, :, 0]) & (np.abs(lv) <= half[None, :, 1])
        t = np.where(ok, t, np.inf)
        arg = np.argmin(t, axis=1)
        best = t[np.arange(t.shape[0]), arg]
        hit = np.isfinite(best)
        ranges[lo:lo + chunk] = best
        index[lo:lo + chunk] = np.where(hit, arg, -1)
    return ranges, index


def ray_cast(origins, dirs, centers, normals, axes_u, axes_v, half, range_max, backend=None):
    """Nearest hit of each ray against a set of rectangular patches.

    Returns ``(ranges, plane_index)``; misses carry ``inf`` and ``-1``. Ties
    resolve to the lowest plane index.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64)
            for a in (origins, dirs, centers, normals, axes_u, axes_v, half)]
    if _pick(backend):
        return _ray_cast_nb(*args, float(range_max))
    return _ray_cast_np(*args, float(range_max))
