"""Pure numpy implementations of the spectral hot loops.

Every function here has a twin with the same signature in the compiled
``_kernels`` extension; :mod:`braymoore.kernels` picks one at import time.
All routines are vectorised over evaluation points and loop over atoms
implicitly through broadcasting, so memory is O(points * atoms).
"""
import numpy as np

# squared distances below this are floored to keep 1/d^2 finite
_D_FLOOR = 1e-120
_CHUNK = 4096


def _chunks(n):
    for start in range(0, n, _CHUNK):
        yield slice(start, min(n, start + _CHUNK))


def stieltjes(loc, w, z):
    """sum_j w_j / (loc_j - z) for every entry of ``z``."""
    loc = np.asarray(loc, dtype=float)
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=complex).ravel()
    out = np.empty(z.shape, dtype=complex)
    for sl in _chunks(z.size):
        out[sl] = (w / (loc[None, :] - z[sl, None])).sum(axis=1)
    return out


def subordinate(loc, w, sigma2, z, m0, tol, max_iter, newton_switch):
    """Solve m = m_nu(z + sigma2 m) pointwise.

    Damped Picard iteration (factor 1/2) until the residual drops below
    ``newton_switch``, then Newton steps. A Newton step that leaves the upper
    half plane or increases the residual is discarded in favour of Picard.

    Returns ``(m, residual, iterations)``.
    """
    loc = np.asarray(loc, dtype=float)
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=complex).ravel()
    m = np.array(m0, dtype=complex).ravel().copy()
    res = np.full(z.shape, np.inf)
    iters = np.zeros(z.shape, dtype=np.int64)
    for sl in _chunks(z.size):
        m[sl], res[sl], iters[sl] = _subordinate_block(
            loc, w, sigma2, z[sl], m[sl], tol, max_iter, newton_switch)
    return m, res, iters


def _eval(loc, w, sigma2, z, m):
    inv = 1.0 / (loc[None, :] - (z + sigma2 * m)[:, None])
    s1 = (w * inv).sum(axis=1)
    s2 = (w * inv * inv).sum(axis=1)
    return s1, s2


def _subordinate_block(loc, w, sigma2, z, m, tol, max_iter, newton_switch):
    n = z.size
    res = np.full(n, np.inf)
    iters = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    newton_ok = np.ones(n, dtype=bool)
    for it in range(max_iter + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        s1, s2 = _eval(loc, w, sigma2, z[idx], m[idx])
        r = m[idx] - s1
        ar = np.abs(r)
        # a Newton step that made things worse is rolled back to Picard
        worse = ar > res[idx]
        newton_ok[idx[worse]] = False
        res[idx] = np.where(worse, res[idx], ar)
        done = ar <= tol
        iters[idx] = it
        active[idx[done]] = False
        if it == max_iter:
            break
        keep = ~done
        idx, s1, s2, r, ar = idx[keep], s1[keep], s2[keep], r[keep], ar[keep]
        picard = 0.5 * m[idx] + 0.5 * s1
        use_newton = (ar < newton_switch) & newton_ok[idx]
        step = np.where(use_newton, m[idx] - r / (1.0 - sigma2 * s2), picard)
        bad = ~np.isfinite(step) | (step.imag <= 0.0)
        step = np.where(bad, picard, step)
        newton_ok[idx] = np.where(use_newton & ~bad, True, newton_ok[idx])
        # periodically re-enable Newton for points that fell back
        if it % 16 == 15:
            newton_ok[idx] = True
        m[idx] = step
    return m, res, iters


def _upsilon2(loc, w, sigma2, a):
    """Squared Biane height s(a) >= 0 with sum_j w_j/((loc_j-a)^2+s) = 1/sigma2.

    Solved by Newton on the concave increasing map s -> 1/phi(s) started
    from s = 0, which approaches the root monotonically from the left.
    """
    d = (loc[None, :] - a[:, None]) ** 2
    d = np.maximum(d, _D_FLOOR)
    phi0 = (w / d).sum(axis=1)
    s = np.zeros(a.shape)
    pos = phi0 * sigma2 > 1.0
    if not pos.any():
        return s, d
    idx = np.nonzero(pos)[0]
    dd = d[idx]
    si = np.zeros(idx.size)
    for _ in range(200):
        den = dd + si[:, None]
        phi = (w / den).sum(axis=1)
        dphi = (w / (den * den)).sum(axis=1)
        step = (sigma2 - 1.0 / phi) * (phi * phi) / dphi
        si = np.maximum(si + step, 0.0)
        if np.all(np.abs(step) <= 1e-15 * si + 1e-300):
            break
    s[idx] = si
    return s, d


def biane_map(loc, w, sigma2, a):
    """Boundary parametrisation of nu boxplus sc(sigma2).

    For each real ``a`` returns ``(s, psi, dpsi)`` where ``s = upsilon(a)^2``,
    ``psi(a)`` is the real point whose boundary subordination value is
    ``a + i sqrt(s)``, and ``dpsi`` its derivative (only meaningful where
    ``s > 0``).
    """
    loc = np.asarray(loc, dtype=float)
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float).ravel()
    s_out = np.empty(a.shape)
    psi_out = np.empty(a.shape)
    dpsi_out = np.empty(a.shape)
    for sl in _chunks(a.size):
        aa = a[sl]
        s, d = _upsilon2(loc, w, sigma2, aa)
        diff = aa[:, None] - loc[None, :]
        den = d + s[:, None]
        q = w / den
        psi = aa + sigma2 * (diff * q).sum(axis=1)
        q2 = q / den
        # implicit derivative of s from sum w/(d+s) = 1/sigma2
        ds = np.where(s > 0, -(2.0 * diff * q2).sum(axis=1) / np.maximum(q2.sum(axis=1), 1e-300), 0.0)
        dpsi = 1.0 + sigma2 * (q.sum(axis=1) - (diff * (2.0 * diff + ds[:, None]) * q2).sum(axis=1))
        s_out[sl] = s
        psi_out[sl] = psi
        dpsi_out[sl] = dpsi
    return s_out, psi_out, dpsi_out


def biane_invert(loc, w, sigma2, x, max_iter=200):
    """Solve psi(a) = x for a, bracketing on [x - sigma, x + sigma].

    psi is a strictly increasing homeomorphism with |psi(a) - a| <= sigma,
    so the bracket is always valid. Illinois regula falsi, with a bisection
    every fourth step to guarantee the bracket shrinks.
    """
    x = np.asarray(x, dtype=float).ravel()
    sigma = np.sqrt(sigma2)
    lo = x - sigma
    hi = x + sigma
    flo = biane_map(loc, w, sigma2, lo)[1] - x
    fhi = biane_map(loc, w, sigma2, hi)[1] - x
    a = 0.5 * (lo + hi)
    side = np.zeros(x.shape, dtype=np.int64)
    active = np.ones(x.shape, dtype=bool)
    xtol = 4e-16 * (1.0 + np.abs(x))
    for it in range(max_iter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        l, h, fl, fh = lo[idx], hi[idx], flo[idx], fhi[idx]
        denom = fh - fl
        sec = h - fh * (h - l) / np.where(denom != 0, denom, 1.0)
        mid = 0.5 * (l + h)
        ok = (denom != 0) & (sec > l) & (sec < h) & (it % 4 != 3)
        ai = np.where(ok, sec, mid)
        fa = biane_map(loc, w, sigma2, ai)[1] - x[idx]
        a[idx] = ai
        left = fa < 0
        sd = side[idx]
        lo[idx] = np.where(left, ai, l)
        hi[idx] = np.where(left, h, ai)
        flo[idx] = np.where(left, fa, np.where(sd == -1, 0.5 * fl, fl))
        fhi[idx] = np.where(left, np.where(sd == 1, 0.5 * fh, fh), fa)
        side[idx] = np.where(left, 1, -1)
        conv = (np.abs(fa) <= xtol[idx]) | (hi[idx] - lo[idx] <= 4e-16 * (1.0 + np.abs(ai)))
        active[idx[conv]] = False
    return a
