"""Compiled inner loops for single-block and single-chain subproblems.

A local subproblem is

    h(b) = 1/2 b'Gb - c'b + yy/2 + ridge/2 ||b||^2 + l1 ||b||_1
           + aL ||b - left|| + aR ||b - right||

where ``aL = lam2 * w_left`` and ``aR = lam2 * w_right``.  A neighbor with a
zero weight is ignored (boundary convention ``w_0 = w_T = 0``).
"""
import numpy as np
from numba import njit

# simple-solution codes
NONE, LEFT, RIGHT = 0, 1, 2

# ist status bits
IST_MAXITER = 1
IST_RESTART = 2
IST_NONFINITE = 4

_COLLIDE = 1e-12
SNAP = 1e-12


@njit(cache=True, nogil=True)
def soft(x, lam):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        if v > lam[i]:
            out[i] = v - lam[i]
        elif v < -lam[i]:
            out[i] = v + lam[i]
        else:
            out[i] = 0.0
    return out


@njit(cache=True, nogil=True)
def soft_scalar(x, lam):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        if v > lam:
            out[i] = v - lam
        elif v < -lam:
            out[i] = v + lam
        else:
            out[i] = 0.0
    return out


@njit(cache=True, nogil=True)
def phi_norm(x, s, lam):
    """Norm of phi(x, s, lam) with a scalar threshold."""
    acc = 0.0
    for i in range(x.size):
        if s[i] > 0:
            v = x[i] + lam
        elif s[i] < 0:
            v = x[i] - lam
        else:
            v = x[i]
            if v > lam:
                v -= lam
            elif v < -lam:
                v += lam
            else:
                v = 0.0
        acc += v * v
    return np.sqrt(acc)


@njit(cache=True, nogil=True)
def _norm(x):
    return np.sqrt(np.dot(x, x))


@njit(cache=True, nogil=True)
def _dist(a, b):
    acc = 0.0
    for i in range(a.size):
        d = a[i] - b[i]
        acc += d * d
    return np.sqrt(acc)


@njit(cache=True, nogil=True)
def _equal(a, b):
    for i in range(a.size):
        if a[i] != b[i]:
            return False
    return True


@njit(cache=True, nogil=True)
def local_objective(G, c, yy, ridge, l1, left, right, aL, aR, b):
    Gb = G @ b
    val = 0.5 * np.dot(b, Gb) - np.dot(c, b) + 0.5 * yy
    val += 0.5 * ridge * np.dot(b, b) + l1 * np.sum(np.abs(b))
    if aL > 0:
        val += aL * _dist(b, left)
    if aR > 0:
        val += aR * _dist(b, right)
    return val


@njit(cache=True, nogil=True)
def simple_margins(gL, gR, left, right, l1, aL, aR):
    """Slack of the simple-solution conditions at each neighbor.

    ``gL``/``gR`` are gradients of the smooth part at ``left``/``right``.
    Returns ``(mL, mR, merged)`` where a neighbor solves the local problem
    iff its margin is <= 0.  A margin of +inf marks an ignored neighbor.
    """
    hasL = aL > 0
    hasR = aR > 0
    mL = np.inf
    mR = np.inf
    if hasL and hasR and _equal(left, right):
        mL = phi_norm(gL, left, l1) - (aL + aR)
        return mL, mL, True
    if hasL:
        v = gL.copy()
        if hasR:
            dn = _dist(left, right)
            for i in range(v.size):
                v[i] += aR * (left[i] - right[i]) / dn
        mL = phi_norm(v, left, l1) - aL
    if hasR:
        v = gR.copy()
        if hasL:
            dn = _dist(left, right)
            for i in range(v.size):
                v[i] += aL * (right[i] - left[i]) / dn
        mR = phi_norm(v, right, l1) - aR
    return mL, mR, False


@njit(cache=True, nogil=True)
def check_simple(G, c, yy, ridge, l1, left, right, aL, aR):
    """Return NONE, LEFT or RIGHT for the local problem."""
    gL = G @ left - c + ridge * left
    gR = G @ right - c + ridge * right
    mL, mR, merged = simple_margins(gL, gR, left, right, l1, aL, aR)
    if merged:
        return LEFT if mL <= 0 else NONE
    okL = mL <= 0
    okR = mR <= 0
    if okL and okR:
        hl = local_objective(G, c, yy, ridge, l1, left, right, aL, aR, left)
        hr = local_objective(G, c, yy, ridge, l1, left, right, aL, aR, right)
        return LEFT if hl <= hr else RIGHT
    if okL:
        return LEFT
    if okR:
        return RIGHT
    return NONE


@njit(cache=True, nogil=True)
def prox_objective(z, L, l1, left, right, aL, aR, b):
    d = b - z
    val = 0.5 * L * np.dot(d, d) + l1 * np.sum(np.abs(b))
    if aL > 0:
        val += aL * _dist(b, left)
    if aR > 0:
        val += aR * _dist(b, right)
    return val


@njit(cache=True, nogil=True)
def ist_operator(b, z, L, l1, left, right, aL, aR):
    """One application of the fixed-point map (continuous extension at anchors)."""
    num = L * z
    den = L
    if aL > 0:
        dl = _dist(b, left)
        if dl == 0.0:
            return left.copy()
        num = num + (aL / dl) * left
        den += aL / dl
    if aR > 0:
        dr = _dist(b, right)
        if dr == 0.0:
            return right.copy()
        num = num + (aR / dr) * right
        den += aR / dr
    return soft_scalar(num, l1) / den


@njit(cache=True, nogil=True)
def _escape_neighbor(z, L, l1, left, right, aL, aR, nb, scale):
    """A point near ``nb`` with lower prox objective (steepest descent)."""
    g = L * (nb - z)
    # minimal-norm subgradient at nb: shrink phi by the ball of the anchor
    v = g.copy()
    r = 0.0
    merged = aL > 0 and aR > 0 and _equal(left, right)
    if merged:
        r = aL + aR
    else:
        if aL > 0:
            if _equal(nb, left):
                r += aL
            else:
                dl = _dist(nb, left)
                v += (aL / dl) * (nb - left)
        if aR > 0:
            if _equal(nb, right):
                r += aR
            else:
                dr = _dist(nb, right)
                v += (aR / dr) * (nb - right)
    m = np.empty_like(v)
    for i in range(v.size):
        if nb[i] > 0:
            m[i] = v[i] + l1
        elif nb[i] < 0:
            m[i] = v[i] - l1
        else:
            x = v[i]
            m[i] = x - l1 if x > l1 else (x + l1 if x < -l1 else 0.0)
    nm = _norm(m)
    if nm <= r or nm == 0.0:
        return nb.copy()
    direction = -(1.0 - r / nm) * m
    f0 = prox_objective(z, L, l1, left, right, aL, aR, nb)
    step = 1.0 / L
    for _ in range(200):
        cand = nb + step * direction
        if prox_objective(z, L, l1, left, right, aL, aR, cand) < f0:
            return cand
        step *= 0.5
    return nb + 1e-6 * scale * direction / _norm(direction)


@njit(cache=True, nogil=True)
def ist_prox(z, L, l1, left, right, aL, aR, start, tol, max_iter):
    """Prox of l1 plus two anchored l2 norms by iterative soft-thresholding.

    Returns ``(beta, n_iter, status)``.  ``status`` is a bit set of
    IST_MAXITER, IST_RESTART and IST_NONFINITE.
    """
    p = z.size
    status = 0
    if not (aL > 0) and not (aR > 0):
        return soft_scalar(L * z, l1) / L, 0, status
    merged = aL > 0 and aR > 0 and _equal(left, right)
    if merged:
        aL = aL + aR
        aR = 0.0
    # neighbors that already solve the prox problem
    gL = L * (left - z)
    gR = L * (right - z)
    mL, mR, mflag = simple_margins(gL, gR, left, right, l1, aL, aR)
    okL = mL <= 0
    okR = mR <= 0
    if okL and okR:
        fl = prox_objective(z, L, l1, left, right, aL, aR, left)
        fr = prox_objective(z, L, l1, left, right, aL, aR, right)
        return (left.copy() if fl <= fr else right.copy()), 0, status
    if okL:
        return left.copy(), 0, status
    if okR:
        return right.copy(), 0, status

    scale = 1.0 + _norm(z)
    b = start.copy()
    fb = prox_objective(z, L, l1, left, right, aL, aR, b)
    # starting point must beat both anchors, otherwise the map can stall there
    fmin_anchor = np.inf
    best_anchor = left
    if aL > 0:
        fa = prox_objective(z, L, l1, left, right, aL, aR, left)
        if fa < fmin_anchor:
            fmin_anchor = fa
            best_anchor = left
    if aR > 0:
        fa = prox_objective(z, L, l1, left, right, aL, aR, right)
        if fa < fmin_anchor:
            fmin_anchor = fa
            best_anchor = right
    if not (fb < fmin_anchor):
        cand = soft_scalar(L * z, l1) / L
        fc = prox_objective(z, L, l1, left, right, aL, aR, cand)
        if fc < fmin_anchor:
            b = cand
        else:
            b = _escape_neighbor(z, L, l1, left, right, aL, aR,
                                 best_anchor.copy(), scale)
    restarts = 0
    nb = np.empty(p)
    for it in range(max_iter):
        if aL > 0 and _dist(b, left) < _COLLIDE * (1.0 + _norm(left)):
            status |= IST_RESTART
            restarts += 1
            b = _escape_neighbor(z, L, l1, left, right, aL, aR, left.copy(), scale)
        if aR > 0 and _dist(b, right) < _COLLIDE * (1.0 + _norm(right)):
            status |= IST_RESTART
            restarts += 1
            b = _escape_neighbor(z, L, l1, left, right, aL, aR, right.copy(), scale)
        if restarts > 20:
            break
        # one application of the fixed-point map, without temporaries
        cl = aL / _dist(b, left) if aL > 0 else 0.0
        cr = aR / _dist(b, right) if aR > 0 else 0.0
        den = L + cl + cr
        step = 0.0
        nrm = 0.0
        ok = True
        for i in range(p):
            v = L * z[i]
            if aL > 0:
                v += cl * left[i]
            if aR > 0:
                v += cr * right[i]
            if v > l1:
                v = (v - l1) / den
            elif v < -l1:
                v = (v + l1) / den
            else:
                v = 0.0
            if not np.isfinite(v):
                ok = False
            d = v - b[i]
            step += d * d
            nrm += v * v
            nb[i] = v
        if not ok:
            status |= IST_NONFINITE
            return b, it, status
        tmp = b
        b = nb
        nb = tmp
        if np.sqrt(step) <= tol * (1.0 + np.sqrt(nrm)):
            return b, it + 1, status
    status |= IST_MAXITER
    return b, max_iter, status


@njit(cache=True, nogil=True)
def local_fista(G, c, yy, ridge, l1, left, right, aL, aR, L, x0,
                rel_tol, max_iter, ist_tol, ist_max):
    """Constant-step FISTA on a local subproblem with the IST prox.

    Returns ``(x_best, h_best, n_iter, ist_status)``; ``x_best`` is the
    best iterate seen including ``x0``.
    """
    p = x0.size
    x_prev = x0.copy()
    yk = x0.copy()
    v = np.empty(p)
    a = 1.0
    best = x0.copy()
    hbest = local_objective(G, c, yy, ridge, l1, left, right, aL, aR, x0)
    hist = np.empty(max_iter + 1)
    hist[0] = hbest
    status = 0
    k = 0
    for k in range(1, max_iter + 1):
        for i in range(p):
            acc = ridge * yk[i] - c[i]
            for j in range(p):
                acc += G[i, j] * yk[j]
            v[i] = yk[i] - acc / L
        x, _, st = ist_prox(v, L, l1, left, right, aL, aR, x_prev,
                            ist_tol, ist_max)
        status |= st
        if st & IST_NONFINITE:
            break
        hx = local_objective(G, c, yy, ridge, l1, left, right, aL, aR, x)
        if hx < hbest:
            hbest = hx
            best[:] = x
        hist[k] = hbest
        a_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * a * a))
        mom = (a - 1.0) / a_next
        for i in range(p):
            yk[i] = x[i] + mom * (x[i] - x_prev[i])
        x_prev = x
        a = a_next
        if k >= 5 and hist[k - 5] - hbest <= rel_tol * abs(hbest):
            break
    return best, hbest, k, status


@njit(cache=True, nogil=True)
def solve_block(G, c, yy, ridge, l1, left, right, aL, aR, L, x0,
                rel_tol, max_iter, ist_tol, ist_max):
    """Simple-solution check, then local FISTA.  Returns ``(x, status)``."""
    code = check_simple(G, c, yy, ridge, l1, left, right, aL, aR)
    if code == LEFT:
        return left.copy(), 0
    if code == RIGHT:
        return right.copy(), 0
    x, hx, _, st = local_fista(G, c, yy, ridge, l1, left, right, aL, aR,
                               max(L, 1e-10), x0, rel_tol, max_iter, ist_tol, ist_max)
    # numerically coincident with a neighbor: take the neighbor if no worse
    slack = 1e-15 * (1.0 + abs(hx))
    if aL > 0 and _dist(x, left) <= SNAP * (1.0 + _norm(left)):
        if local_objective(G, c, yy, ridge, l1, left, right, aL, aR, left) <= hx + slack:
            return left.copy(), st
    if aR > 0 and _dist(x, right) <= SNAP * (1.0 + _norm(right)):
        if local_objective(G, c, yy, ridge, l1, left, right, aL, aR, right) <= hx + slack:
            return right.copy(), st
    return x, st


@njit(cache=True, nogil=True)
def bcd_pass(G, c, yy, Lt, ridge, l1, a, B, order, rel_tol, max_iter,
             ist_tol, ist_max):
    """One block coordinate descent sweep, updating ``B`` in place."""
    T, p = B.shape
    zero = np.zeros(p)
    status = 0
    for idx in range(order.size):
        t = order[idx]
        if t > 0:
            left = B[t - 1].copy()
            aL = a[t - 1]
        else:
            left = zero
            aL = 0.0
        if t < T - 1:
            right = B[t + 1].copy()
            aR = a[t]
        else:
            right = zero
            aR = 0.0
        x, st = solve_block(G[t], c[t], yy[t], ridge, l1, left, right, aL, aR,
                            Lt[t] + ridge, B[t].copy(), rel_tol, max_iter,
                            ist_tol, ist_max)
        status |= st
        if st & IST_NONFINITE:
            return status
        B[t] = x
    return status
