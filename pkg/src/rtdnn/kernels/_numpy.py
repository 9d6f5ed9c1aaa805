"""Vectorized numpy versions of the kernels in ``_numba`` (same signatures)."""

import math

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit


def levinson(r, order):
    a = np.zeros(order)
    k = np.zeros(order)
    err = float(r[0])
    if err <= 0.0:
        return a, k, 0.0
    for i in range(order):
        acc = r[i + 1] + np.dot(a[:i], r[i:0:-1])
        ki = -acc / err
        k[i] = ki
        a[:i] = a[:i] + ki * a[:i][::-1]
        a[i] = ki
        err *= 1.0 - ki * ki
        if err <= 0.0:
            break
    return a, k, err


def _cos_series(c, w):
    m = np.arange(len(c))
    return np.cos(np.multiply.outer(w, m)) @ c


def cosine_roots(c, n_grid):
    c = np.asarray(c, dtype=np.float64)
    grid = np.arange(n_grid + 1) * (math.pi / n_grid)
    grid[-1] = math.pi
    g = _cos_series(c, grid)
    exact = np.flatnonzero(g[1:-1] == 0.0) + 1
    idx = np.flatnonzero(g[:-1] * g[1:] < 0.0)
    lo, hi = grid[idx], grid[idx + 1]
    glo = g[idx]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if not np.any((mid > lo) & (mid < hi)):
            break
        gm = _cos_series(c, mid)
        left = glo * gm < 0.0
        hi = np.where(left, mid, hi)
        lo = np.where(left, lo, mid)
        glo = np.where(left, glo, gm)
    roots = np.concatenate([0.5 * (lo + hi), grid[exact]])
    return np.sort(roots)[: 2 * len(c)]


def allpole(e, a, mem):
    p = len(a)
    if p == 0:
        return np.array(e, dtype=np.float64), np.array(mem, dtype=np.float64)
    den = np.concatenate([[1.0], a])
    # lfilter's direct-form-II state equivalent to past outputs `mem`
    zi = np.array([-np.dot(a[i:], mem[: p - i]) for i in range(p)])
    y, _ = lfilter([1.0], den, e, zi=zi)
    hist = np.concatenate([y[::-1], mem])[:p]
    return y, hist


def harmonic_excitation(n, f0, n_harm, sample_rate, phase):
    inc = f0 / sample_rate
    ph = phase + inc * np.arange(n)
    ph -= np.floor(ph)
    if n_harm > 0:
        out = np.cos(2.0 * math.pi * np.multiply.outer(ph, np.arange(1, n_harm + 1))).sum(axis=1)
    else:
        out = np.zeros(n)
    end = phase + inc * n
    return out, end - math.floor(end)


# --- network ---------------------------------------------------------------

def _blocks(plan):
    out_off, out_dim, act_kind, w_off, b_off, in_dim, src_ptr, src_off, src_dim, src_grad = plan
    for bi in range(len(out_off)):
        srcs = [(int(src_off[s]), int(src_dim[s]), int(src_grad[s])) for s in range(src_ptr[bi], src_ptr[bi + 1])]
        yield (int(out_off[bi]), int(out_dim[bi]), int(act_kind[bi]), int(w_off[bi]), int(b_off[bi]),
               int(in_dim[bi]), srcs)


def _gather(act, srcs):
    return np.concatenate([act[o:o + d] for o, d, _ in srcs]) if srcs else np.zeros(0)


def net_forward(act, theta, plan):
    for o, m, kind, w, b, nin, srcs in _blocks(plan):
        W = theta[w:w + m * nin].reshape(m, nin)
        z = W @ _gather(act, srcs) + theta[b:b + m]
        act[o:o + m] = expit(z) if kind == 0 else z


def _output_delta(act, dact, target_main, target_band, lay, lam):
    mo, md, bo, bd = (int(v) for v in lay[6:10])
    rm = act[mo:mo + md] - target_main
    rb = act[bo:bo + bd] - target_band
    dact[mo:mo + md] = 2.0 * rm / md
    dact[bo:bo + bd] = 2.0 * lam * rb / bd
    return float(rm @ rm), float(rb @ rb)


def _backward_core(act, dact, theta, plan, grad):
    for o, m, kind, w, b, nin, srcs in reversed(list(_blocks(plan))):
        dz = dact[o:o + m].copy()
        if kind == 0:
            y = act[o:o + m]
            dz *= y * (1.0 - y)
        W = theta[w:w + m * nin].reshape(m, nin)
        dx = dz @ W
        col = 0
        for so, sd, sg in srcs:
            if sg:
                dact[so:so + sd] += dx[col:col + sd]
            col += sd
        grad[b:b + m] += dz
        grad[w:w + m * nin] += np.outer(dz, _gather(act, srcs)).ravel()


def net_backward(act, theta, plan, lay, target_main, target_band, lam, grad):
    dact = np.zeros(act.shape[0])
    sq = _output_delta(act, dact, target_main, target_band, lay, lam)
    _backward_core(act, dact, theta, plan, grad)
    return sq


def _load_frame(act, x, hist, R, P, S, lay):
    in_dim, off_l, off_s = int(lay[0]), int(lay[1]), int(lay[2])
    act[:in_dim] = x
    if R > 0:
        act[off_l:off_l + R * P] = hist[:R, :P].ravel()
        act[off_s:off_s + R * S] = hist[:R, P:].ravel()


def _forced_hist(T, t, R, width):
    hist = np.zeros((max(R, 1), width))
    for k in range(R):
        if t - 1 - k >= 0:
            hist[k] = T[t - 1 - k]
    return hist


def net_train_epoch(theta, vel, X, Tm, Tb, starts, lengths, order, plan, lay, lr, mu, lam):
    R, P, S = int(lay[3]), int(lay[4]), int(lay[5])
    act = np.zeros(int(lay[10]))
    grad = np.zeros_like(theta)
    tot_main = tot_band = 0.0
    n = 0
    for u in order:
        s0 = int(starts[u])
        Tu = Tm[s0:s0 + int(lengths[u])]
        for t in range(int(lengths[u])):
            _load_frame(act, X[s0 + t], _forced_hist(Tu, t, R, P + S), R, P, S, lay)
            net_forward(act, theta, plan)
            dact = np.zeros_like(act)
            sq_main, sq_band = _output_delta(act, dact, Tm[s0 + t], Tb[s0 + t], lay, lam)
            if not (math.isfinite(sq_main) and math.isfinite(sq_band)):
                return math.nan, math.nan, n
            tot_main += sq_main
            tot_band += sq_band
            n += 1
            grad[:] = 0.0
            _backward_core(act, dact, theta, plan, grad)
            vel *= mu
            vel -= lr * grad
            theta += vel
    return tot_main, tot_band, n


def net_run(theta, X, plan, lay, forced):
    R, P, S = int(lay[3]), int(lay[4]), int(lay[5])
    T = X.shape[0]
    act = np.zeros(int(lay[10]))
    mo, md, bo, bd = (int(v) for v in lay[6:10])
    Ym = np.zeros((T, md))
    Yb = np.zeros((T, bd))
    use_forced = forced.shape[0] == T
    hist = np.zeros((max(R, 1), P + S))
    for t in range(T):
        if use_forced:
            hist = _forced_hist(forced, t, R, P + S)
        _load_frame(act, X[t], hist, R, P, S, lay)
        net_forward(act, theta, plan)
        Ym[t] = act[mo:mo + md]
        Yb[t] = act[bo:bo + bd]
        if not use_forced and R > 0:
            hist[1:R] = hist[:R - 1].copy()
            hist[0] = Ym[t]
    return Ym, Yb
