"""Numba-compiled hot loops.

The network kernels walk a flattened block plan (see ``rtdnn.netgraph``)::

    plan = (out_off, out_dim, act_kind, w_off, b_off, in_dim,
            src_ptr, src_off, src_dim, src_grad)
    lay  = [in_dim, buf_lsf_off, buf_src_off, R, P, S,
            main_off, main_dim, band_off, band_dim, n_act]

All block activations live in one flat ``act`` vector; weights are row-major
``(out_dim, in_dim)`` slices of ``theta`` followed by the bias.
"""

import math

import numpy as np
from numba import njit

# lets LLVM vectorize the dot-product reductions; results stay run-to-run deterministic
_FAST = {"contract", "reassoc", "nsz", "arcp"}

@njit(cache=True)
def levinson(r, order):
    a = np.zeros(order)
    k = np.zeros(order)
    err = r[0]
    if err <= 0.0:
        return a, k, 0.0
    tmp = np.zeros(order)
    for i in range(order):
        acc = r[i + 1]
        for j in range(i):
            acc += a[j] * r[i - j]
        ki = -acc / err
        k[i] = ki
        for j in range(i):
            tmp[j] = a[j] + ki * a[i - 1 - j]
        for j in range(i):
            a[j] = tmp[j]
        a[i] = ki
        err *= 1.0 - ki * ki
        if err <= 0.0:
            break
    return a, k, err


@njit(cache=True)
def _cos_series(c, w):
    s = 0.0
    for m in range(c.shape[0]):
        s += c[m] * math.cos(m * w)
    return s


@njit(cache=True)
def cosine_roots(c, n_grid):
    """Roots in (0, pi) of sum_m c[m] cos(m w), by grid sign changes + bisection."""
    roots = np.zeros(c.shape[0] * 2)
    count = 0
    step = math.pi / n_grid
    w0 = 0.0
    g0 = _cos_series(c, w0)
    for i in range(1, n_grid + 1):
        w1 = i * step
        if i == n_grid:
            w1 = math.pi
        g1 = _cos_series(c, w1)
        if g0 == 0.0 and i > 1:
            if count < roots.shape[0]:
                roots[count] = w0
            count += 1
        elif g0 * g1 < 0.0:
            lo, hi, glo = w0, w1, g0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                gm = _cos_series(c, mid)
                if gm == 0.0:
                    lo = mid
                    hi = mid
                    break
                if glo * gm < 0.0:
                    hi = mid
                else:
                    lo = mid
                    glo = gm
            if count < roots.shape[0]:
                roots[count] = 0.5 * (lo + hi)
            count += 1
        w0, g0 = w1, g1
    return roots[:min(count, roots.shape[0])]


@njit(cache=True)
def allpole(e, a, mem):
    """y[n] = e[n] - sum_k a[k] y[n-1-k]; ``mem[k]`` holds y[n-1-k]."""
    p = a.shape[0]
    y = np.empty(e.shape[0])
    m = mem.copy()
    for n in range(e.shape[0]):
        acc = e[n]
        for j in range(p):
            acc -= a[j] * m[j]
        for j in range(p - 1, 0, -1):
            m[j] = m[j - 1]
        if p > 0:
            m[0] = acc
        y[n] = acc
    return y, m


@njit(cache=True)
def harmonic_excitation(n, f0, n_harm, sample_rate, phase):
    """Sum of ``n_harm`` unit cosines at multiples of f0; phase in cycles."""
    out = np.zeros(n)
    inc = f0 / sample_rate
    ph = phase
    for i in range(n):
        w = 2.0 * math.pi * ph
        s = 0.0
        for h in range(1, n_harm + 1):
            s += math.cos(h * w)
        out[i] = s
        ph += inc
        ph -= math.floor(ph)
    return out, ph


# --- network ---------------------------------------------------------------

@njit(cache=True, fastmath=_FAST)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True, fastmath=_FAST)
def net_forward(act, theta, plan):
    out_off, out_dim, act_kind, w_off, b_off, in_dim, src_ptr, src_off, src_dim, src_grad = plan
    for bi in range(out_off.shape[0]):
        o = out_off[bi]
        m = out_dim[bi]
        w = w_off[bi]
        nin = in_dim[bi]
        bo = b_off[bi]
        for i in range(m):
            act[o + i] = theta[bo + i]
        col = 0
        for s in range(src_ptr[bi], src_ptr[bi + 1]):
            so = src_off[s]
            sd = src_dim[s]
            if src_grad[s] != 0:
                # hidden-block outputs are dense: walk weight rows contiguously
                for i in range(m):
                    row = w + i * nin + col
                    acc = 0.0
                    for j in range(sd):
                        acc += theta[row + j] * act[so + j]
                    act[o + i] += acc
            else:
                # encoder streams are mostly zeros: walk columns, skip zeros
                for j in range(sd):
                    xv = act[so + j]
                    if xv != 0.0:
                        base = w + col + j
                        for i in range(m):
                            act[o + i] += theta[base + i * nin] * xv
            col += sd
        if act_kind[bi] == 0:
            for i in range(m):
                act[o + i] = _sigmoid(act[o + i])


@njit(cache=True, fastmath=_FAST)
def _output_delta(act, dact, target_main, target_band, lay, lam):
    main_off, main_dim, band_off, band_dim = lay[6], lay[7], lay[8], lay[9]
    sq_main = 0.0
    sq_band = 0.0
    for i in range(main_dim):
        r = act[main_off + i] - target_main[i]
        sq_main += r * r
        dact[main_off + i] = 2.0 * r / main_dim
    for i in range(band_dim):
        r = act[band_off + i] - target_band[i]
        sq_band += r * r
        dact[band_off + i] = 2.0 * lam * r / band_dim
    return sq_main, sq_band


@njit(cache=True, fastmath=_FAST)
def _backward_core(act, dact, theta, plan, grad, vel, lr, mu, mode, last, step):
    """mode 0: accumulate into ``grad``; mode 1: fused momentum SGD update.

    In mode 1, weight columns fed by a zero-valued non-trainable source
    (encoder streams, feedback buffers) only decay their velocity this step;
    that is deferred and applied in closed form by :func:`_catch_up`.
    """
    out_off, out_dim, act_kind, w_off, b_off, in_dim, src_ptr, src_off, src_dim, src_grad = plan
    nb = out_off.shape[0]
    dz = np.empty(256)
    for bi in range(nb - 1, -1, -1):
        o = out_off[bi]
        m = out_dim[bi]
        w = w_off[bi]
        nin = in_dim[bi]
        bo = b_off[bi]
        if m > dz.shape[0]:
            dz = np.empty(m)
        for i in range(m):
            g = dact[o + i]
            if act_kind[bi] == 0:
                y = act[o + i]
                g *= y * (1.0 - y)
            dz[i] = g
        # propagate with the pre-update weights first
        col = 0
        for s in range(src_ptr[bi], src_ptr[bi + 1]):
            so = src_off[s]
            if src_grad[s] != 0:
                for i in range(m):
                    row = w + i * nin + col
                    di = dz[i]
                    for j in range(src_dim[s]):
                        dact[so + j] += theta[row + j] * di
            col += src_dim[s]
        if mode == 0:
            for i in range(m):
                grad[bo + i] += dz[i]
            col = 0
            for s in range(src_ptr[bi], src_ptr[bi + 1]):
                so = src_off[s]
                for j in range(src_dim[s]):
                    xv = act[so + j]
                    if xv != 0.0:
                        base = w + col + j
                        for i in range(m):
                            grad[base + i * nin] += dz[i] * xv
                col += src_dim[s]
        else:
            for i in range(m):
                v = mu * vel[bo + i] - lr * dz[i]
                vel[bo + i] = v
                theta[bo + i] += v
            col = 0
            for s in range(src_ptr[bi], src_ptr[bi + 1]):
                so = src_off[s]
                sd = src_dim[s]
                if src_grad[s] != 0:
                    for i in range(m):
                        row = w + i * nin + col
                        gi = lr * dz[i]
                        for j in range(sd):
                            k = row + j
                            v = mu * vel[k] - gi * act[so + j]
                            vel[k] = v
                            theta[k] += v
                else:
                    for j in range(sd):
                        xv = act[so + j]
                        if xv == 0.0:
                            continue
                        base = w + col + j
                        last[base] = step
                        for i in range(m):
                            k = base + i * nin
                            v = mu * vel[k] - lr * (dz[i] * xv)
                            vel[k] = v
                            theta[k] += v
                col += sd


@njit(cache=True, fastmath=_FAST)
def _advance_column(theta, vel, base, m, nin, n, mu):
    # n momentum steps with zero gradient: v <- mu^n v, theta += v * sum_{1..n} mu^k
    if mu == 1.0:
        geo = float(n)
    else:
        geo = mu * (1.0 - mu ** n) / (1.0 - mu)
    dec = mu ** n
    for i in range(m):
        k = base + i * nin
        theta[k] += vel[k] * geo
        vel[k] *= dec


@njit(cache=True, fastmath=_FAST)
def _catch_up(act, theta, vel, plan, last, step, mu, flush):
    """Bring deferred columns up to ``step - 1`` (all columns if ``flush``)."""
    out_off, out_dim, act_kind, w_off, b_off, in_dim, src_ptr, src_off, src_dim, src_grad = plan
    for bi in range(out_off.shape[0]):
        m = out_dim[bi]
        w = w_off[bi]
        nin = in_dim[bi]
        col = 0
        for s in range(src_ptr[bi], src_ptr[bi + 1]):
            so = src_off[s]
            if src_grad[s] == 0:
                for j in range(src_dim[s]):
                    if flush or act[so + j] != 0.0:
                        base = w + col + j
                        n = step - 1 - last[base]
                        if n > 0:
                            _advance_column(theta, vel, base, m, nin, n, mu)
                        last[base] = step - 1
            col += src_dim[s]


@njit(cache=True, fastmath=_FAST)
def net_backward(act, theta, plan, lay, target_main, target_band, lam, grad):
    dact = np.zeros(act.shape[0])
    sq_main, sq_band = _output_delta(act, dact, target_main, target_band, lay, lam)
    _backward_core(act, dact, theta, plan, grad, grad, 0.0, 0.0, 0, np.zeros(0, dtype=np.int64), 0)
    return sq_main, sq_band


@njit(cache=True, fastmath=_FAST)
def _load_frame(act, x, hist, t0, R, P, S, lay):
    in_dim, off_l, off_s = lay[0], lay[1], lay[2]
    for i in range(in_dim):
        act[i] = x[i]
    for k in range(R):
        for p in range(P):
            act[off_l + k * P + p] = hist[k, p]
        for q in range(S):
            act[off_s + k * S + q] = hist[k, P + q]


@njit(cache=True, fastmath=_FAST)
def net_train_epoch(theta, vel, X, Tm, Tb, starts, lengths, order, plan, lay, lr, mu, lam):
    R, P, S = lay[3], lay[4], lay[5]
    act = np.zeros(lay[10])
    dact = np.zeros(lay[10])
    hist = np.zeros((max(R, 1), P + S))
    last = np.full(theta.shape[0], -1, dtype=np.int64)
    tot_main = 0.0
    tot_band = 0.0
    n = 0
    for u in order:
        s0 = starts[u]
        for t in range(lengths[u]):
            # teacher forcing: history slots hold ground-truth outputs, newest first
            for k in range(R):
                src = t - 1 - k
                for p in range(P + S):
                    hist[k, p] = Tm[s0 + src, p] if src >= 0 else 0.0
            _load_frame(act, X[s0 + t], hist, t, R, P, S, lay)
            _catch_up(act, theta, vel, plan, last, n, mu, False)
            net_forward(act, theta, plan)
            for i in range(act.shape[0]):
                dact[i] = 0.0
            sq_main, sq_band = _output_delta(act, dact, Tm[s0 + t], Tb[s0 + t], lay, lam)
            if not (math.isfinite(sq_main) and math.isfinite(sq_band)):
                _catch_up(act, theta, vel, plan, last, n, mu, True)
                return math.nan, math.nan, n
            tot_main += sq_main
            tot_band += sq_band
            _backward_core(act, dact, theta, plan, vel, vel, lr, mu, 1, last, n)
            n += 1
    _catch_up(act, theta, vel, plan, last, n, mu, True)
    return tot_main, tot_band, n


@njit(cache=True, fastmath=_FAST)
def net_run(theta, X, plan, lay, forced):
    """Run an utterance; feedback from ``forced`` rows if given, else own outputs."""
    R, P, S = lay[3], lay[4], lay[5]
    T = X.shape[0]
    act = np.zeros(lay[10])
    hist = np.zeros((max(R, 1), P + S))
    Ym = np.zeros((T, lay[7]))
    Yb = np.zeros((T, lay[9]))
    use_forced = forced.shape[0] == T
    for t in range(T):
        if use_forced:
            for k in range(R):
                src = t - 1 - k
                for p in range(P + S):
                    hist[k, p] = forced[src, p] if src >= 0 else 0.0
        _load_frame(act, X[t], hist, t, R, P, S, lay)
        net_forward(act, theta, plan)
        for i in range(lay[7]):
            Ym[t, i] = act[lay[6] + i]
        for i in range(lay[9]):
            Yb[t, i] = act[lay[8] + i]
        if not use_forced and R > 0:
            for k in range(R - 1, 0, -1):
                for p in range(P + S):
                    hist[k, p] = hist[k - 1, p]
            for p in range(P + S):
                hist[0, p] = Ym[t, p]
    return Ym, Yb
