"""Hot numerical kernels with numba- and numpy-backed implementations.

Every kernel exists in two equivalent forms: an explicit-loop version that
numba compiles, and a vectorized pure-numpy version.  The public name binds
to the compiled loop when acceleration is on (see :mod:`qdcascade.accel`)
and to the numpy version otherwise.  ``benchmarks/bench_kernels.py``
compares the two paths.
"""

import numpy as np

from .accel import NUMBA_ENABLED, try_jit

__all__ = [
    "mle_objective",
    "mle_minimize",
    "accept_cascades",
    "coincidence_histogram",
    "tril_from_params",
    "params_from_tril",
]

#: Records with fewer counts than this use a Gaussian-tail likelihood term,
#: which stays finite for slightly negative background-subtracted counts.
GAUSS_COUNT_THRESHOLD = 10.0

#: Relative floor added to Born rates so log terms stay finite when the
#: optimizer visits rank-deficient states.
_RATE_FLOOR = 1e-12


def tril_from_params(t: np.ndarray) -> np.ndarray:
    """Map 16 real parameters to the lower-triangular factor L (rho ~ L L^dag)."""
    m = np.zeros((4, 4), dtype=np.complex128)
    m[0, 0] = t[0]
    m[1, 0] = t[1] + 1j * t[2]
    m[1, 1] = t[3]
    m[2, 0] = t[4] + 1j * t[5]
    m[2, 1] = t[6] + 1j * t[7]
    m[2, 2] = t[8]
    m[3, 0] = t[9] + 1j * t[10]
    m[3, 1] = t[11] + 1j * t[12]
    m[3, 2] = t[13] + 1j * t[14]
    m[3, 3] = t[15]
    return m


def params_from_tril(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`tril_from_params` (imaginary diagonal is dropped)."""
    t = np.empty(16)
    t[0] = m[0, 0].real
    t[1], t[2] = m[1, 0].real, m[1, 0].imag
    t[3] = m[1, 1].real
    t[4], t[5] = m[2, 0].real, m[2, 0].imag
    t[6], t[7] = m[2, 1].real, m[2, 1].imag
    t[8] = m[2, 2].real
    t[9], t[10] = m[3, 0].real, m[3, 0].imag
    t[11], t[12] = m[3, 1].real, m[3, 1].imag
    t[13], t[14] = m[3, 2].real, m[3, 2].imag
    t[15] = m[3, 3].real
    return t


def _mle_objective_numpy(t, projectors, counts, weights, gauss_threshold):
    """Normalized Poisson deviance (negative shifted log-likelihood) and gradient.

    The Poisson terms are measured relative to the saturated model
    (mu = counts), which leaves the gradient unchanged but keeps the
    objective near zero at the optimum so that double-precision line
    searches resolve progress down to tiny gradients.

    Parameters
    ----------
    t : (16,) float array, triangular-factor parameters.
    projectors : (n, 4, 4) complex array of measurement projectors.
    counts, weights : (n,) float arrays; expected counts are
        weights * Tr(P rho).
    gauss_threshold : records with counts below this use a Gaussian term.

    Returns
    -------
    (objective, grad) with grad of shape (16,).
    """
    ell = tril_from_params(t)
    s = ell @ ell.conj().T
    tr_s = s.trace().real
    rho = s / tr_s
    rates = np.einsum("kij,ji->k", projectors, rho).real + _RATE_FLOOR
    mu = weights * rates

    norm = max(np.sum(np.maximum(counts, 0.0)), 1.0)
    poisson = counts >= gauss_threshold
    safe_c = np.where(poisson, counts, 1.0)
    rel = (mu - safe_c) / safe_c
    ll = np.where(
        poisson,
        -safe_c * (rel - np.log1p(rel)),
        -((counts - mu) ** 2) / (2.0 * (mu + 1.0)),
    )
    # d(ll_k)/d(mu_k)
    dmu = np.where(
        poisson,
        counts / mu - 1.0,
        (counts - mu) / (mu + 1.0) + (counts - mu) ** 2 / (2.0 * (mu + 1.0) ** 2),
    )
    g = np.einsum("k,kij->ij", dmu * weights, projectors)
    h = (g - np.einsum("ij,ji->", g, rho).real * np.eye(4)) / tr_s
    grad_ell = 2.0 * (h @ ell)
    grad = params_from_tril_grad(grad_ell)
    return -np.sum(ll) / norm, -grad / norm


def params_from_tril_grad(g: np.ndarray) -> np.ndarray:
    """Collect d/dRe and d/dIm of the lower-triangular entries into 16 reals."""
    t = np.empty(16)
    t[0] = g[0, 0].real
    t[1], t[2] = g[1, 0].real, g[1, 0].imag
    t[3] = g[1, 1].real
    t[4], t[5] = g[2, 0].real, g[2, 0].imag
    t[6], t[7] = g[2, 1].real, g[2, 1].imag
    t[8] = g[2, 2].real
    t[9], t[10] = g[3, 0].real, g[3, 0].imag
    t[11], t[12] = g[3, 1].real, g[3, 1].imag
    t[13], t[14] = g[3, 2].real, g[3, 2].imag
    t[15] = g[3, 3].real
    return t


def _mle_objective_loop(t, projectors, counts, weights, gauss_threshold):
    n = projectors.shape[0]
    ell = np.zeros((4, 4), dtype=np.complex128)
    ell[0, 0] = t[0]
    ell[1, 0] = t[1] + 1j * t[2]
    ell[1, 1] = t[3]
    ell[2, 0] = t[4] + 1j * t[5]
    ell[2, 1] = t[6] + 1j * t[7]
    ell[2, 2] = t[8]
    ell[3, 0] = t[9] + 1j * t[10]
    ell[3, 1] = t[11] + 1j * t[12]
    ell[3, 2] = t[13] + 1j * t[14]
    ell[3, 3] = t[15]

    s = np.zeros((4, 4), dtype=np.complex128)
    tr_s = 0.0
    for i in range(4):
        for j in range(4):
            acc = 0.0 + 0.0j
            for k in range(4):
                acc += ell[i, k] * np.conj(ell[j, k])
            s[i, j] = acc
        tr_s += s[i, i].real
    rho = s / tr_s

    norm = 1.0
    acc_norm = 0.0
    for k in range(n):
        if counts[k] > 0.0:
            acc_norm += counts[k]
    if acc_norm > 1.0:
        norm = acc_norm

    ll = 0.0
    g = np.zeros((4, 4), dtype=np.complex128)
    for k in range(n):
        rate = _RATE_FLOOR
        for i in range(4):
            for j in range(4):
                rate += (projectors[k, i, j] * rho[j, i]).real
        mu = weights[k] * rate
        c = counts[k]
        if c >= gauss_threshold:
            rel = (mu - c) / c
            ll += -c * (rel - np.log1p(rel))
            dmu = c / mu - 1.0
        else:
            ll += -((c - mu) ** 2) / (2.0 * (mu + 1.0))
            dmu = (c - mu) / (mu + 1.0) + (c - mu) ** 2 / (2.0 * (mu + 1.0) ** 2)
        wk = dmu * weights[k]
        for i in range(4):
            for j in range(4):
                g[i, j] += wk * projectors[k, i, j]

    tr_g_rho = 0.0
    for i in range(4):
        for j in range(4):
            tr_g_rho += (g[i, j] * rho[j, i]).real
    h = np.zeros((4, 4), dtype=np.complex128)
    for i in range(4):
        for j in range(4):
            h[i, j] = g[i, j] / tr_s
        h[i, i] -= tr_g_rho / tr_s

    grad_ell = np.zeros((4, 4), dtype=np.complex128)
    for i in range(4):
        for j in range(4):
            acc = 0.0 + 0.0j
            for k in range(4):
                acc += h[i, k] * ell[k, j]
            grad_ell[i, j] = 2.0 * acc

    grad = np.empty(16)
    grad[0] = grad_ell[0, 0].real
    grad[1], grad[2] = grad_ell[1, 0].real, grad_ell[1, 0].imag
    grad[3] = grad_ell[1, 1].real
    grad[4], grad[5] = grad_ell[2, 0].real, grad_ell[2, 0].imag
    grad[6], grad[7] = grad_ell[2, 1].real, grad_ell[2, 1].imag
    grad[8] = grad_ell[2, 2].real
    grad[9], grad[10] = grad_ell[3, 0].real, grad_ell[3, 0].imag
    grad[11], grad[12] = grad_ell[3, 1].real, grad_ell[3, 1].imag
    grad[13], grad[14] = grad_ell[3, 2].real, grad_ell[3, 2].imag
    grad[15] = grad_ell[3, 3].real
    return -ll / norm, -grad / norm


def _accept_cascades_loop(t_pump, decay_xx, decay_x):
    """Sequential pump gating: reject pump events while a cascade is in flight."""
    n = t_pump.shape[0]
    accepted = np.zeros(n, dtype=np.bool_)
    busy_until = -np.inf
    for i in range(n):
        if t_pump[i] >= busy_until:
            accepted[i] = True
            busy_until = t_pump[i] + decay_xx[i] + decay_x[i]
    return accepted


def _accept_cascades_numpy(t_pump, decay_xx, decay_x):
    # Fixpoint iteration equivalent to the sequential scan: event j is
    # accepted iff it starts after every busy window of accepted events
    # before it.  Acceptance only depends on earlier events, so after pass p
    # the first p decisions are final; convergence is exact.
    n = t_pump.shape[0]
    end = t_pump + decay_xx + decay_x
    accepted = np.ones(n, dtype=bool)
    for _ in range(n + 1):
        masked_end = np.where(accepted, end, -np.inf)
        prev_busy = np.maximum.accumulate(
            np.concatenate((np.array([-np.inf]), masked_end[:-1]))
        )
        new_accepted = t_pump >= prev_busy
        if np.array_equal(new_accepted, accepted):
            break
        accepted = new_accepted
    return accepted


def _coincidence_histogram_loop(t1, t2, tau_max, nbins):
    """Histogram delays t2 - t1 over [-tau_max, tau_max) for sorted streams."""
    bin_width = 2.0 * tau_max / nbins
    counts = np.zeros(nbins, dtype=np.int64)
    lo = 0
    n2 = t2.shape[0]
    for i in range(t1.shape[0]):
        t_min = t1[i] - tau_max
        t_max = t1[i] + tau_max
        while lo < n2 and t2[lo] < t_min:
            lo += 1
        j = lo
        while j < n2 and t2[j] < t_max:
            idx = int((t2[j] - t1[i] + tau_max) / bin_width)
            if 0 <= idx < nbins:
                counts[idx] += 1
            j += 1
    return counts


def _coincidence_histogram_numpy(t1, t2, tau_max, nbins):
    bin_width = 2.0 * tau_max / nbins
    lo = np.searchsorted(t2, t1 - tau_max, side="left")
    hi = np.searchsorted(t2, t1 + tau_max, side="left")
    per = hi - lo
    total = int(per.sum())
    if total == 0:
        return np.zeros(nbins, dtype=np.int64)
    src = np.repeat(t1, per)
    starts = np.concatenate(([0], np.cumsum(per)[:-1]))
    offs = np.arange(total) - np.repeat(starts, per)
    dst = t2[np.repeat(lo, per) + offs]
    idx = ((dst - src + tau_max) / bin_width).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < nbins)]
    return np.bincount(idx, minlength=nbins).astype(np.int64)


#: Number of curvature pairs kept by the limited-memory BFGS driver.
_LBFGS_MEMORY = 10


def _lbfgs_body(objective):
    """Shared limited-memory BFGS driver; ``objective`` is fixed per path.

    Armijo backtracking line search with curvature-pair skipping.  Returns
    (x, objective value, gradient, iterations, stalled) where ``stalled``
    marks a line search that could not make progress (the caller decides
    whether the gradient is good enough).
    """

    def minimize(t0, projectors, counts, weights, gauss_threshold, grad_tol, max_iter):
        mem = _LBFGS_MEMORY
        n = t0.shape[0]
        s_hist = np.zeros((mem, n))
        y_hist = np.zeros((mem, n))
        rho_hist = np.zeros(mem)
        alpha = np.zeros(mem)
        n_pairs = 0
        head = 0
        x = t0.copy()
        f, g = objective(x, projectors, counts, weights, gauss_threshold)
        n_iter = 0
        while n_iter < max_iter:
            if np.max(np.abs(g)) <= grad_tol:
                break
            q = g.copy()
            for idx in range(n_pairs):
                i = (head - 1 - idx) % mem
                a = rho_hist[i] * np.dot(s_hist[i], q)
                alpha[i] = a
                q -= a * y_hist[i]
            if n_pairs > 0:
                last = (head - 1) % mem
                y_sq = np.dot(y_hist[last], y_hist[last])
                if y_sq > 0.0:
                    q *= 1.0 / (rho_hist[last] * y_sq)
            for idx in range(n_pairs - 1, -1, -1):
                i = (head - 1 - idx) % mem
                b = rho_hist[i] * np.dot(y_hist[i], q)
                q += (alpha[i] - b) * s_hist[i]
            d = -q
            gd = np.dot(g, d)
            if not gd < 0.0:
                d = -g
                gd = -np.dot(g, g)
                n_pairs = 0
                head = 0
            step = 1.0
            accepted = False
            f_new = f
            g_new = g
            x_new = x
            for _ in range(40):
                x_new = x + step * d
                f_new, g_new = objective(
                    x_new, projectors, counts, weights, gauss_threshold
                )
                if np.isfinite(f_new) and f_new <= f + 1e-4 * step * gd:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                return x, f, g, n_iter, True
            s_vec = x_new - x
            y_vec = g_new - g
            sy = np.dot(s_vec, y_vec)
            bound = 1e-10 * np.sqrt(np.dot(s_vec, s_vec) * np.dot(y_vec, y_vec))
            if sy > bound:
                s_hist[head] = s_vec
                y_hist[head] = y_vec
                rho_hist[head] = 1.0 / sy
                head = (head + 1) % mem
                if n_pairs < mem:
                    n_pairs += 1
            x = x_new
            f = f_new
            g = g_new
            n_iter += 1
        return x, f, g, n_iter, False

    return minimize


_mle_minimize_numpy = _lbfgs_body(_mle_objective_numpy)


if NUMBA_ENABLED:
    mle_objective = try_jit(cache=True)(_mle_objective_loop)
    mle_minimize = try_jit(cache=False)(_lbfgs_body(mle_objective))
    accept_cascades = try_jit(cache=True)(_accept_cascades_loop)
    coincidence_histogram = try_jit(cache=True)(_coincidence_histogram_loop)
else:
    mle_objective = _mle_objective_numpy
    mle_minimize = _mle_minimize_numpy
    accept_cascades = _accept_cascades_numpy
    coincidence_histogram = _coincidence_histogram_numpy
