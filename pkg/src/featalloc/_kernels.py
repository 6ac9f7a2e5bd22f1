"""Compiled inner loops for the sampler.

The AIBD log-pmf is evaluated here in a column-decomposed form.  With the
``prod x_i!`` factor cancelled, the log-pmf of ``Z`` (``K`` columns, arrival
order ``rho``) is

    K log(alpha) - alpha H_N - sum_h log K_h! + sum_k c_k

where the column term ``c_k`` only involves column ``k``:

    c_k = -log(p_k) + sum_{p > p_k} log Bern(z_{rho_p,k}; h_pk (p - 1) / p)

with ``p_k`` the 1-based arrival position of the first customer holding ``k``.
A flip of ``z_{i,m}`` therefore touches ``c_m`` and the multiplicities only.
The pure-Python reference in :mod:`featalloc.priors` follows the textbook
product form; the two are cross-checked in the tests.

Arrays: ``Z`` is an ``N x cap`` int8 buffer whose first ``K`` columns are live.
"""

from __future__ import annotations

import math

import numba
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# Indices into the telemetry counter array.
FLIP_PROPOSED = 0
FLIP_ACCEPTED = 1
SINGLETON_DRAWS = 2
SINGLETON_ADDED = 3
SINGLETON_TRUNC_LEN = 4
N_STATS = 5

_jit = numba.njit(cache=True, nogil=True)


@_jit
def decay_matrix(code, param, tau, d):
    n = d.shape[0]
    lam = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            x = d[a, b]
            if code == 0:
                v = param
            elif code == 1:
                v = math.exp(-tau * x)
            elif code == 2:
                v = (x + param) ** (-tau)
            else:
                v = 1.0 if (tau == 0.0 or x <= 1.0 / tau) else 0.0
            lam[a, b] = v
    return lam


@_jit
def denominators(rho, lam):
    """``den[p] = sum_{q < p} lam[rho_q, rho_p]``; ``den[0]`` is unused."""
    n = rho.shape[0]
    den = np.zeros(n)
    for p in range(1, n):
        c = rho[p]
        s = 0.0
        for q in range(p):
            s += lam[rho[q], c]
        den[p] = s
    return den


@_jit
def denominators_ok(den):
    for p in range(1, den.shape[0]):
        if not den[p] > 0.0:
            return False
    return True


@_jit
def column_term(Z, k, rho, lam, den):
    n = rho.shape[0]
    p0 = -1
    for p in range(n):
        if Z[rho[p], k] != 0:
            p0 = p
            break
    if p0 < 0:
        return 0.0
    term = -math.log(p0 + 1.0)
    for p in range(p0 + 1, n):
        c = rho[p]
        num = 0.0
        for q in range(p):
            r = rho[q]
            if Z[r, k] != 0:
                num += lam[r, c]
        prob = num / den[p] * p / (p + 1.0)
        if Z[c, k] != 0:
            term += math.log(prob) if prob > 0.0 else -np.inf
        else:
            term += math.log1p(-prob)
    return term


@_jit
def same_column(Z, a, b):
    for r in range(Z.shape[0]):
        if Z[r, a] != Z[r, b]:
            return False
    return True


@_jit
def count_identical(Z, K, m):
    d = 0
    for k in range(K):
        if same_column(Z, k, m):
            d += 1
    return d


@_jit
def log_multiplicity(Z, K):
    """``sum_h log K_h!`` as ``sum_k log(rank of column k within its group)``."""
    s = 0.0
    for k in range(K):
        r = 1
        for j in range(k):
            if same_column(Z, j, k):
                r += 1
        s += math.log(r)
    return s


@_jit
def harmonic(n):
    s = 0.0
    for i in range(1, n + 1):
        s += 1.0 / i
    return s


@_jit
def log_prior(Z, K, rho, lam, den, alpha):
    n = rho.shape[0]
    total = K * math.log(alpha) - alpha * harmonic(n) - log_multiplicity(Z, K)
    for k in range(K):
        total += column_term(Z, k, rho, lam, den)
    return total


@_jit
def singleton_term(i, rho, lam, den):
    """Column term of a feature held only by customer ``i``."""
    n = rho.shape[0]
    p0 = 0
    for p in range(n):
        if rho[p] == i:
            p0 = p
            break
    term = -math.log(p0 + 1.0)
    for p in range(p0 + 1, n):
        prob = lam[i, rho[p]] / den[p] * p / (p + 1.0)
        term += math.log1p(-prob)
    return term


@_jit
def gram_and_cross(Z, K, X):
    n, dim = X.shape
    G = np.zeros((K, K))
    ZX = np.zeros((K, dim))
    for r in range(n):
        for a in range(K):
            if Z[r, a] != 0:
                for b in range(K):
                    if Z[r, b] != 0:
                        G[a, b] += 1.0
                for c in range(dim):
                    ZX[a, c] += X[r, c]
    return G, ZX


@_jit
def loglik_from_gram(G, ZX, K, trXX, n, dim, sx, sa):
    """Collapsed LGLFM log-density from ``Z'Z`` and ``Z'X`` (leading ``K`` block)."""
    ratio = (sx * sx) / (sa * sa)
    L = np.zeros((K, K))
    for a in range(K):
        for b in range(a + 1):
            s = G[a, b]
            if a == b:
                s += ratio
            for c in range(b):
                s -= L[a, c] * L[b, c]
            if a == b:
                if not s > 0.0:
                    return np.nan
                L[a, a] = math.sqrt(s)
            else:
                L[a, b] = s / L[b, b]
    logdet = 0.0
    for a in range(K):
        logdet += 2.0 * math.log(L[a, a])
    quad = 0.0
    W = np.empty(K)
    for c in range(dim):
        for a in range(K):
            s = ZX[a, c]
            for b in range(a):
                s -= L[a, b] * W[b]
            W[a] = s / L[a, a]
            quad += W[a] * W[a]
    return (
        -0.5 * n * dim * LOG_2PI
        - (n - K) * dim * math.log(sx)
        - K * dim * math.log(sa)
        - 0.5 * dim * logdet
        - (trXX - quad) / (2.0 * sx * sx)
    )


@_jit
def loglik(Z, K, X, trXX, sx, sa):
    G, ZX = gram_and_cross(Z, K, X)
    return loglik_from_gram(G, ZX, K, trXX, X.shape[0], X.shape[1], sx, sa)


@_jit
def _shuffle(rng, a):
    for j in range(a.shape[0] - 1, 0, -1):
        t = rng.integers(0, j + 1)
        tmp = a[j]
        a[j] = a[t]
        a[t] = tmp


@_jit
def _grow(Z, K, need):
    n, cap = Z.shape
    if need <= cap:
        return Z
    newcap = max(2 * cap, need, 4)
    Z2 = np.zeros((n, newcap), dtype=np.int8)
    Z2[:, :K] = Z[:, :K]
    return Z2


@_jit
def _remove_column(Z, K, m):
    """Swap-remove column ``m``; returns the new ``K``."""
    last = K - 1
    if m != last:
        for r in range(Z.shape[0]):
            Z[r, m] = Z[r, last]
    for r in range(Z.shape[0]):
        Z[r, last] = 0
    return last


@_jit
def _row_singletons(Z, K, i):
    n = Z.shape[0]
    out = np.empty(K, dtype=np.int64)
    cnt = 0
    for k in range(K):
        if Z[i, k] == 0:
            continue
        alone = True
        for r in range(n):
            if r != i and Z[r, k] != 0:
                alone = False
                break
        if alone:
            out[cnt] = k
            cnt += 1
    return out[:cnt]


@_jit
def _flip_lik(G, ZX, Z, K, i, m, delta, X):
    for b in range(K):
        if b != m and Z[i, b] != 0:
            G[m, b] += delta
            G[b, m] += delta
    G[m, m] += delta
    for c in range(X.shape[1]):
        ZX[m, c] += delta * X[i, c]


@_jit
def _singleton_loglik(G, ZX, K, j, Zi, xi, trXX, n, dim, sx, sa):
    m = K + j
    Ge = np.empty((m, m))
    Ze = np.empty((m, dim))
    Ge[:K, :K] = G[:K, :K]
    Ze[:K] = ZX[:K]
    for a in range(K, m):
        for b in range(K):
            v = 1.0 if Zi[b] != 0 else 0.0
            Ge[a, b] = v
            Ge[b, a] = v
        for b in range(K, m):
            Ge[a, b] = 1.0
        Ze[a] = xi
    return loglik_from_gram(Ge, Ze, m, trXX, n, dim, sx, sa)


@_jit
def update_row_flips(Z, K, i, rho, lam, den, alpha, X, trXX, sx, sa, use_lik, rng, stats):
    """Metropolis-Hastings flips of row ``i`` over non-singleton columns."""
    n = Z.shape[0]
    cols = np.empty(K, dtype=np.int64)
    h = 0
    for k in range(K):
        for r in range(n):
            if r != i and Z[r, k] != 0:
                cols[h] = k
                h += 1
                break
    if h == 0:
        return
    cols = cols[:h]
    _shuffle(rng, cols)
    if use_lik:
        G, ZX = gram_and_cross(Z, K, X)
        cur_lik = loglik_from_gram(G, ZX, K, trXX, n, X.shape[1], sx, sa)
    else:
        G = np.zeros((1, 1))
        ZX = np.zeros((1, 1))
        cur_lik = 0.0
    for t in range(h):
        m = cols[t]
        c_old = column_term(Z, m, rho, lam, den)
        d_old = count_identical(Z, K, m)
        old = Z[i, m]
        Z[i, m] = 1 - old
        delta = 1.0 if old == 0 else -1.0
        c_new = column_term(Z, m, rho, lam, den)
        d_new = count_identical(Z, K, m)
        # Prior ratio: column term plus -sum_h log K_h!, whose change is
        # log(d_old) - log(d_new); the Hastings factor is d_new / d_old.
        log_ratio = (c_new - c_old) + (math.log(d_old) - math.log(d_new))
        log_ratio += math.log(d_new) - math.log(d_old)
        new_lik = 0.0
        if use_lik:
            _flip_lik(G, ZX, Z, K, i, m, delta, X)
            new_lik = loglik_from_gram(G, ZX, K, trXX, n, X.shape[1], sx, sa)
            log_ratio += new_lik - cur_lik
        stats[FLIP_PROPOSED] += 1
        if math.log(rng.random()) < log_ratio:
            stats[FLIP_ACCEPTED] += 1
            cur_lik = new_lik
        else:
            Z[i, m] = old
            if use_lik:
                _flip_lik(G, ZX, Z, K, i, m, -delta, X)


@_jit
def update_row_singletons(Z, K, i, rho, lam, den, alpha, X, trXX, sx, sa, use_lik, trunc, rng, stats, max_new):
    """Resample the number of singleton features of row ``i``.

    Returns the (possibly reallocated) buffer and the new ``K``.
    """
    n = Z.shape[0]
    single = _row_singletons(Z, K, i)
    # Remove from the highest index down so swap-removal stays valid.
    for t in range(single.shape[0] - 1, -1, -1):
        K = _remove_column(Z, K, single[t])

    base = math.log(alpha) + singleton_term(i, rho, lam, den)
    if use_lik:
        G, ZX = gram_and_cross(Z, K, X)
        Zi = Z[i, :K].copy()
        xi = X[i].copy()
    else:
        G = np.zeros((1, 1))
        ZX = np.zeros((1, 1))
        Zi = Z[i, :1].copy()
        xi = np.zeros(1)
    log_cut = math.log(trunc)
    masses = np.empty(16)
    best = -np.inf
    j = 0
    while True:
        lm = j * base - math.lgamma(j + 1.0)
        if use_lik:
            lm += _singleton_loglik(G, ZX, K, j, Zi, xi, trXX, n, X.shape[1], sx, sa)
        if j >= masses.shape[0]:
            grown = np.empty(2 * masses.shape[0])
            grown[:j] = masses[:j]
            masses = grown
        masses[j] = lm
        if lm > best:
            best = lm
        elif lm < best - log_cut or j >= max_new:
            break
        if lm == -np.inf and j > 0:
            break
        j += 1
    count = j + 1
    stats[SINGLETON_DRAWS] += 1
    stats[SINGLETON_TRUNC_LEN] += count
    total = 0.0
    for t in range(count):
        total += math.exp(masses[t] - best)
    u = rng.random() * total
    acc = 0.0
    pick = count - 1
    for t in range(count):
        acc += math.exp(masses[t] - best)
        if u < acc:
            pick = t
            break
    if pick > 0:
        Z = _grow(Z, K, K + pick)
        for t in range(pick):
            Z[i, K + t] = 1
        K += pick
        stats[SINGLETON_ADDED] += pick
    return Z, K


@_jit
def z_scans(Z, K, n_scans, rho, lam, alpha, X, trXX, sx, sa, use_lik, trunc, rng, stats, max_new):
    """``n_scans`` full row-by-row sweeps of the feature allocation."""
    den = denominators(rho, lam)
    n = Z.shape[0]
    for _ in range(n_scans):
        for i in range(n):
            update_row_flips(Z, K, i, rho, lam, den, alpha, X, trXX, sx, sa, use_lik, rng, stats)
            Z, K = update_row_singletons(
                Z, K, i, rho, lam, den, alpha, X, trXX, sx, sa, use_lik, trunc, rng, stats, max_new
            )
    return Z, K


@_jit
def aibd_draw(rho, lam, alpha, rng):
    """One constructive AIBD draw; returns the ``N x K`` buffer and ``K``."""
    n = rho.shape[0]
    Z = np.zeros((n, 8), dtype=np.int8)
    K = 0
    for p in range(n):
        c = rho[p]
        if K > 0:
            den = 0.0
            for q in range(p):
                den += lam[rho[q], c]
            for k in range(K):
                num = 0.0
                for q in range(p):
                    r = rho[q]
                    if Z[r, k] != 0:
                        num += lam[r, c]
                if rng.random() < num / den * p / (p + 1.0):
                    Z[c, k] = 1
        new = rng.poisson(alpha / (p + 1.0))
        if new > 0:
            Z = _grow(Z, K, K + new)
            for t in range(new):
                Z[c, K + t] = 1
            K += new
    return Z, K
