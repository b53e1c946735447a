"""Pure-Python/numpy kernels.  Same signatures as the compiled ``_ckernels``."""
import numpy as np

NEG_INF = -np.inf

MATCH, SUB, DEL, INS = 0, 1, 2, 3


def ctc_min_frames(labels) -> int:
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _extend(labels, blank):
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _skip_mask(ext, blank):
    skip = np.zeros(len(ext), dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def ctc_alpha(log_probs, labels, blank):
    """Log forward scores, shape [S, 2L+1]."""
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    S = lp.shape[0]
    ext = _extend(labels, blank)
    n = len(ext)
    skip = _skip_mask(ext, blank)
    alpha = np.full((S, n), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if n > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, S):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + lp[t, ext]
    return alpha


def ctc_beta(log_probs, labels, blank):
    """Log backward scores including the emission at t, shape [S, 2L+1]."""
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    S = lp.shape[0]
    ext = _extend(labels, blank)
    n = len(ext)
    skip = _skip_mask(ext, blank)
    beta = np.full((S, n), NEG_INF)
    beta[S - 1, n - 1] = lp[S - 1, ext[n - 1]]
    if n > 1:
        beta[S - 1, n - 2] = lp[S - 1, ext[n - 2]]
    for t in range(S - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + lp[t, ext]
    return beta


def ctc_nll_grad(log_probs, labels, blank):
    """Negative log-likelihood and its gradient w.r.t. ``log_probs``.

    Infeasible pairs give ``(inf, zeros)``.
    """
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    S = lp.shape[0]
    grad = np.zeros_like(lp)
    if S < ctc_min_frames(labels):
        return np.inf, grad
    ext = _extend(labels, blank)
    n = len(ext)
    alpha = ctc_alpha(lp, labels, blank)
    beta = ctc_beta(lp, labels, blank)
    ll = alpha[S - 1, n - 1] if n == 1 else np.logaddexp(alpha[S - 1, n - 1], alpha[S - 1, n - 2])
    with np.errstate(invalid="ignore"):
        gamma = alpha + beta - lp[:, ext] - ll
    post = np.where(np.isfinite(gamma), np.exp(gamma), 0.0)
    for s in range(n):
        grad[:, ext[s]] -= post[:, s]
    return float(-ll), grad


def edit_align(src, tgt):
    """Unit-cost minimum edit alignment of ``src`` onto ``tgt``.

    Returns ``(cost, ops)`` with ``ops`` a list of ``(kind, i, j)`` in source
    order; ``i``/``j`` are -1 when the op has no source/target position.
    Traceback prefers match > substitute > delete > insert.
    """
    src = [int(x) for x in src]
    tgt = [int(x) for x in tgt]
    n, m = len(src), len(tgt)
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        D[i][0] = i
    for j in range(m + 1):
        D[0][j] = j
    for i in range(1, n + 1):
        row, up = D[i], D[i - 1]
        si = src[i - 1]
        for j in range(1, m + 1):
            d = up[j - 1] + (si != tgt[j - 1])
            if up[j] + 1 < d:
                d = up[j] + 1
            if row[j - 1] + 1 < d:
                d = row[j - 1] + 1
            row[j] = d
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and src[i - 1] == tgt[j - 1] and D[i][j] == D[i - 1][j - 1]:
            ops.append((MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and D[i][j] == D[i - 1][j - 1] + 1:
            ops.append((SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and D[i][j] == D[i - 1][j] + 1:
            ops.append((DEL, i - 1, -1))
            i -= 1
        else:
            ops.append((INS, -1, j - 1))
            j -= 1
    ops.reverse()
    return D[n][m], ops
