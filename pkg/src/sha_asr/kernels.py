"""Inner loops of the decoder, the WER scorer and the 1-D GMM.

Every kernel exists as ``<name>_jit`` (numba) and ``<name>_numpy`` (fallback);
the public ``<name>`` is bound once at import according to
:data:`sha_asr._accel.USE_NUMBA`.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

NEG_INF = -np.inf


# --------------------------------------------------------------------------
# word segment alignment


def _segment_scores_loops(logpost, seqs, offsets):
    T = logpost.shape[0]
    V = offsets.shape[0] - 1
    out = np.full((V, T + 1, T + 1), -np.inf)
    for w in range(V):
        a = offsets[w]
        m = offsets[w + 1] - a
        D = np.empty(m)
        for s in range(T):
            for j in range(m):
                D[j] = -np.inf
            D[0] = logpost[s, seqs[a]]
            out[w, s, s + 1] = D[m - 1]
            for t in range(s + 1, T):
                # descending j keeps D[j - 1] at its previous-frame value
                for j in range(m - 1, -1, -1):
                    best = D[j]
                    if j > 0 and D[j - 1] > best:
                        best = D[j - 1]
                    D[j] = best + logpost[t, seqs[a + j]]
                out[w, s, t + 1] = D[m - 1]
    return out


segment_scores_jit = njit(_segment_scores_loops)


def segment_scores_numpy(logpost, seqs, offsets):
    T = logpost.shape[0]
    V = offsets.shape[0] - 1
    out = np.full((V, T + 1, T + 1), NEG_INF)
    for w in range(V):
        seq = seqs[offsets[w]:offsets[w + 1]]
        m = seq.shape[0]
        # D[s, j]: best score for start frame s, currently in chenone j
        D = np.full((T, m), NEG_INF)
        for t in range(T):
            if t > 0:
                prev = D[:t]
                best = prev.copy()
                if m > 1:
                    best[:, 1:] = np.where(prev[:, :-1] > prev[:, 1:], prev[:, :-1], prev[:, 1:])
                D[:t] = best + logpost[t, seq]
            D[t, 0] = logpost[t, seq[0]]
            out[w, : t + 1, t + 1] = D[: t + 1, m - 1]
    return out


def segment_scores(logpost, seqs, offsets):
    """Best alignment score of each word over each frame span.

    ``out[w, s, e]`` is the maximum over monotone alignments of word ``w``'s
    chenone sequence to frames ``s .. e-1`` (every chenone takes at least one
    frame, self-loops allowed) of the summed ``logpost`` entries; ``-inf``
    where the span is shorter than the word.
    """
    logpost = np.ascontiguousarray(logpost, dtype=np.float64)
    seqs = np.ascontiguousarray(seqs, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if USE_NUMBA:
        return segment_scores_jit(logpost, seqs, offsets)
    return segment_scores_numpy(logpost, seqs, offsets)


# --------------------------------------------------------------------------
# edit distance


def _edit_ops_loops(ref, hyp):
    n = ref.shape[0]
    m = hyp.shape[0]
    # lexicographic cost: (errors, indels); minimising indels among equal
    # error counts keeps the split symmetric under ref/hyp swap
    err = np.zeros((n + 1, m + 1), dtype=np.int64)
    ind = np.zeros((n + 1, m + 1), dtype=np.int64)
    dels = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(1, n + 1):
        err[i, 0] = i
        ind[i, 0] = i
        dels[i, 0] = i
    for j in range(1, m + 1):
        err[0, j] = j
        ind[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = 0 if ref[i - 1] == hyp[j - 1] else 1
            be = err[i - 1, j - 1] + sub
            bi = ind[i - 1, j - 1]
            bd = dels[i - 1, j - 1]
            ce = err[i - 1, j] + 1
            ci = ind[i - 1, j] + 1
            if ce < be or (ce == be and ci < bi):
                be = ce
                bi = ci
                bd = dels[i - 1, j] + 1
            ce = err[i, j - 1] + 1
            ci = ind[i, j - 1] + 1
            if ce < be or (ce == be and ci < bi):
                be = ce
                bi = ci
                bd = dels[i, j - 1]
            err[i, j] = be
            ind[i, j] = bi
            dels[i, j] = bd
    e = err[n, m]
    d = dels[n, m]
    ins = ind[n, m] - d
    return e, e - d - ins, d, ins


edit_ops_jit = njit(_edit_ops_loops)
# short word sequences: the plain-Python loop is the fallback
edit_ops_python = _edit_ops_loops


def edit_ops(ref_ids, hyp_ids):
    """Return ``(errors, substitutions, deletions, insertions)``."""
    ref = np.asarray(ref_ids, dtype=np.int64)
    hyp = np.asarray(hyp_ids, dtype=np.int64)
    if USE_NUMBA:
        e, s, d, i = edit_ops_jit(ref, hyp)
    else:
        e, s, d, i = edit_ops_python(ref, hyp)
    return int(e), int(s), int(d), int(i)


# --------------------------------------------------------------------------
# 1-D Gaussian mixture E-step

_LOG_2PI = float(np.log(2.0 * np.pi))


def _gmm_estep_loops(x, weights, means, variances):
    n = x.shape[0]
    k = means.shape[0]
    resp = np.empty((n, k))
    logc = np.empty(k)
    for c in range(k):
        logc[c] = np.log(weights[c]) - 0.5 * (_LOG_2PI + np.log(variances[c]))
    total = 0.0
    for i in range(n):
        mx = -np.inf
        for c in range(k):
            d = x[i] - means[c]
            v = logc[c] - 0.5 * d * d / variances[c]
            resp[i, c] = v
            if v > mx:
                mx = v
        s = 0.0
        for c in range(k):
            s += np.exp(resp[i, c] - mx)
        lse = mx + np.log(s)
        for c in range(k):
            resp[i, c] = np.exp(resp[i, c] - lse)
        total += lse
    return resp, total


gmm_estep_jit = njit(_gmm_estep_loops)


def gmm_estep_numpy(x, weights, means, variances):
    logc = np.log(weights) - 0.5 * (_LOG_2PI + np.log(variances))
    d = x[:, None] - means[None, :]
    logp = logc[None, :] - 0.5 * d * d / variances[None, :]
    mx = logp.max(axis=1, keepdims=True)
    lse = mx + np.log(np.exp(logp - mx).sum(axis=1, keepdims=True))
    return np.exp(logp - lse), float(lse.sum())


def gmm_estep(x, weights, means, variances):
    """Responsibilities ``(n, k)`` and total log-likelihood."""
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (x, weights, means, variances)]
    if USE_NUMBA:
        resp, ll = gmm_estep_jit(*args)
        return resp, float(ll)
    return gmm_estep_numpy(*args)
