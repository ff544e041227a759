"""Compiled inner sums of the study likelihood over the dependent grid.

All sums are carried out in log space with a max shift. Gradients are with
respect to the latent proportions stored at the grid nodes (``p0`` for the
root, ``P[D, q, r]`` for dimension ``D``); they are accumulated (summed over
studies) into ``G0`` / ``G`` when ``want_grad`` is set.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def gold_loglik(lw0, p0, P, lw, m_eff, n1, n0, f_off, f_dim, f_a, f_b, want_grad, G0, G):
    n_studies = n1.shape[0]
    nq = p0.shape[0]
    out = np.empty(n_studies)
    lr = np.empty(nq)
    lp0 = np.log(p0)
    l1p0 = np.log1p(-p0)
    lP = np.log(P)
    l1P = np.log1p(-P)
    max_f = 0
    for s in range(n_studies):
        max_f = max(max_f, f_off[s + 1] - f_off[s])
    lB = np.empty((max(max_f, 1), nq))
    for s in range(n_studies):
        f0 = f_off[s]
        nf = f_off[s + 1] - f0
        for q in range(nq):
            acc = lw0[q] + n1[s] * lp0[q] + n0[s] * l1p0[q]
            for f in range(nf):
                d = f_dim[f0 + f]
                a = f_a[f0 + f]
                b = f_b[f0 + f]
                mx = -np.inf
                for r in range(m_eff[d]):
                    t = lw[d, r] + a * lP[d, q, r] + b * l1P[d, q, r]
                    if t > mx:
                        mx = t
                tot = 0.0
                for r in range(m_eff[d]):
                    tot += np.exp(lw[d, r] + a * lP[d, q, r] + b * l1P[d, q, r] - mx)
                lB[f, q] = mx + np.log(tot)
                acc += lB[f, q]
            lr[q] = acc
        mx = -np.inf
        for q in range(nq):
            if lr[q] > mx:
                mx = lr[q]
        tot = 0.0
        for q in range(nq):
            tot += np.exp(lr[q] - mx)
        ll = mx + np.log(tot)
        out[s] = ll
        if want_grad:
            for q in range(nq):
                cq = np.exp(lr[q] - ll)
                G0[q] += cq * (n1[s] / p0[q] - n0[s] / (1.0 - p0[q]))
                for f in range(nf):
                    d = f_dim[f0 + f]
                    a = f_a[f0 + f]
                    b = f_b[f0 + f]
                    for r in range(m_eff[d]):
                        t = lw[d, r] + a * lP[d, q, r] + b * l1P[d, q, r] - lB[f, q]
                        G[d, q, r] += cq * np.exp(t) * (a / P[d, q, r] - b / (1.0 - P[d, q, r]))
    return out


# above this many cells the no-gold kernel recomputes blocks instead of storing them
MAX_STORED_CELLS = 1 << 24


@njit(cache=True, nogil=True)
def _nogold_block(q, lw0, p0, P, lw, ds1, dc1, ds2, dc2, n_s1, n_c1, n_s2, n_c2,
                  m11, m10, m01, m00, L):
    """Log terms of root node q into L[i, j, k, l]; returns their maximum."""
    pr = p0[q]
    qr = 1.0 - pr
    mx = -np.inf
    for i in range(n_s1):
        a1 = P[ds1, q, i]
        wi = lw0[q] + lw[ds1, i]
        for j in range(n_c1):
            c1 = P[dc1, q, j]
            wj = wi + lw[dc1, j]
            x11 = pr * a1
            x01 = pr * (1.0 - a1)
            y11 = qr * (1.0 - c1)
            y01 = qr * c1
            for k in range(n_s2):
                a2 = P[ds2, q, k]
                wk = wj + lw[ds2, k]
                for l in range(n_c2):
                    c2 = P[dc2, q, l]
                    p11 = x11 * a2 + y11 * (1.0 - c2)
                    p10 = x11 * (1.0 - a2) + y11 * c2
                    p01 = x01 * a2 + y01 * (1.0 - c2)
                    p00 = x01 * (1.0 - a2) + y01 * c2
                    t = (wk + lw[dc2, l] + m11 * np.log(p11) + m10 * np.log(p10)
                         + m01 * np.log(p01) + m00 * np.log(p00))
                    L[i, j, k, l] = t
                    if t > mx:
                        mx = t
    return mx


@njit(cache=True, nogil=True)
def nogold_loglik(lw0, p0, P, lw, m_eff, dims, counts, want_grad, G0, G):
    """Pairwise no-gold studies; dims[s] = (sens k1, spec k1, sens k2, spec k2)."""
    n_studies = dims.shape[0]
    nq = p0.shape[0]
    out = np.empty(n_studies)
    mmax = 1
    for d in range(m_eff.shape[0]):
        mmax = max(mmax, m_eff[d])
    store = nq * mmax ** 4 <= MAX_STORED_CELLS
    L = np.empty((nq if store else 1, mmax, mmax, mmax, mmax))
    lq = np.empty(nq)
    for s in range(n_studies):
        ds1, dc1, ds2, dc2 = dims[s, 0], dims[s, 1], dims[s, 2], dims[s, 3]
        n_s1, n_c1, n_s2, n_c2 = m_eff[ds1], m_eff[dc1], m_eff[ds2], m_eff[dc2]
        m11, m10, m01, m00 = counts[s, 0], counts[s, 1], counts[s, 2], counts[s, 3]
        for q in range(nq):
            B = L[q if store else 0]
            mq = _nogold_block(q, lw0, p0, P, lw, ds1, dc1, ds2, dc2, n_s1, n_c1, n_s2, n_c2,
                               m11, m10, m01, m00, B)
            tot = 0.0
            for i in range(n_s1):
                for j in range(n_c1):
                    for k in range(n_s2):
                        for l in range(n_c2):
                            tot += np.exp(B[i, j, k, l] - mq)
            lq[q] = mq + np.log(tot)
        mx = -np.inf
        for q in range(nq):
            if lq[q] > mx:
                mx = lq[q]
        tot = 0.0
        for q in range(nq):
            tot += np.exp(lq[q] - mx)
        ll = mx + np.log(tot)
        out[s] = ll
        if not want_grad:
            continue
        for q in range(nq):
            pr = p0[q]
            qr = 1.0 - pr
            if store:
                B = L[q]
            else:
                B = L[0]
                _nogold_block(q, lw0, p0, P, lw, ds1, dc1, ds2, dc2, n_s1, n_c1, n_s2, n_c2,
                              m11, m10, m01, m00, B)
            for i in range(n_s1):
                a1 = P[ds1, q, i]
                for j in range(n_c1):
                    c1 = P[dc1, q, j]
                    for k in range(n_s2):
                        a2 = P[ds2, q, k]
                        for l in range(n_c2):
                            c2 = P[dc2, q, l]
                            c = np.exp(B[i, j, k, l] - ll)
                            if c == 0.0:
                                continue
                            s11 = a1 * a2
                            s10 = a1 * (1.0 - a2)
                            s01 = (1.0 - a1) * a2
                            s00 = (1.0 - a1) * (1.0 - a2)
                            t11 = (1.0 - c1) * (1.0 - c2)
                            t10 = (1.0 - c1) * c2
                            t01 = c1 * (1.0 - c2)
                            t00 = c1 * c2
                            r11 = m11 / (pr * s11 + qr * t11)
                            r10 = m10 / (pr * s10 + qr * t10)
                            r01 = m01 / (pr * s01 + qr * t01)
                            r00 = m00 / (pr * s00 + qr * t00)
                            G0[q] += c * (r11 * (s11 - t11) + r10 * (s10 - t10)
                                          + r01 * (s01 - t01) + r00 * (s00 - t00))
                            G[ds1, q, i] += c * pr * ((r11 - r01) * a2 + (r10 - r00) * (1.0 - a2))
                            G[ds2, q, k] += c * pr * ((r11 - r10) * a1 + (r01 - r00) * (1.0 - a1))
                            G[dc1, q, j] += c * qr * ((r01 - r11) * (1.0 - c2) + (r00 - r10) * c2)
                            G[dc2, q, l] += c * qr * ((r10 - r11) * (1.0 - c1) + (r00 - r01) * c1)
    return out
