# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; semantics match ``_fallback`` exactly (up to rounding)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

DEF SOFTMAX = 0
DEF BALL = 1


cdef inline void _operator(double* s, double* out, Py_ssize_t d, int op, double radius) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m, z, norm, scale
    if op == SOFTMAX:
        m = s[0]
        for i in range(1, d):
            if s[i] > m:
                m = s[i]
        z = 0.0
        for i in range(d):
            out[i] = exp(s[i] - m)
            z += out[i]
        for i in range(d):
            out[i] /= z
    elif op == BALL:
        norm = 0.0
        for i in range(d):
            norm += s[i] * s[i]
        norm = sqrt(norm)
        scale = radius / norm if norm >= radius else 1.0
        for i in range(d):
            out[i] = s[i] * scale
    else:
        for i in range(d):
            out[i] = s[i]


def fol_rollout(double[:, ::1] A, double[::1] b, double[:, ::1] C, double[::1] dvec,
                double[:, :, ::1] rewards, double[:, :, ::1] noise, int op, double radius):
    cdef Py_ssize_t B = rewards.shape[0], T = rewards.shape[1], d = rewards.shape[2]
    out = np.empty((B, T, d))
    cdef double[:, :, ::1] pol = out
    cdef double[::1] quad = np.empty(d), lin = np.empty(d), s = np.empty(d)
    cdef Py_ssize_t k, t, i, j
    cdef double rb, acc
    with nogil:
        for k in range(B):
            for i in range(d):
                quad[i] = 0.0
                lin[i] = 0.0
            for t in range(T):
                for i in range(d):
                    acc = t * dvec[i] + noise[k, t, i]
                    for j in range(d):
                        acc = acc + A[i, j] * quad[j] + C[i, j] * lin[j]
                    s[i] = acc
                _operator(&s[0], &pol[k, t, 0], d, op, radius)
                rb = 0.0
                for i in range(d):
                    rb += rewards[k, t, i] * b[i]
                for i in range(d):
                    quad[i] += rewards[k, t, i] * rb
                    lin[i] += rewards[k, t, i]
    return out


def mab_rollout(double[:, ::1] A, double[::1] b, double[:, ::1] C, double[::1] dvec,
                double[:, :, ::1] rewards, double[:, :, ::1] noise, double[:, ::1] uniforms):
    cdef Py_ssize_t B = rewards.shape[0], T = rewards.shape[1], d = rewards.shape[2]
    out = np.empty((B, T, d))
    act = np.empty((B, T), dtype=np.int64)
    cdef double[:, :, ::1] pol = out
    cdef long long[:, ::1] acts = act
    cdef double[::1] quad = np.empty(d), lin = np.empty(d), s = np.empty(d)
    cdef Py_ssize_t k, t, i, j, a
    cdef double acc, cum, r
    with nogil:
        for k in range(B):
            for i in range(d):
                quad[i] = 0.0
                lin[i] = 0.0
            for t in range(T):
                for i in range(d):
                    acc = t * dvec[i] + noise[k, t, i]
                    for j in range(d):
                        acc = acc + A[i, j] * quad[j] + C[i, j] * lin[j]
                    s[i] = acc
                _operator(&s[0], &pol[k, t, 0], d, SOFTMAX, 1.0)
                # first arm whose cumulative probability exceeds the uniform draw
                a = 0
                cum = 0.0
                for i in range(d):
                    cum = cum + pol[k, t, i]
                    if cum <= uniforms[k, t]:
                        a += 1
                if a > d - 1:
                    a = d - 1
                acts[k, t] = a
                r = rewards[k, t, a]
                quad[a] += r * r * b[a]
                lin[a] += r
    return out, act


def loss_and_grad(double[:, ::1] V, double[:, ::1] K, double[:, ::1] Q, double[::1] vc,
                  double[::1] kc, double[::1] qc, double[::1] n, double[:, ::1] S1,
                  double[:, :, ::1] M2, double[:, ::1] targets, int op, double radius):
    cdef Py_ssize_t Bn = S1.shape[0], d = S1.shape[1]
    cdef Py_ssize_t k, i, j
    dV_ = np.zeros((d, d))
    dvc_ = np.zeros(d)
    cdef double[:, ::1] dV = dV_
    cdef double[::1] dvc = dvc_
    cdef double[::1] qt = np.empty(d), bvec = np.empty(d), WR = np.empty(d), s = np.empty(d)
    cdef double[::1] p = np.empty(d), e = np.empty(d), g = np.empty(d), Vg = np.empty(d)
    cdef double[::1] GR_sum = np.zeros(d)
    cdef double kcq = 0.0, W, loss = 0.0, acc, pe, norm, vg, G, G_sum = 0.0, ue, sc
    with nogil:
        for i in range(d):
            acc = qc[i]
            for j in range(d):
                acc = acc + Q[i, j]
            qt[i] = acc
        for i in range(d):
            kcq += kc[i] * qt[i]
        for j in range(d):
            acc = 0.0
            for i in range(d):
                acc = acc + K[i, j] * qt[i]
            bvec[j] = acc
        for k in range(Bn):
            W = n[k] * kcq
            for i in range(d):
                acc = kcq * S1[k, i]
                for j in range(d):
                    acc = acc + M2[k, i, j] * bvec[j]
                WR[i] = acc
                W += S1[k, i] * bvec[i]
            for i in range(d):
                acc = W * vc[i]
                for j in range(d):
                    acc = acc + V[i, j] * WR[j]
                s[i] = acc
            _operator(&s[0], &p[0], d, op, radius)
            for i in range(d):
                e[i] = p[i] - targets[k, i]
                loss += e[i] * e[i]
                e[i] = 2.0 * e[i]
            if op == SOFTMAX:
                pe = 0.0
                for i in range(d):
                    pe += p[i] * e[i]
                for i in range(d):
                    g[i] = p[i] * (e[i] - pe)
            elif op == BALL:
                norm = 0.0
                for i in range(d):
                    norm += s[i] * s[i]
                norm = sqrt(norm)
                if norm >= radius:
                    ue = 0.0
                    for i in range(d):
                        ue += s[i] * e[i]
                    ue /= norm
                    sc = radius / norm
                    for i in range(d):
                        g[i] = sc * (e[i] - s[i] / norm * ue)
                else:
                    for i in range(d):
                        g[i] = e[i]
            else:
                for i in range(d):
                    g[i] = e[i]
            vg = 0.0
            for i in range(d):
                vg += g[i] * vc[i]
                dvc[i] += W * g[i]
                for j in range(d):
                    dV[i, j] += g[i] * WR[j]
            for j in range(d):
                acc = 0.0
                for i in range(d):
                    acc = acc + g[i] * V[i, j]
                Vg[j] = acc
            G = n[k] * vg
            for i in range(d):
                acc = vg * S1[k, i]
                for j in range(d):
                    acc = acc + M2[k, i, j] * Vg[j]
                GR_sum[i] += acc
                G += S1[k, i] * Vg[i]
            G_sum += G
    dK = np.outer(qt, GR_sum)
    dkc = G_sum * np.asarray(qt)
    dqt = np.asarray(K) @ np.asarray(GR_sum) + G_sum * np.asarray(kc)
    dQ = np.outer(dqt, np.ones(Q.shape[1]))
    return loss, dV_, dK, dQ, dvc_, dkc, dqt
