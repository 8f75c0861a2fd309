"""Pure-numpy reference kernels.

Same signatures and semantics as the compiled ``_core`` module. Operator codes:
0 = softmax, 1 = projection onto the l2 ball, 2 = identity (raw score).
"""
import numpy as np

SOFTMAX, BALL, IDENTITY = 0, 1, 2


def _softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _apply(op, s, radius):
    if op == SOFTMAX:
        return _softmax(s)
    if op == BALL:
        norm = np.linalg.norm(s, axis=-1, keepdims=True)
        scale = np.where(norm >= radius, radius / np.maximum(norm, 1e-300), 1.0)
        return s * scale
    return s


def fol_rollout(A, b, C, dvec, rewards, noise, op, radius):
    """Perturbed policies for full-information histories.

    The score before round ``t`` is ``A sum R (R.b) + C sum R + (t-1) dvec``
    over the rewards of rounds ``< t``; the policy is
    ``Operator(score + noise[t])``.
    """
    B, T, d = rewards.shape
    quad = rewards * (rewards @ b)[..., None]
    prev_quad = np.cumsum(quad, axis=1) - quad
    prev_lin = np.cumsum(rewards, axis=1) - rewards
    n = np.arange(T, dtype=float)[None, :, None]
    scores = prev_quad @ A.T + prev_lin @ C.T + n * dvec
    return _apply(op, scores + noise, radius)


def mab_rollout(A, b, C, dvec, rewards, noise, uniforms):
    """Sequential bandit rollout with softmax policies.

    At round ``t`` the policy is ``Softmax(score + noise[t])``; the action is
    the first arm whose cumulative probability exceeds ``uniforms[t]``; only
    that arm's reward enters the history.
    """
    B, T, d = rewards.shape
    policies = np.empty((B, T, d))
    actions = np.empty((B, T), dtype=np.int64)
    quad_sum = np.zeros((B, d))
    lin_sum = np.zeros((B, d))
    rows = np.arange(B)
    for t in range(T):
        scores = quad_sum @ A.T + lin_sum @ C.T + t * dvec
        p = _softmax(scores + noise[:, t])
        policies[:, t] = p
        a = np.minimum((np.cumsum(p, axis=1) <= uniforms[:, t, None]).sum(axis=1), d - 1)
        actions[:, t] = a
        r = rewards[rows, t, a]
        # masked vector r e_a: R R^T b = r^2 b_a e_a
        quad_sum[rows, a] += r * r * b[a]
        lin_sum[rows, a] += r
    return policies, actions


def loss_and_grad(V, K, Q, vc, kc, qc, n, S1, M2, targets, op, radius):
    """Summed squared error ``sum ||Operator(score) - target||^2`` and its exact
    gradient, from per-item history statistics ``n``, ``S1 = sum R`` and
    ``M2 = sum R R^T``."""
    qt = Q.sum(axis=1) + qc
    bvec = K.T @ qt
    kcq = kc @ qt
    WR = M2 @ bvec + kcq * S1                 # sum_tau w_tau R_tau
    W = S1 @ bvec + n * kcq                   # sum_tau w_tau
    s = WR @ V.T + W[:, None] * vc
    p = _apply(op, s, radius)
    err = p - targets
    loss = float((err * err).sum())
    e = 2.0 * err
    if op == SOFTMAX:
        g = p * (e - (p * e).sum(axis=1, keepdims=True))
    elif op == BALL:
        norm = np.linalg.norm(s, axis=1, keepdims=True)
        out = (norm >= radius)[:, 0]
        g = e.copy()
        u = s[out] / norm[out]
        g[out] = (radius / norm[out]) * (e[out] - u * (u * e[out]).sum(axis=1, keepdims=True))
    else:
        g = e
    Vg = g @ V                                # V^T g per item
    vg = g @ vc
    GR = np.einsum("bij,bj->bi", M2, Vg) + vg[:, None] * S1   # sum gamma_tau R_tau
    G = (S1 * Vg).sum(axis=1) + n * vg                        # sum gamma_tau
    dV = g.T @ WR
    dvc = W @ g
    GR_sum = GR.sum(axis=0)
    G_sum = G.sum()
    dK = np.outer(qt, GR_sum)
    dkc = G_sum * qt
    dqt = K @ GR_sum + G_sum * kc
    dQ = np.outer(dqt, np.ones(Q.shape[1]))
    return loss, dV, dK, dQ, dvc, dkc, dqt
