"""Slow, independent reference computations used by the tests.

Nothing here imports from ``matgpca``; every quantity is written out by
explicit loops or textbook formulas.
"""

import math

import numpy as np
from scipy import optimize


def gram_schmidt(A):
    A = np.asarray(A, dtype=float)
    Q = []
    for j in range(A.shape[1]):
        v = A[:, j].copy()
        for q in Q:
            v -= (q @ A[:, j]) * q
        for q in Q:  # second pass
            v -= (q @ v) * q
        Q.append(v / np.linalg.norm(v))
    return np.column_stack(Q)


def subspace_distance(Q1, Q2):
    """Projector-trace formula with loop-built projectors."""
    A, B = gram_schmidt(Q1), gram_schmidt(Q2)
    p = A.shape[0]
    P1 = np.zeros((p, p))
    P2 = np.zeros((p, p))
    for j in range(A.shape[1]):
        P1 += np.outer(A[:, j], A[:, j])
    for j in range(B.shape[1]):
        P2 += np.outer(B[:, j], B[:, j])
    tr = sum(P1[i, k] * P2[k, i] for i in range(p) for k in range(p))
    q = min(A.shape[1], B.shape[1])
    return math.sqrt(max(0.0, 1.0 - tr / q))


def char_poly_roots(S):
    """Eigenvalues of a symmetric matrix as roots of ``det(S - x I)`` via bracketing + Brent."""
    S = np.asarray(S, dtype=float)
    p = S.shape[0]
    radius = max(abs(S[i, i]) + sum(abs(S[i, j]) for j in range(p) if j != i) for i in range(p))
    f = lambda x: np.linalg.det(S - x * np.eye(p))
    xs = np.linspace(-radius - 1, radius + 1, 20001)
    fx = [f(x) for x in xs]
    roots = []
    for a, b, fa, fb in zip(xs, xs[1:], fx, fx[1:]):
        if fa == 0:
            roots.append(a)
        elif fa * fb < 0:
            roots.append(optimize.brentq(f, a, b, xtol=1e-14))
    return np.array(sorted(roots, reverse=True))


def residuals(X, R, C):
    T, p1, p2 = X.shape
    out = np.empty_like(X)
    for t in range(T):
        F = R.T @ X[t] @ C / (p1 * p2)
        out[t] = X[t] - R @ F @ C.T
    return out


def row_cov(E):
    T, p1, p2 = E.shape
    S = np.zeros((p1, p1))
    for t in range(T):
        for i in range(p1):
            for j in range(p1):
                S[i, j] += sum(E[t, i, l] * E[t, j, l] for l in range(p2))
    return S / (T * p2)


def row_theta(E):
    T, p1, p2 = E.shape
    U = row_cov(E)
    th = np.zeros((p1, p1))
    for t in range(T):
        for i in range(p1):
            for j in range(p1):
                for l in range(p2):
                    th[i, j] += (E[t, i, l] * E[t, j, l] - U[i, j]) ** 2
    return th / (T * p2)


def row_omega(T, p1, p2):
    return math.sqrt(math.log(p1) / (T * p2)) + 1 / math.sqrt(T * p1) + 1 / math.sqrt(p1 * p2)


def soft_threshold(S, tau):
    p = S.shape[0]
    out = np.empty_like(S)
    for i in range(p):
        for j in range(p):
            if i == j:
                out[i, j] = S[i, j]
            else:
                a = abs(S[i, j]) - tau[i, j]
                out[i, j] = math.copysign(a, S[i, j]) if a > 0 else 0.0
    return out


def factor(Xt, R, C, U, V):
    p1, p2 = Xt.shape
    Ui = np.linalg.inv(U)
    Vi = np.linalg.inv(V)
    k1, k2 = R.shape[1], C.shape[1]
    F = np.zeros((k1, k2))
    for a in range(k1):
        for b in range(k2):
            F[a, b] = sum(R[i, a] * Ui[i, j] * Xt[j, l] * Vi[l, m] * C[m, b]
                          for i in range(p1) for j in range(p1) for l in range(p2) for m in range(p2))
    return F / (p1 * p2)


def common(R, F, C):
    T, k1, k2 = F.shape
    p1, p2 = R.shape[0], C.shape[0]
    S = np.zeros((T, p1, p2))
    for t in range(T):
        for i in range(p1):
            for j in range(p2):
                S[t, i, j] = sum(R[i, a] * F[t, a, b] * C[j, b] for a in range(k1) for b in range(k2))
    return S


def mse(A, B):
    tot = 0.0
    n = 0
    for a, b in zip(np.ravel(A), np.ravel(B)):
        tot += (a - b) ** 2
        n += 1
    return tot / n
