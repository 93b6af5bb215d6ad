"""Dense primal active-set solver for small strictly convex QPs.

    minimise 1/2 x'Hx + g'x   subject to   G x <= h

Needs a feasible starting point. Each iteration solves the equality-constrained
subproblem on the working set through its KKT system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QpError(RuntimeError):
    pass


@dataclass
class QpSolution:
    x: np.ndarray
    active: list
    multipliers: np.ndarray
    iterations: int


def solve_active_set(H, g, G, h, x0, tol: float = 1e-10, max_iter: int = 500) -> QpSolution:
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, len(g))
    h = np.asarray(h, dtype=float)
    x = np.array(x0, dtype=float)
    n = len(x)
    scale = max(1.0, np.abs(h).max(initial=0.0))
    if np.any(G @ x - h > 1e-8 * scale):
        raise QpError("starting point is infeasible")

    W: list[int] = []
    mu = np.zeros(0)
    for it in range(max_iter):
        grad = H @ x + g
        k = len(W)
        if k:
            Gw = G[W]
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = H
            kkt[:n, n:] = Gw.T
            kkt[n:, :n] = Gw
            rhs = np.concatenate([-grad, np.zeros(k)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            p, mu = sol[:n], sol[n:]
        else:
            p = np.linalg.solve(H, -grad)
            mu = np.zeros(0)

        if np.linalg.norm(p) <= tol * (1.0 + np.linalg.norm(x)):
            if k == 0 or mu.min() >= -tol * (1.0 + np.abs(grad).max()):
                return QpSolution(x, sorted(W), _full_multipliers(mu, W, len(h)), it)
            W.pop(int(np.argmin(mu)))
            continue

        Gp = G @ p
        slack = h - G @ x
        alpha, block = 1.0, None
        for i in np.flatnonzero(Gp > 1e-14):
            if i in W:
                continue
            ratio = max(slack[i], 0.0) / Gp[i]
            if ratio < alpha:
                alpha, block = ratio, int(i)
        x = x + alpha * p
        if block is not None:
            W.append(block)
    raise QpError(f"active set did not terminate in {max_iter} iterations")


def _full_multipliers(mu, W, m):
    out = np.zeros(m)
    if len(W):
        out[W] = mu
    return out
