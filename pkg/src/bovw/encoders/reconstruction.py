"""Reconstruction encoders: codes that reconstruct the descriptor from the codebook.

Every encoder solves a variant of ``min_s ||x - D s||^2 + lambda * psi(s)``
where the columns of ``D`` are the codewords.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..codebook import Codebook
from ..errors import ConfigurationError
from ._common import as_batch, nearest, unbatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconConfig:
    lam: float = 0.15
    k: int = 5
    sigma: float = 1.0
    max_solver_iters: int = 2000
    solver_tol: float = 1e-10
    ridge: float = 1e-4

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be non-negative, got {self.lam}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")


@dataclass
class SolverResult:
    code: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    converged: bool = True


# --- OMP -------------------------------------------------------------------


def omp(x: np.ndarray, dictionary: np.ndarray, k: int, tol: float) -> tuple[np.ndarray, list]:
    """Orthogonal matching pursuit for one descriptor.

    ``dictionary`` is K x D (codewords as rows). Returns the code and the
    residual norm after each added atom.
    """
    K = dictionary.shape[0]
    norms = np.linalg.norm(dictionary, axis=1)
    usable = norms > 0
    s = np.zeros(K)
    residual = x.copy()
    active: list[int] = []
    coef = np.zeros(0)
    history = [float(np.linalg.norm(residual))]
    while len(active) < min(k, K) and history[-1] >= tol:
        corr = np.zeros(K)
        corr[usable] = np.abs(dictionary[usable] @ residual) / norms[usable]
        corr[active] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= 0:
            break
        A = dictionary[active + [j]].T
        sol, _, rank, _ = np.linalg.lstsq(A, x, rcond=None)
        if rank < A.shape[1]:
            log.info("OMP: active set became rank deficient at %d atoms; stopping", len(active) + 1)
            break
        active.append(j)
        coef = sol
        residual = x - A @ coef
        history.append(float(np.linalg.norm(residual)))
    s[active] = coef
    return s, history


def encode_omp(x: np.ndarray, cb: Codebook, cfg: ReconConfig = ReconConfig()) -> np.ndarray:
    """At most ``cfg.k`` atoms chosen greedily by normalised correlation with the residual."""
    xb, single = as_batch(x, cb.dim)
    out = np.zeros((len(xb), cb.size))
    for n, row in enumerate(xb):
        out[n], _ = omp(row, cb.centroids, cfg.k, cfg.solver_tol)
    return unbatch(out, single)


# --- proximal gradient machinery ---------------------------------------------


def _mfista(quad, lin, const, penalty, prox, s0, max_iters, tol) -> SolverResult:
    """Monotone FISTA with backtracking for ``s^T Q s - 2 b^T s + c + penalty(s)``.

    ``prox(v, step)`` must return the exact proximal point of ``step * penalty``
    (including any constraint). The accepted objective never increases.
    """

    def smooth(s):
        Qs = quad @ s
        return float(s @ Qs - 2.0 * lin @ s + const), 2.0 * (Qs - lin)

    s = s0.copy()
    F = smooth(s)[0] + penalty(s)
    history = [F]
    # Lower bound on the Lipschitz constant; backtracking raises it as needed.
    L = max(2.0 * float(np.max(np.diag(quad))), 1e-12)
    y, t, s_prev = s.copy(), 1.0, s.copy()
    at_iterate = True  # y == s, so the next step is a plain proximal-gradient step
    converged = False
    # stationarity is measured by the gradient mapping L * (y - prox(y - grad / L))
    grad_scale = max(1.0, 2.0 * float(np.linalg.norm(lin)))
    for _ in range(max_iters):
        fy, gy = smooth(y)
        while True:
            z = prox(y - gy / L, 1.0 / L)
            dz = z - y
            fz = smooth(z)[0]
            if fz <= fy + gy @ dz + 0.5 * L * (dz @ dz) + 1e-12 * max(1.0, abs(fy)):
                break
            L *= 2.0
        Fz = fz + penalty(z)
        if at_iterate and Fz >= F:
            # a backtracked proximal step from s cannot descend: s is optimal to rounding
            converged = True
            break
        s_prev = s
        if Fz <= F:
            s, F_new = z, Fz
        else:
            F_new = F
        if Fz > F or float(dz @ (z - s_prev)) < 0.0:
            # adaptive restart: drop the momentum when it stops helping
            y, t, at_iterate = s.copy(), 1.0, True
        else:
            at_iterate = False
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = s + (t / t_next) * (z - s) + ((t - 1.0) / t_next) * (s - s_prev)
            t = t_next
        change = F - F_new
        F = F_new
        history.append(F)
        stationary = L * float(np.linalg.norm(dz)) <= tol * grad_scale
        if change <= tol * max(1.0, abs(F)) and stationary:
            converged = True
            break
    return SolverResult(code=s, objective=F, history=history, converged=converged)


def soft_threshold(v: np.ndarray, tau) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def affine_weighted_shrink(v: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Exact ``argmin_s 0.5||s - v||^2 + sum_k tau_k |s_k|`` subject to ``sum(s) = 1``.

    The solution is ``soft(v - nu, tau)`` for the scalar ``nu`` that restores
    the constraint. ``sum(soft(v - nu, tau))`` is piecewise linear and
    decreasing in ``nu``, so ``nu`` is located between breakpoints by bisection
    and then solved for exactly on that linear piece.
    """
    def total(nu):
        return float(np.sum(soft_threshold(v - nu, tau)))

    bps = np.sort(np.concatenate([v - tau, v + tau]))
    lo, hi = 0, len(bps) - 1
    if total(bps[0]) <= 1.0:
        probe = bps[0] - 1.0
    elif total(bps[-1]) >= 1.0:
        probe = bps[-1] + 1.0
    else:
        # invariant: total(bps[lo]) > 1 >= total(bps[hi])
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if total(bps[mid]) > 1.0:
                lo = mid
            else:
                hi = mid
        probe = 0.5 * (bps[lo] + bps[hi])
    pos = v - probe > tau
    neg = v - probe < -tau
    active = pos | neg
    if not np.any(active):
        # flat piece at zero cannot meet the constraint; only reachable by rounding
        probe = bps[hi]
        pos, neg = v - probe >= tau, v - probe <= -tau
        active = pos | neg
    nu = (np.sum(v[active]) - np.sum(tau[pos]) + np.sum(tau[neg]) - 1.0) / np.count_nonzero(active)
    s = np.zeros_like(v)
    s[pos] = v[pos] - nu - tau[pos]
    s[neg] = v[neg] - nu + tau[neg]
    s[active] += (1.0 - s.sum()) / np.count_nonzero(active)
    return s


# --- SPC -----------------------------------------------------------------------


def solve_spc(x: np.ndarray, cb: Codebook, cfg: ReconConfig = ReconConfig(), gram=None) -> SolverResult:
    """Minimise ``||x - D s||^2 + lam * ||s||_1`` for a single descriptor."""
    if cfg.lam <= 0:
        raise ConfigurationError("sparse coding needs lambda > 0")
    Dm = cb.centroids
    G = Dm @ Dm.T if gram is None else gram
    b = Dm @ x
    lam = cfg.lam
    res = _mfista(
        G, b, float(x @ x),
        penalty=lambda s: lam * float(np.abs(s).sum()),
        prox=lambda v, step: soft_threshold(v, lam * step),
        s0=np.zeros(cb.size),
        max_iters=cfg.max_solver_iters,
        tol=cfg.solver_tol,
    )
    polished = _polish_lasso(G, b, float(x @ x), lam, res.code, max_steps=cfg.max_solver_iters)
    if polished is not None and polished[1] <= res.objective:
        res.code, res.objective, res.converged = polished[0], polished[1], True
        res.history.append(polished[1])
    if not res.converged:
        log.info("SPC: no convergence in %d iterations", cfg.max_solver_iters)
    return res


def _polish_lasso(G, b, const, lam, s, max_steps=200, kkt_tol=1e-9):
    """Feature-sign active-set search warm-started at ``s``.

    On a fixed sign pattern the objective is quadratic, so each step jumps to
    the stationary point of that quadratic and then backs off to the best
    sign change along the way. Returns ``(code, objective)`` once the
    optimality conditions hold to ``kkt_tol``, or None if they never do.
    """
    scale = max(1.0, float(np.abs(b).max()))

    def objective(v):
        return float(v @ G @ v - 2.0 * b @ v + const + lam * np.abs(v).sum())

    x = s.copy()
    fx = objective(x)
    for _ in range(max_steps):
        grad = 2.0 * (G @ x - b)
        active = x != 0
        sign = np.sign(x)
        inner = np.abs(grad[active] + lam * sign[active])
        if inner.size == 0 or inner.max() <= kkt_tol * scale:
            # nonzero part is optimal; pull in the worst inactive violator
            viol = np.where(active, 0.0, np.abs(grad) - lam)
            j = int(np.argmax(viol))
            if viol[j] <= kkt_tol * scale:
                return x, fx
            sign[j] = -np.sign(grad[j])
            active[j] = True
        A = np.flatnonzero(active)
        GA = G[np.ix_(A, A)]
        rhs = b[A] - 0.5 * lam * sign[A]
        target, *_ = np.linalg.lstsq(GA, rhs, rcond=None)
        start = x[A]
        resid = rhs - GA @ target
        if np.linalg.norm(resid) > 1e-10 * scale:
            # singular reduced problem: the quadratic falls along the null
            # direction ``resid`` until some coefficient reaches zero
            d, t_max, cands = resid, np.inf, []
        else:
            d, t_max, cands = target - start, 1.0, [(1.0, None)]
        # every zero crossing on the way is a candidate too
        for k in np.flatnonzero((start != 0) & (d != 0)):
            t = -start[k] / d[k]
            if 0.0 < t <= t_max:
                cands.append((t, k))
        best, best_f = None, fx
        for t, k in cands:
            cand = x.copy()
            cand[A] = start + t * d
            if k is not None:
                cand[A[k]] = 0.0
            fc = objective(cand)
            if fc < best_f:
                best, best_f = cand, fc
        if best is None:
            return None
        x, fx = best, objective(best)
    return None


def encode_spc(x: np.ndarray, cb: Codebook, cfg: ReconConfig = ReconConfig()) -> np.ndarray:
    xb, single = as_batch(x, cb.dim)
    G = cb.centroids @ cb.centroids.T
    out = np.stack([solve_spc(row, cb, cfg, gram=G).code for row in xb])
    return unbatch(out, single)


def spc_objective(x: np.ndarray, cb: Codebook, s: np.ndarray, lam: float) -> float:
    r = x - cb.centroids.T @ s
    return float(r @ r + lam * np.abs(s).sum())


# --- LCC -----------------------------------------------------------------------


def solve_lcc(x: np.ndarray, cb: Codebook, cfg: ReconConfig = ReconConfig(), gram=None) -> SolverResult:
    """Minimise ``||x - D s||^2 + lam * sum_k dist(x, d_k) |s_k|`` subject to ``sum(s) = 1``.

    Starts from the one-hot code at the nearest codeword, which is feasible.
    """
    if cfg.lam <= 0:
        raise ConfigurationError("local coordinate coding needs lambda > 0")
    Dm = cb.centroids
    G = Dm @ Dm.T if gram is None else gram
    b = Dm @ x
    dist = np.sqrt(np.maximum(np.sum((Dm - x) ** 2, axis=1), 0.0))
    weights = cfg.lam * dist
    s0 = np.zeros(cb.size)
    s0[int(np.argmin(dist))] = 1.0
    res = _mfista(
        G, b, float(x @ x),
        penalty=lambda s: float(weights @ np.abs(s)),
        prox=lambda v, step: affine_weighted_shrink(v, weights * step),
        s0=s0,
        max_iters=cfg.max_solver_iters,
        tol=cfg.solver_tol,
    )
    if not res.converged:
        log.info("LCC: no convergence in %d iterations", cfg.max_solver_iters)
    return res


def encode_lcc(x: np.ndarray, cb: Codebook, cfg: ReconConfig = ReconConfig()) -> np.ndarray:
    xb, single = as_batch(x, cb.dim)
    G = cb.centroids @ cb.centroids.T
    out = np.stack([solve_lcc(row, cb, cfg, gram=G).code for row in xb])
    return unbatch(out, single)


def lcc_objective(x: np.ndarray, cb: Codebook, s: np.ndarray, lam: float) -> float:
    r = x - cb.centroids.T @ s
    dist = np.linalg.norm(cb.centroids - x, axis=1)
    return float(r @ r + lam * dist @ np.abs(s))


# --- LLC -----------------------------------------------------------------------


def encode_llc(x: np.ndarray, cb: Codebook, cfg: ReconConfig = ReconConfig()) -> np.ndarray:
    """Approximate LLC on the ``cfg.k`` nearest codewords.

    Solves ``min_w ||x - B^T w||^2`` with ``sum(w) = 1`` via the local
    covariance ``C = (B - x)(B - x)^T`` regularised by ``ridge * trace(C)``.
    A descriptor that coincides with one of its neighbours is coded exactly
    as a one-hot vector on that neighbour.
    """
    xb, single = as_batch(x, cb.dim)
    k = min(cfg.k, cb.size)
    idx, d2 = nearest(xb, cb.centroids, k)
    z = cb.centroids[idx] - xb[:, None, :]  # N x k x D
    C = z @ np.swapaxes(z, 1, 2)
    tr = np.trace(C, axis1=1, axis2=2)
    reg = cfg.ridge * tr + np.finfo(float).tiny
    C = C + reg[:, None, None] * np.eye(k)[None]
    w = np.linalg.solve(C, np.ones((len(xb), k, 1)))[:, :, 0]
    w /= w.sum(axis=1, keepdims=True)
    exact = d2[:, 0] == 0.0
    if np.any(exact):
        w[exact] = 0.0
        w[exact, 0] = 1.0
    s = np.zeros((len(xb), cb.size))
    np.put_along_axis(s, idx, w, axis=1)
    return unbatch(s, single)


def encode_llc_exact(x: np.ndarray, cb: Codebook, cfg: ReconConfig = ReconConfig()) -> np.ndarray:
    """Reference LLC over the full codebook with the exponential locality adaptor.

    Minimises ``||x - D s||^2 + lam * ||e * s||^2`` subject to ``sum(s) = 1``
    where ``e = exp(dist(x, D) / sigma)``.
    """
    xb, single = as_batch(x, cb.dim)
    out = np.zeros((len(xb), cb.size))
    for n, row in enumerate(xb):
        z = cb.centroids - row
        C = z @ z.T
        dist = np.sqrt(np.maximum(np.sum(z * z, axis=1), 0.0))
        e2 = np.exp(np.minimum(2.0 * dist / cfg.sigma, 700.0))
        A = C + cfg.lam * np.diag(e2)
        A += (cfg.ridge * np.trace(A) + np.finfo(float).tiny) * np.eye(cb.size) * (cfg.lam == 0)
        w = np.linalg.solve(A, np.ones(cb.size))
        out[n] = w / w.sum()
    return unbatch(out, single)
