"""Least-squares and sparse abundance solvers.

All solvers are deterministic. Column conventions: spectra are columns,
``X`` is ``B x N``, endmembers ``E`` are ``B x C``, abundances ``Y`` are
``C x N``.
"""

import warnings
from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    """An iterative solver failed to converge."""


class SolverWarning(RuntimeWarning):
    pass


@dataclass
class SolverConfig:
    asc_weight: float = 1e3
    lam: float = 1e-3
    admm_rho: float = 1e-2
    max_iter: int = 1000
    tol: float = 1e-6

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1 or self.lam < 0 or self.admm_rho <= 0:
            raise ValueError(f"invalid solver config {self}")


def nnls(A, b, max_iter=None, tol=None):
    """Lawson-Hanson active-set solution of ``min ||Ax - b||`` s.t. ``x >= 0``.

    Raises :class:`SolverError` if the outer loop exceeds ``max_iter``
    (default ``3 * n``).
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or b.shape != (A.shape[0],):
        raise ValueError(f"nnls: A {A.shape} and b {b.shape} do not conform")
    m, n = A.shape
    if max_iter is None:
        max_iter = 3 * n
    if tol is None:
        tol = (10 * np.finfo(float).eps * max(m, n) * np.linalg.norm(A, 1)
               * max(np.linalg.norm(b, np.inf), 1.0))
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    it = 0
    while not passive.all() and np.max(w[~passive]) > tol:
        if it >= max_iter:
            raise SolverError(f"nnls did not converge in {max_iter} iterations; "
                              f"KKT residual {np.max(w[~passive]):.3e}")
        it += 1
        cand = np.where(~passive, w, -np.inf)
        passive[np.argmax(cand)] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    return x


def kkt_residual(A, b, x):
    """Largest violation of the NNLS optimality conditions at ``x``."""
    g = A.T @ (A @ x - b)
    return float(max(np.max(-x, initial=0.0), np.max(-g, initial=0.0),
                     np.max(np.abs(g * x), initial=0.0)))


def _check_E(E):
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2:
        raise ValueError("endmember matrix must be B x C")
    if np.any(np.all(E == 0, axis=0)):
        raise ValueError("endmember matrix has an all-zero column")
    return E


def fclsu(pixel, E, delta=1e3):
    """Fully constrained (ANC + ASC) least-squares abundances of one pixel.

    The sum-to-one constraint is imposed by appending a ``delta``-weighted
    row of ones to ``E``; the NNLS solution is then rescaled to sum exactly
    to one.
    """
    E = _check_E(E)
    x = np.asarray(pixel, dtype=np.float64)
    A = np.vstack([E, delta * np.ones(E.shape[1])])
    a = nnls(A, np.append(x, delta))
    s = a.sum()
    if s <= 0:
        raise SolverError("fclsu produced an all-zero abundance vector")
    return a / s


def pclsu(pixel, E):
    """Nonnegative (ANC only) least-squares abundances of one pixel."""
    return nnls(_check_E(E), np.asarray(pixel, dtype=np.float64))


def unmix_pixels(X, E, method="fclsu", **kwargs):
    """Apply a per-pixel solver to every column of ``X`` (``B x N``)."""
    solver = {"fclsu": fclsu, "pclsu": pclsu}[method]
    X = np.asarray(X, dtype=np.float64)
    return np.stack([solver(X[:, i], E, **kwargs) for i in range(X.shape[1])], axis=1)


@dataclass
class SunsalResult:
    Y: np.ndarray
    converged: bool
    n_iter: int
    primal_residual: float
    dual_residual: float


def sunsal(X, E, lam=1e-3, constraints="anc+asc", rho=1e-2, max_iter=1000, tol=1e-6, Y0=None):
    """ADMM for ``min 0.5||X - EY||_F^2 + lam ||Y||_1`` under optional constraints.

    ``constraints`` is ``"none"``, ``"anc"`` or ``"anc+asc"``. The penalty
    ``rho`` adapts by residual balancing (doubled or halved when one residual
    exceeds the other tenfold). Iteration stops when both the primal
    ``||Y - Z||_F`` and dual ``rho ||Z - Z_prev||_F`` residuals drop below
    ``tol``. On non-convergence the last iterate is returned with
    ``converged=False`` and a :class:`SolverWarning`.
    """
    if constraints not in ("none", "anc", "anc+asc"):
        raise ValueError(f"unknown constraints {constraints!r}")
    if lam < 0 or rho <= 0:
        raise ValueError("need lam >= 0 and rho > 0")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    E = _check_E(E)
    C, N = E.shape[1], X.shape[1]
    anc = constraints != "none"
    asc = constraints == "anc+asc"
    EtE, EtX = E.T @ E, E.T @ X
    ones = np.ones((C, 1))

    def y_update(rhs, mu):
        Binv = np.linalg.inv(EtE + mu * np.eye(C))
        W = Binv @ rhs
        if asc:
            z = Binv @ ones
            W = W - z @ ((ones.T @ W - 1.0) / (ones.T @ z))
        return W

    if Y0 is None:
        Z = y_update(EtX, 1e-4 * max(np.trace(EtE) / C, 1e-12))
    else:
        Z = np.asarray(Y0, dtype=np.float64).copy()
    if anc:
        Z = np.maximum(Z, 0.0)
    D = np.zeros_like(Z)
    mu = rho
    r = s = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Y = y_update(EtX + mu * (Z + D), mu)
        V = Y - D
        Z_prev = Z
        Z = np.sign(V) * np.maximum(np.abs(V) - lam / mu, 0.0)
        if anc:
            Z = np.maximum(Z, 0.0)
        D = D - (Y - Z)
        r = np.linalg.norm(Y - Z)
        s = mu * np.linalg.norm(Z - Z_prev)
        if r < tol and s < tol:
            break
        if r > 10 * s:
            mu *= 2.0
            D /= 2.0
        elif s > 10 * r:
            mu /= 2.0
            D *= 2.0
    converged = bool(r < tol and s < tol)
    if not converged:
        warnings.warn(f"sunsal stopped after {it} iterations (primal {r:.2e}, dual {s:.2e})",
                      SolverWarning, stacklevel=2)
    if asc:
        sums = Z.sum(axis=0)
        Z = np.where(sums > 0, Z / np.where(sums > 0, sums, 1.0), 1.0 / C)
    return SunsalResult(Z, converged, it, float(r), float(s))


def blind_update_endmembers(X, Y, E_prev=None):
    """Nonnegative least-squares endmember update with abundances fixed.

    Solves ``min ||X - EY||_F`` s.t. ``E >= 0`` band by band. Columns that
    come out all-zero are taken from ``E_prev`` when given.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"X has {X.shape[1]} pixels, Y has {Y.shape[1]}")
    Yt = Y.T
    E = np.stack([nnls(Yt, X[b]) for b in range(X.shape[0])])
    if E_prev is not None:
        dead = np.all(E == 0, axis=0)
        E[:, dead] = np.asarray(E_prev)[:, dead]
    return E


def blind_unmix(X, E0, method="fclsu", n_outer=50, rel_tol=1e-6, lam=1e-3, **kwargs):
    """Alternate an abundance step and :func:`blind_update_endmembers`.

    Stops after ``n_outer`` rounds or when the relative change of
    ``||X - EY||_F^2`` falls below ``rel_tol``. Returns ``(E, Y)``.
    """
    X = np.asarray(X, dtype=np.float64)
    E = np.asarray(E0, dtype=np.float64).copy()
    prev = None
    Y = None
    for _ in range(n_outer):
        if method == "sunsal":
            Y = sunsal(X, E, lam=lam, Y0=Y, **kwargs).Y
        else:
            Y = unmix_pixels(X, E, method)
        E = blind_update_endmembers(X, Y, E)
        obj = float(np.sum((X - E @ Y) ** 2))
        if prev is not None and abs(prev - obj) <= rel_tol * max(prev, 1e-300):
            break
        prev = obj
    return E, Y
