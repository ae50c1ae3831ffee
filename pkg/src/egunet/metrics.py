"""Endmember recovery from abundances and unmixing accuracy metrics.

Abundances are ``C x N`` (classes by pixels), endmembers ``B x C``. Angles
are in radians; :func:`sad_percent` gives the ``100 * angle / (pi/2)``
convention used for percentage tables.
"""

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baselines import nnls
from .data import EndmemberMatrix


def recover_endmembers(X, Y, ridge=1e-8, class_names=None):
    """Nonnegative least-squares endmembers for fixed abundances.

    Solves ``min ||X - EY||_F`` s.t. ``E >= 0`` one band at a time. If ``Y``
    is rank deficient a ridge term is appended and a warning issued.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    C = Y.shape[0]
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"X has {X.shape[1]} pixels, Y has {Y.shape[1]}")
    A = Y.T
    if np.linalg.matrix_rank(Y) < C:
        warnings.warn("abundance matrix is rank deficient; using ridge-regularized fit",
                      RuntimeWarning, stacklevel=2)
        A = np.vstack([A, np.sqrt(ridge) * np.eye(C)])
        rows = [np.append(x, np.zeros(C)) for x in X]
    else:
        rows = list(X)
    E = np.stack([nnls(A, r) for r in rows])
    return EndmemberMatrix(E, class_names or [])


def armse(Y_true, Y_est):
    """Mean over pixels of the per-pixel RMSE across classes."""
    Y_true = np.asarray(Y_true, dtype=np.float64)
    Y_est = np.asarray(Y_est, dtype=np.float64)
    if Y_true.shape != Y_est.shape:
        raise ValueError(f"shape mismatch {Y_true.shape} vs {Y_est.shape}")
    return float(np.mean(np.sqrt(np.mean((Y_true - Y_est) ** 2, axis=0))))


def sad(e, e_hat):
    """Spectral angle (radians) between two nonzero spectra."""
    e = np.asarray(e, dtype=np.float64)
    e_hat = np.asarray(e_hat, dtype=np.float64)
    ne, nh = np.linalg.norm(e), np.linalg.norm(e_hat)
    if ne == 0 or nh == 0:
        raise ValueError("spectral angle is undefined for a zero vector")
    return float(np.arccos(np.clip(e @ e_hat / (ne * nh), -1.0, 1.0)))


def sad_matrix(E_true, E_est):
    """``S[i, j]`` = angle between true column i and estimated column j."""
    E_true = np.asarray(E_true, dtype=np.float64)
    E_est = np.asarray(E_est, dtype=np.float64)
    return np.array([[sad(E_true[:, i], E_est[:, j]) for j in range(E_est.shape[1])]
                     for i in range(E_true.shape[1])])


def sad_percent(angle):
    return 100.0 * np.asarray(angle) / (np.pi / 2)


def _assign(cost):
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=int)
    perm[rows] = cols
    return perm


def asad(E_true, E_est):
    """Mean spectral angle after optimal column matching.

    Returns ``(asad, per_class, perm)`` where ``E_est[:, perm[j]]`` is matched
    to true class ``j``.
    """
    E_true = np.asarray(E_true, dtype=np.float64)
    E_est = np.asarray(E_est, dtype=np.float64)
    if E_true.shape[1] != E_est.shape[1]:
        raise ValueError(f"class counts differ: {E_true.shape[1]} vs {E_est.shape[1]}")
    S = sad_matrix(E_true, E_est)
    perm = _assign(S)
    per_class = S[np.arange(len(perm)), perm]
    return float(per_class.mean()), per_class, perm


def class_rmse_matrix(Y_true, Y_est):
    diff = np.asarray(Y_true)[:, None, :] - np.asarray(Y_est)[None, :, :]
    return np.sqrt(np.mean(diff ** 2, axis=2))


def align_abundances(Y_true, Y_est):
    """Row-permute ``Y_est`` to minimize the summed per-class RMSE against ``Y_true``.

    Returns ``(Y_aligned, perm)`` with ``Y_aligned[j] = Y_est[perm[j]]``.
    """
    Y_true = np.asarray(Y_true, dtype=np.float64)
    Y_est = np.asarray(Y_est, dtype=np.float64)
    if Y_true.shape != Y_est.shape:
        raise ValueError(f"shape mismatch {Y_true.shape} vs {Y_est.shape}")
    perm = _assign(class_rmse_matrix(Y_true, Y_est))
    return Y_est[perm], perm


@dataclass
class EvalReport:
    armse: float
    sad_per_class: list
    asad: float
    permutation: list
    abundance_permutation: list

    def to_dict(self):
        d = asdict(self)
        d["sad_percent_per_class"] = [float(v) for v in sad_percent(self.sad_per_class)]
        d["asad_percent"] = float(sad_percent(self.asad))
        return d


def _asad_or_nan(E_true, E_est):
    """:func:`asad`, but an all-zero estimated column scores NaN instead of raising.

    A class whose estimated abundance is zero everywhere yields a zero
    endmember. It is matched last (cost pi/2, the widest angle between
    nonnegative spectra) and its angle is reported as NaN.
    """
    E_est = np.asarray(E_est, dtype=np.float64)
    dead = np.all(E_est == 0, axis=0)
    if not dead.any():
        return asad(E_true, E_est)
    warnings.warn(f"estimated endmembers {np.flatnonzero(dead).tolist()} are zero; their angles are NaN",
                  RuntimeWarning, stacklevel=3)
    E_true = np.asarray(E_true, dtype=np.float64)
    if E_true.shape[1] != E_est.shape[1]:
        raise ValueError(f"class counts differ: {E_true.shape[1]} vs {E_est.shape[1]}")
    S = np.full((E_true.shape[1], E_est.shape[1]), np.nan)
    S[:, ~dead] = sad_matrix(E_true, E_est[:, ~dead])
    perm = _assign(np.where(np.isnan(S), np.pi / 2, S))
    per_class = S[np.arange(len(perm)), perm]
    return float(per_class.mean()), per_class, perm


def evaluate(Y_true, Y_est, E_true=None, E_est=None):
    """Full report. Abundances ``C x N``; endmember terms are NaN when not given."""
    Y_al, yperm = align_abundances(Y_true, Y_est)
    if E_true is not None and E_est is not None:
        a, per, perm = _asad_or_nan(E_true, E_est)
    else:
        C = np.shape(Y_true)[0]
        a, per, perm = float("nan"), np.full(C, np.nan), yperm
    return EvalReport(armse(Y_true, Y_al), [float(v) for v in per], float(a),
                      [int(p) for p in perm], [int(p) for p in yperm])
