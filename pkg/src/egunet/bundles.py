"""Spectral-bundle extraction and pseudo-label generation.

Pipeline: overlapping blocks -> per-block subspace size (HySime) and VCA ->
pooled candidate pixels -> k-means -> one real pixel per cluster, labelled
by FCLSU against C reference endmembers found by VCA on the whole image.
"""

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import io
from .baselines import fclsu, pclsu
from .data import HsiCube

log = logging.getLogger(__name__)


class ExtractionError(RuntimeError):
    pass


class DegenerateSimplexError(ExtractionError):
    pass


# ---------------------------------------------------------------------------
# blocks


@dataclass
class BlockPartition:
    block_size: int
    overlap: int
    blocks: list  # (row, col, h, w)

    def __len__(self):
        return len(self.blocks)


def _starts(n, size, stride):
    starts = list(range(0, n - size + 1, stride))
    if starts[-1] + size < n:
        starts.append(n - size)
    return starts


def partition_blocks(shape, block_size, overlap):
    """Sliding ``block_size`` windows with stride ``block_size - overlap``.

    ``shape`` is ``(H, W)``, an array or an :class:`HsiCube`; the last
    window along each axis is clamped to the image edge.
    """
    if isinstance(shape, HsiCube):
        shape = shape.data.shape
    elif isinstance(shape, np.ndarray):
        shape = shape.shape
    H, W = shape[:2]
    if overlap < 0 or block_size <= overlap:
        raise ValueError(f"need 0 <= overlap < block_size, got {overlap} and {block_size}")
    if block_size > min(H, W):
        raise ValueError(f"block_size {block_size} exceeds image {H}x{W}")
    stride = block_size - overlap
    blocks = [(r, c, block_size, block_size)
              for r in _starts(H, block_size, stride) for c in _starts(W, block_size, stride)]
    return BlockPartition(block_size, overlap, blocks)


def default_blocks(H, W, n_blocks=10, overlap_frac=0.25):
    """Largest square block giving at least ``n_blocks`` windows at the given overlap."""
    for size in range(min(H, W), 1, -1):
        overlap = int(round(overlap_frac * size))
        if len(partition_blocks((H, W), size, overlap)) >= n_blocks:
            return size, overlap
    return min(H, W), 0


# ---------------------------------------------------------------------------
# HySime


def estimate_noise(Y, ridge=1e-10):
    """Band-wise multiple-regression noise estimate.

    ``Y`` is ``B x N``. Each band is regressed on all the others; the
    residuals are the noise estimate. Returns ``(noise B x N, Rn B x B)``
    with ``Rn`` the diagonal noise correlation matrix.
    """
    B, N = Y.shape
    R = Y @ Y.T
    scale = np.trace(R) / B
    s = np.linalg.svd(R, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        warnings.warn("rank-deficient band correlation; regularizing noise regression",
                      RuntimeWarning, stacklevel=2)
    Ri = np.linalg.inv(R + ridge * max(scale, 1e-300) * np.eye(B))
    noise = np.empty_like(Y)
    for i in range(B):
        XX = Ri - np.outer(Ri[:, i], Ri[i, :]) / Ri[i, i]
        r = R[:, i].copy()
        r[i] = 0.0
        beta = XX @ r
        beta[i] = 0.0
        noise[i] = Y[i] - beta @ Y
    Rn = np.diag(np.diag(noise @ noise.T / N))
    return noise, Rn


def hysime(pixels, noise=None, ridge=1e-10):
    """Signal-subspace dimension of an ``N x B`` pixel matrix.

    Counts the eigen-directions of the signal correlation matrix whose
    projected data power exceeds twice the projected noise power, i.e.
    where keeping the direction lowers the mean-squared error.
    """
    Y = np.asarray(pixels, dtype=np.float64).T
    B, N = Y.shape
    if noise is None:
        noise, Rn = estimate_noise(Y, ridge)
    else:
        noise = np.asarray(noise, dtype=np.float64).T
        Rn = np.diag(np.diag(noise @ noise.T / N))
    Xs = Y - noise
    Ry = Y @ Y.T / N
    Rx = Xs @ Xs.T / N
    U, _, _ = np.linalg.svd(Rx)
    Rn = Rn + np.trace(Rx) / B * 1e-10 * np.eye(B)
    py = np.einsum("ij,ik,kj->j", U, Ry, U)
    pn = np.einsum("ij,ik,kj->j", U, Rn, U)
    return int(np.sum(-py + 2 * pn < 0))


# ---------------------------------------------------------------------------
# VCA


def _estimate_snr(Y, r_mean, x):
    B, N = Y.shape
    p = x.shape[0]
    py = np.sum(Y ** 2) / N
    px = np.sum(x ** 2) / N + r_mean @ r_mean
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10 * np.log10((px - p / B * py) / (py - px))


def vca(pixels, n_endmembers, rng=None, return_indices=False):
    """Vertex component analysis on an ``N x B`` pixel matrix.

    Returns the ``C x B`` selected pixels (and their row indices when
    ``return_indices``).
    """
    Y = np.asarray(pixels, dtype=np.float64).T
    B, N = Y.shape
    R = int(n_endmembers)
    rng = np.random.default_rng(rng)
    if R < 1 or R > min(N, B):
        raise DegenerateSimplexError(f"cannot extract {R} endmembers from {N} pixels x {B} bands")
    sv = np.linalg.svd(Y, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * max(B, N) * np.finfo(float).eps))
    if R > rank:
        raise DegenerateSimplexError(f"data rank {rank} is below the requested {R} endmembers")
    if R == 1:
        U = np.linalg.svd(Y @ Y.T / N)[0][:, :1]
        idx = np.array([int(np.argmax(np.abs(U.T @ Y)))])
        return (Y[:, idx].T, idx) if return_indices else Y[:, idx].T

    mean = Y.mean(axis=1, keepdims=True)
    Y0 = Y - mean
    Ud = np.linalg.svd(Y0 @ Y0.T / N)[0][:, :R]
    x_p = Ud.T @ Y0
    snr = _estimate_snr(Y, mean[:, 0], x_p)
    snr_th = 15 + 10 * np.log10(R)
    if np.isfinite(snr) and snr < snr_th:
        d = R - 1
        x = Ud[:, :d].T @ Y0
        c = np.max(np.sqrt(np.sum(x ** 2, axis=0)))
        y = np.vstack([x, c * np.ones(N)])
    else:
        Ud = np.linalg.svd(Y @ Y.T / N)[0][:, :R]
        x_p = Ud.T @ Y
        u = x_p.mean(axis=1)
        y = x_p / (u @ x_p)

    A = np.zeros((R, R))
    A[-1, 0] = 1.0
    idx = np.zeros(R, dtype=int)
    for i in range(R):
        w = rng.random(R)
        f = w - A @ np.linalg.pinv(A) @ w
        f /= np.linalg.norm(f)
        v = f @ y
        idx[i] = int(np.argmax(np.abs(v)))
        A[:, i] = y[:, idx[i]]
    out = Y[:, idx].T
    return (out, idx) if return_indices else out


# ---------------------------------------------------------------------------
# k-means


class KMeansResult(NamedTuple):
    centers: np.ndarray
    labels: np.ndarray
    inertia: list


def _sqdist(P, Q):
    d = (P * P).sum(1)[:, None] - 2 * P @ Q.T + (Q * Q).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(points, k, rng=None, max_iter=100, tol=0.0):
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are reseeded with the point farthest from its center.
    ``inertia`` records the objective after every assignment step.
    """
    P = np.asarray(points, dtype=np.float64)
    M = P.shape[0]
    if not 1 <= k <= M:
        raise ValueError(f"k must lie in [1, {M}], got {k}")
    rng = np.random.default_rng(rng)
    centers = np.empty((k, P.shape[1]))
    centers[0] = P[rng.integers(M)]
    d2 = _sqdist(P, centers[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            pick = rng.integers(M)
        else:
            pick = rng.choice(M, p=d2 / total)
        centers[j] = P[pick]
        d2 = np.minimum(d2, _sqdist(P, centers[j:j + 1])[:, 0])

    history = []
    labels = np.full(M, -1)
    for _ in range(max_iter):
        D = _sqdist(P, centers)
        new = D.argmin(axis=1)
        history.append(float(D[np.arange(M), new].sum()))
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = P[members].mean(axis=0)
            else:
                far = int(np.argmax(_sqdist(P, centers)[np.arange(M), labels]))
                centers[j] = P[far]
                labels[far] = j
        if tol and len(history) > 1 and history[-2] - history[-1] <= tol * history[-2]:
            break
    return KMeansResult(centers, labels, history)


# ---------------------------------------------------------------------------
# bundles


@dataclass
class BundleConfig:
    n_classes: int | None = None  # None -> HySime on the whole image
    block_size: int | None = None  # None -> default_blocks
    overlap: int | None = None
    n_blocks: int = 10
    overlap_frac: float = 0.25
    n_clusters: int | None = None  # None -> min(round(cluster_frac * N), candidates)
    cluster_frac: float = 0.20
    max_per_block: int | None = None  # None -> 2 * n_classes
    kmeans_max_iter: int = 100
    asc_weight: float = 1e3
    label_model: str = "fclsu"
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class EndmemberBundle:
    """Pseudo-pure signatures (``N_e x B``) with pseudo-abundance labels (``N_e x C``)."""

    signatures: np.ndarray
    labels: np.ndarray
    cluster_of: np.ndarray
    cluster_means: np.ndarray
    references: np.ndarray  # C x B
    class_of: np.ndarray  # class per signature
    pixel_index: np.ndarray  # flat pixel index of each signature
    meta: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.signatures.shape[0]

    @property
    def n_classes(self):
        return self.labels.shape[1]

    def representatives(self):
        """Per class, the bundle signature with the smallest angle to that class's reference."""
        reps = []
        for j, ref in enumerate(self.references):
            members = np.flatnonzero(self.class_of == j)
            if members.size == 0:
                members = np.arange(self.size)
            angles = [_angle(self.signatures[i], ref) for i in members]
            reps.append(self.signatures[members[int(np.argmin(angles))]])
        return np.stack(reps)


def _angle(a, b):
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def label_bundles(signatures, reference_endmembers, delta=1e3, model="fclsu"):
    """Pseudo-abundances of each signature (rows) against ``C x B`` references.

    ``model="fclsu"`` is plain fully constrained least squares. ``"scaled"``
    fits the references with a free per-signature scale (NNLS, then
    normalisation to unit sum), so a darkened or brightened pure pixel still
    gets a one-hot label.
    """
    E = np.asarray(reference_endmembers, dtype=np.float64).T
    S = np.asarray(signatures, dtype=np.float64)
    if model == "fclsu":
        return np.stack([fclsu(s, E, delta) for s in S])
    if model == "scaled":
        out = np.stack([pclsu(s, E) for s in S])
        sums = out.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise ExtractionError("scaled labelling produced an all-zero abundance row")
        return out / sums
    raise ValueError(f"unknown label model {model!r}")


def extract_bundles(cube, config=BundleConfig()):
    """Run the full bundle pipeline on ``cube``; deterministic given ``config.seed``."""
    data = cube.data if isinstance(cube, HsiCube) else np.asarray(cube, dtype=np.float64)
    H, W, B = data.shape
    X = data.reshape(-1, B)
    N = X.shape[0]
    seeds = np.random.SeedSequence(config.seed)
    vca_seed, km_seed, block_seed = seeds.spawn(3)

    C = config.n_classes
    if C is None:
        # noiseless data can push the estimate past the numerical rank
        sv = np.linalg.svd(X, compute_uv=False)
        rank = int(np.sum(sv > sv[0] * max(X.shape) * np.finfo(float).eps))
        C = min(max(hysime(X), 1), rank)
    if C < 2:
        raise ExtractionError(f"need at least 2 classes, subspace estimate gave {C}")
    refs, ref_idx = vca(X, C, np.random.default_rng(vca_seed), return_indices=True)

    if config.block_size is None:
        size, overlap = default_blocks(H, W, config.n_blocks, config.overlap_frac)
    else:
        size = config.block_size
        overlap = config.overlap if config.overlap is not None else int(round(config.overlap_frac * size))
    part = partition_blocks((H, W), size, overlap)
    cap = config.max_per_block or 2 * C
    block_rngs = [np.random.default_rng(s) for s in block_seed.spawn(len(part))]
    candidates = [ref_idx]
    for (r, c, h, w), brng in zip(part.blocks, block_rngs):
        rows, cols = np.meshgrid(np.arange(r, r + h), np.arange(c, c + w), indexing="ij")
        flat = (rows * W + cols).ravel()
        Xb = X[flat]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            k = int(np.clip(hysime(Xb), 1, cap))
        sv = np.linalg.svd(Xb, compute_uv=False)
        rank = int(np.sum(sv > sv[0] * max(Xb.shape) * np.finfo(float).eps))
        k = min(k, rank, *Xb.shape)
        _, local = vca(Xb, k, brng, return_indices=True)
        candidates.append(flat[local])
    cand = np.unique(np.concatenate(candidates))
    if cand.size < C:
        raise ExtractionError(f"only {cand.size} candidate endmembers for {C} classes")

    K = config.n_clusters or min(int(round(config.cluster_frac * N)), cand.size)
    K = int(np.clip(K, C, cand.size))
    P = X[cand]
    km = kmeans(P, K, np.random.default_rng(km_seed), config.kmeans_max_iter)
    # one real pixel per non-empty cluster: the member nearest the cluster mean
    keep_idx, cluster_of, means = [], [], []
    for j in range(K):
        members = np.flatnonzero(km.labels == j)
        if members.size == 0:
            continue
        d = _sqdist(P[members], km.centers[j:j + 1])[:, 0]
        keep_idx.append(cand[members[int(np.argmin(d))]])
        cluster_of.append(len(means))
        means.append(km.centers[j])
    means = np.stack(means)
    mean_class = np.array([int(np.argmin([_angle(m, ref) for ref in refs])) for m in means])
    pixel_index = np.array(keep_idx)
    signatures = X[pixel_index]
    cluster_of = np.array(cluster_of)
    labels = label_bundles(signatures, refs, config.asc_weight, config.label_model)
    meta = {"blocks": len(part), "block_size": size, "overlap": overlap, "candidates": int(cand.size),
            "clusters": int(len(means)), "classes": int(C)}
    log.info("bundle: %s", meta)
    return EndmemberBundle(signatures, labels, cluster_of, means, refs, mean_class[cluster_of],
                           pixel_index, meta)


def save_bundle(path, bundle, **notes):
    arrays = {
        "signatures": bundle.signatures,
        "labels": bundle.labels,
        "cluster_of": bundle.cluster_of,
        "cluster_means": bundle.cluster_means,
        "references": bundle.references,
        "class_of": bundle.class_of,
        "pixel_index": bundle.pixel_index,
    }
    return io.write_dataset(path, "bundle", arrays, N_e=int(bundle.size), B=int(bundle.signatures.shape[1]),
                            C=int(bundle.n_classes), meta=bundle.meta, **notes)


def load_bundle(path):
    header, a = io.read_dataset(path, "bundle")
    as_int = lambda v: v.astype(np.int64)  # noqa: E731
    return EndmemberBundle(a["signatures"], a["labels"], as_int(a["cluster_of"]), a["cluster_means"],
                           a["references"], as_int(a["class_of"]), as_int(a["pixel_index"]),
                           header.get("meta", {}))
