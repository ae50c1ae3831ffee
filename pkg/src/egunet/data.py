"""Hyperspectral data types, synthetic scenes and ground-truth utilities."""

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import io
from .nn import softmax


@dataclass
class HsiCube:
    """An ``H x W x B`` reflectance image."""

    data: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] < 2:
            raise ValueError(f"cube must be H x W x B with B >= 2, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube contains non-finite values")
        if self.wavelengths is not None:
            self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
            if self.wavelengths.shape != (self.bands,) or np.any(np.diff(self.wavelengths) <= 0):
                raise ValueError("wavelengths must be strictly increasing, one per band")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]

    def pixels(self):
        """``N x B`` pixel matrix, row-major pixel order."""
        return self.data.reshape(-1, self.bands)


@dataclass
class EndmemberMatrix:
    """``B x C`` endmember signatures as columns."""

    E: np.ndarray
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=np.float64)
        if not self.class_names:
            self.class_names = [f"em{j + 1}" for j in range(self.E.shape[1])]
        if len(self.class_names) != self.E.shape[1]:
            raise ValueError("one class name per endmember column required")


def check_abundances(A, atol=1e-6):
    """True when every vector along the last axis is >= 0 and sums to one."""
    A = np.asarray(A)
    return bool(np.all(A >= -1e-12) and np.all(np.abs(A.sum(axis=-1) - 1.0) <= atol))


# ---------------------------------------------------------------------------
# synthetic scene


@dataclass
class SceneSpec:
    """Parameters of a synthetic linear-mixture scene with spectral variability.

    ``scale_range=None`` disables per-pixel scaling, ``snr_db=None`` disables
    Gaussian noise, ``impulse_fraction=0`` disables salt noise. Pixels whose
    largest abundance reaches ``purity_threshold`` are snapped to pure.
    """

    H: int = 50
    W: int = 50
    B: int = 100
    C: int = 4
    smoothness: float = 4.0
    temperature: float = 0.35
    purity_threshold: float | None = 0.95
    scale_range: tuple | None = (0.75, 1.25)
    snr_db: float | None = 30.0
    impulse_fraction: float = 0.005
    impulse_value: float = 1.0
    min_sad: float = 0.08

    def validate(self):
        if min(self.H, self.W) < 1 or self.B < 2:
            raise ValueError("scene needs H, W >= 1 and B >= 2")
        if not 2 <= self.C <= 8:
            raise ValueError("scene supports 2 <= C <= 8")
        if self.scale_range is not None and not 0 < self.scale_range[0] <= self.scale_range[1]:
            raise ValueError("scale_range must satisfy 0 < lo <= hi")
        if self.snr_db is not None and self.snr_db <= 0:
            raise ValueError("snr_db must be positive")
        if not 0 <= self.impulse_fraction < 1:
            raise ValueError("impulse_fraction must lie in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class Scene:
    cube: HsiCube
    abundances: np.ndarray
    endmembers: EndmemberMatrix
    scales: np.ndarray


def _sad(a, b):
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def synthetic_endmembers(B, C, rng, min_sad=0.08, wavelengths=None):
    """Smooth continua with Gaussian absorption bands, pairwise SAD >= ``min_sad``."""
    wl = np.linspace(0.4, 2.5, B) if wavelengths is None else np.asarray(wavelengths)
    out = []
    for _ in range(1000 * C):
        level = rng.uniform(0.15, 0.45)
        slope = rng.uniform(-0.12, 0.15)
        cont = level + slope * (wl - 0.4) / 2.1
        for _ in range(2):
            cont = cont + rng.uniform(-0.08, 0.12) * np.exp(-0.5 * ((wl - rng.uniform(0.4, 2.5)) / rng.uniform(0.3, 0.8)) ** 2)
        depth = np.ones_like(wl)
        for _ in range(rng.integers(2, 6)):
            depth -= rng.uniform(0.05, 0.45) * np.exp(-0.5 * ((wl - rng.uniform(0.45, 2.45)) / rng.uniform(0.02, 0.12)) ** 2)
        e = np.clip(cont * depth, 0.02, 0.7)
        if all(_sad(e, f) >= min_sad for f in out):
            out.append(e)
            if len(out) == C:
                return np.stack(out, axis=1), wl
    raise ValueError(f"could not draw {C} endmembers with pairwise SAD >= {min_sad}")


def smooth_abundances(H, W, C, rng, smoothness=4.0, temperature=0.35, purity_threshold=0.95):
    """Gaussian random fields per class pushed through a tempered softmax."""
    fields = np.stack([gaussian_filter(rng.standard_normal((H, W)), smoothness, mode="wrap")
                       for _ in range(C)], axis=-1)
    fields /= fields.std(axis=(0, 1), keepdims=True) + 1e-300
    A = softmax(fields / temperature, axis=-1)
    if purity_threshold is not None:
        top = A.max(axis=-1)
        pure = top >= purity_threshold
        A[pure] = np.eye(C)[A[pure].argmax(axis=-1)]
    return A


def generate_scene(spec=SceneSpec(), rng=0):
    """Draw a scene ``X = s * (E a) + noise`` and its ground truth."""
    spec.validate()
    rng = np.random.default_rng(rng)
    E, wl = synthetic_endmembers(spec.B, spec.C, rng, spec.min_sad)
    A = smooth_abundances(spec.H, spec.W, spec.C, rng, spec.smoothness, spec.temperature,
                          spec.purity_threshold)
    clean = A @ E.T
    if spec.scale_range is not None:
        scales = rng.uniform(spec.scale_range[0], spec.scale_range[1], size=(spec.H, spec.W))
    else:
        scales = np.ones((spec.H, spec.W))
    signal = clean * scales[..., None]
    X = signal.copy()
    if spec.snr_db is not None:
        sigma = np.sqrt(np.mean(signal ** 2) / 10 ** (spec.snr_db / 10))
        X += sigma * rng.standard_normal(X.shape)
    if spec.impulse_fraction > 0:
        hit = rng.random(X.shape) < spec.impulse_fraction
        X[hit] = spec.impulse_value
    names = [f"em{j + 1}" for j in range(spec.C)]
    return Scene(HsiCube(X, wl), A, EndmemberMatrix(E, names), scales)


# ---------------------------------------------------------------------------
# ground-truth chain from a high-resolution classification map


def classmap_to_abundance(label_map, r, n_classes=None):
    """Fraction of each class inside every ``r x r`` block of ``label_map``."""
    label_map = np.asarray(label_map)
    rH, rW = label_map.shape
    if r < 1 or rH % r or rW % r:
        raise ValueError(f"label map {label_map.shape} is not divisible by r={r}")
    if n_classes is None:
        n_classes = int(label_map.max()) + 1
    onehot = np.eye(n_classes)[label_map.astype(int)]
    counts = onehot.reshape(rH // r, r, rW // r, r, n_classes).sum(axis=(1, 3))
    return counts / float(r * r)


def reference_endmembers_from_pure(cube, abundance_gt, purity_threshold=1.0, class_names=None):
    """Mean spectrum of the pixels that are (at least ``purity_threshold``) pure per class."""
    X = cube.pixels() if isinstance(cube, HsiCube) else np.asarray(cube).reshape(-1, np.shape(cube)[-1])
    A = np.asarray(abundance_gt).reshape(-1, np.shape(abundance_gt)[-1])
    cols, missing = [], []
    for j in range(A.shape[1]):
        sel = A[:, j] >= purity_threshold
        if not sel.any():
            missing.append(j)
            continue
        cols.append(X[sel].mean(axis=0))
    if missing:
        raise ValueError(f"no pixel with purity >= {purity_threshold} for classes {missing}")
    return EndmemberMatrix(np.stack(cols, axis=1), class_names or [])


def gaussian_downsample(cube, r):
    """Per-band Gaussian blur (sigma = r/2, truncated at 2 sigma) then r-stride decimation."""
    data = cube.data if isinstance(cube, HsiCube) else np.asarray(cube, dtype=np.float64)
    H, W, _ = data.shape
    if r < 1 or H % r or W % r:
        raise ValueError(f"image {H}x{W} is not divisible by r={r}")
    sigma = r / 2.0
    blurred = gaussian_filter(data, sigma=(sigma, sigma, 0), truncate=2.0, mode="reflect")
    off = r // 2
    low = blurred[off::r, off::r]
    wl = cube.wavelengths if isinstance(cube, HsiCube) else None
    return HsiCube(low, wl)


# ---------------------------------------------------------------------------
# export


def export_abundance_images(abundances, out_dir, class_names=None, stem="abundance"):
    """Write one 8-bit binary PGM per class plus a CSV of raw values.

    Returns the list of written paths (PGMs first, then the CSV).
    """
    A = np.asarray(abundances, dtype=np.float64)
    H, W, C = A.shape
    names = class_names or [f"class{j + 1}" for j in range(C)]
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    paths = []
    for j in range(C):
        img = np.rint(np.clip(A[..., j], 0.0, 1.0) * 255).astype(np.uint8)
        p = out / f"{stem}_{j + 1}_{names[j]}.pgm"
        try:
            with open(p, "wb") as fh:
                fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
                fh.write(img.tobytes())
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        paths.append(p)
    p = out / f"{stem}.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", *names])
        for i in range(H):
            for k in range(W):
                w.writerow([i, k, *(repr(float(v)) for v in A[i, k])])
    paths.append(p)
    return paths


def read_abundance_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    H, W = int(body[:, 0].max()) + 1, int(body[:, 1].max()) + 1
    return body[:, 2:].reshape(H, W, -1)


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# dataset files


def save_cube(path, cube, **notes):
    arrays = {"data": cube.data}
    if cube.wavelengths is not None:
        arrays["wavelengths"] = cube.wavelengths
    H, W, B = cube.data.shape
    return io.write_dataset(path, "cube", arrays, H=H, W=W, B=B, **notes)


def load_cube(path):
    header, arrays = io.read_dataset(path, "cube")
    return HsiCube(arrays["data"], arrays.get("wavelengths"))


def save_abundances(path, A, **notes):
    H, W, C = np.shape(A)
    return io.write_dataset(path, "abundance", {"data": A}, H=H, W=W, C=C, **notes)


def load_abundances(path):
    _, arrays = io.read_dataset(path, "abundance")
    return arrays["data"]


def save_endmembers(path, em, **notes):
    B, C = em.E.shape
    return io.write_dataset(path, "endmembers", {"E": em.E}, B=B, C=C,
                            class_names=list(em.class_names), **notes)


def load_endmembers(path):
    header, arrays = io.read_dataset(path, "endmembers")
    return EndmemberMatrix(arrays["E"], header.get("class_names") or [])
