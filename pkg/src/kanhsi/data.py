"""HSI cube and label I/O, synthetic scenes, splits, standardization, PCA, patches.

File formats (little-endian throughout):
  * HSC1 cube:  magic "HSC1", u32 H, W, B, then H*W*B float32 values in
    band-sequential order (index = b*H*W + r*W + c).
  * HSL1 labels: magic "HSL1", u32 H, W, then H*W u16 class ids row-major,
    0 = void.
  * Split manifest: text; "seed=<u64> fraction=<decimal>", then "train:" and
    one linear pixel index per line, then "test:" likewise.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "DataFormatError",
    "HsiCube",
    "LabelGrid",
    "SplitManifest",
    "PcaModel",
    "load_cube",
    "save_cube",
    "load_labels",
    "save_labels",
    "gen_synthetic",
    "class_signatures",
    "stratified_split",
    "save_manifest",
    "load_manifest",
    "standardize_fit",
    "standardize_apply",
    "jacobi_eigh",
    "pca_fit",
    "pca_transform",
    "extract_patch",
    "extract_patches",
]


class DataFormatError(ValueError):
    """A data file violates its format contract."""


@dataclass
class HsiCube:
    """Reflectance cube stored band-major: values[b, r, c], float32."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DataFormatError(f"cube must be [bands, H, W] with positive extents, got {v.shape}")
        if not np.isfinite(v).all():
            raise DataFormatError("cube contains non-finite values")
        self.values = v

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> int:
        return self.values.shape[1]

    @property
    def w(self) -> int:
        return self.values.shape[2]

    def pixels(self) -> np.ndarray:
        """[H*W, bands] view of the spectra, row-major pixel order."""
        return self.values.reshape(self.bands, -1).T


@dataclass
class LabelGrid:
    """Per-pixel class ids, 0 = void/unlabeled."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or min(lab.shape) < 1:
            raise DataFormatError(f"labels must be [H, W], got {lab.shape}")
        if lab.min() < 0 or lab.max() > np.iinfo(np.uint16).max:
            raise DataFormatError("labels must fit unsigned 16-bit ids")
        self.labels = lab.astype(np.uint16)

    @property
    def h(self) -> int:
        return self.labels.shape[0]

    @property
    def w(self) -> int:
        return self.labels.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max())


@dataclass
class SplitManifest:
    seed: int
    fraction: float
    train_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self):
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.test_indices = np.asarray(self.test_indices, dtype=np.int64)


@dataclass
class PcaModel:
    mean: np.ndarray  # [B]
    components: np.ndarray  # [B, K], orthonormal columns, descending eigenvalue
    eigenvalues: np.ndarray  # [K]


# -- file I/O --------------------------------------------------------------------


def save_cube(cube: HsiCube, path) -> None:
    with open(path, "wb") as f:
        f.write(b"HSC1")
        f.write(struct.pack("<III", cube.h, cube.w, cube.bands))
        f.write(cube.values.astype("<f4").tobytes())


def load_cube(path) -> HsiCube:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != b"HSC1":
        raise DataFormatError(f"bad magic in {path}: not an HSC1 cube")
    h, w, b = struct.unpack("<III", raw[4:16])
    need = h * w * b * 4
    payload = raw[16:]
    if len(payload) < need:
        raise DataFormatError(f"truncated cube payload in {path}: {len(payload)} < {need} bytes")
    vals = np.frombuffer(payload[:need], dtype="<f4").reshape(b, h, w)
    if not np.isfinite(vals).all():
        raise DataFormatError(f"non-finite values in cube {path}")
    return HsiCube(vals.copy())


def save_labels(grid: LabelGrid, path) -> None:
    with open(path, "wb") as f:
        f.write(b"HSL1")
        f.write(struct.pack("<II", grid.h, grid.w))
        f.write(grid.labels.astype("<u2").tobytes())


def load_labels(path) -> LabelGrid:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"HSL1":
        raise DataFormatError(f"bad magic in {path}: not an HSL1 label grid")
    h, w = struct.unpack("<II", raw[4:12])
    need = h * w * 2
    payload = raw[12:]
    if len(payload) < need:
        raise DataFormatError(f"truncated label payload in {path}: {len(payload)} < {need} bytes")
    labels = np.frombuffer(payload[:need], dtype="<u2").reshape(h, w)
    return LabelGrid(labels.copy())


# -- synthetic scenes ----------------------------------------------------------------


def class_signatures(bands: int, classes: int, seed: int) -> np.ndarray:
    """Smooth per-class spectra: two Gaussian bumps over the band index.

    The primary bump centers are spread deterministically across the band
    range so classes stay separable; amplitudes, widths and the secondary
    bump are seeded draws.
    """
    rng = np.random.default_rng([seed, 101])
    b = np.arange(bands, dtype=np.float64)
    sig = np.zeros((classes, bands))
    for c in range(classes):
        mu1 = (c + 0.5) * bands / classes
        w1 = bands * rng.uniform(0.08, 0.18)
        a1 = rng.uniform(0.8, 1.2)
        mu2 = rng.uniform(0, bands - 1)
        w2 = bands * rng.uniform(0.1, 0.3)
        a2 = rng.uniform(0.2, 0.5)
        sig[c] = a1 * np.exp(-0.5 * ((b - mu1) / w1) ** 2) + a2 * np.exp(-0.5 * ((b - mu2) / w2) ** 2)
    return sig.astype(np.float32)


def gen_synthetic(
    h: int = 32,
    w: int = 32,
    bands: int = 16,
    classes: int = 4,
    noise_sigma: float = 0.05,
    seed: int = 7,
    void_fraction: float = 0.05,
) -> tuple[HsiCube, LabelGrid]:
    """Voronoi-region scene: pixel = class signature + white noise, ~5% void."""
    if h < 1 or w < 1 or bands < 1:
        raise DataFormatError("synthetic extents must be positive")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng([seed, 202])
    sites = np.stack([rng.uniform(0, h, classes), rng.uniform(0, w, classes)], axis=1)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
    region = d2.argmin(axis=-1)  # [H, W] in 0..classes-1
    labels = (region + 1).astype(np.uint16)

    sig = class_signatures(bands, classes, seed)
    cube = sig[region].transpose(2, 0, 1).astype(np.float32)  # [B, H, W]
    if noise_sigma > 0:
        cube = cube + rng.normal(0.0, noise_sigma, size=cube.shape).astype(np.float32)
    void = rng.random((h, w)) < void_fraction
    labels[void] = 0
    return HsiCube(cube), LabelGrid(labels)


# -- splits ---------------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(grid: LabelGrid, fraction: float, seed: int) -> SplitManifest:
    """Per-class sampling without replacement; void pixels excluded.

    Per class, round(fraction * n) train pixels with a minimum of one; a
    single-pixel class goes entirely to train (logged).
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    flat = grid.labels.reshape(-1)
    rng = np.random.default_rng([seed, 303])
    train: list[np.ndarray] = []
    test: list[np.ndarray] = []
    for c in range(1, int(flat.max()) + 1):
        idx = np.flatnonzero(flat == c)
        if idx.size == 0:
            continue
        if idx.size == 1:
            log.warning("class %d has a single pixel; assigning it to train", c)
            train.append(idx)
            continue
        n_train = max(1, _round_half_up(fraction * idx.size))
        perm = rng.permutation(idx)
        train.append(np.sort(perm[:n_train]))
        test.append(np.sort(perm[n_train:]))
    train_idx = np.sort(np.concatenate(train)) if train else np.empty(0, np.int64)
    test_idx = np.sort(np.concatenate(test)) if test else np.empty(0, np.int64)
    return SplitManifest(seed=seed, fraction=fraction, train_indices=train_idx, test_indices=test_idx)


def save_manifest(manifest: SplitManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"seed={manifest.seed} fraction={manifest.fraction!r}\n")
        f.write("train:\n")
        for i in manifest.train_indices:
            f.write(f"{i}\n")
        f.write("test:\n")
        for i in manifest.test_indices:
            f.write(f"{i}\n")


def load_manifest(path) -> SplitManifest:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or not lines[0].startswith("seed="):
        raise DataFormatError(f"bad split manifest header in {path}")
    head = dict(part.split("=", 1) for part in lines[0].split())
    try:
        seed = int(head["seed"])
        fraction = float(head["fraction"])
    except (KeyError, ValueError) as e:
        raise DataFormatError(f"bad split manifest header in {path}") from e
    sections: dict[str, list[int]] = {"train": [], "test": []}
    cur = None
    for ln in lines[1:]:
        if ln in ("train:", "test:"):
            cur = ln[:-1]
            continue
        if cur is None:
            raise DataFormatError(f"index before section marker in {path}")
        sections[cur].append(int(ln))
    return SplitManifest(seed=seed, fraction=fraction,
                         train_indices=np.array(sections["train"], dtype=np.int64),
                         test_indices=np.array(sections["test"], dtype=np.int64))


# -- preprocessing ---------------------------------------------------------------------


def standardize_fit(cube: HsiCube, train_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-band mean and std over the train pixels only; std floored at 1e-8."""
    train_indices = np.asarray(train_indices, dtype=np.int64)
    if train_indices.size == 0:
        raise ValueError("train set is empty")
    px = cube.values.reshape(cube.bands, -1)[:, train_indices].astype(np.float64)
    mean = px.mean(axis=1)
    std = np.maximum(px.std(axis=1), 1e-8)
    return mean, std


def standardize_apply(cube: HsiCube, stats: tuple[np.ndarray, np.ndarray]) -> HsiCube:
    mean, std = stats
    vals = (cube.values.astype(np.float64) - mean[:, None, None]) / std[:, None, None]
    return HsiCube(vals.astype(np.float32))


def jacobi_eigh(a: np.ndarray, off_tol: float = 1e-10, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps rotate every (p, q) pair until the off-diagonal Frobenius norm
    drops below off_tol. Returns (eigenvalues, eigenvectors as columns),
    unsorted.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off < off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < off_tol / (n * n):
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * rot_p - s * rot_q
                a[:, q] = s * rot_p + c * rot_q
                rot_p, rot_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rot_p - s * rot_q
                a[q, :] = s * rot_p + c * rot_q
                vev_p, vev_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vev_p - s * vev_q
                v[:, q] = s * vev_p + c * vev_q
    return np.diag(a).copy(), v


def pca_fit(cube: HsiCube, train_indices: np.ndarray, k: int) -> PcaModel:
    """Top-k principal directions of the train pixels (covariance via Jacobi).

    Component signs are fixed so each column's largest-magnitude entry is
    positive.
    """
    if k > cube.bands:
        raise ValueError(f"cannot keep {k} components of {cube.bands} bands")
    train_indices = np.asarray(train_indices, dtype=np.int64)
    if train_indices.size < 2:
        raise ValueError("PCA needs at least 2 training pixels")
    px = cube.values.reshape(cube.bands, -1)[:, train_indices].astype(np.float64).T  # [n, B]
    mean = px.mean(axis=0)
    xc = px - mean
    cov = xc.T @ xc / (px.shape[0] - 1)
    evals, evecs = jacobi_eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    components = evecs[:, order]
    eigenvalues = np.maximum(evals[order], 0.0)
    for j in range(components.shape[1]):
        i = np.argmax(np.abs(components[:, j]))
        if components[i, j] < 0:
            components[:, j] = -components[:, j]
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues)


def pca_transform(cube: HsiCube, model: PcaModel) -> HsiCube:
    flat = cube.values.reshape(cube.bands, -1).astype(np.float64)
    proj = model.components.T @ (flat - model.mean[:, None])
    return HsiCube(proj.reshape(-1, cube.h, cube.w).astype(np.float32))


# -- patches -----------------------------------------------------------------------------


def _reflect(i: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(i)
    period = 2 * n - 2
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


def extract_patch(cube: HsiCube, r: int, c: int, patch: int) -> np.ndarray:
    """[patch, patch, bands] neighborhood centered at (r, c), reflect-padded."""
    if patch % 2 == 0:
        raise ValueError(f"patch size must be odd, got {patch}")
    half = patch // 2
    rows = _reflect(np.arange(r - half, r + half + 1), cube.h)
    cols = _reflect(np.arange(c - half, c + half + 1), cube.w)
    block = cube.values[:, rows[:, None], cols[None, :]]  # [B, S, S]
    return np.ascontiguousarray(block.transpose(1, 2, 0))


def extract_patches(cube: HsiCube, indices: np.ndarray, patch: int) -> np.ndarray:
    """Batch of [S, S, B] patches for linear pixel indices (row-major)."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.empty((indices.size, patch, patch, cube.bands), dtype=np.float32)
    for i, lin in enumerate(indices):
        out[i] = extract_patch(cube, int(lin) // cube.w, int(lin) % cube.w, patch)
    return out
