"""The 37-dimensional per-pixel feature vector.

Index map (frozen)::

    0       immediate connectivity
    1       radial connectivity
    2..11   Hessian: det, Ixx, Ixy, Iyx, Iyy, l1, l2, ridge, modulus, trace
    12..14  Frangi: sigma 1..1, 1..2, 2..3
    15..17  LoG 3x3, LoG 20x20, sharpen
    18..22  7x7 stats: mean, geometric mean, max, min, median
    23..26  anisotropic diffusion, four configs
    27..32  erosion/dilation, six configs
    33..36  gradients: central difference, Gaussian sigma 1, 2, 3

The 35 grey-level planes (indices 2..36) are precomputed once per image in a
:class:`FeatureStack`; the two connectivity values are computed against the
current label map whenever a vector is requested.  Planes and vectors are
stored as float32 so cached and freshly computed features are identical.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import filters
from .connectivity import (
    IMMEDIATE,
    RADIAL,
    ConnectivityConfig,
    count_at,
    feature_from_count,
    make_neighborhood,
    neighbor_counts,
)
from .exceptions import (
    CorruptCache,
    DimensionMismatch,
    ImageTooSmall,
    OutOfBounds,
    ValidationError,
    WriteFailure,
)
from .raster import check_image, check_mask

N_FEATURES = 37
N_PLANES = 35
FIRST_PLANE = 2

FEATURE_NAMES = (
    ["conn_immediate", "conn_radial"]
    + ["hess_det", "hess_xx", "hess_xy", "hess_yx", "hess_yy",
       "hess_l1", "hess_l2", "hess_ridge", "hess_modulus", "hess_trace"]
    + ["frangi_1_1", "frangi_1_2", "frangi_2_3"]
    + ["log_3", "log_20", "sharpen"]
    + ["stat_mean", "stat_gmean", "stat_max", "stat_min", "stat_median"]
    + [f"diffusion_{k}" for k in range(4)]
    + [f"morph_{k}" for k in range(6)]
    + ["grad_linear", "grad_gauss_1", "grad_gauss_2", "grad_gauss_3"]
)

# feature families used for permutation ranking
FEATURE_GROUPS = {
    "connectivity": [0, 1],
    "hessian": list(range(2, 12)),
    "frangi": [12, 13, 14],
    "laplacian": [15, 16],
    "sharpen": [17],
    "stats": list(range(18, 23)),
    "diffusion": list(range(23, 27)),
    "morphology": list(range(27, 33)),
    "gradients": list(range(33, 37)),
}

STACK_MAGIC = b"ELFV"
SAMPLES_MAGIC = b"ELSV"
CACHE_VERSION = 1


@dataclass
class FeatureStack:
    """The 35 grey-level planes of one image, shape ``(35, H, W)`` float32."""

    planes: np.ndarray
    polarity: str = filters.DARK_ON_BRIGHT
    _hoods: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float32)
        if planes.ndim != 3 or planes.shape[0] != N_PLANES:
            raise ValidationError(f"expected {N_PLANES} planes, got shape {planes.shape}")
        planes = np.ascontiguousarray(planes)
        planes.setflags(write=False)
        self.planes = planes

    @property
    def shape(self):
        return self.planes.shape[1:]

    def neighborhoods(self, cfg):
        key = cfg.radial_fraction
        if key not in self._hoods:
            self._hoods[key] = (
                make_neighborhood(IMMEDIATE, self.shape, cfg),
                make_neighborhood(RADIAL, self.shape, cfg),
            )
        return self._hoods[key]


def compute_planes(image, polarity=filters.DARK_ON_BRIGHT):
    """All 35 planes in canonical order as a list of float64 arrays."""
    img = check_image(image)
    if min(img.shape) < 20:
        raise ImageTooSmall(f"feature extraction needs at least 20x20, got {img.shape}")
    planes = filters.hessian_features(img)
    hess_cache = {}
    for cfg in filters.FRANGI_CONFIGS:
        cfg = filters.FrangiConfig(
            cfg.sigma_start, cfg.sigma_end, cfg.sigma_step, cfg.beta1, cfg.beta2, polarity
        )
        planes.append(filters.frangi(img, cfg, hessians=hess_cache))
    planes += filters.laplacian_features(img)
    planes += filters.local_stats(img)
    planes += [filters.anisotropic_diffusion(img, c) for c in filters.DIFFUSION_CONFIGS]
    planes += [filters.morph_feature(img, c) for c in filters.MORPH_CONFIGS]
    planes += filters.gradient_features(img)
    assert len(planes) == N_PLANES
    return planes


def build_stack(image, polarity=filters.DARK_ON_BRIGHT):
    """Compute the :class:`FeatureStack` of a grey image."""
    return FeatureStack(np.stack(compute_planes(image, polarity)), polarity)


def connectivity_values(stack, labels, rows, cols, cfg=ConnectivityConfig()):
    """Connectivity features (immediate, radial) at the given pixels."""
    imm, rad = stack.neighborhoods(cfg)
    counts_i = neighbor_counts(labels, imm)
    counts_r = neighbor_counts(labels, rad)
    return (
        feature_from_count(counts_i[rows, cols], imm.size, cfg),
        feature_from_count(counts_r[rows, cols], rad.size, cfg),
    )


def vector_at(stack, labels, pixel, cfg=ConnectivityConfig()):
    """The 37-value feature vector of one pixel against the current labels."""
    labels = check_mask(labels, stack.shape, "labels")
    r, c = pixel
    if not (0 <= r < stack.shape[0] and 0 <= c < stack.shape[1]):
        raise OutOfBounds(f"pixel {pixel} outside image of shape {stack.shape}")
    imm, rad = stack.neighborhoods(cfg)
    v = np.empty(N_FEATURES, dtype=np.float32)
    v[0] = feature_from_count(count_at(labels, (r, c), imm), imm.size, cfg)
    v[1] = feature_from_count(count_at(labels, (r, c), rad), rad.size, cfg)
    v[FIRST_PLANE:] = stack.planes[:, r, c]
    return v


def vectors_at(stack, labels, rows, cols, cfg=ConnectivityConfig()):
    """Feature matrix ``(n, 37)`` for many pixels at once."""
    labels = check_mask(labels, stack.shape, "labels")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    X = np.empty((len(rows), N_FEATURES), dtype=np.float32)
    X[:, 0], X[:, 1] = connectivity_values(stack, labels, rows, cols, cfg)
    X[:, FIRST_PLANE:] = stack.planes[:, rows, cols].T
    return X


def select_pixels(shape, fov=None, every=None, cap=None, seed=0):
    """Row-major flat indices of the pixels used for training.

    ``every`` keeps every n-th candidate; ``cap`` draws a seeded subset of at
    most ``cap`` pixels (kept in row-major order).
    """
    if fov is None:
        idx = np.arange(shape[0] * shape[1])
    else:
        idx = np.flatnonzero(check_mask(fov, shape, "fov"))
    if every is not None:
        if every < 1:
            raise ValidationError("every must be >= 1")
        idx = idx[::every]
    if cap is not None and len(idx) > cap:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(idx, size=cap, replace=False))
    return idx


def training_set(
    image, ground_truth, fov=None, cfg=ConnectivityConfig(), every=None, cap=None,
    seed=0, stack=None, polarity=filters.DARK_ON_BRIGHT,
):
    """Labelled samples ``(X, y)`` from one annotated image.

    Connectivity features are computed against the ground-truth labels.
    Returns a float32 matrix ``(n, 37)`` and a boolean label vector.
    """
    img = check_image(image)
    gt = check_mask(ground_truth, name="ground truth")
    if gt.shape != img.shape:
        raise DimensionMismatch(f"ground truth {gt.shape} vs image {img.shape}")
    if stack is None:
        stack = build_stack(img, polarity)
    elif stack.shape != img.shape:
        raise DimensionMismatch("stack and image dimensions differ")
    idx = select_pixels(img.shape, fov, every, cap, seed)
    rows, cols = np.unravel_index(idx, img.shape)
    X = vectors_at(stack, gt, rows, cols, cfg)
    return X, gt[rows, cols].copy()


# -- caches -----------------------------------------------------------------


def _write(path, chunks):
    try:
        with open(os.fspath(path), "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc.strerror or exc}") from exc


def _read(path):
    try:
        with open(os.fspath(path), "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise CorruptCache(f"{path}: {exc.strerror or exc}") from exc


def write_stack(stack, path):
    h, w = stack.shape
    header = STACK_MAGIC + struct.pack("<IIII", CACHE_VERSION, w, h, N_PLANES)
    _write(path, [header, stack.planes.astype("<f4").tobytes()])


def read_stack(path, polarity=filters.DARK_ON_BRIGHT):
    data = _read(path)
    if len(data) < 20 or data[:4] != STACK_MAGIC:
        raise CorruptCache(f"{path}: not a feature cache")
    version, w, h, n = struct.unpack_from("<IIII", data, 4)
    if version != CACHE_VERSION:
        raise CorruptCache(f"{path}: unsupported cache version {version}")
    if n != N_PLANES or w == 0 or h == 0:
        raise CorruptCache(f"{path}: bad dimensions")
    expected = 20 + 4 * n * w * h
    if len(data) != expected:
        raise CorruptCache(f"{path}: expected {expected} bytes, found {len(data)}")
    planes = np.frombuffer(data, dtype="<f4", offset=20).reshape(n, h, w)
    return FeatureStack(planes.astype(np.float32), polarity)


_SAMPLE_DTYPE = np.dtype([("x", "<f4", (N_FEATURES,)), ("label", "u1")])


def write_samples(X, y, path):
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=bool)
    if X.ndim != 2 or X.shape[1] != N_FEATURES or len(X) != len(y):
        raise ValidationError("samples must be an (n, 37) matrix with n labels")
    rec = np.empty(len(X), dtype=_SAMPLE_DTYPE)
    rec["x"] = X
    rec["label"] = y
    header = SAMPLES_MAGIC + struct.pack("<IQI", CACHE_VERSION, len(X), N_FEATURES)
    _write(path, [header, rec.tobytes()])


def read_samples(path):
    data = _read(path)
    if len(data) < 20 or data[:4] != SAMPLES_MAGIC:
        raise CorruptCache(f"{path}: not a sample cache")
    version, n, nf = struct.unpack_from("<IQI", data, 4)
    if version != CACHE_VERSION:
        raise CorruptCache(f"{path}: unsupported cache version {version}")
    if nf != N_FEATURES:
        raise CorruptCache(f"{path}: expected {N_FEATURES} features, found {nf}")
    if len(data) != 20 + n * _SAMPLE_DTYPE.itemsize:
        raise CorruptCache(f"{path}: truncated or oversized sample cache")
    rec = np.frombuffer(data, dtype=_SAMPLE_DTYPE, offset=20)
    labels = rec["label"]
    if np.any(labels > 1):
        raise CorruptCache(f"{path}: invalid label byte")
    return rec["x"].astype(np.float32), labels.astype(bool)


def write_text(stack, path):
    """Plain-text dump: one line per pixel, ``row col`` then the 35 plane values."""
    h, w = stack.shape
    flat = stack.planes.reshape(N_PLANES, -1).T
    rr, cc = np.divmod(np.arange(h * w), w)
    table = np.column_stack([rr, cc, flat.astype(np.float64)])
    fmt = ["%d", "%d"] + ["%.9g"] * N_PLANES
    try:
        np.savetxt(os.fspath(path), table, fmt=fmt, header="row col " + " ".join(FEATURE_NAMES[2:]))
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc.strerror or exc}") from exc
