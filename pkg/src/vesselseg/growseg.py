"""Seed selection and connectivity-coupled region growing.

Growth proceeds in sweeps.  Each sweep collects every unvisited pixel at
Chebyshev distance 1 from a vessel-labelled pixel, sorts them row-major and
classifies them one at a time.  A pixel accepted as vessel is labelled
immediately, so pixels later in the same sweep see it in their connectivity
features.  Every pixel is classified at most once; growth stops when a sweep
finds no new candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .connectivity import ConnectivityConfig, NeighborCounter, feature_from_count
from .exceptions import DimensionMismatch, InvariantViolation, NoSeedsFound, ValidationError
from .features import FIRST_PLANE, N_FEATURES, FeatureStack
from .filters import FrangiConfig, frangi
from .raster import check_image, check_mask, largest_component

AUTO_FRANGI = "auto-frangi"
MANUAL = "manual"

_RING = np.array([(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)])

# Seeding wants a selective response: the feature-bank setting (beta1=2, c=1 on
# 0-255 intensities) saturates on background texture.
SEED_FRANGI = FrangiConfig(2.0, 3.0, 1.0, 0.5, 30.0)


@dataclass(frozen=True, eq=False)
class SeedSet:
    """Seed pixels as an ``(n, 2)`` array of ``(row, col)``."""

    pixels: np.ndarray
    provenance: str = MANUAL

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        if len(px) == 0:
            raise NoSeedsFound("seed set is empty")
        if len(np.unique(px, axis=0)) != len(px):
            raise ValidationError("seed pixels must be distinct")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_mask(cls, mask, provenance=MANUAL):
        return cls(np.argwhere(check_mask(mask)), provenance)

    def check_bounds(self, shape):
        r, c = self.pixels[:, 0], self.pixels[:, 1]
        if np.any((r < 0) | (r >= shape[0]) | (c < 0) | (c >= shape[1])):
            raise ValidationError(f"seed pixel outside image of shape {tuple(shape)}")

    def to_mask(self, shape):
        self.check_bounds(shape)
        mask = np.zeros(shape, dtype=bool)
        mask[self.pixels[:, 0], self.pixels[:, 1]] = True
        return mask


def otsu_threshold(values, bins=256):
    """Otsu threshold of a 1-D sample; ``None`` if the sample is constant."""
    values = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        return None
    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    hist = hist.astype(np.float64)
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * centers)
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = s0 / w0
        m1 = (s0[-1] - s0) / w1
        between = w0 * w1 * (m0 - m1) ** 2
    between[~((w0 > 0) & (w1 > 0))] = -1.0
    return float(centers[int(np.argmax(between))])


def select_seeds(image, cfg=SEED_FRANGI, fov=None):
    """Largest 8-connected component of the Otsu-binarised Frangi response."""
    img = check_image(image)
    response = frangi(img, cfg)
    inside = np.ones(img.shape, dtype=bool) if fov is None else check_mask(fov, img.shape, "fov")
    if not inside.any():
        raise NoSeedsFound("field of view is empty")
    thr = otsu_threshold(response[inside])
    if thr is None:
        raise NoSeedsFound("Frangi response is constant")
    binary = (response > thr) & inside
    if not binary.any():
        raise NoSeedsFound("binarised Frangi response is empty")
    return SeedSet.from_mask(largest_component(binary), AUTO_FRANGI)


def parse_seed_list(text):
    """Parse ``"r,c;r,c"`` into a manual :class:`SeedSet`."""
    pixels = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = item.split(",")
        if len(parts) != 2:
            raise ValidationError(f"bad seed {item!r}; expected 'row,col'")
        try:
            pixels.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise ValidationError(f"bad seed {item!r}") from exc
    return SeedSet(np.array(pixels, dtype=np.int64).reshape(-1, 2), MANUAL)


def vessel_scores(model, X):
    """Vessel probabilities of a batch from any model with ``predict_proba``."""
    if hasattr(model, "vessel_proba"):
        return np.asarray(model.vessel_proba(X), dtype=np.float64)
    return np.asarray(model.predict_proba(X), dtype=np.float64)[:, 1]


@dataclass
class GrowthTrace:
    mask: np.ndarray
    scores: np.ndarray
    sweeps: list = field(default_factory=list)
    label_order: list = field(default_factory=list)


def _grow(stack, model, seeds, cfg, threshold, fov):
    if not isinstance(stack, FeatureStack):
        raise ValidationError("stack must be a FeatureStack")
    shape = stack.shape
    h, w = shape
    seeds.check_bounds(shape)
    allowed = np.ones(shape, dtype=bool) if fov is None else check_mask(fov, shape, "fov")
    imm, rad = stack.neighborhoods(cfg)
    count_i = NeighborCounter(shape, imm)
    count_r = NeighborCounter(shape, rad)
    value_i = feature_from_count(np.arange(imm.size + 1), imm.size, cfg).astype(np.float32)
    value_r = feature_from_count(np.arange(rad.size + 1), rad.size, cfg).astype(np.float32)
    levels_i = np.unique(value_i)
    levels_r = np.unique(value_r)
    # few distinct connectivity values: score every combination per sweep in one batch
    batched = len(levels_i) * len(levels_r) <= 16
    code_i = np.searchsorted(levels_i, value_i)
    code_r = np.searchsorted(levels_r, value_r)

    labels = np.zeros(shape, dtype=bool)
    visited = np.zeros(shape, dtype=bool)
    scores = np.zeros(shape, dtype=np.float64)
    trace = GrowthTrace(labels, scores)

    fresh = []
    for r, c in seeds.pixels.tolist():
        labels[r, c] = visited[r, c] = True
        scores[r, c] = 1.0
        count_i.add(r, c)
        count_r.add(r, c)
        fresh.append(r * w + c)
        trace.label_order.append(r * w + c)

    while fresh:
        fr, fc = np.divmod(np.asarray(fresh, dtype=np.int64), w)
        nr = (fr[:, None] + _RING[:, 0]).ravel()
        nc = (fc[:, None] + _RING[:, 1]).ravel()
        ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        flat = np.unique(nr[ok] * w + nc[ok])
        rows, cols = np.divmod(flat, w)
        keep = ~visited[rows, cols] & allowed[rows, cols]
        rows, cols = rows[keep], cols[keep]
        if len(rows) == 0:
            break
        if visited[rows, cols].any():
            raise InvariantViolation("pixel entered the frontier twice")
        grey = stack.planes[:, rows, cols].T
        table = None
        if batched:
            n = len(rows)
            combos = [(a, b) for a in levels_i for b in levels_r]
            X = np.empty((len(combos) * n, N_FEATURES), dtype=np.float32)
            for k, (a, b) in enumerate(combos):
                block = X[k * n : (k + 1) * n]
                block[:, 0] = a
                block[:, 1] = b
                block[:, FIRST_PLANE:] = grey
            table = vessel_scores(model, X).reshape(len(combos), n)
        fresh = []
        nl = len(levels_r)
        for i, (r, c) in enumerate(zip(rows.tolist(), cols.tolist())):
            ni = count_i.counts[r, c]
            nrad = count_r.counts[r, c]
            if batched:
                p = table[code_i[ni] * nl + code_r[nrad], i]
            else:
                v = np.empty((1, N_FEATURES), dtype=np.float32)
                v[0, 0] = value_i[ni]
                v[0, 1] = value_r[nrad]
                v[0, FIRST_PLANE:] = grey[i]
                p = vessel_scores(model, v)[0]
            visited[r, c] = True
            scores[r, c] = p
            if p > threshold:
                labels[r, c] = True
                count_i.add(r, c)
                count_r.add(r, c)
                fresh.append(r * w + c)
                trace.label_order.append(r * w + c)
        trace.sweeps.append((len(rows), len(fresh)))
    return trace


def segment(stack, model, seeds, cfg=ConnectivityConfig(), threshold=0.5, fov=None, image=None):
    """Grow a vessel mask from ``seeds``.

    Parameters
    ----------
    stack : FeatureStack
    model : object with ``predict_proba(X)`` (or ``vessel_proba(X)``)
    seeds : SeedSet
    cfg : ConnectivityConfig
    threshold : float
        A pixel is vessel iff its probability is strictly above this.
    fov : bool ndarray, optional
        Pixels outside it are never classified.
    image : ndarray, optional
        Only used to check dimensions against the stack.

    Returns
    -------
    mask : bool ndarray
    scores : float64 ndarray
        Classifier probability of each visited pixel, 1.0 for seeds and 0.0
        for pixels never reached.
    """
    if image is not None and np.asarray(image).shape != tuple(stack.shape):
        raise DimensionMismatch(f"image {np.asarray(image).shape} vs stack {stack.shape}")
    trace = _grow(stack, model, seeds, cfg, threshold, fov)
    return trace.mask, trace.scores


def grow_trace(stack, model, seeds, cfg=ConnectivityConfig(), threshold=0.5, fov=None, image=None):
    """Same growth as :func:`segment`, returning a :class:`GrowthTrace`.

    ``sweeps`` lists ``(frontier size, accepted)`` per sweep and
    ``label_order`` the flat index of every labelled pixel in labelling order
    (seeds first).
    """
    if image is not None and np.asarray(image).shape != tuple(stack.shape):
        raise DimensionMismatch(f"image {np.asarray(image).shape} vs stack {stack.shape}")
    return _grow(stack, model, seeds, cfg, threshold, fov)
