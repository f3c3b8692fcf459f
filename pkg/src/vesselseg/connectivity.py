"""Connectivity features computed against an evolving vessel label map.

For a pixel with ``n`` vessel-labelled pixels among the ``K`` offsets of its
neighbourhood the vessel probability is

* exponential mode: ``(e^n - 1) / (e^K - 1)``
* fraction mode:    ``n / K``

and the binary feature fires when that probability exceeds ``t_c``.
Neighbours falling outside the image count as non-vessel; ``K`` is never
reduced at the border.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import OutOfBounds, ValidationError
from .raster import check_mask

IMMEDIATE = "immediate"
RADIAL = "radial"
EXPONENTIAL = "exponential"
FRACTION = "fraction"
BINARY = "binary"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class ConnectivityConfig:
    t_c: float = 0.05
    radial_fraction: float = 0.007
    mode: str = FRACTION
    feature_form: str = BINARY

    def __post_init__(self):
        if not 0.0 < self.t_c < 1.0:
            raise ValidationError("t_c must lie in (0, 1)")
        if not 0.0 < self.radial_fraction < 0.5:
            raise ValidationError("radial_fraction must lie in (0, 0.5)")
        if self.mode not in (EXPONENTIAL, FRACTION):
            raise ValidationError(f"unknown connectivity mode {self.mode!r}")
        if self.feature_form not in (BINARY, CONTINUOUS):
            raise ValidationError(f"unknown feature form {self.feature_form!r}")


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """Offsets ``(drow, dcol)`` around a pixel, centre excluded."""

    offsets: np.ndarray
    kind: str = IMMEDIATE

    def __post_init__(self):
        offs = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 2)
        if len(offs) == 0:
            raise ValidationError("neighbourhood must not be empty")
        if np.any(np.all(offs == 0, axis=1)):
            raise ValidationError("neighbourhood must not contain (0, 0)")
        if len({tuple(o) for o in offs.tolist()}) != len(offs):
            raise ValidationError("neighbourhood offsets must be distinct")
        offs.setflags(write=False)
        object.__setattr__(self, "offsets", offs)

    @property
    def size(self):
        return len(self.offsets)

    @property
    def reach(self):
        return int(np.abs(self.offsets).max())


def radial_radius(shape, fraction):
    diag = math.hypot(shape[0], shape[1])
    return max(1, int(math.floor(fraction * diag + 0.5)))


def make_neighborhood(kind, shape, cfg=ConnectivityConfig()):
    """Build the immediate (8-neighbour) or radial (disc) neighbourhood.

    ``shape`` is the image ``(rows, cols)``; only the radial kind uses it, with
    radius ``max(1, round(radial_fraction * diagonal))``.
    """
    if kind == IMMEDIATE:
        r = 1
        keep = lambda dr, dc: True  # noqa: E731
    elif kind == RADIAL:
        r = radial_radius(shape, cfg.radial_fraction)
        keep = lambda dr, dc: dr * dr + dc * dc <= r * r  # noqa: E731
    else:
        raise ValidationError(f"unknown neighbourhood kind {kind!r}")
    offs = [
        (dr, dc)
        for dr in range(-r, r + 1)
        for dc in range(-r, r + 1)
        if (dr, dc) != (0, 0) and keep(dr, dc)
    ]
    return Neighborhood(np.array(offs), kind)


def probability_from_count(n, k, mode=FRACTION):
    """Vessel probability for ``n`` labelled neighbours out of ``k`` (vectorised)."""
    n = np.asarray(n, dtype=np.float64)
    if mode == FRACTION:
        return n / k
    if mode == EXPONENTIAL:
        # (e^n - 1)/(e^k - 1) rewritten to stay finite for large k
        return np.exp(n - k) * (-np.expm1(-n)) / (-np.expm1(-float(k)))
    raise ValidationError(f"unknown connectivity mode {mode!r}")


def feature_from_count(n, k, cfg=ConnectivityConfig()):
    p = probability_from_count(n, k, cfg.mode)
    if cfg.feature_form == BINARY:
        return (p > cfg.t_c).astype(np.float64)
    return p


def firing_count(k, cfg=ConnectivityConfig()):
    """Smallest neighbour count for which the binary feature fires (k + 1 if never)."""
    counts = np.arange(k + 1)
    fires = probability_from_count(counts, k, cfg.mode) > cfg.t_c
    return int(np.argmax(fires)) if fires.any() else k + 1


def _check_pixel(shape, pixel):
    r, c = pixel
    if not (0 <= r < shape[0] and 0 <= c < shape[1]):
        raise OutOfBounds(f"pixel {pixel} outside image of shape {shape}")
    return int(r), int(c)


def count_at(labels, pixel, hood):
    """Number of vessel-labelled pixels in ``hood`` around ``pixel``."""
    labels = check_mask(labels, name="labels")
    r, c = _check_pixel(labels.shape, pixel)
    rows = r + hood.offsets[:, 0]
    cols = c + hood.offsets[:, 1]
    inside = (rows >= 0) & (rows < labels.shape[0]) & (cols >= 0) & (cols < labels.shape[1])
    return int(labels[rows[inside], cols[inside]].sum())


def vessel_probability(labels, pixel, hood, mode=FRACTION):
    return float(probability_from_count(count_at(labels, pixel, hood), hood.size, mode))


def connectivity_feature(labels, pixel, hood, cfg=ConnectivityConfig()):
    return float(feature_from_count(count_at(labels, pixel, hood), hood.size, cfg))


def neighbor_counts(labels, hood):
    """Per-pixel labelled-neighbour counts for the whole image."""
    labels = check_mask(labels, name="labels")
    h, w = labels.shape
    pad = hood.reach
    padded = np.zeros((h + 2 * pad, w + 2 * pad), dtype=np.int32)
    padded[pad : pad + h, pad : pad + w] = labels
    out = np.zeros((h, w), dtype=np.int32)
    for dr, dc in hood.offsets:
        out += padded[pad + dr : pad + dr + h, pad + dc : pad + dc + w]
    return out


class NeighborCounter:
    """Incrementally maintained neighbour counts for a growing label map.

    ``counts[p]`` always equals ``neighbor_counts(labels, hood)[p]`` for the
    labels added so far.
    """

    def __init__(self, shape, hood):
        self.shape = tuple(shape)
        self.hood = hood
        self.counts = np.zeros(self.shape, dtype=np.int32)
        # labelling p bumps every q with p = q + offset, i.e. q = p - offset
        self._dr = -hood.offsets[:, 0]
        self._dc = -hood.offsets[:, 1]

    def add(self, r, c):
        rows = r + self._dr
        cols = c + self._dc
        inside = (rows >= 0) & (rows < self.shape[0]) & (cols >= 0) & (cols < self.shape[1])
        self.counts[rows[inside], cols[inside]] += 1
