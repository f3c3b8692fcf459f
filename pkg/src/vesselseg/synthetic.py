"""Synthetic fundus-like images with known vessel ground truth.

Vessels are dark branching curves on a bright, textured, unevenly lit
background.  Every branch grows out of its parent, so the ground truth of one
image is a single 8-connected tree.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage


def _smooth_noise(rng, shape, sigma, amplitude):
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    # centre first: on images smaller than sigma the field is nearly flat
    field -= field.mean()
    field /= field.std() + 1e-12
    return amplitude * field


def _grow_branches(rng, shape, start, angle, width, min_width, max_points):
    """Centreline samples ``(row, col, radius, depth)`` of a branching tree."""
    h, w = shape
    points = []
    todo = [(start[0], start[1], angle, width)]
    while todo and len(points) < max_points:
        r, c, ang, wd = todo.pop()
        length = 0.0
        turn = 0.0
        next_branch = rng.uniform(25, 45)
        while 0 <= r < h and 0 <= c < w and len(points) < max_points:
            radius = wd / 2.0
            depth = 28.0 + 7.0 * wd
            points.append((r, c, radius, depth))
            turn = 0.9 * turn + rng.normal(0.0, 0.012)
            ang += turn
            r += math.sin(ang)
            c += math.cos(ang)
            length += 1.0
            wd = max(min_width, wd * 0.9985)
            if length >= next_branch and wd > min_width + 0.3:
                side = rng.choice([-1.0, 1.0])
                child_w = max(min_width, wd * rng.uniform(0.55, 0.75))
                todo.append((r, c, ang + side * rng.uniform(0.5, 1.0), child_w))
                wd = max(min_width, wd * 0.9)
                next_branch = length + rng.uniform(25, 50)
    return points


def _render(shape, points):
    best = np.full(shape, np.inf)
    depth_map = np.zeros(shape)
    h, w = shape
    for r, c, radius, depth in points:
        reach = int(math.ceil(radius * 2.0)) + 1
        r0, r1 = max(0, int(r) - reach), min(h, int(r) + reach + 2)
        c0, c1 = max(0, int(c) - reach), min(w, int(c) + reach + 2)
        if r0 >= r1 or c0 >= c1:
            continue
        rr, cc = np.mgrid[r0:r1, c0:c1]
        d = np.hypot(rr - r, cc - c) / radius
        win_best = best[r0:r1, c0:c1]
        closer = d < win_best
        win_best[closer] = d[closer]
        depth_map[r0:r1, c0:c1][closer] = depth
    return best, depth_map


def vessel_image(shape=(256, 256), seed=0, noise=3.0):
    """One synthetic image.

    Returns
    -------
    image : uint8 ndarray
    ground_truth : bool ndarray
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    # trunk enters from a random point on the left edge, heading right
    start = (rng.uniform(0.3, 0.7) * h, 0.0)
    points = _grow_branches(rng, shape, start, rng.uniform(-0.3, 0.3), 7.0, 2.0, 6000)
    best, depth_map = _render(shape, points)
    gt = best <= 1.0
    labels, n = ndimage.label(gt, structure=np.ones((3, 3)))
    if n > 1:
        counts = np.bincount(labels.ravel())
        counts[0] = 0
        gt = labels == int(np.argmax(counts))
    profile = np.where(np.isfinite(best), np.exp(-1.2 * np.minimum(best, 10.0) ** 2), 0.0)
    vessel_only = np.where(gt | (best > 1.0), 1.0, 0.0)
    background = (
        175.0
        + _smooth_noise(rng, shape, 40.0, 12.0)
        + _smooth_noise(rng, shape, 2.0, 5.0)
    )
    image = background - depth_map * profile * vessel_only
    image += rng.normal(0.0, noise, shape)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8), gt


def vessel_dataset(n_images, shape=(256, 256), seed=0):
    """List of ``(image, ground_truth)`` pairs with consecutive seeds."""
    return [vessel_image(shape, seed + k) for k in range(n_images)]
