"""Grey-level filter bank.

All window and convolution operations use half-sample symmetric padding
(``d c b a | a b c d | d c b a``).  Kernels of even size are anchored at
``(h // 2, w // 2)``, the lower-right pixel of their central 2x2 block; odd
kernels are anchored at their centre.

Functions take a grey image (or float plane) and return ``float64`` planes of
the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ImageTooSmall, KernelLargerThanImage, ValidationError
from .raster import check_image

DARK_ON_BRIGHT = "dark"
BRIGHT_ON_DARK = "bright"

SHARPEN_KERNEL = np.array([[-1.0, -1.0, -1.0], [-1.0, 9.0, -1.0], [-1.0, -1.0, -1.0]])
CENTRAL_DIFFERENCE = np.array([[-0.5, 0.0, 0.5]])


@dataclass(frozen=True)
class FrangiConfig:
    sigma_start: float = 1.0
    sigma_end: float = 1.0
    sigma_step: float = 1.0
    beta1: float = 2.0
    beta2: float = 1.0
    polarity: str = DARK_ON_BRIGHT

    def __post_init__(self):
        if not self.sigma_start <= self.sigma_end:
            raise ValidationError("sigma_start must not exceed sigma_end")
        if not (self.sigma_step > 0 and self.beta1 > 0 and self.beta2 > 0):
            raise ValidationError("sigma_step, beta1 and beta2 must be positive")
        if self.sigma_start <= 0:
            raise ValidationError("sigma_start must be positive")
        if self.polarity not in (DARK_ON_BRIGHT, BRIGHT_ON_DARK):
            raise ValidationError(f"unknown polarity {self.polarity!r}")

    @property
    def sigmas(self):
        n = int(math.floor((self.sigma_end - self.sigma_start) / self.sigma_step + 1e-9))
        return [self.sigma_start + k * self.sigma_step for k in range(n + 1)]


@dataclass(frozen=True)
class DiffusionConfig:
    iterations: int = 10
    kappa: float = 3.0
    lam: float = 0.5

    def __post_init__(self):
        if self.iterations < 0 or not (self.kappa > 0 and self.lam > 0):
            raise ValidationError("iterations >= 0, kappa > 0 and lambda > 0 required")


@dataclass(frozen=True)
class MorphConfig:
    erosions: int = 1
    dilations: int = 1
    element: str = "cross"

    def __post_init__(self):
        if self.erosions < 0 or self.dilations < 0:
            raise ValidationError("erosion/dilation counts must be >= 0")
        if self.element not in STRUCTURING_ELEMENTS:
            raise ValidationError(f"unknown structuring element {self.element!r}")


def _disc_element(size):
    c = (size - 1) / 2.0
    rr, cc = np.mgrid[0:size, 0:size]
    return (rr - c) ** 2 + (cc - c) ** 2 <= (size / 2.0) ** 2


STRUCTURING_ELEMENTS = {
    "cross": np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    "disc10": _disc_element(10),
}

# Paper parameter sets, in feature order.
FRANGI_CONFIGS = (
    FrangiConfig(1.0, 1.0),
    FrangiConfig(1.0, 2.0),
    FrangiConfig(2.0, 3.0),
)
DIFFUSION_CONFIGS = (
    DiffusionConfig(10, 3.0, 0.5),
    DiffusionConfig(20, 4.0, 0.3),
    DiffusionConfig(40, 6.0, 0.8),
    DiffusionConfig(35, 3.0, 2.0),
)
MORPH_CONFIGS = (
    MorphConfig(1, 1, "cross"),
    MorphConfig(3, 1, "cross"),
    MorphConfig(1, 3, "cross"),
    MorphConfig(1, 1, "disc10"),
    MorphConfig(3, 1, "disc10"),
    MorphConfig(1, 3, "disc10"),
)
GRADIENT_SIGMAS = (1.0, 2.0, 3.0)
LOG_SPECS = ((3, 0.5), (20, 3.0))
STATS_WINDOW = 7


def _as_float(image):
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D plane, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        check_image(arr)
    return arr.astype(np.float64)


def anchor(shape):
    return shape[0] // 2, shape[1] // 2


def pad_symmetric(plane, kshape):
    ar, ac = anchor(kshape)
    return np.pad(plane, ((ar, kshape[0] - 1 - ar), (ac, kshape[1] - 1 - ac)), mode="symmetric")


def convolve(image, kernel):
    """Cross-correlate a plane with a 2-D kernel.

    ``out[r, c] = sum_ij kernel[i, j] * x[r + i - ar, c + j - ac]`` with the
    anchor ``(ar, ac)`` and symmetric padding. Taps are accumulated in
    row-major kernel order.
    """
    x = _as_float(image)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.size == 0:
        raise ValidationError("kernel must be a non-empty 2-D array")
    h, w = x.shape
    if k.shape[0] > h or k.shape[1] > w:
        raise KernelLargerThanImage(f"kernel {k.shape} larger than image {x.shape}")
    padded = pad_symmetric(x, k.shape)
    out = np.zeros_like(x)
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            coef = k[i, j]
            if coef != 0.0:
                out += coef * padded[i : i + h, j : j + w]
    return out


def gaussian_kernels_1d(sigma):
    """Sampled Gaussian and its first/second derivative correlation kernels.

    Radius is ``ceil(3 sigma)``. The smoothing kernel sums to 1, the
    second-derivative kernel is mean-corrected to sum to exactly 0 (first
    derivative is antisymmetric already).
    """
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g0 = np.exp(-(x**2) / (2.0 * sigma**2))
    g0 /= g0.sum()
    g1 = x / sigma**2 * g0
    g2 = (x**2 / sigma**4 - 1.0 / sigma**2) * g0
    g2 -= g2.mean()
    return g0, g1, g2


def gaussian_derivative_kernel(sigma, order_row, order_col):
    """2-D correlation kernel for d^(order_row + order_col) / dr^a dc^b."""
    ks = gaussian_kernels_1d(sigma)
    return np.outer(ks[order_row], ks[order_col])


def _centred(x):
    # zero-sum kernels see an exactly-zero input on flat images
    return x - x.mean()


def hessian(image, sigma=1.0):
    """Raw second Gaussian derivatives ``(Ixx, Ixy, Iyy)``; x = column, y = row."""
    x = _centred(_as_float(image))
    ixx = convolve(x, gaussian_derivative_kernel(sigma, 0, 2))
    ixy = convolve(x, gaussian_derivative_kernel(sigma, 1, 1))
    iyy = convolve(x, gaussian_derivative_kernel(sigma, 2, 0))
    return ixx, ixy, iyy


def hessian_eigenvalues(ixx, ixy, iyy):
    """Eigenvalues of the symmetric 2x2 field, ordered so ``|l1| <= |l2|``.

    The larger-magnitude root is taken from the closed form and the smaller
    one from ``det / l2``, which keeps the product identity tight.
    """
    half_trace = 0.5 * (ixx + iyy)
    disc = np.sqrt((0.5 * (ixx - iyy)) ** 2 + ixy**2)
    l2 = half_trace + np.where(half_trace >= 0, disc, -disc)
    det = ixx * iyy - ixy * ixy
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = np.where(l2 != 0, det / np.where(l2 != 0, l2, 1.0), 0.0)
    return l1, l2


def hessian_features(image):
    """Ten Hessian planes at sigma 1.

    Order: det, Ixx, Ixy, Iyx, Iyy, l1, l2, ridge strength ``(l1^2 - l2^2)^2``,
    Frobenius modulus, trace.
    """
    ixx, ixy, iyy = hessian(image, 1.0)
    l1, l2 = hessian_eigenvalues(ixx, ixy, iyy)
    det = ixx * iyy - ixy * ixy
    ridge = (l1**2 - l2**2) ** 2
    modulus = np.sqrt(ixx**2 + 2.0 * ixy**2 + iyy**2)
    trace = ixx + iyy
    return [det, ixx, ixy, ixy.copy(), iyy, l1, l2, ridge, modulus, trace]


def frangi(image, cfg=FrangiConfig(), hessians=None):
    """Multiscale Frangi vesselness in [0, 1].

    ``hessians`` is an optional dict used to share per-sigma Hessians between
    calls on the same image.
    """
    x = _as_float(image)
    if hessians is None:
        hessians = {}
    out = np.zeros_like(x)
    two_b1 = 2.0 * cfg.beta1**2
    two_b2 = 2.0 * cfg.beta2**2
    for sigma in cfg.sigmas:
        if sigma not in hessians:
            hessians[sigma] = hessian(x, sigma)
        ixx, ixy, iyy = hessians[sigma]
        s2 = sigma**2
        l1, l2 = hessian_eigenvalues(s2 * ixx, s2 * ixy, s2 * iyy)
        if cfg.polarity == DARK_ON_BRIGHT:
            valid = l2 > 0
        else:
            valid = l2 < 0
        safe_l2 = np.where(valid, l2, 1.0)
        rb2 = (l1 / safe_l2) ** 2
        s_sq = l1**2 + l2**2
        v = np.exp(-rb2 / two_b1) * -np.expm1(-s_sq / two_b2)
        v = np.where(valid, v, 0.0)
        np.maximum(out, v, out=out)
    return out


def log_kernel(size, sigma):
    """Laplacian-of-Gaussian kernel sampled around the anchor, zero-sum."""
    ar, _ = anchor((size, size))
    d = np.arange(size, dtype=np.float64) - ar
    rr, cc = np.meshgrid(d, d, indexing="ij")
    r2 = rr**2 + cc**2
    k = (r2 - 2.0 * sigma**2) / sigma**4 * np.exp(-r2 / (2.0 * sigma**2))
    k /= 2.0 * np.pi * sigma**2
    return k - k.mean()


def laplacian_features(image):
    """LoG 3x3 (sigma 0.5), LoG 20x20 (sigma 3) and the 3x3 sharpen filter."""
    x = _as_float(image)
    if min(x.shape) < 20:
        raise ImageTooSmall(f"Laplacian features need at least 20x20, got {x.shape}")
    xc = _centred(x)
    planes = [convolve(xc, log_kernel(size, sigma)) for size, sigma in LOG_SPECS]
    planes.append(convolve(x, SHARPEN_KERNEL))
    return planes


def window_view(image, size):
    """``(H, W, size, size)`` view of symmetric-padded windows."""
    x = np.asarray(image)
    padded = pad_symmetric(x, (size, size))
    return np.lib.stride_tricks.sliding_window_view(padded, (size, size))


def local_stats(image, window=STATS_WINDOW):
    """Arithmetic mean, geometric mean, max, min and median over a square window.

    The geometric mean is ``exp(mean(log(v + 1))) - 1`` so zeros are allowed.
    """
    if window % 2 != 1:
        raise ValidationError("window must be odd")
    x = np.asarray(image)
    if x.dtype != np.uint8:
        x = _as_float(x)
    h, w = x.shape
    views = window_view(x, window)
    planes = [np.empty((h, w)) for _ in range(5)]
    rows_per_chunk = max(1, 200_000 // max(w * window * window, 1))
    for r0 in range(0, h, rows_per_chunk):
        r1 = min(h, r0 + rows_per_chunk)
        block = views[r0:r1].reshape(r1 - r0, w, window * window).astype(np.float64)
        planes[0][r0:r1] = block.mean(axis=2)
        planes[1][r0:r1] = np.expm1(np.log1p(block).mean(axis=2))
        planes[2][r0:r1] = block.max(axis=2)
        planes[3][r0:r1] = block.min(axis=2)
        planes[4][r0:r1] = np.median(block, axis=2)
    return planes


def anisotropic_diffusion(image, cfg=DiffusionConfig()):
    """Perona-Malik explicit diffusion with exponential conductance.

    Each step adds ``lam * sum_d g(|D_d u|) * D_d u`` over the four neighbour
    differences, ``g(x) = exp(-(x / kappa)^2)``. Borders replicate the edge
    pixel, so no flux crosses the image boundary.
    """
    u = _as_float(image)
    k2 = cfg.kappa**2
    for _ in range(cfg.iterations):
        p = np.pad(u, 1, mode="edge")
        flux = np.zeros_like(u)
        for d in (p[:-2, 1:-1], p[2:, 1:-1], p[1:-1, :-2], p[1:-1, 2:]):
            diff = d - u
            flux += np.exp(-(diff * diff) / k2) * diff
        u = u + cfg.lam * flux
    return u


def _offsets(element):
    ar, ac = anchor(element.shape)
    rows, cols = np.nonzero(element)
    return [(int(r - ar), int(c - ac)) for r, c in zip(rows, cols)]


def _shifted(padded, pad, h, w, dr, dc):
    return padded[pad + dr : pad + dr + h, pad + dc : pad + dc + w]


def erode(image, element):
    """Flat erosion: ``min_b x[p + b]`` over the element support."""
    x = _as_float(image)
    h, w = x.shape
    offs = _offsets(element)
    pad = max(max(abs(r), abs(c)) for r, c in offs)
    padded = np.pad(x, pad, mode="symmetric")
    out = np.full_like(x, np.inf)
    for dr, dc in offs:
        np.minimum(out, _shifted(padded, pad, h, w, dr, dc), out=out)
    return out


def dilate(image, element):
    """Flat dilation: ``max_b x[p - b]`` over the element support."""
    x = _as_float(image)
    h, w = x.shape
    offs = _offsets(element)
    pad = max(max(abs(r), abs(c)) for r, c in offs)
    padded = np.pad(x, pad, mode="symmetric")
    out = np.full_like(x, -np.inf)
    for dr, dc in offs:
        np.maximum(out, _shifted(padded, pad, h, w, -dr, -dc), out=out)
    return out


def morph_feature(image, cfg=MorphConfig()):
    """Apply ``cfg.erosions`` erosions followed by ``cfg.dilations`` dilations."""
    element = STRUCTURING_ELEMENTS[cfg.element]
    x = _as_float(image)
    for _ in range(cfg.erosions):
        x = erode(x, element)
    for _ in range(cfg.dilations):
        x = dilate(x, element)
    return x


def gradient_features(image):
    """Central-difference gradient magnitude, then Gaussian gradients at sigma 1, 2, 3."""
    x = _as_float(image)
    gx = convolve(x, CENTRAL_DIFFERENCE)
    gy = convolve(x, CENTRAL_DIFFERENCE.T)
    planes = [np.sqrt(gx**2 + gy**2)]
    xc = _centred(x)
    for sigma in GRADIENT_SIGMAS:
        gx = convolve(xc, gaussian_derivative_kernel(sigma, 0, 1))
        gy = convolve(xc, gaussian_derivative_kernel(sigma, 1, 0))
        planes.append(np.sqrt(gx**2 + gy**2))
    return planes
