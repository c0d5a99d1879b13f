"""Pixel kernels for line rasterization and signer rendering.

Every kernel has a numba ``@njit`` version and a pure-numpy version producing
identical output.  The numba path is used when numba imports cleanly and the
environment variable ``SIGNGAN_DISABLE_NUMBA`` is not set to a truthy value.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("SIGNGAN_DISABLE_NUMBA", "").lower() in ("1", "true", "yes", "on")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def _njit(fn):
    if HAS_NUMBA:
        return numba.njit(cache=False, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@_njit
def _nb_line(out, r0, c0, r1, c1, value):
    """Integer Bresenham from the endpoint with the smaller major coordinate.

    Ties on the minor axis resolve toward the start endpoint.
    """
    h, w = out.shape
    dr = r1 - r0
    dc = c1 - c0
    if abs(dc) >= abs(dr):
        if c1 < c0:
            r0, c0, r1, c1 = r1, c1, r0, c0
            dr = -dr
            dc = -dc
        step = 1 if dr >= 0 else -1
        adr = abs(dr)
        err = 2 * adr - dc
        r = r0
        for c in range(c0, c1 + 1):
            if 0 <= r < h and 0 <= c < w:
                if out[r, c] < value:
                    out[r, c] = value
            if err > 0:
                r += step
                err -= 2 * dc
            err += 2 * adr
    else:
        if r1 < r0:
            r0, c0, r1, c1 = r1, c1, r0, c0
            dr = -dr
            dc = -dc
        step = 1 if dc >= 0 else -1
        adc = abs(dc)
        err = 2 * adc - dr
        c = c0
        for r in range(r0, r1 + 1):
            if 0 <= r < h and 0 <= c < w:
                if out[r, c] < value:
                    out[r, c] = value
            if err > 0:
                c += step
                err -= 2 * dr
            err += 2 * adc


@_njit
def _nb_limb_lines(out, pix, valid, limbs):
    for k in range(limbs.shape[0]):
        a = limbs[k, 0]
        b = limbs[k, 1]
        if valid[a] and valid[b]:
            _nb_line(out[k], pix[a, 0], pix[a, 1], pix[b, 0], pix[b, 1], 1.0)


@_njit
def _nb_capsule(img, r0, c0, r1, c1, radius, color):
    h, w, _ = img.shape
    rmin = max(int(np.floor(min(r0, r1) - radius)), 0)
    rmax = min(int(np.ceil(max(r0, r1) + radius)), h - 1)
    cmin = max(int(np.floor(min(c0, c1) - radius)), 0)
    cmax = min(int(np.ceil(max(c0, c1) + radius)), w - 1)
    dr = r1 - r0
    dc = c1 - c0
    len2 = dr * dr + dc * dc
    rad2 = radius * radius
    for r in range(rmin, rmax + 1):
        for c in range(cmin, cmax + 1):
            if len2 > 0.0:
                t = ((r - r0) * dr + (c - c0) * dc) / len2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            pr = r0 + t * dr - r
            pc = c0 + t * dc - c
            if pr * pr + pc * pc <= rad2:
                for ch in range(3):
                    img[r, c, ch] = color[ch]


@_njit
def _nb_convex_polygon(img, verts, color):
    # verts: (K, 2) rows/cols in order (either winding)
    h, w, _ = img.shape
    k = verts.shape[0]
    rmin = max(int(np.floor(verts[:, 0].min())), 0)
    rmax = min(int(np.ceil(verts[:, 0].max())), h - 1)
    cmin = max(int(np.floor(verts[:, 1].min())), 0)
    cmax = min(int(np.ceil(verts[:, 1].max())), w - 1)
    area = 0.0
    for i in range(k):
        j = (i + 1) % k
        area += verts[i, 1] * verts[j, 0] - verts[j, 1] * verts[i, 0]
    sign = 1.0 if area >= 0.0 else -1.0
    for r in range(rmin, rmax + 1):
        for c in range(cmin, cmax + 1):
            inside = True
            for i in range(k):
                j = (i + 1) % k
                cross = (verts[j, 1] - verts[i, 1]) * (r - verts[i, 0]) - (verts[j, 0] - verts[i, 0]) * (c - verts[i, 1])
                if sign * cross < 0.0:
                    inside = False
                    break
            if inside:
                for ch in range(3):
                    img[r, c, ch] = color[ch]


@_njit
def _nb_laplacian_variance(gray):
    h, w = gray.shape
    n = (h - 2) * (w - 2)
    if n <= 0:
        return 0.0
    total = 0.0
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            total += gray[r - 1, c] + gray[r + 1, c] + gray[r, c - 1] + gray[r, c + 1] - 4.0 * gray[r, c]
    mean = total / n
    acc = 0.0
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            v = gray[r - 1, c] + gray[r + 1, c] + gray[r, c - 1] + gray[r, c + 1] - 4.0 * gray[r, c] - mean
            acc += v * v
    return acc / n


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------


def _np_line_pixels(r0, c0, r1, c1):
    """Closed form of the Bresenham walk above (same tie rule)."""
    dr = r1 - r0
    dc = c1 - c0
    if abs(dc) >= abs(dr):
        if c1 < c0:
            r0, c0, r1, c1 = r1, c1, r0, c0
            dr, dc = -dr, -dc
        k = np.arange(dc + 1, dtype=np.int64)
        if dc == 0:
            off = np.zeros_like(k)
        else:
            off = (2 * k * abs(dr) + dc - 1) // (2 * dc)
        rows = r0 + np.sign(dr) * off
        cols = c0 + k
    else:
        if r1 < r0:
            r0, c0, r1, c1 = r1, c1, r0, c0
            dr, dc = -dr, -dc
        k = np.arange(dr + 1, dtype=np.int64)
        off = (2 * k * abs(dc) + dr - 1) // (2 * dr)
        rows = r0 + k
        cols = c0 + np.sign(dc) * off
    return rows, cols


def _np_line(out, r0, c0, r1, c1, value):
    rows, cols = _np_line_pixels(int(r0), int(c0), int(r1), int(c1))
    h, w = out.shape
    keep = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    rows, cols = rows[keep], cols[keep]
    out[rows, cols] = np.maximum(out[rows, cols], value)


def _np_limb_lines(out, pix, valid, limbs):
    for k, (a, b) in enumerate(limbs):
        if valid[a] and valid[b]:
            _np_line(out[k], pix[a, 0], pix[a, 1], pix[b, 0], pix[b, 1], 1.0)


def _np_capsule(img, r0, c0, r1, c1, radius, color):
    h, w, _ = img.shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    dr = r1 - r0
    dc = c1 - c0
    len2 = dr * dr + dc * dc
    if len2 > 0.0:
        t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / len2, 0.0, 1.0)
    else:
        t = np.zeros_like(rr)
    pr = r0 + t * dr - rr
    pc = c0 + t * dc - cc
    mask = pr * pr + pc * pc <= radius * radius
    img[mask] = color


def _np_convex_polygon(img, verts, color):
    h, w, _ = img.shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    nxt = np.roll(verts, -1, axis=0)
    area = np.sum(verts[:, 1] * nxt[:, 0] - nxt[:, 1] * verts[:, 0])
    sign = 1.0 if area >= 0.0 else -1.0
    mask = np.ones((h, w), dtype=bool)
    for (ri, ci), (rj, cj) in zip(verts, nxt):
        cross = (cj - ci) * (rr - ri) - (rj - ri) * (cc - ci)
        mask &= sign * cross >= 0.0
    img[mask] = color


def _np_laplacian_variance(gray):
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        return 0.0
    lap = (gray[:-2, 1:-1] + gray[2:, 1:-1] + gray[1:-1, :-2] + gray[1:-1, 2:]) - 4.0 * gray[1:-1, 1:-1]
    return float(np.mean((lap - lap.mean()) ** 2))


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def draw_line(out: np.ndarray, r0: int, c0: int, r1: int, c1: int, value: float = 1.0) -> None:
    """Set the pixels of a 1-px line in a float 2D array (max-combined)."""
    if USE_NUMBA:
        _nb_line(out, int(r0), int(c0), int(r1), int(c1), float(value))
    else:
        _np_line(out, r0, c0, r1, c1, value)


def draw_limb_lines(out: np.ndarray, pix: np.ndarray, valid: np.ndarray, limbs: np.ndarray) -> None:
    """One Bresenham line per limb into ``out[k]``; limbs with an invalid end stay empty."""
    pix = np.ascontiguousarray(pix, dtype=np.int64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    limbs = np.ascontiguousarray(limbs, dtype=np.int64)
    if USE_NUMBA:
        _nb_limb_lines(out, pix, valid, limbs)
    else:
        _np_limb_lines(out, pix, valid, limbs)


def draw_capsule(img, r0, c0, r1, c1, radius, color) -> None:
    """Fill every pixel centre within ``radius`` of the segment (a disk when ends coincide)."""
    color = np.asarray(color, dtype=img.dtype)
    if USE_NUMBA:
        _nb_capsule(img, float(r0), float(c0), float(r1), float(c1), float(radius), color)
    else:
        _np_capsule(img, float(r0), float(c0), float(r1), float(c1), float(radius), color)


def fill_convex_polygon(img, verts, color) -> None:
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    color = np.asarray(color, dtype=img.dtype)
    if USE_NUMBA:
        _nb_convex_polygon(img, verts, color)
    else:
        _np_convex_polygon(img, verts, color)


def laplacian_variance(gray: np.ndarray) -> float:
    """Variance of the 4-neighbour Laplacian over interior pixels."""
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    if USE_NUMBA:
        return float(_nb_laplacian_variance(gray))
    return _np_laplacian_variance(gray)


NUMBA_KERNELS = {
    "line": _nb_line,
    "limb_lines": _nb_limb_lines,
    "capsule": _nb_capsule,
    "convex_polygon": _nb_convex_polygon,
    "laplacian_variance": _nb_laplacian_variance,
}
NUMPY_KERNELS = {
    "line": _np_line,
    "limb_lines": _np_limb_lines,
    "capsule": _np_capsule,
    "convex_polygon": _np_convex_polygon,
    "laplacian_variance": _np_laplacian_variance,
}
