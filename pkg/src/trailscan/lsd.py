"""Line Segment Detector core: gradient regions validated by an a-contrario test.

Implements the published LSD algorithm: level-line angles from 2x2 gradients,
greedy region growing under an angle tolerance, rectangle approximation of
each region, density-based refinement, and validation by the number of false
alarms (NFA) of aligned points under a binomial background model. Works in a
Gaussian-subsampled domain (scale 0.8 by default) and reports endpoints in
the original pixel grid with subpixel precision.

Coordinates inside this module put the origin at the CENTER of pixel (0, 0),
matching the reference description; the wrapper in `linedet` converts to the
package-wide edge-based convention by adding 0.5.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

#: sentinel angle for pixels whose gradient is too small to define a level line
NOTDEF = -1024.0

#: number of bins of the pseudo-sort over gradient magnitude
N_BINS = 1024

#: region density below which refinement kicks in
DENSITY_TH = 0.7

#: standard deviation of the subsampling filter is SIGMA_SCALE / scale
SIGMA_SCALE = 0.6

#: gradient quantization error bound; grad threshold is QUANT / sin(tolerance)
QUANT = 2.0


@njit(cache=True)
def _gaussian_kernel(kernel, sigma, mean):
    s = 0.0
    for i in range(kernel.size):
        v = (i - mean) / sigma
        kernel[i] = math.exp(-0.5 * v * v)
        s += kernel[i]
    if s > 0.0:
        for i in range(kernel.size):
            kernel[i] /= s


@njit(cache=True)
def _gaussian_sampler(image, scale, sigma_scale):
    """Smooth and subsample by `scale` with symmetric boundary handling."""
    ysize, xsize = image.shape
    n_out = int(math.ceil(xsize * scale))
    m_out = int(math.ceil(ysize * scale))
    sigma = sigma_scale / scale if scale < 1.0 else sigma_scale
    # kernel radius h covers the Gaussian down to 1/10^3 of its peak
    h = int(math.ceil(sigma * math.sqrt(2.0 * 3.0 * math.log(10.0))))
    kernel = np.empty(1 + 2 * h)
    aux = np.empty((ysize, n_out))
    out = np.empty((m_out, n_out))
    double_x = 2 * xsize
    double_y = 2 * ysize
    for x in range(n_out):
        xx = x / scale
        xc = int(math.floor(xx + 0.5))
        _gaussian_kernel(kernel, sigma, h + xx - xc)
        for y in range(ysize):
            s = 0.0
            for i in range(kernel.size):
                j = xc - h + i
                while j < 0:
                    j += double_x
                while j >= double_x:
                    j -= double_x
                if j >= xsize:
                    j = double_x - 1 - j
                s += image[y, j] * kernel[i]
            aux[y, x] = s
    for y in range(m_out):
        yy = y / scale
        yc = int(math.floor(yy + 0.5))
        _gaussian_kernel(kernel, sigma, h + yy - yc)
        for x in range(n_out):
            s = 0.0
            for i in range(kernel.size):
                j = yc - h + i
                while j < 0:
                    j += double_y
                while j >= double_y:
                    j -= double_y
                if j >= ysize:
                    j = double_y - 1 - j
                s += aux[j, x] * kernel[i]
            out[y, x] = s
    return out


@njit(cache=True)
def _ll_angle(image, threshold, n_bins):
    """Level-line angles, gradient magnitudes, and seeds pseudo-sorted by magnitude.

    The gradient at (x, y) comes from the 2x2 block at (x, y); its level-line
    angle is atan2(gx, -gy), undefined (NOTDEF) when the magnitude is at or
    below `threshold`. Seeds are returned ordered by decreasing magnitude bin
    (1024 linear bins), raster order within a bin.
    """
    ysize, xsize = image.shape
    angles = np.full((ysize, xsize), NOTDEF)
    modgrad = np.zeros((ysize, xsize))
    max_grad = 0.0
    for y in range(ysize - 1):
        for x in range(xsize - 1):
            a = image[y, x]
            b = image[y, x + 1]
            c = image[y + 1, x]
            d = image[y + 1, x + 1]
            gx = (b + d) - (a + c)
            gy = (c + d) - (a + b)
            norm = math.sqrt((gx * gx + gy * gy) / 4.0)
            modgrad[y, x] = norm
            if norm > threshold:
                angles[y, x] = math.atan2(gx, -gy)
                if norm > max_grad:
                    max_grad = norm
    order_x = np.empty(ysize * xsize, np.int32)
    order_y = np.empty(ysize * xsize, np.int32)
    if max_grad <= 0.0:
        return angles, modgrad, order_x, order_y, 0
    counts = np.zeros(n_bins, np.int64)
    for y in range(ysize - 1):
        for x in range(xsize - 1):
            if angles[y, x] != NOTDEF:
                i = int(modgrad[y, x] * n_bins / max_grad)
                if i >= n_bins:
                    i = n_bins - 1
                counts[i] += 1
    # highest-magnitude bin first: offsets of a descending stable counting sort
    offsets = np.empty(n_bins, np.int64)
    acc = 0
    for i in range(n_bins - 1, -1, -1):
        offsets[i] = acc
        acc += counts[i]
    fill = np.zeros(n_bins, np.int64)
    for y in range(ysize - 1):
        for x in range(xsize - 1):
            if angles[y, x] != NOTDEF:
                i = int(modgrad[y, x] * n_bins / max_grad)
                if i >= n_bins:
                    i = n_bins - 1
                pos = offsets[i] + fill[i]
                order_x[pos] = x
                order_y[pos] = y
                fill[i] += 1
    return angles, modgrad, order_x, order_y, acc


@njit(cache=True)
def _angle_diff_abs(a, b):
    a -= b
    while a <= -math.pi:
        a += 2.0 * math.pi
    while a > math.pi:
        a -= 2.0 * math.pi
    return abs(a)


@njit(cache=True)
def _angle_diff_signed(a, b):
    a -= b
    while a <= -math.pi:
        a += 2.0 * math.pi
    while a > math.pi:
        a -= 2.0 * math.pi
    return a


@njit(cache=True)
def _isaligned(angle, theta, prec):
    if angle == NOTDEF:
        return False
    theta -= angle
    if theta < 0.0:
        theta = -theta
    if theta > 1.5 * math.pi:
        # level-line angles live on a circle; fold the 2 pi discontinuity
        theta -= 2.0 * math.pi
        if theta < 0.0:
            theta = -theta
    return theta <= prec


@njit(cache=True)
def _region_grow(x0, y0, angles, used, prec, reg_x, reg_y):
    """Grow an 8-connected region of aligned level lines from the seed."""
    reg_angle = angles[y0, x0]
    sumdx = math.cos(reg_angle)
    sumdy = math.sin(reg_angle)
    reg_x[0] = x0
    reg_y[0] = y0
    size = 1
    used[y0, x0] = 1
    ysize, xsize = angles.shape
    i = 0
    while i < size:
        cx = reg_x[i]
        cy = reg_y[i]
        for yy in range(cy - 1, cy + 2):
            for xx in range(cx - 1, cx + 2):
                if 0 <= xx < xsize and 0 <= yy < ysize and used[yy, xx] != 1:
                    ang = angles[yy, xx]
                    if _isaligned(ang, reg_angle, prec):
                        used[yy, xx] = 1
                        reg_x[size] = xx
                        reg_y[size] = yy
                        size += 1
                        # running direction as the angle of the vector sum
                        sumdx += math.cos(ang)
                        sumdy += math.sin(ang)
                        reg_angle = math.atan2(sumdy, sumdx)
        i += 1
    return size, reg_angle


@njit(cache=True)
def _get_theta(reg_x, reg_y, size, modgrad, cx, cy, reg_angle, prec):
    """Main direction: smallest-eigenvalue axis of the weighted inertia matrix."""
    ixx = 0.0
    iyy = 0.0
    ixy = 0.0
    for i in range(size):
        w = modgrad[reg_y[i], reg_x[i]]
        dx = reg_x[i] - cx
        dy = reg_y[i] - cy
        ixx += dy * dy * w
        iyy += dx * dx * w
        ixy -= dx * dy * w
    if ixx == 0.0 and iyy == 0.0 and ixy == 0.0:
        return reg_angle
    lam = 0.5 * (ixx + iyy - math.sqrt((ixx - iyy) * (ixx - iyy) + 4.0 * ixy * ixy))
    theta = math.atan2(lam - ixx, ixy) if abs(ixx) > abs(iyy) else math.atan2(ixy, lam - iyy)
    # the axis is orientation-free; flip onto the region's level-line side
    if _angle_diff_abs(theta, reg_angle) > prec:
        theta += math.pi
    return theta


@njit(cache=True)
def _region2rect(reg_x, reg_y, size, modgrad, reg_angle, prec, p, rect):
    """Covering rectangle: gradient-weighted centroid, main axis, extents.

    rect layout: x1 y1 x2 y2 width cx cy theta dx dy prec p
    """
    cx = 0.0
    cy = 0.0
    sumw = 0.0
    for i in range(size):
        w = modgrad[reg_y[i], reg_x[i]]
        cx += reg_x[i] * w
        cy += reg_y[i] * w
        sumw += w
    cx /= sumw
    cy /= sumw
    theta = _get_theta(reg_x, reg_y, size, modgrad, cx, cy, reg_angle, prec)
    dx = math.cos(theta)
    dy = math.sin(theta)
    lmin = 0.0
    lmax = 0.0
    wmin = 0.0
    wmax = 0.0
    for i in range(size):
        lpos = (reg_x[i] - cx) * dx + (reg_y[i] - cy) * dy
        wpos = -(reg_x[i] - cx) * dy + (reg_y[i] - cy) * dx
        if lpos < lmin:
            lmin = lpos
        if lpos > lmax:
            lmax = lpos
        if wpos < wmin:
            wmin = wpos
        if wpos > wmax:
            wmax = wpos
    rect[0] = cx + lmin * dx
    rect[1] = cy + lmin * dy
    rect[2] = cx + lmax * dx
    rect[3] = cy + lmax * dy
    rect[4] = wmax - wmin
    rect[5] = cx
    rect[6] = cy
    rect[7] = theta
    rect[8] = dx
    rect[9] = dy
    rect[10] = prec
    rect[11] = p
    if rect[4] < 1.0:
        rect[4] = 1.0


@njit(cache=True)
def _rect_density(rect, size):
    length = math.hypot(rect[2] - rect[0], rect[3] - rect[1])
    denom = length * rect[4]
    if denom <= 0.0:
        return 1e30
    return size / denom


@njit(cache=True)
def _nfa(n, k, p, lognt):
    """-log10 of the NFA of k aligned points among n under binomial B(n, p).

    Binomial tail via lgamma for the first term, then the recurrence over
    terms with an early stop once the remainder is provably below 10% of the
    current result.
    """
    if n == 0 or k == 0:
        return -lognt
    if n == k:
        return -lognt - n * math.log10(p)
    p_term = p / (1.0 - p)
    log1term = (
        math.lgamma(n + 1.0)
        - math.lgamma(k + 1.0)
        - math.lgamma(n - k + 1.0)
        + k * math.log(p)
        + (n - k) * math.log(1.0 - p)
    )
    term = math.exp(log1term)
    if term == 0.0:
        if k > n * p:
            return -log1term / math.log(10.0) - lognt
        return -lognt
    bin_tail = term
    tolerance = 0.1
    for i in range(k + 1, n + 1):
        bin_term = (n - i + 1.0) / i
        mult_term = bin_term * p_term
        term *= mult_term
        bin_tail += term
        if bin_term < 1.0:
            # remaining terms are bounded by a geometric series
            err = term * ((1.0 - mult_term ** (n - i + 1.0)) / (1.0 - mult_term) - 1.0)
            if err < tolerance * abs(-math.log10(bin_tail) - lognt) * bin_tail:
                break
    return -math.log10(bin_tail) - lognt


@njit(cache=True)
def _rect_nfa(rect, angles, lognt):
    """NFA of a rectangle: count aligned pixels among those it covers."""
    x1 = rect[0]
    y1 = rect[1]
    x2 = rect[2]
    y2 = rect[3]
    half_w = rect[4] / 2.0
    dx = rect[8]
    dy = rect[9]
    theta = rect[7]
    prec = rect[10]
    length = math.hypot(x2 - x1, y2 - y1)
    ysize, xsize = angles.shape
    if length <= 0.0:
        return _nfa(0, 0, rect[11], lognt)
    # bounding box of the four corners, clipped to the image
    cxs = (x1 - dy * half_w, x1 + dy * half_w, x2 - dy * half_w, x2 + dy * half_w)
    cys = (y1 + dx * half_w, y1 - dx * half_w, y2 + dx * half_w, y2 - dx * half_w)
    xmin = int(math.floor(min(cxs)))
    xmax = int(math.ceil(max(cxs)))
    ymin = int(math.floor(min(cys)))
    ymax = int(math.ceil(max(cys)))
    if xmin < 0:
        xmin = 0
    if ymin < 0:
        ymin = 0
    if xmax >= xsize:
        xmax = xsize - 1
    if ymax >= ysize:
        ymax = ysize - 1
    pts = 0
    alg = 0
    for y in range(ymin, ymax + 1):
        for x in range(xmin, xmax + 1):
            lpos = (x - x1) * dx + (y - y1) * dy
            if lpos < 0.0 or lpos > length:
                continue
            wpos = -(x - x1) * dy + (y - y1) * dx
            if wpos < -half_w or wpos > half_w:
                continue
            pts += 1
            if _isaligned(angles[y, x], theta, prec):
                alg += 1
    return _nfa(pts, alg, rect[11], lognt)


@njit(cache=True)
def _rect_improve(rect, angles, lognt, log_eps):
    """Greedy NFA improvement: finer precision, thinner width, shifted sides."""
    log_nfa = _rect_nfa(rect, angles, lognt)
    if log_nfa > log_eps:
        return log_nfa
    delta = 0.5
    r = rect.copy()
    for _ in range(5):
        r[11] /= 2.0
        r[10] = r[11] * math.pi
        ln = _rect_nfa(r, angles, lognt)
        if ln > log_nfa:
            log_nfa = ln
            rect[:] = r
    if log_nfa > log_eps:
        return log_nfa
    r = rect.copy()
    for _ in range(5):
        if r[4] - delta >= 0.5:
            r[4] -= delta
            ln = _rect_nfa(r, angles, lognt)
            if ln > log_nfa:
                log_nfa = ln
                rect[:] = r
    if log_nfa > log_eps:
        return log_nfa
    r = rect.copy()
    for _ in range(5):
        if r[4] - delta >= 0.5:
            r[0] += -r[9] * delta * 0.5
            r[1] += r[8] * delta * 0.5
            r[2] += -r[9] * delta * 0.5
            r[3] += r[8] * delta * 0.5
            r[4] -= delta
            ln = _rect_nfa(r, angles, lognt)
            if ln > log_nfa:
                log_nfa = ln
                rect[:] = r
    if log_nfa > log_eps:
        return log_nfa
    r = rect.copy()
    for _ in range(5):
        if r[4] - delta >= 0.5:
            r[0] -= -r[9] * delta * 0.5
            r[1] -= r[8] * delta * 0.5
            r[2] -= -r[9] * delta * 0.5
            r[3] -= r[8] * delta * 0.5
            r[4] -= delta
            ln = _rect_nfa(r, angles, lognt)
            if ln > log_nfa:
                log_nfa = ln
                rect[:] = r
    if log_nfa > log_eps:
        return log_nfa
    r = rect.copy()
    for _ in range(5):
        r[11] /= 2.0
        r[10] = r[11] * math.pi
        ln = _rect_nfa(r, angles, lognt)
        if ln > log_nfa:
            log_nfa = ln
            rect[:] = r
    return log_nfa


@njit(cache=True)
def _reduce_region_radius(
    reg_x, reg_y, size, modgrad, reg_angle, prec, p, rect, used, density_th
):
    """Shrink the region around the seed until the density criterion holds."""
    density = _rect_density(rect, size)
    if density >= density_th:
        return True, size
    xc = float(reg_x[0])
    yc = float(reg_y[0])
    rad1 = math.hypot(xc - rect[0], yc - rect[1])
    rad2 = math.hypot(xc - rect[2], yc - rect[3])
    rad = rad1 if rad1 > rad2 else rad2
    while density < density_th:
        rad *= 0.75
        i = 0
        while i < size:
            if math.hypot(xc - reg_x[i], yc - reg_y[i]) > rad:
                used[reg_y[i], reg_x[i]] = 0
                reg_x[i] = reg_x[size - 1]
                reg_y[i] = reg_y[size - 1]
                size -= 1
            else:
                i += 1
        if size < 2:
            return False, size
        _region2rect(reg_x, reg_y, size, modgrad, reg_angle, prec, p, rect)
        density = _rect_density(rect, size)
    return True, size


@njit(cache=True)
def _refine(reg_x, reg_y, size, modgrad, reg_angle, prec, p, rect, used, angles, density_th):
    """Re-grow sparse regions with a tolerance set by the local angle spread."""
    density = _rect_density(rect, size)
    if density >= density_th:
        return True, size, reg_angle
    xc = float(reg_x[0])
    yc = float(reg_y[0])
    ang_c = angles[reg_y[0], reg_x[0]]
    s = 0.0
    s2 = 0.0
    n = 0
    for i in range(size):
        used[reg_y[i], reg_x[i]] = 0
        if math.hypot(xc - reg_x[i], yc - reg_y[i]) < rect[4]:
            a = _angle_diff_signed(angles[reg_y[i], reg_x[i]], ang_c)
            s += a
            s2 += a * a
            n += 1
    if n == 0:
        return False, size, reg_angle
    mean = s / n
    tau = 2.0 * math.sqrt((s2 - 2.0 * mean * s) / n + mean * mean)
    size, reg_angle = _region_grow(reg_x[0], reg_y[0], angles, used, tau, reg_x, reg_y)
    if size < 2:
        return False, size, reg_angle
    _region2rect(reg_x, reg_y, size, modgrad, reg_angle, prec, p, rect)
    if _rect_density(rect, size) < density_th:
        ok, size = _reduce_region_radius(
            reg_x, reg_y, size, modgrad, reg_angle, prec, p, rect, used, density_th
        )
        return ok, size, reg_angle
    return True, size, reg_angle


@njit(cache=True)
def _lsd_core(image, scale, sigma_scale, rho, prec, p, log_eps, density_th, n_bins):
    """Full detection loop; returns rows (x1, y1, x2, y2, width, p, log_nfa)."""
    if scale != 1.0:
        img = _gaussian_sampler(image, scale, sigma_scale)
    else:
        img = image.copy()
    ysize, xsize = img.shape
    angles, modgrad, order_x, order_y, n_seeds = _ll_angle(img, rho, n_bins)
    lognt = 2.5 * (math.log10(xsize) + math.log10(ysize)) + math.log10(11.0)
    min_reg_size = int(-lognt / math.log10(p))
    used = np.zeros((ysize, xsize), np.uint8)
    reg_x = np.empty(ysize * xsize, np.int32)
    reg_y = np.empty(ysize * xsize, np.int32)
    rect = np.zeros(12)
    cap = (ysize * xsize) // max(1, min_reg_size) + 16
    out = np.empty((cap, 7))
    count = 0
    for s in range(n_seeds):
        sx = order_x[s]
        sy = order_y[s]
        if used[sy, sx] == 1 or angles[sy, sx] == NOTDEF:
            continue
        size, reg_angle = _region_grow(sx, sy, angles, used, prec, reg_x, reg_y)
        if size < min_reg_size:
            continue
        _region2rect(reg_x, reg_y, size, modgrad, reg_angle, prec, p, rect)
        ok, size, reg_angle = _refine(
            reg_x, reg_y, size, modgrad, reg_angle, prec, p, rect, used, angles, density_th
        )
        if not ok:
            continue
        log_nfa = _rect_improve(rect, angles, lognt, log_eps)
        if log_nfa <= log_eps:
            continue
        # gradients live on 2x2 blocks: add the half-pixel offset, then undo
        # the subsampling
        x1 = rect[0] + 0.5
        y1 = rect[1] + 0.5
        x2 = rect[2] + 0.5
        y2 = rect[3] + 0.5
        w = rect[4]
        if scale != 1.0:
            x1 /= scale
            y1 /= scale
            x2 /= scale
            y2 /= scale
            w /= scale
        if count < cap:
            out[count, 0] = x1
            out[count, 1] = y1
            out[count, 2] = x2
            out[count, 3] = y2
            out[count, 4] = w
            out[count, 5] = rect[11]
            out[count, 6] = log_nfa
            count += 1
    return out[:count].copy()


def detect_raw(
    image: np.ndarray,
    scale: float = 0.8,
    angle_tolerance_deg: float = 22.5,
    grad_threshold: float | None = None,
    log_eps: float = 0.0,
) -> np.ndarray:
    """Run the detector on a float image; rows are (x1, y1, x2, y2, width, p, log_nfa).

    Coordinates have their origin at the center of pixel (0, 0). log_eps is
    the detection cut: segments need log10-NFA above it (0.0 keeps the
    expected number of false alarms at one per image).
    """
    prec = math.pi * angle_tolerance_deg / 180.0
    p = angle_tolerance_deg / 180.0
    rho = QUANT / math.sin(prec) if grad_threshold is None else grad_threshold
    img = np.ascontiguousarray(image, dtype=np.float64)
    return _lsd_core(img, scale, SIGMA_SCALE, rho, prec, p, log_eps, DENSITY_TH, N_BINS)
