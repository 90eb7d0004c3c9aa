"""Simulation of satellite trails at controlled SNR in star-field images.

The SNR of a trail follows the aperture-photometry error model

    S/N = S* / sqrt(S* + n_p (1 + n_p/n_s) (S_S + t*dc + R^2 + G^2 sigma_f^2))

where S* is the number of trail electrons inside a square aperture of side
3 x FWHM (rounded to the nearest odd integer) centered on the trail
midpoint, n_p the aperture pixel count, n_s the pixel count of a sky
annulus (a 2 px thick square frame starting 2 x FWHM outside the aperture),
S_S the sky background per pixel, t the exposure time, dc the dark current,
R the readout noise, G the gain, and sigma_f^2 = 0.083 the variance of the
uniform quantization error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .raster import FORMAT_FLAT, BinaryMask, Raster, load_raster, save_raster

#: fwhm = _FWHM_PER_SIGMA * sigma for a Gaussian profile
_FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

#: rows per strip when rendering large frames (bounds peak memory)
_RENDER_STRIP = 256

#: variance of a uniform quantization error over one ADU step (1/12)
QUANT_VAR = 0.083


def fwhm_to_sigma(fwhm: float) -> float:
    return fwhm / _FWHM_PER_SIGMA


def sigma_to_fwhm(sigma: float) -> float:
    return sigma * _FWHM_PER_SIGMA


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PsfModel:
    """Elliptical Gaussian point-spread function, widths as FWHM in pixels."""

    fwhm_x: float
    fwhm_y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.fwhm_x > 0 and self.fwhm_y > 0):
            raise ValueError("fwhm must be > 0")

    @property
    def fwhm(self) -> float:
        """Mean FWHM used for aperture sizing."""
        return 0.5 * (self.fwhm_x + self.fwhm_y)


@dataclass(frozen=True)
class NoiseModel:
    """Detector and sky noise terms entering the SNR denominator."""

    sky_electrons_per_px: float = 100.0
    exposure_s: float = 40.0
    dark_current: float = 0.01
    readout_noise: float = 5.0
    gain: float = 1.5
    quant_var: float = QUANT_VAR

    def __post_init__(self):
        fields = (
            self.sky_electrons_per_px,
            self.exposure_s,
            self.dark_current,
            self.readout_noise,
            self.gain,
            self.quant_var,
        )
        if any(v < 0 for v in fields):
            raise ValueError("noise model terms must be >= 0")
        if abs(self.quant_var - 1.0 / 12.0) > 1e-3:
            raise ValueError("quant_var must equal 1/12 (0.083) to within 1e-3")

    @property
    def per_pixel_variance(self) -> float:
        """Background variance per pixel: S_S + t*dc + R^2 + G^2*sigma_f^2."""
        return (
            self.sky_electrons_per_px
            + self.exposure_s * self.dark_current
            + self.readout_noise**2
            + self.gain**2 * self.quant_var
        )


@dataclass(frozen=True)
class TrailSpec:
    """A straight trail with a Gaussian cross-section profile."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    fwhm: float
    peak_amplitude: float | None = None
    target_snr: float | None = None

    def __post_init__(self):
        if self.fwhm <= 0:
            raise ValueError("fwhm must be > 0")
        if self.length == 0.0:
            raise ValueError("zero-length trail")

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    @property
    def midpoint(self) -> tuple[float, float]:
        return (0.5 * (self.p0[0] + self.p1[0]), 0.5 * (self.p0[1] + self.p1[1]))


@dataclass(frozen=True)
class ApertureSpec:
    """Square signal aperture plus square-frame sky annulus pixel counts."""

    side: int
    n_signal_px: int
    n_sky_px: int

    @property
    def half(self) -> int:
        return self.side // 2

    @property
    def sky_inner_half(self) -> int:
        # n_s = (2(ih+2)+1)^2 - (2 ih + 1)^2 = 16 ih + 24, inverted
        return (self.n_sky_px - 24) // 16


def aperture_from_psf(psf: PsfModel) -> ApertureSpec:
    """Aperture of side 3 x FWHM (nearest odd) with a 2 px sky frame 2 x FWHM out."""
    side = 2 * _round_half_up((3.0 * psf.fwhm - 1.0) / 2.0) + 1
    half = side // 2
    inner_half = half + _round_half_up(2.0 * psf.fwhm)
    n_sky = (2 * (inner_half + 2) + 1) ** 2 - (2 * inner_half + 1) ** 2
    return ApertureSpec(side=side, n_signal_px=side * side, n_sky_px=n_sky)


def snr_equation(s_star: float, n_p: int, n_s: int, noise: NoiseModel) -> float:
    """Evaluate the aperture-photometry SNR for s_star signal electrons.

    In the pure-shot-noise limit (all background terms zero) the expression
    collapses to sqrt(s_star), which is returned directly so the identity is
    exact rather than rounded through the division.
    """
    if s_star < 0:
        raise ValueError("s_star must be >= 0")
    background_var = n_p * (1.0 + n_p / n_s) * noise.per_pixel_variance
    if background_var == 0.0:
        if s_star == 0.0:
            raise ValueError("zero noise variance: SNR undefined")
        return math.sqrt(s_star)
    return s_star / math.sqrt(s_star + background_var)


def trail_flux(width: int, height: int, spec: TrailSpec) -> np.ndarray:
    """Noiseless trail electrons per pixel (float32, zero beyond 5 x fwhm)."""
    amp = spec.peak_amplitude
    if amp is None:
        raise ValueError("trail has no peak_amplitude")
    sigma = fwhm_to_sigma(spec.fwhm)
    cutoff = 5.0 * spec.fwhm
    x0, y0 = spec.p0
    vx, vy = spec.p1[0] - x0, spec.p1[1] - y0
    seg2 = vx * vx + vy * vy
    out = np.zeros((height, width), dtype=np.float32)
    if amp == 0.0:
        return out
    px = np.arange(width, dtype=np.float64) + 0.5
    for row0 in range(0, height, _RENDER_STRIP):
        row1 = min(height, row0 + _RENDER_STRIP)
        py = (np.arange(row0, row1, dtype=np.float64) + 0.5)[:, None]
        t = np.clip(((px - x0) * vx + (py - y0) * vy) / seg2, 0.0, 1.0)
        dx = px - (x0 + t * vx)
        dy = py - (y0 + t * vy)
        d2 = dx * dx + dy * dy
        flux = amp * np.exp(-0.5 * d2 / (sigma * sigma))
        flux[d2 > cutoff * cutoff] = 0.0
        out[row0:row1] = flux.astype(np.float32)
    return out


def render_trail(
    background: Raster, spec: TrailSpec, rng_seed: int, add_noise: bool = True
) -> tuple[Raster, BinaryMask]:
    """Overlay a Poisson-realized trail on the background.

    Returns the composite image and a mask that is true where the noiseless
    trail flux exceeds 10% of the trail peak. With add_noise=False the exact
    noiseless flux is added instead (for golden tests). Pixels farther than
    5 x fwhm from the trail are bitwise unchanged.
    """
    if spec.peak_amplitude is None or spec.peak_amplitude < 0:
        raise ValueError("peak_amplitude must be >= 0")
    flux = trail_flux(background.width, background.height, spec)
    rng = np.random.default_rng(rng_seed)
    out = background.pixels.astype(np.float32).copy()
    mask = flux > 0.1 * spec.peak_amplitude
    band = flux > 0.0
    if add_noise:
        out[band] += rng.poisson(flux[band].astype(np.float64)).astype(np.float32)
    else:
        out[band] += flux[band]
    return Raster(out, dict(background.meta)), BinaryMask(mask)


def _annulus_mean(pixels: np.ndarray, cx: int, cy: int, ap: ApertureSpec) -> float:
    ih = ap.sky_inner_half
    h, w = pixels.shape
    y0, y1 = max(0, cy - ih - 2), min(h, cy + ih + 3)
    x0, x1 = max(0, cx - ih - 2), min(w, cx + ih + 3)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    cheb = np.maximum(np.abs(xx - cx), np.abs(yy - cy))
    ring = (cheb > ih) & (cheb <= ih + 2)
    if not ring.any():
        raise ValueError("sky annulus lies entirely outside the image")
    return float(pixels[y0:y1, x0:x1][ring].mean())


def compute_snr(img: Raster, spec: TrailSpec, psf: PsfModel, noise: NoiseModel) -> float:
    """Aperture-photometry SNR of the trail measured on `img`.

    The signal is the aperture sum minus the sky-annulus mean times n_p,
    clamped at zero; the aperture is centered on the pixel containing the
    trail midpoint and must fit inside the image (the annulus is clipped to
    the frame if needed, while n_s keeps its nominal value).
    """
    ap = aperture_from_psf(psf)
    mx, my = spec.midpoint
    cx, cy = int(math.floor(mx)), int(math.floor(my))
    half = ap.half
    if cx - half < 0 or cy - half < 0 or cx + half >= img.width or cy + half >= img.height:
        raise ValueError("aperture extends outside the image")
    box = img.pixels[cy - half : cy + half + 1, cx - half : cx + half + 1]
    sky = _annulus_mean(img.pixels, cx, cy, ap)
    s_star = max(0.0, float(box.sum(dtype=np.float64)) - ap.n_signal_px * sky)
    return snr_equation(s_star, ap.n_signal_px, ap.n_sky_px, noise)


_AMPLITUDE_CEILING = 1e15


def solve_peak_for_snr(
    target_snr: float,
    geometry: TrailSpec,
    psf: PsfModel,
    noise: NoiseModel,
    background: Raster,
) -> float:
    """Peak amplitude whose noiseless trail reaches `target_snr`, by bisection.

    The SNR is measured with compute_snr on the noiseless trail-only render
    (the background supplies only the frame geometry), and is strictly
    increasing in the amplitude, so bisection converges; the result is
    within 2% of the target. Raises when the target cannot be bracketed
    below the amplitude ceiling.
    """
    if target_snr <= 0:
        raise ValueError("target_snr must be > 0")
    w, h = background.width, background.height

    def measured(amp: float) -> float:
        spec = TrailSpec(geometry.p0, geometry.p1, geometry.fwhm, peak_amplitude=amp)
        return compute_snr(Raster(trail_flux(w, h, spec)), spec, psf, noise)

    hi = 1.0
    while measured(hi) < target_snr:
        hi *= 2.0
        if hi > _AMPLITUDE_CEILING:
            raise ValueError(f"cannot bracket SNR {target_snr} below amplitude ceiling")
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if measured(mid) < target_snr:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-9 * hi:
            break
    return hi


# --- PSF fitting -------------------------------------------------------------


def _gauss2d(params: np.ndarray, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    amp, x0, y0, sx, sy, theta, offset = params
    ct, st = math.cos(theta), math.sin(theta)
    xr = (xx - x0) * ct + (yy - y0) * st
    yr = -(xx - x0) * st + (yy - y0) * ct
    return offset + amp * np.exp(-0.5 * ((xr / sx) ** 2 + (yr / sy) ** 2))


def fit_psf(
    img: Raster, star_candidates: list[tuple[float, float]], stamp_radius: int = 10
) -> PsfModel:
    """Median PSF over per-star 2-D elliptical Gaussian fits.

    Candidates must be local maxima more than 5 background RMS above the
    background level; stars whose fit residual RMS exceeds 20% of the fitted
    peak are dropped. Raises when fewer than 3 usable stars remain.
    """
    if len(star_candidates) < 3:
        raise ValueError("need at least 3 star candidates")
    pixels = img.pixels.astype(np.float64)
    background = float(np.median(pixels))
    rms = 1.4826 * float(np.median(np.abs(pixels - background)))
    fits: list[tuple[float, float, float]] = []
    for x, y in star_candidates:
        cx, cy = int(round(x)), int(round(y))
        r = stamp_radius
        y0, y1 = max(0, cy - r), min(img.height, cy + r + 1)
        x0, x1 = max(0, cx - r), min(img.width, cx + r + 1)
        stamp = pixels[y0:y1, x0:x1]
        if stamp.size < 25:
            continue
        iy, ix = np.unravel_index(np.argmax(stamp), stamp.shape)
        peak = stamp[iy, ix]
        if peak - background < 5.0 * rms:
            continue  # not a usable star
        if abs(ix + x0 - cx) > 3 or abs(iy + y0 - cy) > 3:
            continue  # candidate is not a local maximum here
        yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        xx += 0.5
        yy += 0.5
        p0 = np.array([peak - background, ix + x0 + 0.5, iy + y0 + 0.5, 2.0, 2.0, 0.0, background])
        try:
            res = least_squares(
                lambda p: (_gauss2d(p, xx, yy) - stamp).ravel(), p0, method="lm", max_nfev=400
            )
        except Exception:
            continue
        amp, _, _, sx, sy, theta, _ = res.x
        resid_rms = math.sqrt(float(np.mean(res.fun**2)))
        if not res.success or amp <= 0 or resid_rms > 0.2 * amp:
            continue
        if not (np.isfinite(sx) and np.isfinite(sy)) or sx == 0 or sy == 0:
            continue
        fits.append((abs(sx), abs(sy), theta % math.pi))
    if len(fits) < 3:
        raise ValueError(f"only {len(fits)} usable stars of {len(star_candidates)} candidates")
    sx = float(np.median([f[0] for f in fits]))
    sy = float(np.median([f[1] for f in fits]))
    theta = float(np.median([f[2] for f in fits]))
    return PsfModel(fwhm_x=sigma_to_fwhm(sx), fwhm_y=sigma_to_fwhm(sy), theta=theta)


# --- synthetic star fields ---------------------------------------------------


def make_star_field(
    width: int,
    height: int,
    n_stars: int,
    psf: PsfModel,
    noise: NoiseModel,
    seed: int,
    flux_range: tuple[float, float] = (2e3, 2e5),
    add_noise: bool = True,
) -> tuple[Raster, list[tuple[float, float]]]:
    """Flat sky plus Gaussian stars, Poisson-realized; returns image and star centers."""
    rng = np.random.default_rng(seed)
    sky = noise.sky_electrons_per_px + noise.exposure_s * noise.dark_current
    expected = np.full((height, width), sky, dtype=np.float64)
    sx, sy = fwhm_to_sigma(psf.fwhm_x), fwhm_to_sigma(psf.fwhm_y)
    centers: list[tuple[float, float]] = []
    margin = 4.0 * max(sx, sy)
    for _ in range(n_stars):
        x = rng.uniform(margin, width - margin)
        y = rng.uniform(margin, height - margin)
        flux = math.exp(rng.uniform(math.log(flux_range[0]), math.log(flux_range[1])))
        amp = flux / (2.0 * math.pi * sx * sy)
        r = int(math.ceil(5.0 * max(sx, sy)))
        x0, x1 = max(0, int(x) - r), min(width, int(x) + r + 1)
        y0, y1 = max(0, int(y) - r), min(height, int(y) + r + 1)
        yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        expected[y0:y1, x0:x1] += amp * np.exp(
            -0.5 * (((xx + 0.5 - x) / sx) ** 2 + ((yy + 0.5 - y) / sy) ** 2)
        )
        centers.append((x, y))
    data = rng.poisson(expected).astype(np.float32) if add_noise else expected
    return Raster(data, {"kind": "star-field", "seed": str(seed)}), centers


# --- dataset generation ------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    """One labeled image: paths, injected trails, and their realized SNRs."""

    image_path: str
    mask_path: str
    trails: tuple[TrailSpec, ...]
    realized_snr: tuple[float, ...]
    split: str
    seed: int
    background_id: int = -1


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    seed: int
    root: Path | None = None  # directory entry paths are relative to

    def subset(self, split: str) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == split)

    def resolve(self, relative_path: str) -> Path:
        if self.root is None:
            raise ValueError("manifest has no root directory; load it from disk")
        return self.root / relative_path


def split_counts(count: int, split_ratio: float) -> tuple[int, int]:
    """(train, validation) sizes: ceil(count * ratio) train, remainder validation."""
    n_train = math.ceil(count * split_ratio)
    return n_train, count - n_train


def _draw_geometry(
    rng: np.random.Generator, width: int, height: int, fwhm: float, aperture_half: int
) -> TrailSpec:
    """Random trail whose midpoint aperture fits inside the frame."""
    diag = math.hypot(width, height)
    for _ in range(1000):
        angle = rng.uniform(0.0, math.pi)
        length = rng.uniform(0.5, 1.5) * diag
        cx = rng.uniform(0.0, width)
        cy = rng.uniform(0.0, height)
        dx, dy = 0.5 * length * math.cos(angle), 0.5 * length * math.sin(angle)
        p0, p1 = (cx - dx, cy - dy), (cx + dx, cy + dy)
        clipped = _clip_segment(p0, p1, width, height)
        if clipped is None:
            continue
        q0, q1 = clipped
        if math.hypot(q1[0] - q0[0], q1[1] - q0[1]) < 0.25 * diag:
            continue
        mx, my = 0.5 * (q0[0] + q1[0]), 0.5 * (q0[1] + q1[1])
        icx, icy = int(mx), int(my)
        pad = aperture_half + 1
        if pad <= icx < width - pad and pad <= icy < height - pad:
            return TrailSpec(q0, q1, fwhm)
    raise RuntimeError("failed to draw a trail geometry that fits the frame")


def _clip_segment(p0, p1, width, height):
    """Liang-Barsky clip of segment p0-p1 to [0,width]x[0,height]."""
    x0, y0 = p0
    dx, dy = p1[0] - x0, p1[1] - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0), (dx, width - x0), (-dy, y0), (dy, height - y0)):
        if p == 0.0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t0 >= t1:
        return None
    return (x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy)


def draw_target_snr(
    rng: np.random.Generator, snr_range: tuple[float, float], snr_weights
) -> float:
    """Sample a target SNR from weighted equal-width bins over snr_range."""
    lo, hi = snr_range
    if snr_weights is None:
        return float(rng.uniform(lo, hi))
    w = np.asarray(snr_weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or (w < 0).any() or w.sum() == 0:
        raise ValueError("snr_weights must be non-negative with a positive sum")
    edges = np.linspace(lo, hi, w.size + 1)
    k = int(rng.choice(w.size, p=w / w.sum()))
    return float(rng.uniform(edges[k], edges[k + 1]))


def generate_dataset(
    backgrounds: list[Raster],
    count: int,
    snr_range: tuple[float, float],
    snr_weights,
    split_ratio: float,
    seed: int,
    out_dir,
    psf: PsfModel | None = None,
    noise: NoiseModel | None = None,
    trails_per_entry: int = 1,
) -> DatasetManifest:
    """Render `count` labeled trail images and write them plus a manifest.

    Entries are derived independently from (seed, index) RNG streams, so the
    output is bitwise reproducible and generation order is immaterial. Train
    and validation entries use disjoint background images; counts follow
    split_counts. Realized SNR per trail is recomputed from the noiseless
    render of the realized trail, never copied from the target.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = snr_range
    if not (0.0 < lo < hi <= 100.0):
        raise ValueError("snr_range must satisfy 0 < low < high <= 100")
    if len(backgrounds) < 2:
        raise ValueError("need >= 2 distinct backgrounds for disjoint splits")
    if not (0.0 < split_ratio <= 1.0):
        raise ValueError("split_ratio must be in (0, 1]")
    psf = psf or PsfModel(fwhm_x=4.712, fwhm_y=4.712)
    noise = noise or NoiseModel()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    n_train, n_val = split_counts(count, split_ratio)
    # disjoint background pools; validation gets at least one when it has entries
    n_bg_val = max(1, round(len(backgrounds) * (1.0 - split_ratio))) if n_val else 0
    bg_order = np.random.default_rng([seed, 0xB6]).permutation(len(backgrounds))
    val_pool = [int(i) for i in bg_order[:n_bg_val]]
    train_pool = [int(i) for i in bg_order[n_bg_val:]]
    if not train_pool:
        raise ValueError("not enough backgrounds for a train pool")

    ap_half = aperture_from_psf(psf).half
    entries = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        split = "train" if i < n_train else "validation"
        pool = train_pool if split == "train" else val_pool
        bg_id = pool[int(rng.integers(len(pool)))]
        bg = backgrounds[bg_id]
        trails = []
        realized = []
        for _ in range(trails_per_entry):
            geom = _draw_geometry(rng, bg.width, bg.height, psf.fwhm, ap_half)
            target = draw_target_snr(rng, snr_range, snr_weights)
            amp = solve_peak_for_snr(target, geom, psf, noise, bg)
            spec = TrailSpec(geom.p0, geom.p1, geom.fwhm, peak_amplitude=amp, target_snr=target)
            realized.append(
                compute_snr(Raster(trail_flux(bg.width, bg.height, spec)), spec, psf, noise)
            )
            trails.append(spec)
        entry_seed = int(rng.integers(2**63))
        img = bg
        mask_bits = np.zeros((bg.height, bg.width), dtype=bool)
        for k, spec in enumerate(trails):
            img, m = render_trail(img, spec, rng_seed=entry_seed + k)
            mask_bits |= m.bits
        image_rel = f"images/entry_{i:05d}.trsc"
        mask_rel = f"masks/entry_{i:05d}.trsc"
        save_raster(img, out_dir / image_rel, FORMAT_FLAT)
        save_raster(
            Raster(mask_bits.astype(np.float32)), out_dir / mask_rel, FORMAT_FLAT, flat_dtype="uint16"
        )
        entries.append(
            ManifestEntry(
                image_path=image_rel,
                mask_path=mask_rel,
                trails=tuple(trails),
                realized_snr=tuple(realized),
                split=split,
                seed=entry_seed,
                background_id=bg_id,
            )
        )
    manifest = DatasetManifest(entries=tuple(entries), seed=seed, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write the manifest as line-delimited JSON: a header line, then entries."""
    lines = [json.dumps({"record": "header", "seed": manifest.seed, "entries": len(manifest.entries)})]
    for e in manifest.entries:
        lines.append(
            json.dumps(
                {
                    "record": "entry",
                    "image": e.image_path,
                    "mask": e.mask_path,
                    "split": e.split,
                    "seed": e.seed,
                    "background": e.background_id,
                    "realized_snr": [round(s, 6) for s in e.realized_snr],
                    "trails": [
                        {
                            "p0": list(t.p0),
                            "p1": list(t.p1),
                            "fwhm": t.fwhm,
                            "peak_amplitude": t.peak_amplitude,
                            "target_snr": t.target_snr,
                        }
                        for t in e.trails
                    ],
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    """Read a manifest written by save_manifest; paths stay relative."""
    path = Path(path)
    seed = 0
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("record") == "header":
            seed = int(rec["seed"])
            continue
        trails = tuple(
            TrailSpec(
                p0=tuple(t["p0"]),
                p1=tuple(t["p1"]),
                fwhm=t["fwhm"],
                peak_amplitude=t["peak_amplitude"],
                target_snr=t["target_snr"],
            )
            for t in rec["trails"]
        )
        entries.append(
            ManifestEntry(
                image_path=rec["image"],
                mask_path=rec["mask"],
                trails=trails,
                realized_snr=tuple(rec["realized_snr"]),
                split=rec["split"],
                seed=int(rec["seed"]),
                background_id=int(rec.get("background", -1)),
            )
        )
    return DatasetManifest(entries=tuple(entries), seed=seed, root=path.parent)


def load_mask(path) -> BinaryMask:
    """Read a mask stored as a uint16 flat-binary raster of 0/1 values."""
    return BinaryMask(load_raster(path, FORMAT_FLAT).pixels > 0.5)
