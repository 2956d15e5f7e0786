"""Image I/O semantics, color conversion, resizing, Otsu mask detection,
paired-dataset ingestion, and a synthetic shadow-pair generator.

Images are numpy ``(H, W, 3)`` float arrays with sRGB semantics in [0, 1];
shadow masks are ``(H, W)`` floats, exactly {0, 1} for dataset masks.  PNG
ingestion maps 8-bit values as ``v / 255`` and emission rounds back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ContractError, DataError

# sRGB (D65) linear RGB -> XYZ, IEC 61966-2-1 primaries.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE_POINT = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])  # Rec.601


def _check_image(img: np.ndarray, what: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"{what} must be (H, W, 3), got {img.shape}")
    return img


def _check_mask(mask: np.ndarray, what: str = "mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ContractError(f"{what} must be (H, W), got {mask.shape}")
    return mask


def clamp01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an sRGB image, same value range as the input."""
    return _check_image(img).astype(np.float64) @ LUMA_WEIGHTS


# ---------------------------------------------------------------------------
# color conversion
# ---------------------------------------------------------------------------


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB in [0, 1] -> CIE L*a*b* under D65 (L in [0, 100]).

    Standard chain: sRGB companding removal, linear RGB -> XYZ, XYZ -> LAB.
    Computed in float64 regardless of input dtype.
    """
    rgb = _check_image(img).astype(np.float64)
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    xyz_n = xyz / _WHITE_POINT
    f = np.where(
        xyz_n > _LAB_DELTA**3,
        np.cbrt(xyz_n),
        xyz_n / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0,
    )
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * fy - 16.0
    lab[..., 1] = 500.0 * (fx - fy)
    lab[..., 2] = 200.0 * (fy - fz)
    return lab


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab`; output clipped to the [0, 1] gamut."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[2] != 3:
        raise ContractError(f"lab array must be (H, W, 3), got {lab.shape}")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz_n = np.where(f > _LAB_DELTA, f**3, 3.0 * _LAB_DELTA**2 * (f - 4.0 / 29.0))
    linear = (xyz_n * _WHITE_POINT) @ _XYZ_TO_RGB.T
    linear = np.clip(linear, 0.0, None)
    rgb = np.where(
        linear <= 0.0031308, linear * 12.92, 1.055 * linear ** (1.0 / 2.4) - 0.055
    )
    return clamp01(rgb)


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------


def _bilinear_axis_coords(dst: int, src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    return lo, hi, frac


def resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize with the half-pixel-center convention."""
    img = _check_image(img)
    if h < 1 or w < 1:
        raise ContractError("resize: target extents must be positive")
    if img.shape[0] == h and img.shape[1] == w:
        return img.copy()
    src = img.astype(np.float64)
    ylo, yhi, yf = _bilinear_axis_coords(h, img.shape[0])
    xlo, xhi, xf = _bilinear_axis_coords(w, img.shape[1])
    top = src[ylo][:, xlo] * (1 - xf)[None, :, None] + src[ylo][:, xhi] * xf[None, :, None]
    bot = src[yhi][:, xlo] * (1 - xf)[None, :, None] + src[yhi][:, xhi] * xf[None, :, None]
    out = top * (1 - yf)[:, None, None] + bot * yf[:, None, None]
    return out.astype(img.dtype, copy=False)


def resize_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbor resize; preserves binarity of dataset masks."""
    mask = _check_mask(mask)
    if h < 1 or w < 1:
        raise ContractError("resize_mask: target extents must be positive")
    if mask.shape == (h, w):
        return mask.copy()
    ys = np.minimum(
        ((np.arange(h, dtype=np.float64) + 0.5) * (mask.shape[0] / h)).astype(np.int64),
        mask.shape[0] - 1,
    )
    xs = np.minimum(
        ((np.arange(w, dtype=np.float64) + 0.5) * (mask.shape[1] / w)).astype(np.int64),
        mask.shape[1] - 1,
    )
    return mask[ys][:, xs]


# ---------------------------------------------------------------------------
# separable gaussian filtering (shared by the synthesizer and SSIM)
# ---------------------------------------------------------------------------


def gaussian_taps(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalized 1-d gaussian kernel, truncated at ``radius`` (default 3*sigma)."""
    if sigma <= 0:
        raise ContractError("gaussian_taps: sigma must be positive")
    if radius is None:
        radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(xs**2) / (2.0 * sigma**2))
    return taps / taps.sum()


def separable_filter2d(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Correlate a 2-d plane with taps along both axes, mirror-padded.

    Padding is ``symmetric`` (edge pixel included in the mirror), so the
    output has the same shape as the input.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ContractError(f"separable_filter2d expects a 2-d plane, got {plane.shape}")
    r = (len(taps) - 1) // 2
    padded = np.pad(plane, ((r, r), (0, 0)), mode="symmetric")
    rows = np.zeros_like(plane)
    for i, t in enumerate(taps):
        rows += t * padded[i : i + plane.shape[0], :]
    padded = np.pad(rows, ((0, 0), (r, r)), mode="symmetric")
    out = np.zeros_like(plane)
    for i, t in enumerate(taps):
        out += t * padded[:, i : i + plane.shape[1]]
    return out


def gaussian_blur(plane: np.ndarray, sigma: float) -> np.ndarray:
    return separable_filter2d(plane, gaussian_taps(sigma))


# ---------------------------------------------------------------------------
# Otsu mask detection
# ---------------------------------------------------------------------------


def otsu_threshold(values: np.ndarray) -> int:
    """Between-class-variance-maximizing threshold over 256 bins.

    ``values`` are reals in [0, 1]; they are quantized to ``round(v * 255)``.
    Returns the bin index t such that the foreground is ``bin > t``.  For a
    degenerate (single-bin) histogram returns 255, i.e. an empty foreground.
    """
    q = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(q.reshape(-1), minlength=256).astype(np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    w1 = total - w0
    cum_mean = np.cumsum(hist * np.arange(256))
    mean_total = cum_mean[-1]
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return 255
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = cum_mean / w0
        mu1 = (mean_total - cum_mean) / w1
        between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return int(np.argmax(between))


def otsu_mask(shadow: np.ndarray, shadow_free: np.ndarray) -> np.ndarray:
    """Binary shadow mask from a shadow / shadow-free pair.

    Thresholds the absolute luma difference with Otsu's method; pixels whose
    quantized difference exceeds the threshold are marked 1.  A constant
    difference image yields the all-zero mask.
    """
    shadow = _check_image(shadow, "shadow")
    shadow_free = _check_image(shadow_free, "shadow_free")
    if shadow.shape != shadow_free.shape:
        raise ContractError(
            f"otsu_mask: size mismatch {shadow.shape} vs {shadow_free.shape}"
        )
    diff = np.abs(luma(shadow_free) - luma(shadow))
    t = otsu_threshold(diff)
    q = np.clip(np.rint(diff * 255.0), 0, 255).astype(np.int64)
    return (q > t).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG ingestion / emission
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except FileNotFoundError:
        raise DataError(f"image not found: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    return clamp01(arr / 255.0)


def save_image(path, img: np.ndarray) -> None:
    img = _check_image(img)
    data = np.rint(clamp01(img) * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path)


def load_mask(path, binarize: bool = True) -> np.ndarray:
    """Read a grayscale mask; dataset masks are binarized at 0.5."""
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise DataError(f"mask not found: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from None
    if binarize:
        return (arr >= 0.5).astype(np.float32)
    return arr


def save_mask(path, mask: np.ndarray) -> None:
    mask = _check_mask(mask)
    data = np.rint(np.clip(mask, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="L").save(path)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Triplet:
    """A shadow image, its shadow-free counterpart, and the binary mask."""

    shadow: np.ndarray
    shadow_free: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self):
        hw = self.shadow.shape[:2]
        if self.shadow_free.shape[:2] != hw or self.mask.shape != hw:
            raise ContractError(
                f"triplet {self.id!r}: component sizes differ "
                f"({self.shadow.shape[:2]}, {self.shadow_free.shape[:2]}, {self.mask.shape})"
            )


_ISTD_SUFFIXES = {"_A": "shadow", "_B": "mask", "_C": "shadow_free"}
_SRD_DIRS = {"shadow": "shadow", "mask": "mask", "shadow_free": "shadow_free"}
_IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp"}


def _scan_dir(d: Path) -> dict[str, Path]:
    return {
        p.stem: p
        for p in sorted(d.iterdir())
        if p.is_file() and p.suffix.lower() in _IMAGE_EXTS
    }


def _resolve_layout_dirs(root: Path, layout: str) -> dict[str, Path]:
    if layout == "istd":
        found: dict[str, Path] = {}
        for child in sorted(root.iterdir()):
            if not child.is_dir():
                continue
            for suffix, role in _ISTD_SUFFIXES.items():
                if child.name.endswith(suffix):
                    if role in found:
                        raise DataError(
                            f"istd layout: multiple directories end with {suffix!r} "
                            f"({found[role].name}, {child.name})"
                        )
                    found[role] = child
        missing = [s for s, r in _ISTD_SUFFIXES.items() if r not in found]
        if missing:
            raise DataError(f"istd layout: no directory ending with {missing[0]!r} in {root}")
        return found
    if layout == "srd":
        found = {}
        for name, role in _SRD_DIRS.items():
            d = root / name
            if not d.is_dir():
                raise DataError(f"srd layout: missing directory {d}")
            found[role] = d
        return found
    raise ContractError(f"unknown dataset layout {layout!r}")


def load_dataset(root, layout: str = "istd") -> list[Triplet]:
    """Load shadow/mask/shadow-free triplets matched by filename stem.

    Returns triplets in deterministic lexicographic stem order.  Any stem
    present in one directory but missing a counterpart raises a
    :class:`DataError` naming the orphan.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root does not exist: {root}")
    dirs = _resolve_layout_dirs(root, layout)
    files = {role: _scan_dir(d) for role, d in dirs.items()}
    stems = sorted(set().union(*[set(f) for f in files.values()]))
    orphans = []
    for stem in stems:
        for role in ("shadow", "mask", "shadow_free"):
            if stem not in files[role]:
                orphans.append(f"{stem} (missing in {dirs[role].name})")
    if orphans:
        raise DataError("orphan dataset entries: " + ", ".join(orphans))
    triplets = []
    for stem in stems:
        triplets.append(
            Triplet(
                shadow=load_image(files["shadow"][stem]),
                shadow_free=load_image(files["shadow_free"][stem]),
                mask=load_mask(files["mask"][stem]),
                id=stem,
            )
        )
    return triplets


def save_dataset(root, triplets, dir_prefix: str = "train") -> None:
    """Write triplets in the ISTD directory layout (the canonical interchange
    format: ``<prefix>_A`` shadow, ``<prefix>_B`` mask, ``<prefix>_C``
    shadow-free)."""
    root = Path(root)
    sub = {
        "shadow": root / f"{dir_prefix}_A",
        "mask": root / f"{dir_prefix}_B",
        "shadow_free": root / f"{dir_prefix}_C",
    }
    for d in sub.values():
        d.mkdir(parents=True, exist_ok=True)
    for t in triplets:
        save_image(sub["shadow"] / f"{t.id}.png", t.shadow)
        save_mask(sub["mask"] / f"{t.id}.png", t.mask)
        save_image(sub["shadow_free"] / f"{t.id}.png", t.shadow_free)


# ---------------------------------------------------------------------------
# synthetic shadow pairs
# ---------------------------------------------------------------------------


def _smooth_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Seeded smooth random RGB texture in roughly [0.15, 0.85]."""
    ch = max(2, h // 8)
    cw = max(2, w // 8)
    coarse = rng.random((ch, cw, 3))
    tex = resize(coarse, h, w)
    return (0.15 + 0.7 * tex).astype(np.float32)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices in CCW order."""
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]

    def half(iterable):
        out: list[np.ndarray] = []
        for p in iterable:
            while len(out) >= 2 and np.cross(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _rasterize_convex(vertices: np.ndarray, h: int, w: int) -> np.ndarray:
    """Pixel-center rasterization of a CCW convex polygon."""
    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + 0.5
    py = ys + 0.5
    inside = np.ones((h, w), dtype=bool)
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside &= cross >= 0
    return inside.astype(np.float32)


def synth_pair(seed: int, h: int, w: int, darkening: float = 0.35, softness: float = 2.0) -> Triplet:
    """Deterministic synthetic triplet for desk-scale training.

    ``shadow_free`` is a seeded smooth texture; the mask is a random convex
    polygon; the shadow image darkens the texture by ``darkening`` through a
    soft field (the mask blurred with ``sigma = softness``).  The shadow
    image never exceeds the shadow-free image pointwise.
    """
    if not 0.0 <= darkening < 1.0:
        raise ContractError("synth_pair: darkening must be in [0, 1)")
    if softness < 0.0:
        raise ContractError("synth_pair: softness must be >= 0")
    rng = np.random.default_rng(np.random.PCG64(seed))
    shadow_free = _smooth_texture(rng, h, w)

    cx = w * rng.uniform(0.35, 0.65)
    cy = h * rng.uniform(0.35, 0.65)
    radius = min(h, w) * rng.uniform(0.22, 0.38)
    n_pts = int(rng.integers(5, 10))
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n_pts)
    radii = radius * rng.uniform(0.55, 1.0, size=n_pts)
    points = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
    mask = _rasterize_convex(_convex_hull(points), h, w)

    soft = mask if softness == 0 else gaussian_blur(mask, softness).astype(np.float32)
    shadow = clamp01(shadow_free * (1.0 - np.float32(darkening) * soft[..., None]))
    return Triplet(
        shadow=shadow.astype(np.float32),
        shadow_free=shadow_free,
        mask=mask,
        id=f"synth_{seed:06d}",
    )
