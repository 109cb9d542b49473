"""Per-image color, affect and composition features in HSV space.

Images are float arrays of shape ``(height, width, 3)`` holding RGB values
in [0, 1]. Hue is measured in degrees on [0, 360); saturation and value
(brightness) are unitless in [0, 1].

Only pixels whose hue is reliable (``0.15 <= V <= 0.95`` and ``S > 0.2``)
contribute to hue statistics. An image without a single such pixel is
grayscale and keeps only its grayscale flag, contrast and sharpness.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InvalidInputError

V_MIN, V_MAX = 0.15, 0.95
S_MIN = 0.2

HUE_COUNT_BINS = 20
HUE_COUNT_FRACTION = 0.05

HIST6_NAMES = ("red", "yellow", "green", "cyan", "blue", "magenta")
HIST12_NAMES = (
    "red", "orange", "yellow", "chartreuse", "green", "spring",
    "cyan", "azure", "blue", "violet", "magenta", "rose",
)

# (brightness coefficient, saturation coefficient)
PLEASURE = (0.69, 0.22)
AROUSAL = (-0.31, 0.60)
DOMINANCE = (-0.76, 0.32)

DEFAULT_PERSON_TAGS = frozenset({
    "people", "person", "man", "woman", "adult", "child", "children", "boy",
    "girl", "baby", "portrait", "face", "couple", "family", "group", "crowd",
    "men", "women", "kid", "teenager", "friends",
})


class HsvPixel(NamedTuple):
    hue: float
    saturation: float
    value: float


def rgb_to_hsv(p: Sequence[float]) -> HsvPixel:
    """Hexcone conversion of one RGB triple. Hue is 0 for achromatic pixels."""
    r, g, b = (float(c) for c in p)
    mx, mn = max(r, g, b), min(r, g, b)
    delta = mx - mn
    s = delta / mx if mx > 0 else 0.0
    if delta == 0:
        h = 0.0
    elif mx == r:
        h = 60.0 * (((g - b) / delta) % 6.0)
    elif mx == g:
        h = 60.0 * ((b - r) / delta + 2.0)
    else:
        h = 60.0 * ((r - g) / delta + 4.0)
    h %= 360.0
    if h >= 360.0:
        h = 0.0
    return HsvPixel(h, s, mx)


def rgb_to_hsv_array(img: np.ndarray):
    """Vectorised :func:`rgb_to_hsv`; returns ``(hue, saturation, value)`` arrays
    shaped like ``img[..., 0]``."""
    img = np.asarray(img, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    mx = img.max(axis=-1)
    mn = img.min(axis=-1)
    delta = mx - mn
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
        safe = np.where(delta > 0, delta, 1.0)
        h_r = 60.0 * (((g - b) / safe) % 6.0)
        h_g = 60.0 * ((b - r) / safe + 2.0)
        h_b = 60.0 * ((r - g) / safe + 4.0)
    h = np.where(mx == r, h_r, np.where(mx == g, h_g, h_b))
    h = np.where(delta > 0, h, 0.0) % 360.0
    h[h >= 360.0] = 0.0
    return h, s, mx


def validate_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError("expected an (height, width, 3) RGB array, got shape %r" % (arr.shape,))
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError("image has no pixels")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError("channel values must lie in [0, 1]")
    return arr


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG file into a float RGB array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def _accurate(s, v):
    return (v >= V_MIN) & (v <= V_MAX) & (s > S_MIN)


def accurate_hue_mask(img) -> np.ndarray:
    """Boolean mask of pixels whose hue can be computed reliably."""
    _, s, v = rgb_to_hsv_array(validate_image(img))
    return _accurate(s, v)


def is_grayscale(img) -> bool:
    return not bool(accurate_hue_mask(img).any())


def affect_scores(brightness_mean: float, saturation_mean: float):
    """Pleasure, arousal and dominance as linear functions of mean V and S."""
    v, s = brightness_mean, saturation_mean
    return (
        PLEASURE[0] * v + PLEASURE[1] * s,
        AROUSAL[0] * v + AROUSAL[1] * s,
        DOMINANCE[0] * v + DOMINANCE[1] * s,
    )


def hue_count_from_hues(hues: np.ndarray):
    """Hue count over already-filtered hue angles, or ``None`` if empty."""
    hues = np.asarray(hues, dtype=np.float64)
    if hues.size == 0:
        return None
    idx = np.minimum((hues // (360.0 / HUE_COUNT_BINS)).astype(np.int64), HUE_COUNT_BINS - 1)
    hist = np.bincount(idx, minlength=HUE_COUNT_BINS)
    count = int(np.count_nonzero(hist >= HUE_COUNT_FRACTION * hist.max()))
    return count, math.log(count)


def hue_count(img):
    """Number of 18-degree hue bins holding at least 5% of the largest bin.

    Returns ``(count, log(count))``, or ``None`` when the image has no
    accurate-hue pixel.
    """
    h, s, v = rgb_to_hsv_array(validate_image(img))
    return hue_count_from_hues(h[_accurate(s, v)])


def _sector_histogram(hues: np.ndarray, n_bins: int) -> np.ndarray:
    # bins centred on 0, w, 2w, ...; each covers [centre - w/2, centre + w/2)
    width = 360.0 / n_bins
    idx = np.floor((hues + width / 2.0) / width).astype(np.int64) % n_bins
    hist = np.bincount(idx, minlength=n_bins).astype(np.float64)
    return hist / hues.size


def hue_histograms_from_hues(hues: np.ndarray):
    hues = np.asarray(hues, dtype=np.float64)
    if hues.size == 0:
        return None
    return _sector_histogram(hues, 6), _sector_histogram(hues, 12)


def hue_histograms(img):
    """Six-sector (primary/secondary) and twelve-sector (adds tertiary) hue
    proportions over accurate-hue pixels, or ``None`` if there are none."""
    h, s, v = rgb_to_hsv_array(validate_image(img))
    return hue_histograms_from_hues(h[_accurate(s, v)])


def warm_cold_from_hues(hues: np.ndarray):
    hues = np.asarray(hues, dtype=np.float64)
    if hues.size == 0:
        return None
    warm = np.count_nonzero((hues >= 285.0) | (hues <= 75.0)) / hues.size
    cold = np.count_nonzero((hues >= 105.0) & (hues <= 255.0)) / hues.size
    return warm, cold


def warm_cold_fractions(img):
    """Fractions of accurate-hue pixels that are warm (285..75, wrapping
    through red) and cold (105..255)."""
    h, s, v = rgb_to_hsv_array(validate_image(img))
    return warm_cold_from_hues(h[_accurate(s, v)])


def circular_sd_degrees(hues: np.ndarray) -> float:
    theta = np.deg2rad(np.asarray(hues, dtype=np.float64))
    resultant = math.hypot(np.cos(theta).mean(), np.sin(theta).mean())
    # balanced opposite hues give R = 0; cap the spread instead of returning inf
    resultant = min(max(resultant, 1e-12), 1.0)
    return math.degrees(math.sqrt(-2.0 * math.log(resultant)))


def contrast_from_values(values: np.ndarray) -> float:
    if values.max() == values.min():
        return 0.0
    return min(2.0 * float(np.std(values)), 1.0)


def contrast_and_sharpness(img):
    """Contrast is twice the population sd of brightness (clamped to 1);
    the sharpness proxy is ``contrast * log(1 + hue_count)``."""
    h, s, v = rgb_to_hsv_array(validate_image(img))
    contrast = contrast_from_values(v)
    hc = hue_count_from_hues(h[_accurate(s, v)])
    return contrast, contrast * math.log1p(hc[0] if hc else 0)


@dataclass(frozen=True)
class ColorFeatures:
    """Features of one image. ``None`` marks a field as absent."""

    is_grayscale: bool
    contrast: float
    sharpness_proxy: float
    brightness_mean: Optional[float] = None
    saturation_mean: Optional[float] = None
    brightness_sd: Optional[float] = None
    saturation_sd: Optional[float] = None
    hue_sd: Optional[float] = None
    pleasure: Optional[float] = None
    arousal: Optional[float] = None
    dominance: Optional[float] = None
    hue_count: Optional[int] = None
    hue_count_log: Optional[float] = None
    hue_hist6: Optional[tuple] = None
    hue_hist12: Optional[tuple] = None
    warm_fraction: Optional[float] = None
    cold_fraction: Optional[float] = None

    def to_row(self) -> dict:
        """Flat mapping with histograms expanded to ``hue_hist6_red`` etc.
        Absent values become NaN; ``is_grayscale`` becomes 0/1."""
        row = {}
        for name, value in asdict(self).items():
            if name == "hue_hist6":
                for label, x in zip(HIST6_NAMES, value or (None,) * 6):
                    row["hue_hist6_" + label] = _num(x)
            elif name == "hue_hist12":
                for label, x in zip(HIST12_NAMES, value or (None,) * 12):
                    row["hue_hist12_" + label] = _num(x)
            elif name == "is_grayscale":
                row[name] = int(value)
            else:
                row[name] = _num(value)
        return row

    @classmethod
    def from_row(cls, row) -> "ColorFeatures":
        def get(key):
            x = row.get(key)
            if x is None or x == "" or (isinstance(x, float) and math.isnan(x)):
                return None
            return float(x)

        kw = {}
        for f in fields(cls):
            if f.name == "is_grayscale":
                kw[f.name] = bool(int(float(row[f.name])))
            elif f.name == "hue_hist6":
                vals = [get("hue_hist6_" + n) for n in HIST6_NAMES]
                kw[f.name] = None if vals[0] is None else tuple(vals)
            elif f.name == "hue_hist12":
                vals = [get("hue_hist12_" + n) for n in HIST12_NAMES]
                kw[f.name] = None if vals[0] is None else tuple(vals)
            elif f.name == "hue_count":
                x = get(f.name)
                kw[f.name] = None if x is None else int(x)
            else:
                x = get(f.name)
                if x is None and f.name in ("contrast", "sharpness_proxy"):
                    x = 0.0
                kw[f.name] = x
        return cls(**kw)


def _num(x):
    return float("nan") if x is None else float(x)


def feature_columns() -> list:
    """Column names produced by :meth:`ColorFeatures.to_row`, in order."""
    return list(ColorFeatures(False, 0.0, 0.0).to_row())


def extract_color_features(img) -> ColorFeatures:
    img = validate_image(img)
    h, s, v = rgb_to_hsv_array(img)
    h, s, v = h.ravel(), s.ravel(), v.ravel()
    mask = _accurate(s, v)
    contrast = contrast_from_values(v)
    if not mask.any():
        return ColorFeatures(is_grayscale=True, contrast=contrast, sharpness_proxy=0.0)

    hues = h[mask]
    count, log_count = hue_count_from_hues(hues)
    hist6, hist12 = hue_histograms_from_hues(hues)
    warm, cold = warm_cold_from_hues(hues)
    b_mean, s_mean = float(v.mean()), float(s.mean())
    pleasure, arousal, dominance = affect_scores(b_mean, s_mean)
    return ColorFeatures(
        is_grayscale=False,
        contrast=contrast,
        sharpness_proxy=contrast * math.log1p(count),
        brightness_mean=b_mean,
        saturation_mean=s_mean,
        brightness_sd=float(v.std()),
        saturation_sd=float(s.std()),
        hue_sd=circular_sd_degrees(hues),
        pleasure=pleasure,
        arousal=arousal,
        dominance=dominance,
        hue_count=count,
        hue_count_log=log_count,
        hue_hist6=tuple(float(x) for x in hist6),
        hue_hist12=tuple(float(x) for x in hist12),
        warm_fraction=float(warm),
        cold_fraction=float(cold),
    )


# Columns pooled over every image rather than only the colored ones.
ALL_IMAGE_COLUMNS = ("contrast", "sharpness_proxy")


@dataclass
class UserFeatureVector:
    user_id: str
    n_images: int
    below_threshold: bool
    grayscale_fraction: float
    means: dict
    pct_image_posts: Optional[float] = None
    pct_posts_with_people: Optional[float] = None

    def to_row(self) -> dict:
        row = {"user_id": self.user_id, "n_images": self.n_images,
               "grayscale_fraction": self.grayscale_fraction}
        row.update(self.means)
        row["pct_image_posts"] = _num(self.pct_image_posts)
        row["pct_posts_with_people"] = _num(self.pct_posts_with_people)
        return row


def aggregate_user(
    user_id: str,
    features: Sequence[ColorFeatures],
    tag_bags: Optional[Sequence[Optional[Iterable[str]]]] = None,
    min_images: int = 20,
    person_tags: Iterable[str] = DEFAULT_PERSON_TAGS,
    n_posts: Optional[int] = None,
) -> UserFeatureVector:
    """Mean-pool per-image features to one user vector.

    Color fields are averaged over non-grayscale images only; contrast and
    sharpness over all images. A user with fewer than ``min_images`` images
    is returned with ``below_threshold=True`` rather than rejected.
    ``tag_bags`` aligns with ``features``; ``None`` entries are images whose
    tags are missing and are left out of the people share.
    """
    features = list(features)
    if not features:
        raise InvalidInputError("user %r has no images" % (user_id,))
    rows = [f.to_row() for f in features]
    columns = [c for c in rows[0] if c not in ("is_grayscale", "hue_count")]
    gray = np.array([f.is_grayscale for f in features])
    means = {}
    for col in columns:
        use = rows if col in ALL_IMAGE_COLUMNS else [r for r, g in zip(rows, gray) if not g]
        vals = [r[col] for r in use if not math.isnan(r[col])]
        means[col] = math.fsum(vals) / len(vals) if vals else float("nan")

    people = None
    if tag_bags is not None:
        if len(tag_bags) != len(features):
            raise InvalidInputError("tag_bags must align with features")
        person_tags = frozenset(person_tags)
        tagged = [set(b) for b in tag_bags if b is not None]
        if tagged:
            people = sum(1 for b in tagged if b & person_tags) / len(tagged)

    image_share = None
    if n_posts:
        image_share = min(len(features) / n_posts, 1.0)

    return UserFeatureVector(
        user_id=user_id,
        n_images=len(features),
        below_threshold=len(features) < min_images,
        grayscale_fraction=float(gray.mean()),
        means=means,
        pct_image_posts=image_share,
        pct_posts_with_people=people,
    )
