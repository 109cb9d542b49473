"""Synthetic manifests with a planted association, for end-to-end checks.

Each user's grayscale share is built so that its partial correlation with
depression, controlling for age, gender and anxiety, equals ``target_r`` in
sample. An extra precomputed block carries a per-image ``null_feature``
drawn independently of everything else.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from PIL import Image
from scipy.optimize import brentq
from scipy.special import ndtr

from ..stats import partial_corr, residualize

SIDE = 8  # image side in pixels
TOPICS = {
    "outdoor": ["sky", "tree", "landscape", "grass", "cloud", "mountain"],
    "food": ["food", "plate", "dinner", "meal", "delicious", "restaurant"],
    "people": ["person", "people", "man", "woman", "smile", "portrait"],
    "city": ["building", "street", "city", "architecture", "car", "road"],
    "pets": ["dog", "cat", "pet", "animal", "cute", "fur"],
}


@dataclass
class SynthInfo:
    manifest: str
    gray_counts: np.ndarray
    achieved_r: float


def _unit(v):
    return v / np.linalg.norm(v)


def planted_counts(depression, controls, target_r, n_images, rng):
    """Per-user grayscale counts whose share has in-sample partial
    correlation ``target_r`` with ``depression`` given ``controls``.

    A latent score mixes the depression residual with an orthogonal noise
    residual; the mixing weight is solved so the rounded share hits the
    target after the normal-CDF squashing.
    """
    n = len(depression)
    design = np.column_stack([np.ones(n), controls])
    d = _unit(residualize(np.asarray(depression, float), design))
    e = residualize(rng.normal(size=n), np.column_stack([design, d]))
    e = _unit(e)

    def counts(c):
        g = c * d + np.sqrt(1 - c * c) * e
        g = g / g.std()
        return np.rint(n_images * ndtr(g)).astype(int)

    def gap(c):
        return partial_corr(counts(c) / n_images, depression, controls)[0] - target_r

    lo, hi = 0.0, 0.99
    c = brentq(gap, lo, hi, xtol=1e-10) if gap(lo) < 0 < gap(hi) else target_r
    m = counts(c)
    return m, partial_corr(m / n_images, depression, controls)[0]


def _gray_pixels(rng):
    level = rng.integers(20, 236)
    return np.full((SIDE, SIDE, 3), level, dtype=np.uint8)


def _hsv_to_rgb(h, s, v):
    """Vectorised hexcone inverse; ``h`` in [0, 1)."""
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        rgb[sel] = np.stack([r[sel], g[sel], b[sel]], axis=-1)
    return rgb


def _color_pixels(rng):
    """Colored image: every pixel has an accurately measurable hue."""
    h = (rng.random() + rng.normal(0, 0.03, (SIDE, SIDE))) % 1.0
    s = rng.uniform(0.4, 1.0, (SIDE, SIDE))
    v = rng.uniform(0.3, 0.9, (SIDE, SIDE))
    return np.rint(_hsv_to_rgb(h, s, v) * 255).astype(np.uint8)


def generate(out_dir, n_users=200, n_images=25, target_r=0.40, seed=0, with_tags=False,
             n_posts=True) -> SynthInfo:
    """Write ``manifest.json``, users, images (tiny PNGs), an ``aux`` block
    with ``null_feature`` and optionally a tag fixture into ``out_dir``."""
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "img"), exist_ok=True)
    age = np.round(rng.normal(35, 10, n_users), 6)
    gender = rng.integers(0, 2, n_users).astype(float)
    anxiety = rng.normal(size=n_users)
    depression = 0.5 * anxiety + 0.02 * (age - 35) + np.sqrt(0.75) * rng.normal(size=n_users)
    controls = np.column_stack([age, gender, anxiety])
    gray, achieved = planted_counts(depression, controls, target_r, n_images, rng)

    users, images, aux, tags = [], [], [], []
    topic_names = sorted(TOPICS)
    for u in range(n_users):
        uid = "u%04d" % u
        rec = {"user_id": uid, "age": float(age[u]), "gender": int(gender[u]),
               "depression": float(depression[u]), "anxiety": float(anxiety[u])}
        if n_posts:
            rec["n_posts"] = int(n_images * 4)
        users.append(rec)
        favourite = topic_names[u % len(topic_names)]
        for j in range(n_images):
            iid = "%s_i%02d" % (uid, j)
            pixels = _gray_pixels(rng) if j < gray[u] else _color_pixels(rng)
            rel = os.path.join("img", iid + ".png")
            Image.fromarray(pixels).save(os.path.join(out_dir, rel))
            images.append({"image_id": iid, "user_id": uid, "kind": "posted", "path": rel})
            aux.append({"image_id": iid, "null_feature": float(rng.normal())})
            if with_tags:
                topic = favourite if rng.random() < 0.6 else topic_names[rng.integers(len(topic_names))]
                words = TOPICS[topic] + [w for t in topic_names if t != topic for w in TOPICS[t][:1]]
                conf = rng.uniform(10, 100, len(words))
                tags.append({"image_id": iid, "tags": [{"tag": w, "confidence": round(float(c), 4)}
                                                       for w, c in zip(words, conf)]})

    def dump(name, rows):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    dump("users.jsonl", users)
    dump("images.jsonl", images)
    pd.DataFrame(aux).to_csv(os.path.join(out_dir, "aux.csv"), index=False, lineterminator="\n")
    if with_tags:
        dump("tags_fixture.jsonl", tags)
    manifest = {"name": "synthetic-%d" % seed, "users": "users.jsonl", "images": "images.jsonl",
                "blocks": {"aux": "aux.csv"}}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return SynthInfo(path, gray, achieved)
