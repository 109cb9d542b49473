"""Manifest loading and validation.

A manifest is a JSON object::

    {"name": "survey",
     "users": "users.jsonl",
     "images": "images.jsonl",
     "blocks": {"aesthetics": "aesthetics.csv"}}

``users.jsonl`` rows carry ``user_id, age, gender, depression, anxiety`` and
optionally ``n_posts``. ``images.jsonl`` rows carry ``image_id, user_id,
kind`` (``posted`` or ``profile``) and either ``path`` (an image file) or
``ref`` (the name of a block holding precomputed color features for it).
Blocks are CSV files keyed by ``image_id`` whose other columns are opaque
floats.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import pandas as pd
from PIL import Image, UnidentifiedImageError

from ..errors import ValidationError
from ..imagefeat import feature_columns

logger = logging.getLogger(__name__)

KINDS = ("posted", "profile")
OUTCOMES = ("age", "gender", "depression", "anxiety")


@dataclass
class Dataset:
    name: str
    root: str
    users: pd.DataFrame  # indexed by user_id, every user in the manifest
    images: pd.DataFrame  # columns image_id, user_id, kind, path, ref
    blocks: dict = field(default_factory=dict)  # name -> DataFrame indexed by image_id
    excluded: dict = field(default_factory=dict)  # user_id -> reason
    min_images: int = 20

    @property
    def included_users(self) -> list:
        return sorted(u for u in self.users.index if u not in self.excluded)

    def images_of(self, kind="posted", included_only=True) -> pd.DataFrame:
        sel = self.images[self.images["kind"] == kind]
        if included_only:
            sel = sel[~sel["user_id"].isin(list(self.excluded))]
        return sel.sort_values("image_id")

    def outcomes(self) -> pd.DataFrame:
        return self.users.loc[self.included_users, list(OUTCOMES)]

    def posted_counts(self) -> dict:
        posted = self.images[self.images["kind"] == "posted"]
        counts = posted.groupby("user_id").size()
        return {u: int(counts.get(u, 0)) for u in self.users.index}


def _read_jsonl(path, what, issues):
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    issues.append("%s line %d: invalid JSON (%s)" % (what, lineno, e.msg))
                    continue
                if not isinstance(rec, dict):
                    issues.append("%s line %d: expected an object" % (what, lineno))
                    continue
                rows.append(rec)
    except OSError as e:
        issues.append("%s file unreadable: %s" % (what, e))
    return rows


def _number(x):
    if x is None or x == "":
        return math.nan
    return float(x)


def _check_users(rows, issues):
    seen, out = set(), []
    for i, rec in enumerate(rows, 1):
        uid = rec.get("user_id")
        if uid is None:
            issues.append("user row %d: missing user_id" % i)
            continue
        uid = str(uid)
        if uid in seen:
            issues.append("duplicate user_id %s" % uid)
            continue
        seen.add(uid)
        row = {"user_id": uid}
        for col in OUTCOMES + ("n_posts",):
            try:
                row[col] = _number(rec.get(col))
            except (TypeError, ValueError):
                issues.append("user %s: %s is not numeric (%r)" % (uid, col, rec.get(col)))
                row[col] = math.nan
        if not math.isnan(row["gender"]) and row["gender"] not in (0.0, 1.0):
            issues.append("user %s: gender must be coded 0/1, got %r" % (uid, rec.get("gender")))
        out.append(row)
    return pd.DataFrame(out, columns=["user_id", *OUTCOMES, "n_posts"]).set_index("user_id")


def _readable_image(path) -> str:
    """Empty string when the file opens as an image, else the reason."""
    if not os.path.isfile(path):
        return "missing file"
    try:
        with Image.open(path) as im:
            im.verify()
    except (OSError, UnidentifiedImageError) as e:
        return "unreadable image (%s)" % e.__class__.__name__
    return ""


def _check_images(rows, users, root, block_names, issues, verify_files):
    seen, out = set(), []
    for i, rec in enumerate(rows, 1):
        iid = rec.get("image_id")
        if iid is None:
            issues.append("image row %d: missing image_id" % i)
            continue
        iid = str(iid)
        if iid in seen:
            issues.append("duplicate image_id %s" % iid)
            continue
        seen.add(iid)
        uid = None if rec.get("user_id") is None else str(rec["user_id"])
        if uid not in users.index:
            issues.append("image %s: unknown user_id %s" % (iid, uid))
        kind = rec.get("kind")
        if kind not in KINDS:
            issues.append("image %s: kind must be posted|profile, got %r" % (iid, kind))
        path, ref = rec.get("path"), rec.get("ref")
        if (path is None) == (ref is None):
            issues.append("image %s: give exactly one of path or ref" % iid)
        elif path is not None:
            path = os.path.join(root, path)
            if verify_files:
                why = _readable_image(path)
                if why:
                    issues.append("image %s: %s %s" % (iid, why, path))
        elif ref not in block_names:
            issues.append("image %s: ref names unknown block %r" % (iid, ref))
        out.append({"image_id": iid, "user_id": uid, "kind": kind, "path": path, "ref": ref})
    return pd.DataFrame(out, columns=["image_id", "user_id", "kind", "path", "ref"])


def _check_block(name, path, issues):
    try:
        df = pd.read_csv(path, dtype={"image_id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        issues.append("block %s: cannot read %s (%s)" % (name, path, e.__class__.__name__))
        return None
    if "image_id" not in df.columns:
        issues.append("block %s: no image_id column" % name)
        return None
    if df["image_id"].duplicated().any():
        dup = sorted(df.loc[df["image_id"].duplicated(), "image_id"])[:5]
        issues.append("block %s: duplicate image_id %s" % (name, ", ".join(dup)))
    df = df.set_index("image_id")
    bad = [c for c in df.columns if not pd.api.types.is_numeric_dtype(df[c])]
    if bad:
        issues.append("block %s: non-numeric columns %s" % (name, ", ".join(bad)))
    return df.astype(float) if not bad else df


def ingest(manifest_path, min_images: int = 20, verify_files: bool = True) -> Dataset:
    """Load and validate a manifest.

    Every problem found is collected and raised together as one
    :class:`ValidationError`. Users who posted fewer than ``min_images``
    images are kept in ``users`` but listed in ``excluded`` with a reason.
    """
    issues = []
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            man = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(["manifest unreadable: %s" % e]) from e
    if not isinstance(man, dict):
        raise ValidationError(["manifest must be a JSON object"])
    root = os.path.dirname(os.path.abspath(manifest_path))
    for key in ("users", "images"):
        if key not in man:
            issues.append("manifest: missing %r" % key)
    if issues:
        raise ValidationError(issues)

    users = _check_users(_read_jsonl(os.path.join(root, man["users"]), "users", issues), issues)
    blocks = {}
    for name, rel in sorted((man.get("blocks") or {}).items()):
        df = _check_block(name, os.path.join(root, rel), issues)
        if df is not None:
            blocks[name] = df
    images = _check_images(_read_jsonl(os.path.join(root, man["images"]), "images", issues),
                           users, root, set(blocks), issues, verify_files)

    known = set(images["image_id"])
    for name, df in blocks.items():
        stray = sorted(set(df.index) - known)
        if stray:
            issues.append("block %s: rows for unknown image_id %s" % (name, ", ".join(stray[:5])))
    color_cols = set(feature_columns())
    for name in sorted(set(images["ref"].dropna())):
        if name in blocks:
            lacking = sorted(color_cols - set(blocks[name].columns))
            if lacking:
                issues.append("block %s: referenced for color features but lacks %s"
                              % (name, ", ".join(lacking[:5])))
            refs = images.loc[images["ref"] == name, "image_id"]
            absent = sorted(set(refs) - set(blocks[name].index))
            if absent:
                issues.append("block %s: no row for image_id %s" % (name, ", ".join(absent[:5])))
    if issues:
        raise ValidationError(issues)

    ds = Dataset(name=str(man.get("name", "")), root=root, users=users, images=images, blocks=blocks,
                 min_images=min_images)
    for uid, n in sorted(ds.posted_counts().items()):
        if n < min_images:
            ds.excluded[uid] = "posted %d images, fewer than min_images=%d" % (n, min_images)
    logger.info("ingested %s: %d users (%d excluded), %d images", ds.name, len(users),
                len(ds.excluded), len(images))
    return ds
