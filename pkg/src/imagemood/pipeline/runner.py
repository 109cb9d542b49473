"""Pipeline stages. Each stage reads the manifest and earlier outputs from
``config.out_dir`` and writes its own files there; reruns with the same
inputs and seed give byte-identical reports."""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor

import pandas as pd

from .. import imagefeat, mtlearn, stats, tagcluster
from ..errors import ConfigError, ImageMoodError, InsufficientDataError
from .config import RunConfig
from .manifest import Dataset, ingest
from .tagging import TagCache

logger = logging.getLogger(__name__)

TASKS = ["depression", "anxiety", "age", "gender"]
REPORTED = ["depression", "anxiety"]
MENTAL_CONTROLS = {"depression": ["age", "gender", "anxiety"], "anxiety": ["age", "gender", "depression"]}

IMAGE_FEATURES = "image_features.csv"
USER_FEATURES = {"posted": "user_features.csv", "profile": "profile_features.csv"}
CLUSTER_FEATURES = "cluster_features.csv"
FEATURE_SETS = "feature_sets.json"
CLUSTER_MODEL = "tag_clusters.json"
EXCLUSIONS = "exclusions.csv"


def _path(cfg: RunConfig, name) -> str:
    return os.path.join(cfg.out_dir, name)


def _write_csv(df: pd.DataFrame, path, index=False):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    df.to_csv(path, index=index, lineterminator="\n")


def _write_json(obj, path):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_csv(cfg, name) -> pd.DataFrame:
    path = _path(cfg, name)
    if not os.path.exists(path):
        raise ImageMoodError("%s not found; run the earlier stage first" % path)
    return pd.read_csv(path, dtype={"user_id": str, "image_id": str})


# --- ingest ----------------------------------------------------------------------------

def run_ingest(cfg: RunConfig) -> Dataset:
    ds = ingest(cfg.manifest, min_images=cfg.min_images)
    excl = pd.DataFrame(sorted(ds.excluded.items()), columns=["user_id", "reason"])
    _write_csv(excl, _path(cfg, EXCLUSIONS))
    counts = ds.posted_counts()
    _write_json({"dataset": ds.name, "users": len(ds.users), "excluded": len(ds.excluded),
                 "images": len(ds.images), "blocks": sorted(ds.blocks),
                 "posted_per_user": {u: counts[u] for u in sorted(counts)}},
                _path(cfg, "ingest_summary.json"))
    return ds


# --- clustering ------------------------------------------------------------------------

def _tag_cache(cfg) -> TagCache:
    return TagCache(cfg.tag_cache_path)


def run_cluster(cfg: RunConfig, ds: Dataset = None) -> tagcluster.TagClusterModel:
    """Fit tag clusters on the posted images of included users."""
    ds = ds or run_ingest(cfg)
    cache = _tag_cache(cfg)
    posted = ds.images_of("posted")
    bags = [tagcluster.TagBag(r.image_id, cache.get(r.image_id).names, r.user_id)
            for r in posted.itertuples()
            if r.image_id in cache and not cache.get(r.image_id).missing]
    if not bags:
        raise InsufficientDataError("no tagged posted images; fetch or import tags first")
    model, _ = tagcluster.fit_tag_clusters(bags, k=cfg.k, min_count=cfg.min_count,
                                           seed=cfg.stage_seed("cluster"))
    with open(_path(cfg, CLUSTER_MODEL), "w", encoding="utf-8") as fh:
        fh.write(model.to_json())
    members = [{"cluster": c, "tags": " ".join(model.members(c))} for c in range(model.k)]
    _write_csv(pd.DataFrame(members), _path(cfg, "cluster_members.csv"))
    return model


def _load_cluster_model(cfg):
    with open(_path(cfg, CLUSTER_MODEL), encoding="utf-8") as fh:
        return tagcluster.TagClusterModel.from_json(fh.read())


# --- extraction ------------------------------------------------------------------------

def _image_features(row, blocks) -> imagefeat.ColorFeatures:
    try:
        if row["path"] is not None and not (isinstance(row["path"], float) and math.isnan(row["path"])):
            return imagefeat.extract_color_features(imagefeat.load_image(row["path"]))
        return imagefeat.ColorFeatures.from_row(blocks[row["ref"]].loc[row["image_id"]].to_dict())
    except ImageMoodError as e:
        raise e.__class__("image %s: %s" % (row["image_id"], e)) from e
    except (OSError, KeyError, ValueError) as e:
        raise ImageMoodError("image %s: %s" % (row["image_id"], e)) from e


def _pool_blocks(ds: Dataset, images: pd.DataFrame, users) -> tuple:
    """Per-user mean of every opaque block column over ``images``."""
    skip = set(images["ref"].dropna())
    frames, sets = [], {}
    for name in sorted(ds.blocks):
        if name in skip:
            continue
        block = ds.blocks[name]
        joined = images[["image_id", "user_id"]].join(block, on="image_id", how="inner")
        pooled = joined.drop(columns="image_id").groupby("user_id").mean()
        pooled.columns = ["%s_%s" % (name, c) for c in pooled.columns]
        frames.append(pooled.reindex(users))
        sets[name] = list(pooled.columns)
    return frames, sets


def run_extract(cfg: RunConfig, ds: Dataset = None) -> dict:
    """Per-image color features, per-user pooled features for posted and
    profile images, and per-user cluster features when tags exist."""
    ds = ds or run_ingest(cfg)
    included = ds.included_users
    images = ds.images[ds.images["user_id"].isin(included)].sort_values("image_id")
    rows = images.to_dict("records")
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        feats = list(pool.map(lambda r: _image_features(r, ds.blocks), rows))
    by_id = dict(zip(images["image_id"], feats))
    table = pd.DataFrame([f.to_row() for f in feats], columns=imagefeat.feature_columns())
    table.insert(0, "kind", images["kind"].to_numpy())
    table.insert(0, "user_id", images["user_id"].to_numpy())
    table.insert(0, "image_id", images["image_id"].to_numpy())
    _write_csv(table, _path(cfg, IMAGE_FEATURES))

    cache = _tag_cache(cfg) if os.path.exists(cfg.tag_cache_path) else None
    feature_sets = {}
    for kind in ("posted", "profile"):
        kind_images = ds.images_of(kind)
        if kind_images.empty:
            continue
        by_user = kind_images.groupby("user_id")["image_id"].apply(list)
        users = [u for u in included if u in by_user.index]
        out = []
        for u in users:
            ids = by_user[u]
            bags = [cache.bags([i])[i] for i in ids] if cache is not None else None
            n_posts = ds.users.at[u, "n_posts"]
            vec = imagefeat.aggregate_user(
                u, [by_id[i] for i in ids], tag_bags=bags,
                min_images=cfg.min_images if kind == "posted" else 1,
                person_tags=cfg.person_tags,
                n_posts=None if (kind != "posted" or math.isnan(n_posts)) else int(n_posts))
            out.append(vec.to_row())
        frame = pd.DataFrame(out).set_index("user_id")
        colors = [c for c in frame.columns if c not in ("n_images", "pct_image_posts", "pct_posts_with_people")]
        pooled, sets = _pool_blocks(ds, kind_images, users)
        frame = pd.concat([frame, *pooled], axis=1)
        frame.index.name = "user_id"
        _write_csv(frame, _path(cfg, USER_FEATURES[kind]), index=True)
        feature_sets[kind] = {"colors": colors, **sets}

    if cache is not None and "posted" in feature_sets:
        if not os.path.exists(_path(cfg, CLUSTER_MODEL)):
            run_cluster(cfg, ds)
        model = _load_cluster_model(cfg)
        posted = ds.images_of("posted")
        bags_by_user = {u: [b for b in cache.bags(list(g)).values() if b is not None]
                        for u, g in posted.groupby("user_id")["image_id"]}
        cf = tagcluster.cluster_features({u: bags_by_user.get(u, []) for u in included}, model)
        names = ["cluster_%03d" % c for c in range(model.k)]
        cframe = pd.DataFrame([cf[u].weights for u in included], index=pd.Index(included, name="user_id"),
                              columns=names)
        cframe["no_tags"] = [int(cf[u].no_tags) for u in included]
        _write_csv(cframe, _path(cfg, CLUSTER_FEATURES), index=True)
        feature_sets["posted"]["content"] = names
    _write_json(feature_sets, _path(cfg, FEATURE_SETS))
    return feature_sets


# --- correlation -----------------------------------------------------------------------

def _user_table(cfg, ds) -> pd.DataFrame:
    feats = _read_csv(cfg, USER_FEATURES[cfg.image_set]).set_index("user_id")
    if cfg.image_set == "posted" and os.path.exists(_path(cfg, CLUSTER_FEATURES)):
        clusters = _read_csv(cfg, CLUSTER_FEATURES).set_index("user_id").drop(columns="no_tags")
        feats = feats.join(clusters, how="left")
    feats = feats.drop(columns=["n_images"], errors="ignore")
    feats = feats.loc[[u for u in feats.index if u not in ds.excluded]]
    return feats.dropna(axis=1, how="all")


def control_plan(cfg: RunConfig) -> dict:
    """Outcome -> controls for the demographic and mental-health reports."""
    if not cfg.controls:
        return {"demographics": {"age": [], "gender": []},
                "depression": {"depression": []}, "anxiety": {"anxiety": []}}
    demo = {"age": [], "gender": []} if cfg.demographics == "separate" else {"age": ["gender"], "gender": ["age"]}
    return {"demographics": demo,
            "depression": {"depression": MENTAL_CONTROLS["depression"]},
            "anxiety": {"anxiety": MENTAL_CONTROLS["anxiety"]}}


def run_correlate(cfg: RunConfig, ds: Dataset = None) -> dict:
    """Partial-correlation reports, one file per outcome group."""
    ds = ds or run_ingest(cfg)
    feats = _user_table(cfg, ds)
    outcomes = ds.outcomes().loc[[u for u in ds.included_users if u in feats.index]]
    out = {}
    for group, plan in control_plan(cfg).items():
        results = stats.correlate_all(feats, outcomes, plan, q=cfg.q)
        frame = stats.results_frame(results)
        _write_csv(frame, _path(cfg, "correlations_%s.csv" % group))
        out[group] = frame
    return out


# --- prediction ------------------------------------------------------------------------

def _design_for(feats: pd.DataFrame, cols) -> pd.DataFrame:
    X = feats[[c for c in cols if c in feats.columns]].astype(float)
    X = X.dropna(axis=1, how="all")
    return X.fillna(X.mean())


def run_predict(cfg: RunConfig, ds: Dataset = None) -> pd.DataFrame:
    """Single- and multi-task CV per feature set plus the stacked
    combination. Writes per-fold rows and a summary with one row per
    (feature set, mode, outcome)."""
    ds = ds or run_ingest(cfg)
    with open(_path(cfg, FEATURE_SETS), encoding="utf-8") as fh:
        sets = json.load(fh).get(cfg.image_set)
    if not sets:
        raise InsufficientDataError("no %s feature sets; run extract first" % cfg.image_set)
    feats = _user_table(cfg, ds)
    Y = ds.outcomes().reindex(feats.index)[TASKS]
    keep = Y.notna().all(axis=1)
    if not keep.all():
        logger.warning("dropping %d users with missing outcomes from prediction", int((~keep).sum()))
    feats, Y = feats[keep], Y[keep]
    if len(feats) < cfg.folds:
        raise InsufficientDataError("%d users with complete outcomes, need at least %d folds"
                                    % (len(feats), cfg.folds))
    seed = cfg.stage_seed("predict")
    grid = {}
    if cfg.alphas is not None:
        grid["alphas"] = list(cfg.alphas)
    if cfg.rhos is not None:
        grid["rhos"] = list(cfg.rhos)

    fold_frames, summary = [], []
    for mode in ("single", "multi"):
        reports = []
        for name in sorted(sets):
            X = _design_for(feats, sets[name])
            if X.shape[1] == 0:
                logger.warning("feature set %s has no usable columns; skipped", name)
                continue
            try:
                rep = mtlearn.cross_validate(X, Y, groups=feats.index.to_numpy(), mode=mode, k=cfg.folds,
                                             seed=seed, report_tasks=REPORTED, inner_k=cfg.inner_folds,
                                             feature_set=name, **grid)
            except ImageMoodError as e:
                raise e.__class__("feature set %s (%s): %s" % (name, mode, e)) from e
            reports.append((rep, X.shape[1]))
        if not reports:
            raise ConfigError("no feature set could be modelled")
        combo = mtlearn.stack_reports([r for r, _ in reports])
        for rep, width in reports + [(combo, len(reports))]:
            fold_frames.append(rep.fold_frame())
            for task in REPORTED:
                summary.append({"feature_set": rep.feature_set, "n_features": width, "mode": mode,
                                "task": task, "r": rep.mean_r(task), "mse": rep.mean_mse(task),
                                "n_users": len(rep.targets)})
    folds = pd.concat(fold_frames, ignore_index=True)
    _write_csv(folds, _path(cfg, "prediction_folds.csv"))
    table = pd.DataFrame(summary)
    _write_csv(table, _path(cfg, "prediction_report.csv"))
    return table


# --- report ----------------------------------------------------------------------------

def run_report(cfg: RunConfig) -> str:
    """Plain-text digest of whatever stage outputs exist."""
    lines = ["# imagemood report", ""]
    excl = _path(cfg, EXCLUSIONS)
    if os.path.exists(excl):
        n = len(pd.read_csv(excl))
        lines += ["Excluded users: %d (see %s)" % (n, EXCLUSIONS), ""]
    for group in ("demographics", "depression", "anxiety"):
        path = _path(cfg, "correlations_%s.csv" % group)
        if not os.path.exists(path):
            continue
        df = pd.read_csv(path)
        sig = df[df["significant"]]
        lines += ["## Correlations: %s" % group,
                  "%d of %d tests significant at q=%g" % (len(sig), len(df), cfg.q), ""]
        if len(sig):
            lines += [sig[["feature", "outcome", "n", "r", "p_adjusted"]].head(25).to_string(
                index=False, float_format=lambda x: "%.4g" % x), ""]
    path = _path(cfg, "prediction_report.csv")
    if os.path.exists(path):
        df = pd.read_csv(path)
        wide = df.pivot_table(index="feature_set", columns=["task", "mode"], values="r", sort=True)
        lines += ["## Prediction (mean held-out r)", wide.to_string(float_format=lambda x: "%.3f" % x), ""]
    text = "\n".join(lines)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(_path(cfg, "report.md"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return text
