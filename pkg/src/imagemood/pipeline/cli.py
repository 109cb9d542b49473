"""``imagemood`` command line.

Exit codes: 0 success, 1 validation or configuration failure, 2 runtime
failure.
"""

import argparse
import logging
import sys

from ..errors import (ConfigError, FixtureMissError, ImageMoodError, SchemaError, ValidationError)
from . import runner
from .config import load_config
from .tagging import FixtureClient, ImaggaClient, TagCache, fetch_tags

logger = logging.getLogger("imagemood")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _common(p):
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", default=None, help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imagemood", description="Image features, tag clusters, correlation and prediction runs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    _common(sub.add_parser("ingest", help="validate the manifest and log exclusions"))

    tags = sub.add_parser("tags", help="populate the tag cache")
    tag_sub = tags.add_subparsers(dest="tags_verb", required=True)
    fetch = tag_sub.add_parser("fetch", help="query the tagging service (or the configured fixture)")
    _common(fetch)
    fetch.add_argument("--force", action="store_true", help="replace cached entries")
    fetch.add_argument("--retry-missing", action="store_true")
    imp = tag_sub.add_parser("import", help="load tags from a JSON-lines fixture")
    _common(imp)
    imp.add_argument("--fixture", default=None, help="fixture file (defaults to config tag_fixture)")
    imp.add_argument("--force", action="store_true")

    _common(sub.add_parser("extract", help="per-image and per-user features"))
    _common(sub.add_parser("cluster", help="fit tag clusters"))
    corr = sub.add_parser("correlate", help="partial-correlation reports")
    _common(corr)
    corr.add_argument("--no-controls", action="store_true", help="plain Pearson correlations")
    corr.add_argument("--demographics", choices=["separate", "mutual"], default=None)
    _common(sub.add_parser("predict", help="cross-validated prediction reports"))
    _common(sub.add_parser("report", help="summarise outputs in report.md"))
    return parser


def _tag_images(cfg):
    ds = runner.run_ingest(cfg)
    sel = ds.images[ds.images["user_id"].isin(ds.included_users) & ds.images["path"].notna()]
    return dict(zip(sel["image_id"], sel["path"]))


def _run(args) -> int:
    overrides = {"seed": args.seed, "out_dir": args.out_dir}
    if args.verb == "correlate":
        overrides["demographics"] = args.demographics
        if args.no_controls:
            overrides["controls"] = False
    cfg = load_config(args.config, **overrides)

    if args.verb == "ingest":
        ds = runner.run_ingest(cfg)
        print("%d users, %d excluded, %d images" % (len(ds.users), len(ds.excluded), len(ds.images)))
    elif args.verb == "tags":
        images = _tag_images(cfg)
        cache = TagCache(cfg.tag_cache_path)
        if args.tags_verb == "import" or cfg.tag_fixture:
            fixture = getattr(args, "fixture", None) or cfg.tag_fixture
            if not fixture:
                raise ConfigError("no fixture given (use --fixture or tag_fixture)")
            stats = fetch_tags(images, FixtureClient(fixture), cache, force=args.force)
        else:
            with ImaggaClient(cfg.tag_endpoint, rate=cfg.tag_rate) as client:
                stats = fetch_tags(images, client, cache, force=args.force, retry_missing=args.retry_missing)
        cache.save()
        print("tags: %d requested, %d cached, %d fetched, %d missing"
              % (stats.requested, stats.cached, stats.fetched, stats.missing))
    elif args.verb == "extract":
        sets = runner.run_extract(cfg)
        print("feature sets: %s" % ", ".join("%s/%s" % (k, s) for k in sets for s in sorted(sets[k])))
    elif args.verb == "cluster":
        model = runner.run_cluster(cfg)
        print("%d tags in %d clusters" % (len(model.vocab), model.k))
    elif args.verb == "correlate":
        out = runner.run_correlate(cfg)
        for group, frame in out.items():
            print("%s: %d tests, %d significant" % (group, len(frame), int(frame["significant"].sum())))
    elif args.verb == "predict":
        table = runner.run_predict(cfg)
        print(table.to_string(index=False))
    elif args.verb == "report":
        print(runner.run_report(cfg))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ValidationError, ConfigError, SchemaError, FixtureMissError) as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_VALIDATION
    except (ImageMoodError, OSError) as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
