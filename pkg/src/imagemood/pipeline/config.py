"""Run configuration, read from JSON. Relative paths resolve against the
directory holding the config file."""

import json
import os
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..imagefeat import DEFAULT_PERSON_TAGS

IMAGGA_ENDPOINT = "https://api.imagga.com/v2/tags"
KEY_ENV = "IMAGGA_API_KEY"
SECRET_ENV = "IMAGGA_API_SECRET"


@dataclass
class RunConfig:
    manifest: str
    out_dir: str = "out"
    min_images: int = 20
    k: int = 400
    min_count: int = 200
    q: float = 0.01
    folds: int = 10
    inner_folds: int = 3
    seed: int = 0
    person_tags: list = field(default_factory=lambda: sorted(DEFAULT_PERSON_TAGS))
    tag_cache: Optional[str] = None  # defaults to <out_dir>/tags.jsonl
    tag_fixture: Optional[str] = None
    tag_endpoint: str = IMAGGA_ENDPOINT
    tag_rate: float = 1.0  # requests per second
    image_set: str = "posted"  # which user feature file drives correlate/predict
    demographics: str = "separate"  # or "mutual"
    controls: bool = True
    alphas: Optional[list] = None  # CV grid overrides; None keeps the library defaults
    rhos: Optional[list] = None
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("min_images", "k", "min_count", "folds", "inner_folds", "workers"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError("%s must be an integer >= 1, got %r" % (name, v))
        if not 0 < self.q < 1:
            raise ConfigError("q must lie in (0, 1), got %r" % self.q)
        if self.tag_rate <= 0:
            raise ConfigError("tag_rate must be positive")
        if self.image_set not in ("posted", "profile"):
            raise ConfigError("image_set must be 'posted' or 'profile'")
        if self.demographics not in ("separate", "mutual"):
            raise ConfigError("demographics must be 'separate' or 'mutual'")

    @property
    def tag_cache_path(self) -> str:
        return self.tag_cache or os.path.join(self.out_dir, "tags.jsonl")

    def stage_seed(self, stage: str) -> int:
        """Independent, reproducible seed for one stage, derived from ``seed``."""
        ss = np.random.SeedSequence([int(self.seed), zlib.crc32(stage.encode())])
        return int(ss.generate_state(1)[0])

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


_PATH_FIELDS = ("manifest", "out_dir", "tag_cache", "tag_fixture")


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError("cannot read config %s: %s" % (path, e)) from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError("unknown config keys: %s" % ", ".join(unknown))
    if any(k in raw for k in ("api_key", "api_secret")):
        raise ConfigError("credentials belong in %s/%s, not the config" % (KEY_ENV, SECRET_ENV))
    if "manifest" not in raw:
        raise ConfigError("config needs a 'manifest' path")
    base = os.path.dirname(os.path.abspath(path))
    for key in _PATH_FIELDS:
        if raw.get(key) is not None:
            raw[key] = os.path.join(base, raw[key])
    for key in ("out_dir",):
        if overrides.get(key) is not None:
            overrides[key] = os.path.abspath(overrides[key])
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**raw)
    except TypeError as e:
        raise ConfigError(str(e)) from e
