"""Content tags for images: a replay client reading JSON-lines fixtures, a
live HTTP client for the Imagga v2 tagging endpoint, and a JSON-lines cache.

Both clients share one shape: ``tags(image_id, path)`` returns
``[(tag, confidence), ...]``. Only the live client opens sockets.
"""

import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import httpx

from ..errors import ConfigError, FixtureMissError, ImageMoodError
from .config import KEY_ENV, SECRET_ENV

logger = logging.getLogger(__name__)

TOP_N = 10
RETRY_STATUS = frozenset({429, 500, 502, 503, 504})


class TagServiceError(ImageMoodError):
    pass


def top_tags(pairs, n: int = TOP_N) -> list:
    """Highest-confidence ``n`` tags; ties resolve alphabetically. A tag that
    appears twice keeps its best confidence."""
    best = {}
    for tag, conf in pairs:
        tag = str(tag)
        best[tag] = max(float(conf), best.get(tag, float("-inf")))
    return sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


def _parse_tags(raw) -> list:
    out = []
    for t in raw:
        if isinstance(t, str):
            out.append((t, 0.0))
        else:
            out.append((t["tag"], float(t.get("confidence", 0.0))))
    return out


class FixtureClient:
    """Replays tags from a JSON-lines file of ``{image_id, tags}`` records.
    Tags are strings or ``{tag, confidence}`` objects."""

    source = "fixture"

    def __init__(self, path):
        self.path = path
        self.records = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    self.records[str(rec["image_id"])] = _parse_tags(rec["tags"])

    def missing(self, image_ids) -> list:
        return sorted(i for i in image_ids if i not in self.records)

    def tags(self, image_id, path=None) -> list:
        if image_id not in self.records:
            raise FixtureMissError([image_id])
        return top_tags(self.records[image_id])


class RateLimiter:
    """Spaces calls at least ``1 / rate`` seconds apart."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / rate
        self.clock, self.sleep = clock, sleep
        self._next = None

    def wait(self):
        now = self.clock()
        if self._next is not None and now < self._next:
            self.sleep(self._next - now)
            now = self._next
        self._next = now + self.interval


class ImaggaClient:
    """Live tagging over HTTP with rate limiting and exponential backoff.

    Credentials come from ``IMAGGA_API_KEY`` / ``IMAGGA_API_SECRET`` unless
    passed in. Transport errors and 429/5xx responses are retried up to
    ``max_attempts`` in total, sleeping ``backoff * 2**i`` between tries;
    other HTTP errors fail at once.
    """

    source = "live"

    def __init__(self, endpoint, api_key=None, api_secret=None, rate: float = 1.0,
                 max_attempts: int = 3, backoff: float = 1.0, timeout: float = 30.0,
                 transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep, clock=time.monotonic):
        api_key = api_key or os.environ.get(KEY_ENV)
        api_secret = api_secret or os.environ.get(SECRET_ENV)
        if not api_key or not api_secret:
            raise ConfigError("live tagging needs %s and %s in the environment" % (KEY_ENV, SECRET_ENV))
        self.endpoint = endpoint
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep
        self.limiter = RateLimiter(rate, clock=clock, sleep=sleep)
        self.attempts = []  # (image_id, attempt, outcome) for every request made
        self._http = httpx.Client(auth=(api_key, api_secret), timeout=timeout, transport=transport)

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, image_id, path):
        with open(path, "rb") as fh:
            data = fh.read()
        return self._http.post(self.endpoint, files={"image": (os.path.basename(path), data)})

    def tags(self, image_id, path) -> list:
        last = None
        for attempt in range(1, self.max_attempts + 1):
            self.limiter.wait()
            try:
                resp = self._request(image_id, path)
            except httpx.TransportError as e:
                last = "%s: %s" % (e.__class__.__name__, e)
            else:
                if resp.status_code == 200:
                    self.attempts.append((image_id, attempt, "ok"))
                    body = resp.json()
                    raw = body.get("result", {}).get("tags", [])
                    return top_tags((t["tag"]["en"], t["confidence"]) for t in raw)
                last = "HTTP %d" % resp.status_code
                if resp.status_code not in RETRY_STATUS:
                    self.attempts.append((image_id, attempt, last))
                    raise TagServiceError("image %s: %s" % (image_id, last))
            self.attempts.append((image_id, attempt, last))
            logger.warning("image %s attempt %d/%d failed: %s", image_id, attempt, self.max_attempts, last)
            if attempt < self.max_attempts:
                self.sleep(self.backoff * 2 ** (attempt - 1))
        raise TagServiceError("image %s: gave up after %d attempts (%s)" % (image_id, self.max_attempts, last))


@dataclass
class TagEntry:
    image_id: str
    tags: list  # [(tag, confidence)], empty when missing
    retrieved_at: float
    source: str  # "live" or "fixture"
    missing: bool = False

    def to_json(self) -> str:
        return json.dumps({"image_id": self.image_id,
                           "tags": [{"tag": t, "confidence": c} for t, c in self.tags],
                           "retrieved_at": self.retrieved_at, "source": self.source,
                           "missing": self.missing}, sort_keys=True)

    @classmethod
    def from_json(cls, line) -> "TagEntry":
        d = json.loads(line)
        return cls(str(d["image_id"]), _parse_tags(d["tags"]), float(d["retrieved_at"]), d["source"],
                   bool(d.get("missing", False)))

    @property
    def names(self) -> Optional[list]:
        return None if self.missing else [t for t, _ in self.tags]


class TagCache:
    """One entry per image, persisted as JSON lines sorted by image id. A
    fixture entry is never replaced by a live one unless forced."""

    def __init__(self, path):
        self.path = path
        self.entries = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        e = TagEntry.from_json(line)
                        self.entries[e.image_id] = e

    def __contains__(self, image_id):
        return image_id in self.entries

    def get(self, image_id) -> Optional[TagEntry]:
        return self.entries.get(image_id)

    def put(self, entry: TagEntry, force: bool = False) -> bool:
        old = self.entries.get(entry.image_id)
        if old is not None and old.source == "fixture" and entry.source == "live" and not force:
            return False
        self.entries[entry.image_id] = entry
        return True

    def save(self):
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for iid in sorted(self.entries):
                fh.write(self.entries[iid].to_json() + "\n")
        os.replace(tmp, self.path)

    def bags(self, image_ids) -> dict:
        """image_id -> tag names, or None where tags are missing or absent."""
        return {i: (self.entries[i].names if i in self.entries else None) for i in image_ids}


@dataclass
class FetchStats:
    requested: int = 0
    cached: int = 0
    fetched: int = 0
    missing: int = 0


def fetch_tags(images: Mapping[str, Optional[str]], client, cache: TagCache, force: bool = False,
               retry_missing: bool = False, clock: Callable[[], float] = time.time) -> FetchStats:
    """Fill ``cache`` for every ``image_id -> path`` in ``images``.

    Cached images are skipped, so a second call makes no requests. Images
    whose live lookup fails are stored as missing and the run carries on;
    they are retried only with ``retry_missing``. In fixture mode any id the
    fixture lacks is a hard error listing all of them.
    """
    stats = FetchStats(requested=len(images))
    if isinstance(client, FixtureClient):
        todo = [i for i in images if force or i not in cache or cache.get(i).missing]
        absent = client.missing(todo)
        if absent:
            raise FixtureMissError(absent)
    for image_id in sorted(images):
        entry = cache.get(image_id)
        if entry is not None and not force and not (entry.missing and retry_missing):
            if not (isinstance(client, FixtureClient) and entry.missing):
                stats.cached += 1
                continue
        try:
            tags = client.tags(image_id, images[image_id])
        except TagServiceError as e:
            logger.warning("%s; marking tags missing", e)
            cache.put(TagEntry(image_id, [], clock(), client.source, missing=True), force=force)
            stats.missing += 1
            continue
        if cache.put(TagEntry(image_id, tags, clock(), client.source), force=force):
            stats.fetched += 1
        else:
            stats.cached += 1
    return stats
