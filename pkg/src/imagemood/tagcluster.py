"""Tag co-occurrence similarity (NPMI) and spectral clustering of tags.

Probabilities are document frequencies: a tag occurs at most once per image,
``p(x) = df(x) / N`` and ``p(x, y) = df(x, y) / N`` over ``N`` tag bags.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg

from .errors import ConfigError, InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_K = 400
DEFAULT_MIN_COUNT = 200


def _bag_sets(bags) -> list:
    out = []
    for bag in bags:
        tags = bag.tags if hasattr(bag, "tags") else bag
        out.append(frozenset(tags))
    return out


@dataclass(frozen=True)
class TagBag:
    image_id: str
    tags: frozenset
    user_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))


def build_vocab(bags, min_count: int = DEFAULT_MIN_COUNT) -> list:
    """Tags present in at least ``min_count`` bags, sorted lexicographically."""
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")
    sets = _bag_sets(bags)
    if not sets:
        raise InvalidInputError("no tag bags given")
    counts = Counter(t for s in sets for t in s)
    vocab = sorted(t for t, c in counts.items() if c >= min_count)
    if not vocab:
        raise ConfigError(
            "no tag occurs in %d or more images (most frequent: %d); lower min_count"
            % (min_count, max(counts.values(), default=0))
        )
    return vocab


@dataclass
class SimilarityMatrix:
    vocab: list
    values: np.ndarray


def incidence_matrix(bags, vocab: Sequence[str]) -> np.ndarray:
    """Binary ``(n_bags, n_vocab)`` matrix; out-of-vocabulary tags are ignored."""
    index = {t: i for i, t in enumerate(vocab)}
    sets = _bag_sets(bags)
    B = np.zeros((len(sets), len(vocab)), dtype=np.int64)
    for r, s in enumerate(sets):
        for t in s:
            j = index.get(t)
            if j is not None:
                B[r, j] = 1
    return B


def npmi_matrix(bags, vocab: Sequence[str]) -> SimilarityMatrix:
    """Normalised PMI between all vocabulary pairs, negatives clamped to 0.

    Pairs that never co-occur get 0 and the diagonal is 1. A pair present in
    every bag (``p(x, y) = 1``) always co-occurs and scores 1.
    """
    vocab = list(vocab)
    if not vocab:
        raise InvalidInputError("empty vocabulary")
    B = incidence_matrix(bags, vocab)
    n = B.shape[0]
    if n == 0:
        raise InvalidInputError("no tag bags given")
    co = B.T @ B  # integer co-document frequencies
    df = np.diag(co).astype(np.float64)
    co = co.astype(np.float64)

    out = np.zeros_like(co)
    joint = co > 0
    always = co == n
    regular = joint & ~always
    # ratio p(x,y) / (p(x) p(y)) from integer counts keeps independence exact
    ratio = (co * n) / np.outer(df, df)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(ratio)
        score = pmi / -np.log(co / n)
    out[regular] = score[regular]
    out[always] = 1.0
    if regular.any():
        lo, hi = out[regular].min(), out[regular].max()
        assert lo >= -1.0 - 1e-9 and hi <= 1.0 + 1e-9, (lo, hi)
    np.clip(out, 0.0, 1.0, out=out)
    np.fill_diagonal(out, 1.0)
    return SimilarityMatrix(vocab=vocab, values=out)


# --- k-means -----------------------------------------------------------------

def _furthest_point_seeds(X, k, rng):
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    dist = ((X - X[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        j = int(np.argmax(dist))
        if dist[j] == 0.0:
            # fewer distinct rows than k; take any point not yet a seed
            free = np.setdiff1d(np.arange(n), centers)
            j = int(free[rng.integers(free.size)])
        centers.append(j)
        dist = np.minimum(dist, ((X - X[j]) ** 2).sum(axis=1))
    return X[centers].copy()


def _fill_empty(X, labels, centers, k):
    # move the point furthest from its centre into each empty cluster
    for c in range(k):
        if np.any(labels == c):
            continue
        d = ((X - centers[labels]) ** 2).sum(axis=1)
        sizes = np.bincount(labels, minlength=k)
        d[sizes[labels] <= 1] = -1.0
        j = int(np.argmax(d))
        labels[j] = c
        centers[c] = X[j]
    return labels


def kmeans(X, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300):
    """Lloyd's algorithm with furthest-point seeding and ``n_init`` restarts.

    Returns ``(labels, inertia)``; every cluster is nonempty.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ConfigError("k must lie in [1, %d], got %d" % (n, k))
    rng = np.random.default_rng(seed)
    sq = (X ** 2).sum(axis=1)
    best = None
    for _ in range(n_init):
        centers = _furthest_point_seeds(X, k, rng)
        labels = np.full(n, -1)
        for _ in range(max_iter):
            d = sq[:, None] - 2.0 * X @ centers.T + (centers ** 2).sum(axis=1)[None, :]
            new = np.argmin(d, axis=1)
            new = _fill_empty(X, new, centers, k)
            if np.array_equal(new, labels):
                break
            labels = new
            for c in range(k):
                centers[c] = X[labels == c].mean(axis=0)
        inertia = float(((X - centers[labels]) ** 2).sum())
        if best is None or inertia < best[1] - 1e-12:
            best = (labels.copy(), inertia)
    return best


def _canonical_labels(labels):
    # relabel by first appearance so equal partitions give equal arrays
    mapping = {}
    out = np.empty_like(labels)
    for i, l in enumerate(labels):
        out[i] = mapping.setdefault(int(l), len(mapping))
    return out


# --- spectral clustering -------------------------------------------------------

@dataclass
class TagClusterModel:
    vocab: list
    assignment: np.ndarray
    k: int
    seed: int = 0
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def cluster_of(self, tag):
        if self._index is None:
            self._index = {t: int(a) for t, a in zip(self.vocab, self.assignment)}
        return self._index.get(tag)

    def members(self, c) -> list:
        return [t for t, a in zip(self.vocab, self.assignment) if a == c]

    def to_json(self) -> str:
        return json.dumps({
            "vocab": list(self.vocab),
            "assignment": [int(a) for a in self.assignment],
            "k": int(self.k),
            "seed": int(self.seed),
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TagClusterModel":
        d = json.loads(text)
        assignment = np.asarray(d["assignment"], dtype=np.int64)
        if len(assignment) != len(d["vocab"]):
            raise InvalidInputError("assignment length does not match vocabulary")
        return cls(vocab=list(d["vocab"]), assignment=assignment, k=int(d["k"]), seed=int(d.get("seed", 0)))


def spectral_embedding(W: np.ndarray, k: int) -> np.ndarray:
    """Row-normalised eigenvectors of the ``k`` smallest eigenvalues of
    ``I - D^-1/2 W D^-1/2``. Every row of ``W`` must have positive degree."""
    deg = W.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    L = np.eye(W.shape[0]) - inv_sqrt[:, None] * W * inv_sqrt[None, :]
    L = 0.5 * (L + L.T)
    _, vecs = linalg.eigh(L, subset_by_index=[0, k - 1])
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs / np.where(norms > 0, norms, 1.0)


def spectral_cluster(sim, k: int = DEFAULT_K, seed: int = 0, n_init: int = 10) -> TagClusterModel:
    """Hard-partition the vocabulary into ``k`` clusters.

    Tags with zero degree share one overflow cluster; the rest are split
    into the remaining clusters.
    """
    if isinstance(sim, SimilarityMatrix):
        vocab, W = list(sim.vocab), np.asarray(sim.values, dtype=np.float64)
    else:
        W = np.asarray(sim, dtype=np.float64)
        vocab = [str(i) for i in range(W.shape[0])]
    n = W.shape[0]
    if W.shape != (n, n):
        raise InvalidInputError("similarity matrix must be square")
    if not 2 <= k <= n:
        raise ConfigError("k must lie in [2, %d] (vocabulary size), got %d" % (n, k))
    W = 0.5 * (W + W.T)
    if W.min() < 0:
        raise InvalidInputError("similarities must be nonnegative")

    isolated = W.sum(axis=1) <= 0
    labels = np.empty(n, dtype=np.int64)
    if isolated.any():
        rest = np.flatnonzero(~isolated)
        if rest.size < k - 1 or (rest.size == 0):
            raise ConfigError(
                "%d isolated tags leave %d connected tags for %d clusters"
                % (isolated.sum(), rest.size, k - 1)
            )
        logger.info("%d isolated tags placed in an overflow cluster", isolated.sum())
        sub = W[np.ix_(rest, rest)]
        if k - 1 == 1:
            sub_labels = np.zeros(rest.size, dtype=np.int64)
        else:
            sub_labels, _ = kmeans(spectral_embedding(sub, k - 1), k - 1, seed=seed, n_init=n_init)
        labels[rest] = sub_labels
        labels[isolated] = k - 1
    else:
        labels, _ = kmeans(spectral_embedding(W, k), k, seed=seed, n_init=n_init)
    labels = _canonical_labels(labels)
    return TagClusterModel(vocab=vocab, assignment=labels, k=k, seed=seed)


# --- per-user features ---------------------------------------------------------

@dataclass
class ClusterFeatureVector:
    user_id: str
    weights: np.ndarray
    no_tags: bool = False


def cluster_features(bags_by_user: Mapping[str, Iterable], model: TagClusterModel) -> dict:
    """Normalised per-image cluster presence counts for each user.

    A cluster counts at most once per image however many of its tags fire.
    Users without any in-vocabulary tag get an all-zero vector and
    ``no_tags=True``.
    """
    out = {}
    for user, bags in bags_by_user.items():
        counts = np.zeros(model.k, dtype=np.float64)
        for tags in _bag_sets(bags):
            hit = {model.cluster_of(t) for t in tags}
            hit.discard(None)
            for c in hit:
                counts[c] += 1
        total = counts.sum()
        if total > 0:
            out[user] = ClusterFeatureVector(user, counts / total)
        else:
            logger.warning("user %s has no in-vocabulary tags", user)
            out[user] = ClusterFeatureVector(user, counts, no_tags=True)
    return out


def fit_tag_clusters(bags, k: int = DEFAULT_K, min_count: int = DEFAULT_MIN_COUNT, seed: int = 0):
    """Vocabulary, NPMI similarity and spectral clusters in one call."""
    vocab = build_vocab(bags, min_count)
    sim = npmi_matrix(bags, vocab)
    return spectral_cluster(sim, k=k, seed=seed), sim


def read_tag_bags(path) -> list:
    """Read ``{image_id, user_id, tags: [...]}`` JSON-lines records."""
    bags = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            tags = [t["tag"] if isinstance(t, dict) else t for t in rec["tags"]]
            bags.append(TagBag(image_id=str(rec["image_id"]), tags=tags,
                               user_id=None if rec.get("user_id") is None else str(rec["user_id"])))
    return bags
