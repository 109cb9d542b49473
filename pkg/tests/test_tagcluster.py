import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import adjusted_rand_score

from imagemood import tagcluster as T
from imagemood.errors import ConfigError, InvalidInputError

from oracles import block_matrix, brute_npmi, random_corpus


# --- vocabulary -----------------------------------------------------------------

def test_vocab_threshold():
    bags = [{"cat"}] * 250 + [{"xyz"}] * 5
    assert T.build_vocab(bags, 200) == ["cat"]


def test_vocab_small_corpus():
    assert T.build_vocab([{"a", "b"}, {"a", "b"}, {"a"}], 2) == ["a", "b"]


def test_vocab_errors():
    with pytest.raises(ConfigError, match="lower min_count"):
        T.build_vocab([{"a"}], 2)
    with pytest.raises(InvalidInputError):
        T.build_vocab([], 1)


# --- NPMI -----------------------------------------------------------------------

def test_npmi_always_cooccur_is_one():
    bags = [{"x", "y"}, {"x", "y"}, {"z"}, {"w"}]
    sim = T.npmi_matrix(bags, ["x", "y"])
    assert sim.values[0, 1] == 1.0


def test_npmi_independence_is_zero():
    bags = [{"x", "y"}, {"x"}, {"y"}, set()]
    sim = T.npmi_matrix(bags, ["x", "y"])
    assert sim.values[0, 1] == 0.0


def test_npmi_worked_example():
    bags = [{"a", "b"}, {"a", "b"}, {"a"}, {"c"}]
    sim = T.npmi_matrix(bags, ["a", "b", "c"])
    assert sim.values[0, 1] == pytest.approx(math.log(4 / 3) / math.log(2), abs=1e-12)
    assert sim.values[0, 1] == pytest.approx(0.415, abs=1e-3)
    assert sim.values[0, 2] == 0.0  # never co-occur
    assert np.all(np.diag(sim.values) == 1.0)


def test_npmi_negative_clamped():
    bags = [{"a"}, {"b"}, {"a", "b"}, {"a"}, {"b"}]
    raw = math.log((1 / 5) / ((3 / 5) ** 2)) / -math.log(1 / 5)
    assert raw < 0
    assert T.npmi_matrix(bags, ["a", "b"]).values[0, 1] == 0.0


def test_npmi_matches_brute_force():
    rng = random.Random(7)
    for _ in range(30):
        bags = random_corpus(rng)
        vocab = T.build_vocab(bags, 1)
        sim = T.npmi_matrix(bags, vocab)
        ref = brute_npmi(bags, vocab)
        for i, x in enumerate(vocab):
            for j, y in enumerate(vocab):
                assert abs(sim.values[i, j] - ref[x, y]) <= 1e-12


@settings(max_examples=60)
@given(st.lists(st.sets(st.sampled_from("abcdefgh"), min_size=1, max_size=5), min_size=1, max_size=25), st.randoms())
def test_npmi_properties(bags, rnd):
    vocab = T.build_vocab(bags, 1)
    sim = T.npmi_matrix(bags, vocab).values
    assert np.allclose(sim, sim.T) and sim.min() >= 0 and sim.max() <= 1
    shuffled = list(bags)
    rnd.shuffle(shuffled)
    assert np.array_equal(T.npmi_matrix(shuffled, vocab).values, sim)


def test_npmi_requires_bags():
    with pytest.raises(InvalidInputError):
        T.npmi_matrix([], ["a"])
    with pytest.raises(InvalidInputError):
        T.npmi_matrix([{"a"}], [])


# --- spectral clustering ----------------------------------------------------------

def test_two_cliques():
    W, truth = block_matrix([3, 3])
    m = T.spectral_cluster(W, k=2)
    assert adjusted_rand_score(truth, m.assignment) == 1.0


def test_identity_gives_singletons():
    m = T.spectral_cluster(np.eye(6), k=6)
    assert sorted(m.assignment) == list(range(6))


def test_unequal_blocks():
    W, truth = block_matrix([3, 7, 12, 20], np.random.default_rng(1), within=(0.4, 1.0), across=(0.0, 0.1))
    m = T.spectral_cluster(W, k=4, seed=3)
    assert adjusted_rand_score(truth, m.assignment) == 1.0


def test_spectral_deterministic_and_covering():
    W, _ = block_matrix([5, 5, 5], np.random.default_rng(2), within=(0.3, 1), across=(0, 0.3))
    a = T.spectral_cluster(W, k=5, seed=11)
    b = T.spectral_cluster(W, k=5, seed=11)
    assert np.array_equal(a.assignment, b.assignment)
    assert set(a.assignment) == set(range(5)) and len(a.assignment) == 15


def test_vocab_permutation_gives_same_partition():
    W, truth = block_matrix([4, 6, 8], np.random.default_rng(4), within=(0.5, 1), across=(0, 0.1))
    perm = np.random.default_rng(5).permutation(len(truth))
    a = T.spectral_cluster(W, k=3).assignment
    b = T.spectral_cluster(W[np.ix_(perm, perm)], k=3).assignment
    assert adjusted_rand_score(a[perm], b) == 1.0


def test_isolated_tags_go_to_overflow_cluster():
    W, _ = block_matrix([3, 3])
    W = np.pad(W, ((0, 2), (0, 2)))  # two tags with zero degree
    m = T.spectral_cluster(W, k=3)
    assert m.assignment[6] == m.assignment[7]
    assert m.assignment[6] not in set(m.assignment[:6])


def test_spectral_k_bounds():
    with pytest.raises(ConfigError):
        T.spectral_cluster(np.eye(3), k=4)
    with pytest.raises(ConfigError):
        T.spectral_cluster(np.eye(3), k=1)


def test_kmeans_more_clusters_than_structure():
    X = np.array([[0.0, 0], [0, 0], [0, 0], [1, 1]])
    labels, _ = T.kmeans(X, 3, seed=0)
    assert set(labels) == {0, 1, 2}


def test_model_json_roundtrip():
    W, _ = block_matrix([2, 2])
    sim = T.SimilarityMatrix(["a", "b", "c", "d"], W)
    m = T.spectral_cluster(sim, k=2, seed=9)
    back = T.TagClusterModel.from_json(m.to_json())
    assert back.vocab == m.vocab and np.array_equal(back.assignment, m.assignment)
    assert back.k == 2 and back.seed == 9


# --- cluster features ------------------------------------------------------------

def make_model():
    return T.TagClusterModel(vocab=["a", "b", "c", "d", "e"], assignment=np.array([0, 1, 2, 3, 3]), k=4)


def test_cluster_features_examples():
    m = make_model()
    out = T.cluster_features({"u1": [{"d"}], "u2": [{"b"}, {"c"}], "u3": [{"zzz"}]}, m)
    assert list(out["u1"].weights) == [0, 0, 0, 1]
    assert list(out["u2"].weights) == [0, 0.5, 0.5, 0]
    assert out["u3"].no_tags and not out["u3"].weights.any()


def test_cluster_counted_once_per_image():
    out = T.cluster_features({"u": [{"d", "e"}, {"a"}]}, make_model())
    assert list(out["u"].weights) == [0.5, 0, 0, 0.5]


def test_cluster_features_brute_force():
    rng = random.Random(3)
    m = make_model()
    for _ in range(50):
        users = {u: [set(rng.sample("abcdexy", rng.randint(1, 4))) for _ in range(rng.randint(1, 6))]
                 for u in range(5)}
        got = T.cluster_features(users, m)
        for u, bags in users.items():
            counts = [0] * 4
            for b in bags:
                for c in range(4):
                    if any(m.assignment[m.vocab.index(t)] == c for t in b if t in m.vocab):
                        counts[c] += 1
            total = sum(counts)
            want = [c / total for c in counts] if total else counts
            assert np.allclose(got[u].weights, want, atol=1e-15)
            assert got[u].weights.min() >= 0


def test_fit_and_read_bags(tmp_path):
    p = tmp_path / "tags.jsonl"
    p.write_text('{"image_id": "i1", "user_id": "u", "tags": ["a", "b"]}\n'
                 '{"image_id": "i2", "user_id": "u", "tags": [{"tag": "a", "confidence": 50}, "c"]}\n'
                 '{"image_id": "i3", "user_id": "v", "tags": ["c", "d"]}\n')
    bags = T.read_tag_bags(p)
    assert bags[1].tags == frozenset({"a", "c"})
    model, sim = T.fit_tag_clusters(bags, k=2, min_count=1)
    assert model.vocab == ["a", "b", "c", "d"] and sim.values.shape == (4, 4)
