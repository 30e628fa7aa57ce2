"""Routing math, bundle validation, and the committed embedding fixtures."""

import json
import math

import numpy as np
import pytest

from quadtta import grounding
from quadtta.grounding import (
    EMBED_DIM,
    BundleError,
    ParaphraseBundle,
    RoutingError,
    cosine,
    default_bundle_path,
    default_fixture_path,
    load_bundle,
    load_fixture,
    route,
)

RNG = np.random.default_rng(99)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def make_bundle(vectors_by_task):
    texts = {k: [f"t{k}-{i}" for i in range(len(v))] for k, v in vectors_by_task.items()}
    vecs = {k: np.array([unit(x) for x in v]) for k, v in vectors_by_task.items()}
    return ParaphraseBundle(encoder="test", version=1, dim=len(next(iter(vecs.values()))[0]), texts=texts, vectors=vecs)


def random_unit_bundle(dim=8):
    return make_bundle({k: [RNG.normal(size=dim) for _ in range(3)] for k in range(5)})


# ------------------------------------------------------------------- cosine


def test_cosine_identical_vectors():
    v = RNG.normal(size=16)
    assert cosine(v, v) == pytest.approx(1.0)


def test_cosine_orthogonal_vectors():
    assert cosine([1, 0, 0], [0, 1, 0]) == pytest.approx(0.0)


def test_cosine_hand_value():
    assert cosine([1, 1, 0], [1, 0, 0]) == pytest.approx(1.0 / math.sqrt(2))


def test_cosine_zero_norm_is_routing_error():
    with pytest.raises(RoutingError):
        cosine([0, 0, 0], [1, 0, 0])


# -------------------------------------------------------------------- route


def test_route_self_similarity():
    bundle = random_unit_bundle()
    query = bundle.vectors[2][1]
    res = route(query, bundle)
    assert res.task_id == 2
    assert res.score == pytest.approx(1.0)
    assert res.scores.shape == (5,)


def test_route_tie_breaks_to_lowest_task_id():
    shared = unit(RNG.normal(size=8))
    bundle = make_bundle({k: [shared] for k in range(5)})
    res = route(shared, bundle)
    assert res.task_id == 0


def test_route_positive_rescaling_invariance():
    bundle = random_unit_bundle()
    query = RNG.normal(size=8)
    base = route(query, bundle)
    for _ in range(100):
        scale = float(RNG.uniform(1e-6, 1e6))
        res = route(scale * query, bundle)
        assert res.task_id == base.task_id
        assert res.score == pytest.approx(base.score, abs=1e-9)


def test_route_zero_query_is_error():
    with pytest.raises(RoutingError):
        route(np.zeros(8), random_unit_bundle())


def test_route_max_pool_is_monotone_in_paraphrases():
    bundle = random_unit_bundle()
    query = unit(RNG.normal(size=8))
    for _ in range(50):
        before = route(query, bundle).scores[3]
        extra = unit(RNG.normal(size=8))
        vecs = dict(bundle.vectors)
        vecs[3] = np.vstack([vecs[3], extra])
        texts = dict(bundle.texts)
        texts[3] = texts[3] + ["extra"]
        bundle = ParaphraseBundle(
            encoder="test", version=1, dim=8, texts=texts, vectors=vecs
        )
        after = route(query, bundle).scores[3]
        assert after >= before - 1e-12


# -------------------------------------------------------------- load_bundle


def write_bundle(tmp_path, mutate=None):
    vec = unit(RNG.normal(size=EMBED_DIM)).tolist()
    doc = {
        "version": 1,
        "encoder": "minilm-l6-v2",
        "dim": EMBED_DIM,
        "tasks": {str(k): [{"text": f"cmd {k}", "vec": vec}] for k in range(5)},
    }
    if mutate:
        mutate(doc)
    path = tmp_path / "bundle.json"
    path.write_text(json.dumps(doc))
    return path


def test_load_bundle_well_formed(tmp_path):
    bundle = load_bundle(write_bundle(tmp_path))
    assert set(bundle.vectors) == set(range(5))
    for rows in bundle.vectors.values():
        assert np.allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-12)


def test_load_bundle_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_bundle(tmp_path / "absent.json")


def test_load_bundle_wrong_dimension(tmp_path):
    def chop(doc):
        doc["tasks"]["2"][0]["vec"] = doc["tasks"]["2"][0]["vec"][:383]

    with pytest.raises(BundleError, match="383"):
        load_bundle(write_bundle(tmp_path, chop))


def test_load_bundle_non_unit_norm_rejected(tmp_path):
    def scale(doc):
        doc["tasks"]["1"][0]["vec"] = (0.5 * np.array(doc["tasks"]["1"][0]["vec"])).tolist()

    with pytest.raises(BundleError, match="norm"):
        load_bundle(write_bundle(tmp_path, scale))


def test_load_bundle_renormalizes_within_tolerance(tmp_path):
    def nudge(doc):
        doc["tasks"]["0"][0]["vec"] = ((1.0 + 5e-5) * np.array(doc["tasks"]["0"][0]["vec"])).tolist()

    bundle = load_bundle(write_bundle(tmp_path, nudge))
    assert np.linalg.norm(bundle.vectors[0][0]) == pytest.approx(1.0, abs=1e-12)


def test_load_bundle_missing_task(tmp_path):
    def drop(doc):
        del doc["tasks"]["4"]

    with pytest.raises(BundleError, match="task 4"):
        load_bundle(write_bundle(tmp_path, drop))


def test_load_bundle_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(BundleError):
        load_bundle(path)


def test_load_bundle_wrong_version(tmp_path):
    def bump(doc):
        doc["version"] = 2

    with pytest.raises(BundleError, match="version"):
        load_bundle(write_bundle(tmp_path, bump))


# --------------------------------------------------- committed data fixtures


def test_committed_bundle_validates():
    bundle = load_bundle(default_bundle_path())
    assert bundle.encoder == "minilm-l6-v2"
    assert bundle.dim == EMBED_DIM
    for task_id in range(5):
        assert len(bundle.texts[task_id]) >= 4


def test_committed_fixture_routes_fifteen_of_fifteen():
    bundle = load_bundle(default_bundle_path())
    queries = load_fixture(default_fixture_path())
    assert len(queries) == 15
    assert sorted({q.label for q in queries}) == [0, 1, 2, 3, 4]
    for q in queries:
        assert route(q.vec, bundle).task_id == q.label, q.text


def test_committed_templates_self_route():
    bundle = load_bundle(default_bundle_path())
    for task_id in range(5):
        res = route(bundle.vectors[task_id][0], bundle)
        assert res.task_id == task_id
        assert res.score == pytest.approx(1.0, abs=1e-9)
