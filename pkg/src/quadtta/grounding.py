"""Command routing: cosine similarity against per-task paraphrase bundles.

A bundle holds, for each of the five tasks, a list of paraphrase texts with
their unit-norm 384-dim sentence embeddings (produced offline by the
embedding tool; this module never runs a text encoder). An incoming command
embedding is routed to the task whose best paraphrase is most similar
(max-pooled cosine per task, argmax across tasks, ties to the lowest id).
Routing never touches controller weights, so the frontend can be swapped
without retraining.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "EMBED_DIM",
    "BUNDLE_VERSION",
    "NORM_TOLERANCE",
    "BundleError",
    "RoutingError",
    "ParaphraseBundle",
    "FixtureQuery",
    "RouteResult",
    "cosine",
    "route",
    "load_bundle",
    "load_fixture",
    "default_bundle_path",
    "default_fixture_path",
]

EMBED_DIM = 384
BUNDLE_VERSION = 1
NORM_TOLERANCE = 1e-4
N_TASKS = 5


class BundleError(ValueError):
    """Bundle or fixture file is missing, malformed, or fails validation."""


class RoutingError(ValueError):
    """Routing is undefined (zero-norm vector, empty bundle)."""


@dataclass(frozen=True)
class ParaphraseBundle:
    """Validated per-task paraphrase embeddings."""

    encoder: str
    version: int
    dim: int
    texts: dict[int, list[str]]
    vectors: dict[int, np.ndarray]  # task id -> (n_k, dim), rows unit-norm


@dataclass(frozen=True)
class FixtureQuery:
    text: str
    label: int
    vec: np.ndarray


@dataclass(frozen=True)
class RouteResult:
    task_id: int
    score: float
    scores: np.ndarray  # per-task max-pooled cosine, length 5


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero-norm inputs are a routing error."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise RoutingError("cosine similarity of a zero-norm vector is undefined")
    return float(a @ b / (na * nb))


def route(query_embedding: np.ndarray, bundle: ParaphraseBundle) -> RouteResult:
    """Max-pooled cosine routing; invariant to positive rescaling of the query."""
    q = np.asarray(query_embedding, dtype=float).ravel()
    if q.shape[0] != bundle.dim:
        raise RoutingError(f"query has dim {q.shape[0]}, bundle expects {bundle.dim}")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise RoutingError("cannot route a zero-norm query embedding")
    q = q / norm
    scores = np.empty(N_TASKS)
    for task_id in range(N_TASKS):
        # Bundle rows are unit-norm, so the dot product is the cosine.
        scores[task_id] = float(np.max(bundle.vectors[task_id] @ q))
    best = int(np.argmax(scores))  # first max, hence ties break to the lowest id
    return RouteResult(task_id=best, score=float(scores[best]), scores=scores)


def _validated_vector(vec, where: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=float).ravel()
    if arr.shape[0] != EMBED_DIM:
        raise BundleError(f"{where}: expected {EMBED_DIM}-dim vector, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise BundleError(f"{where}: non-finite embedding component")
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise BundleError(f"{where}: embedding norm {norm:.6f} is not unit within {NORM_TOLERANCE}")
    return arr / norm


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: not valid JSON ({exc})") from exc


def load_bundle(path) -> ParaphraseBundle:
    """Load and validate a paraphrase bundle file.

    Checks: version and dim fields, all five tasks present with at least one
    paraphrase each, every vector 384-dim and unit-norm within 1e-4
    (re-normalized on load).
    """
    doc = _read_json(path)
    try:
        version = int(doc["version"])
        encoder = str(doc["encoder"])
        dim = int(doc["dim"])
        tasks = doc["tasks"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"{path}: missing or malformed bundle field ({exc})") from exc
    if version != BUNDLE_VERSION:
        raise BundleError(f"{path}: bundle version {version}, expected {BUNDLE_VERSION}")
    if dim != EMBED_DIM:
        raise BundleError(f"{path}: bundle dim {dim}, expected {EMBED_DIM}")

    texts: dict[int, list[str]] = {}
    vectors: dict[int, np.ndarray] = {}
    for task_id in range(N_TASKS):
        key = str(task_id)
        entries = tasks.get(key)
        if not entries:
            raise BundleError(f"{path}: task {task_id} has no paraphrases")
        rows, names = [], []
        for i, entry in enumerate(entries):
            try:
                text, vec = entry["text"], entry["vec"]
            except (KeyError, TypeError) as exc:
                raise BundleError(f"{path}: task {task_id} entry {i} malformed") from exc
            rows.append(_validated_vector(vec, f"{path}: task {task_id} entry {i}"))
            names.append(str(text))
        texts[task_id] = names
        vectors[task_id] = np.array(rows)
    return ParaphraseBundle(encoder=encoder, version=version, dim=dim, texts=texts, vectors=vectors)


def load_fixture(path) -> list[FixtureQuery]:
    """Load a labeled query-embedding fixture (same validation as bundles)."""
    doc = _read_json(path)
    try:
        dim = int(doc["dim"])
        queries = doc["queries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"{path}: missing or malformed fixture field ({exc})") from exc
    if dim != EMBED_DIM:
        raise BundleError(f"{path}: fixture dim {dim}, expected {EMBED_DIM}")
    out = []
    for i, entry in enumerate(queries):
        try:
            text, label, vec = str(entry["text"]), int(entry["label"]), entry["vec"]
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"{path}: query {i} malformed ({exc})") from exc
        if label not in range(N_TASKS):
            raise BundleError(f"{path}: query {i} label {label} out of range")
        out.append(FixtureQuery(text=text, label=label, vec=_validated_vector(vec, f"{path}: query {i}")))
    if not out:
        raise BundleError(f"{path}: fixture has no queries")
    return out


def default_bundle_path() -> Path:
    return Path(__file__).parent / "data" / "bundle.json"


def default_fixture_path() -> Path:
    return Path(__file__).parent / "data" / "fixture.json"
