"""Bundle and fixture emission in the router's JSON wire format."""

from __future__ import annotations

import json
from pathlib import Path

from .encoder import EMBED_DIM, ENCODER_TAG, encode_texts
from .manifest import ParaphraseManifest, overlap_violations

__all__ = ["BUNDLE_VERSION", "build_bundle", "build_fixture"]

BUNDLE_VERSION = 1


def _write_json(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))
    return path


def build_bundle(manifest: ParaphraseManifest, out_path) -> Path:
    """Encode every template and paraphrase; write the per-task bundle."""
    manifest.validate()
    tasks_doc = {}
    for task_id, entry in enumerate(manifest.tasks):
        texts = list(entry.all_texts)
        vecs = encode_texts(texts)
        tasks_doc[str(task_id)] = [
            {"text": text, "vec": vec.tolist()} for text, vec in zip(texts, vecs)
        ]
    doc = {
        "version": BUNDLE_VERSION,
        "encoder": ENCODER_TAG,
        "dim": EMBED_DIM,
        "tasks": tasks_doc,
    }
    return _write_json(out_path, doc)


def build_fixture(manifest: ParaphraseManifest, out_path) -> Path:
    """Encode the labeled held-out queries; refuses manifests whose queries
    share content words with the templates."""
    manifest.validate()
    if not manifest.held_out:
        raise ValueError("manifest has no held-out queries")
    violations = overlap_violations(manifest)
    if violations:
        detail = "; ".join(f"{text!r} shares {sorted(words)}" for text, words in violations)
        raise ValueError(f"held-out queries overlap the templates: {detail}")
    texts = [q.text for q in manifest.held_out]
    vecs = encode_texts(texts)
    doc = {
        "version": BUNDLE_VERSION,
        "encoder": ENCODER_TAG,
        "dim": EMBED_DIM,
        "queries": [
            {"text": q.text, "label": q.label, "vec": vec.tolist()}
            for q, vec in zip(manifest.held_out, vecs)
        ],
    }
    return _write_json(out_path, doc)
