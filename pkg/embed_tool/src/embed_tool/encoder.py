"""Frozen sentence encoder wrapper.

Uses MiniLM-L6-v2 (384-dim, mean pooling, the model's published default)
through sentence-transformers. The model is loaded once per process and
never fine-tuned, so identical texts always produce identical embeddings.
Set HF_ENDPOINT if the model hub must be reached through a mirror.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ENCODER_MODEL", "ENCODER_TAG", "EMBED_DIM", "encode_texts", "encoder_available"]

ENCODER_MODEL = "sentence-transformers/all-MiniLM-L6-v2"
ENCODER_TAG = "minilm-l6-v2"
EMBED_DIM = 384

_model = None


def _get_model():
    global _model
    if _model is None:
        from sentence_transformers import SentenceTransformer

        try:
            _model = SentenceTransformer(ENCODER_MODEL)
        except Exception:
            # Hub unreachable: fall back to the local cache if present.
            _model = SentenceTransformer(ENCODER_MODEL, local_files_only=True)
    return _model


def encoder_available() -> bool:
    """True if the frozen encoder can be loaded (weights present or fetchable)."""
    try:
        _get_model()
        return True
    except Exception:
        return False


def encode_texts(texts: list[str]) -> np.ndarray:
    """Encode texts to unit-norm 384-dim float64 vectors, one row each."""
    model = _get_model()
    vecs = model.encode(list(texts), normalize_embeddings=True, show_progress_bar=False)
    vecs = np.asarray(vecs, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[1] != EMBED_DIM:
        raise RuntimeError(f"encoder returned shape {vecs.shape}, expected (n, {EMBED_DIM})")
    # Explicit renormalization: the file format promises unit norm to 1e-6.
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs
