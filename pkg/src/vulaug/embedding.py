"""Code embeddings: a remote HTTP provider, a deterministic hashing fallback,
and the PCA reduction used by the diversity metrics.

Remote wire protocol: POST <endpoint>/embed with {"codes": [str]} answered by
{"vectors": [[float]], "dim": int}; non-200 responses carry {"error": str}.
Requests are chunked to at most 64 codes and results keep input order.

The hashing embedder is documented precisely so tests can replay it: the code
is tokenized (retrieval.tokenize), each token is hashed with BLAKE2b to a
64-bit big-endian integer h, its count is added to bucket h % dim with sign
+1 when the top bit of h is 0 and -1 otherwise, and the bucket vector is
L2-normalized.  An input with no tokens maps to the zero vector.
"""

from __future__ import annotations

import hashlib
import logging
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np
import requests

from .errors import PipelineError
from .retrieval import tokenize

log = logging.getLogger(__name__)

REMOTE_BATCH_LIMIT = 64
_REMOTE_ATTEMPTS = 3
_REMOTE_BACKOFF_S = 0.2
DEFAULT_HASH_DIM = 256


@dataclass
class EmbeddingProvider:
    """Where vectors come from: a remote /embed service or the local hasher."""

    kind: str
    endpoint: str | None = None
    dim: int = DEFAULT_HASH_DIM

    def __post_init__(self):
        if self.kind not in ("remote", "hash"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote provider requires an endpoint")
        if self.kind == "hash" and self.dim < 8:
            raise ValueError("hash provider requires dim >= 8")


def token_hash(token: str) -> int:
    """64-bit big-endian BLAKE2b digest of the UTF-8 token."""
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


def hash_embed(code: str, dim: int = DEFAULT_HASH_DIM) -> np.ndarray:
    if dim < 8:
        raise ValueError("dim must be at least 8")
    vec = np.zeros(dim)
    for token, count in Counter(tokenize(code)).items():
        h = token_hash(token)
        sign = 1.0 if h < 1 << 63 else -1.0
        vec[h % dim] += sign * count
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def embed_batch(provider: EmbeddingProvider, codes) -> list[np.ndarray]:
    """Embed codes preserving order; empty inputs fail before any network call."""
    codes = list(codes)
    if not codes:
        raise ValueError("codes must be non-empty")
    for i, code in enumerate(codes):
        if not isinstance(code, str) or not code.strip():
            raise ValueError(f"codes[{i}] is empty")
    if provider.kind == "hash":
        return [hash_embed(code, provider.dim) for code in codes]

    vectors: list[np.ndarray] = []
    expected_dim = None
    for start in range(0, len(codes), REMOTE_BATCH_LIMIT):
        chunk = codes[start:start + REMOTE_BATCH_LIMIT]
        payload = _post_embed(provider.endpoint, chunk)
        got = payload.get("vectors")
        dim = payload.get("dim")
        if not isinstance(got, list) or len(got) != len(chunk):
            raise PipelineError("embedding service returned a mis-sized batch")
        if expected_dim is None:
            expected_dim = dim
        elif dim != expected_dim:
            raise PipelineError(f"embedding dimension changed mid-run: {expected_dim} -> {dim}")
        for row in got:
            arr = np.asarray(row, dtype=float)
            if arr.ndim != 1 or arr.shape[0] != dim or not np.all(np.isfinite(arr)):
                raise PipelineError("embedding service returned a malformed vector")
            vectors.append(arr)
    return vectors


def _error_text(resp) -> str:
    try:
        return str(resp.json().get("error", f"HTTP {resp.status_code}"))
    except ValueError:
        return f"HTTP {resp.status_code}"


def _post_embed(endpoint: str, chunk: list[str]) -> dict:
    url = endpoint.rstrip("/") + "/embed"
    last = "no attempt made"
    for attempt in range(1, _REMOTE_ATTEMPTS + 1):
        try:
            resp = requests.post(url, json={"codes": list(chunk)}, timeout=60)
        except requests.RequestException as exc:
            last = f"transport error: {exc}"
        else:
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError:
                    last = "non-JSON 200 response"
            elif resp.status_code >= 500:
                last = _error_text(resp)
            else:
                raise PipelineError(f"embedding service rejected the batch: {_error_text(resp)}")
        if attempt < _REMOTE_ATTEMPTS:
            time.sleep(_REMOTE_BACKOFF_S * attempt)
    raise PipelineError(f"embedding service unreachable after {_REMOTE_ATTEMPTS} attempts: {last}")


def pca_project(vectors, k: int) -> list[np.ndarray]:
    """Project onto the top-k principal directions of the sample covariance.

    Components are ordered by decreasing eigenvalue and sign-flipped so each
    component's largest-magnitude loading is positive, pinning the otherwise
    arbitrary +/- choice.  k may exceed the data rank; the extra coordinates
    come out (numerically) zero.
    """
    X = np.asarray(list(vectors), dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca_project needs at least 2 vectors")
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    _eigvals, eigvecs = np.linalg.eigh(cov)
    components = eigvecs[:, ::-1][:, :k].copy()
    for j in range(k):
        lead = int(np.argmax(np.abs(components[:, j])))
        if components[lead, j] < 0:
            components[:, j] = -components[:, j]
    projected = centered @ components
    return [projected[i] for i in range(n)]
