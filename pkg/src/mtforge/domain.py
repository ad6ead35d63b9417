"""Domain clustering and soft domain probabilities.

Sentences embed by default as hashed character n-gram (n = 1..3) TF-IDF
vectors in 4096 buckets, L2-normalized; the hash is a fixed 8-byte
blake2b digest, so embeddings are stable across runs and platforms.
Externally computed vectors can be supplied instead as JSONL lines
``{"id": int, "vec": [...]}`` keyed by pair id.

Clustering is k-means++ seeded Lloyd iteration on squared Euclidean
distance. Empty clusters are reseeded to the point farthest from its
assigned centroid, and the within-cluster sum of squares is recorded per
iteration (it never increases). A fitted model assigns hard labels by
nearest centroid (ties to the smaller index) and soft probabilities by

    p(d | v) = softmax_d( -||v - c_d||^2 / tau )

where tau defaults to the mean squared distance between centroids.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus, SentencePair, Tokens
from .errors import MtforgeError

DEFAULT_DIM = 4096
DEFAULT_K = 2
KMEANS_TOL = 1e-6
KMEANS_MAX_ITER = 100


def _bucket(ngram: str, dim: int) -> int:
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


@dataclass
class HashedTfidfEmbedding:
    """Hashed char n-gram TF-IDF sentence embedding; fit() learns the IDF."""

    dim: int = DEFAULT_DIM
    orders: tuple[int, ...] = (1, 2, 3)
    idf: np.ndarray | None = None
    name: str = "hashed-tfidf"

    def _counts(self, tokens: Sequence[str]) -> dict[int, int]:
        text = " ".join(tokens)
        counts: dict[int, int] = {}
        for n in self.orders:
            for i in range(len(text) - n + 1):
                b = _bucket(text[i: i + n], self.dim)
                counts[b] = counts.get(b, 0) + 1
        return counts

    def fit(self, sentences: Iterable[Tokens]) -> "HashedTfidfEmbedding":
        df = np.zeros(self.dim)
        n_docs = 0
        for sent in sentences:
            n_docs += 1
            for b in self._counts(sent):
                df[b] += 1
        if n_docs == 0:
            raise MtforgeError("cannot fit an embedding on an empty corpus")
        self.idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
        return self

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        if self.idf is None:
            raise MtforgeError("embedding provider is not fitted")
        vec = np.zeros(self.dim)
        for b, c in self._counts(tokens).items():
            vec[b] = c * self.idf[b]
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm > 0 else vec

    def embed_pair(self, pair: SentencePair) -> np.ndarray:
        return self.embed_tokens(pair.src if pair.src else pair.tgt)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "orders": list(self.orders),
            "idf": [float(x) for x in (self.idf if self.idf is not None else [])],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "HashedTfidfEmbedding":
        inst = cls(dim=int(obj["dim"]), orders=tuple(obj["orders"]))
        idf = obj.get("idf") or []
        inst.idf = np.asarray(idf, dtype=float) if idf else None
        return inst


@dataclass
class ExternalVectorEmbedding:
    """Vectors supplied per pair id from a JSONL file."""

    vectors: dict[int, np.ndarray]
    dim: int
    name: str = "external"

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ExternalVectorEmbedding":
        path = Path(path)
        vectors: dict[int, np.ndarray] = {}
        dim: int | None = None
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                vec = np.asarray([float(x) for x in obj["vec"]], dtype=float)
                vectors[int(obj["id"])] = vec
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MtforgeError(f"{path}:{i + 1}: malformed vector line: {exc}") from exc
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise MtforgeError(f"{path}:{i + 1}: vector length {len(vec)} != {dim}")
        if dim is None:
            raise MtforgeError(f"{path}: no vectors")
        return cls(vectors, dim)

    def embed_pair(self, pair: SentencePair) -> np.ndarray:
        if pair.pair_id not in self.vectors:
            raise MtforgeError(f"no external vector for pair id {pair.pair_id}")
        return self.vectors[pair.pair_id]

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        raise MtforgeError("external vectors are keyed by pair id, not tokens")


def embed_corpus(provider, corpus: Corpus) -> np.ndarray:
    return np.stack([provider.embed_pair(p) for p in corpus])


@dataclass
class DomainModel:
    centroids: np.ndarray
    tau: float
    provider: dict = field(default_factory=dict)
    sse_trace: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centroids)


def _sq_dists(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = vectors[:, None, :] - centroids[None, :, :]
    return (diff * diff).sum(axis=2)


def _kmeans_pp(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(vectors)
    centroids = [vectors[int(rng.integers(n))]]
    while len(centroids) < k:
        d2 = _sq_dists(vectors, np.stack(centroids)).min(axis=1)
        total = float(d2.sum())
        if total == 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids.append(vectors[idx])
    return np.stack(centroids)


def kmeans_fit(
    vectors: np.ndarray,
    k: int = DEFAULT_K,
    seed: int = 0,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL,
    provider: dict | None = None,
) -> DomainModel:
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or not len(vectors):
        raise MtforgeError("kmeans needs a non-empty 2-D vector array")
    if len(np.unique(vectors, axis=0)) < k:
        raise MtforgeError(f"kmeans needs at least {k} distinct vectors")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(vectors, k, rng)
    sse_trace: list[float] = []
    for _ in range(max_iter):
        d2 = _sq_dists(vectors, centroids)
        labels = d2.argmin(axis=1)
        sse_trace.append(float(d2[np.arange(len(vectors)), labels].sum()))
        new_centroids = centroids.copy()
        empty: list[int] = []
        for c in range(k):
            members = vectors[labels == c]
            if len(members):
                new_centroids[c] = members.mean(axis=0)
            else:
                empty.append(c)
        if empty:
            # reseed each empty cluster to a distinct farthest point
            assigned = d2[np.arange(len(vectors)), labels]
            farthest = np.argsort(-assigned, kind="stable")
            for rank, c in enumerate(empty):
                new_centroids[c] = vectors[int(farthest[rank])]
        movement = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if movement < tol:
            break
    pair_d2 = _sq_dists(centroids, centroids)
    upper = pair_d2[np.triu_indices(k, 1)]
    tau = float(upper.mean()) if len(upper) and upper.mean() > 0 else 1.0
    return DomainModel(centroids, tau, provider or {}, sse_trace)


def domain_label(model: DomainModel, vector: np.ndarray) -> int:
    """Nearest centroid; ties resolve to the smaller index."""
    d2 = _sq_dists(vector[None, :], model.centroids)[0]
    return int(d2.argmin())


def domain_probs(model: DomainModel, vector: np.ndarray, tau: float | None = None) -> np.ndarray:
    """softmax(-squared distance / tau) over domains."""
    t = model.tau if tau is None else tau
    if t <= 0:
        raise MtforgeError(f"tau must be positive, got {t}")
    d2 = _sq_dists(vector[None, :], model.centroids)[0]
    z = -d2 / t
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def save_domain(model: DomainModel, path: str | Path) -> None:
    obj = {
        "k": model.k,
        "tau": model.tau,
        "provider": model.provider,
        "centroids": [[float(x) for x in row] for row in model.centroids],
    }
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def load_domain(path: str | Path) -> DomainModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        centroids = np.asarray(obj["centroids"], dtype=float)
        tau = float(obj["tau"])
        provider = dict(obj.get("provider", {}))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MtforgeError(f"{path}: bad domain model: {exc}") from exc
    return DomainModel(centroids, tau, provider)


def provider_from_dict(obj: dict):
    if obj.get("name") == "hashed-tfidf":
        return HashedTfidfEmbedding.from_dict(obj)
    raise MtforgeError(f"unknown embedding provider: {obj.get('name')!r}")
