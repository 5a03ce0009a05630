"""Product quantization over compressed feature maps.

The unit of quantization is the channel vector at one spatial position,
split into s contiguous sub-vectors of length d' = C'/s. Each subspace
gets its own k-means codebook; a quantized feature map stores one 8-bit
index per subspace per position. k-means runs in float64 end to end so
the per-iteration objective assertion is not disturbed by rounding; the
finished centroids are cast to float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError


@dataclass(frozen=True)
class Codebooks:
    """Per-subspace centroid tables of shape (s, k, d')."""

    s: int
    k: int
    subdim: int
    centroids: np.ndarray  # float32 (s, k, d')

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.k > 256:
            raise ConfigError("k above 256 does not fit the one-byte code format")
        if self.centroids.shape != (self.s, self.k, self.subdim):
            raise ShapeError(
                f"centroid table {self.centroids.shape} does not match "
                f"(s={self.s}, k={self.k}, d'={self.subdim})"
            )
        if not np.all(np.isfinite(self.centroids)):
            raise DataError("non-finite centroid")

    @property
    def latent_channels(self) -> int:
        return self.s * self.subdim


@dataclass(frozen=True)
class QuantizedExemplar:
    """One stored sample: byte codes plus its label and source task."""

    codes: np.ndarray  # uint8 (s, H, W)
    label: int
    task_id: int

    def byte_size(self) -> int:
        return self.codes.size


def _kmeans_plus_plus(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seed k centroids: first uniform, the rest D^2-weighted."""
    n = vectors.shape[0]
    centroids = np.empty((k, vectors.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = vectors[first]
    d2 = ((vectors - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass collapsed onto chosen centroids
            centroids[i] = vectors[int(rng.integers(n))]
        else:
            idx = int(rng.choice(n, p=d2 / total))
            centroids[i] = vectors[idx]
        d2 = np.minimum(d2, ((vectors - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _assign(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per vector; ties go to the lowest index."""
    d2 = ((vectors[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def kmeans_fit(
    vectors: np.ndarray, k: int, iters: int, rng: np.random.Generator
) -> np.ndarray:
    """Lloyd's algorithm from k-means++ seeds; returns (k, d) float64 centroids.

    The within-cluster objective is asserted non-increasing after every
    iteration. Empty clusters are repaired by promoting the point
    farthest from its assigned centroid.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if n < k:
        raise DataError(f"k-means needs at least k={k} vectors, got {n}")
    centroids = _kmeans_plus_plus(vectors, k, rng)
    assign = _assign(vectors, centroids)
    objective = ((vectors - centroids[assign]) ** 2).sum()
    for _ in range(iters):
        for c in range(k):
            members = vectors[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                dist = ((vectors - centroids[assign]) ** 2).sum(axis=1)
                far = int(dist.argmax())
                centroids[c] = vectors[far]
                assign[far] = c
        new_assign = _assign(vectors, centroids)
        new_objective = ((vectors - centroids[new_assign]) ** 2).sum()
        assert new_objective <= objective + 1e-9, "k-means objective increased"
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign, objective = new_assign, new_objective
    return centroids


def _positions(latents: np.ndarray) -> np.ndarray:
    """(N, C', H, W) -> (N*H*W, C') position-vector matrix."""
    if latents.ndim != 4:
        raise ShapeError(f"latents must be (N, C', H, W), got {latents.shape}")
    n, c, h, w = latents.shape
    return latents.transpose(0, 2, 3, 1).reshape(n * h * w, c)


def train_pq(
    latents: np.ndarray, s: int, k: int, iters: int = 25, seed: int = 0
) -> Codebooks:
    """Fit one k-means codebook per channel subspace.

    Subquantizer i runs with seed + i, so results do not depend on the
    order the subspaces are processed in.
    """
    vectors = _positions(latents)
    c = vectors.shape[1]
    if c % s != 0:
        raise ConfigError(f"channel count {c} is not divisible by s={s}")
    if vectors.shape[0] < k:
        raise DataError(f"need at least k={k} position vectors, got {vectors.shape[0]}")
    subdim = c // s
    centroids = np.empty((s, k, subdim), dtype=np.float64)
    for i in range(s):
        sub = vectors[:, i * subdim : (i + 1) * subdim]
        centroids[i] = kmeans_fit(sub, k, iters, np.random.default_rng(seed + i))
    return Codebooks(s, k, subdim, centroids.astype(np.float32))


def pq_encode_batch(latents: np.ndarray, books: Codebooks) -> np.ndarray:
    """(N, C', H, W) latents -> (N, s, H, W) uint8 codes."""
    if latents.ndim != 4 or latents.shape[1] != books.latent_channels:
        raise ShapeError(
            f"latents shape {latents.shape} does not match C'={books.latent_channels}"
        )
    n, c, h, w = latents.shape
    vectors = latents.transpose(0, 2, 3, 1).reshape(n * h * w, c).astype(np.float32)
    codes = np.empty((books.s, n * h * w), dtype=np.uint8)
    for i in range(books.s):
        sub = vectors[:, i * books.subdim : (i + 1) * books.subdim]
        codes[i] = _assign(sub, books.centroids[i]).astype(np.uint8)
    return codes.reshape(books.s, n, h, w).transpose(1, 0, 2, 3)


def pq_decode_batch(codes: np.ndarray, books: Codebooks) -> np.ndarray:
    """(N, s, H, W) codes -> (N, C', H, W) float32 centroid lookups."""
    if codes.ndim != 4 or codes.shape[1] != books.s:
        raise ShapeError(f"codes shape {codes.shape} does not match s={books.s}")
    if codes.size and codes.max() >= books.k:
        raise DataError(f"code {int(codes.max())} out of range for k={books.k}")
    n, s, h, w = codes.shape
    out = np.empty((n, books.latent_channels, h, w), dtype=np.float32)
    flat = codes.transpose(1, 0, 2, 3).reshape(s, n * h * w)
    for i in range(s):
        sub = books.centroids[i][flat[i]]  # (N*H*W, d')
        out[:, i * books.subdim : (i + 1) * books.subdim] = sub.T.reshape(
            books.subdim, n, h, w
        ).transpose(1, 0, 2, 3)
    return out


def pq_encode(latent: np.ndarray, books: Codebooks) -> np.ndarray:
    """(C', H, W) latent -> (s, H, W) uint8 codes."""
    if latent.ndim != 3 or latent.shape[0] != books.latent_channels:
        raise ShapeError(
            f"latent shape {latent.shape} does not match C'={books.latent_channels}"
        )
    return pq_encode_batch(latent[None], books)[0]


def pq_decode(codes: np.ndarray, books: Codebooks) -> np.ndarray:
    """(s, H, W) codes -> (C', H, W) float32 latent of looked-up centroids."""
    if codes.ndim != 3 or codes.shape[0] != books.s:
        raise ShapeError(f"codes shape {codes.shape} does not match s={books.s}")
    return pq_decode_batch(codes[None], books)[0]


def reconstruction_mse(latents: np.ndarray, books: Codebooks) -> float:
    """Mean over position vectors of squared L2 error of encode-then-decode."""
    if latents.shape[0] == 0:
        raise DataError("reconstruction_mse over an empty set")
    decoded = pq_decode_batch(pq_encode_batch(latents, books), books)
    diff = latents.astype(np.float64) - decoded.astype(np.float64)
    n, _, h, w = latents.shape
    return float((diff**2).sum() / (n * h * w))
