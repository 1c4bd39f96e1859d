"""Positive / negative appearance memory banks.

A bank only admits an embedding that is novel with respect to everything it
already holds (cosine similarity at most ``1 - novelty_epsilon``). When full,
it makes room by dropping the older member of the most similar pair, which is
what keeps the stored set diverse. All embeddings are unit-norm, so cosine
similarity is a dot product.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import BoundingBox, iou

NORM_TOLERANCE = 1e-9


class MemoryContractError(ValueError):
    """Polarity, dimension or normalisation mismatch."""


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class InsertStatus(str, enum.Enum):
    ADDED = "added"
    REJECTED_NOT_NOVEL = "rejected_not_novel"
    ADDED_WITH_EVICTION = "added_with_eviction"


@dataclass(frozen=True, eq=False)
class MemoryEntry:
    embedding: np.ndarray
    frame: int
    polarity: Polarity

    def __post_init__(self) -> None:
        emb = np.array(self.embedding, dtype=float)
        if emb.ndim != 1 or emb.size == 0:
            raise MemoryContractError(f"embedding must be a non-empty vector, got shape {emb.shape}")
        norm = math.sqrt(float(emb @ emb))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise MemoryContractError(f"embedding norm {norm!r} is not 1")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "polarity", Polarity(self.polarity))

    @classmethod
    def normalized(cls, vector, frame: int, polarity: Polarity) -> MemoryEntry:
        v = np.asarray(vector, dtype=float)
        n = np.linalg.norm(v)
        if not n > 0:
            raise MemoryContractError("cannot normalise a zero vector")
        return cls(v / n, frame, polarity)

    @property
    def dim(self) -> int:
        return self.embedding.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryEntry):
            return NotImplemented
        return (
            self.frame == other.frame
            and self.polarity is other.polarity
            and np.array_equal(self.embedding, other.embedding)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class InsertOutcome:
    status: InsertStatus
    evicted: MemoryEntry | None = None


@dataclass
class MemoryBank:
    polarity: Polarity
    capacity: int = 16
    novelty_epsilon: float = 0.1
    dim: int = 16
    entries: list[MemoryEntry] = field(default_factory=list)
    # (entries it was built from, stacked embeddings, their Gram matrix); holding
    # the entries themselves keeps the identity check sound
    _cache: tuple[tuple[MemoryEntry, ...], np.ndarray, np.ndarray] | None = field(
        default=None, init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        self.polarity = Polarity(self.polarity)
        if isinstance(self.capacity, bool) or not isinstance(self.capacity, int) or self.capacity < 1:
            raise MemoryContractError(f"capacity must be a positive integer, got {self.capacity!r}")
        if not 0.0 < self.novelty_epsilon < 1.0:
            raise MemoryContractError(f"novelty_epsilon must lie in (0, 1), got {self.novelty_epsilon}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def max_similarity(self) -> float:
        return 1.0 - self.novelty_epsilon

    def matrix(self) -> np.ndarray:
        return self._state()[0]

    def _state(self) -> tuple[np.ndarray, np.ndarray]:
        c = self._cache
        if c is not None and len(c[0]) == len(self.entries) and all(a is b for a, b in zip(c[0], self.entries)):
            return c[1], c[2]
        if not self.entries:
            m = np.zeros((0, self.dim))
        else:
            m = np.stack([e.embedding for e in self.entries])
        self._remember(m, (m[:, None, :] * m[None, :, :]).sum(axis=2))
        return self._cache[1], self._cache[2]

    def _remember(self, m: np.ndarray, gram: np.ndarray) -> None:
        m.flags.writeable = False
        gram.flags.writeable = False
        self._cache = (tuple(self.entries), m, gram)

    def _check(self, vec: np.ndarray) -> None:
        if vec.shape != (self.dim,):
            raise MemoryContractError(f"embedding dimension {vec.shape} does not match bank dimension {self.dim}")

    def insert(self, entry: MemoryEntry) -> InsertOutcome:
        if entry.polarity is not self.polarity:
            raise MemoryContractError(f"{entry.polarity.value} entry offered to a {self.polarity.value} bank")
        self._check(entry.embedding)
        m, gram = self._state()
        sims = _row_dots(m, entry.embedding)
        if self.entries and float(sims.max()) > self.max_similarity:
            return InsertOutcome(InsertStatus.REJECTED_NOT_NOVEL)
        new_row = entry.embedding[None, :]
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
            self._remember(np.concatenate((m, new_row)), _grow(gram, sims))
            return InsertOutcome(InsertStatus.ADDED)
        victim = self._eviction_index(entry, gram, sims)
        evicted = self.entries.pop(victim)
        self.entries.append(entry)
        gram = _drop(_drop(gram, victim).T, victim)  # symmetric, so the transpose is harmless
        self._remember(np.concatenate((_drop(m, victim), new_row)), _grow(gram, _drop(sims, victim)))
        return InsertOutcome(InsertStatus.ADDED_WITH_EVICTION, evicted)

    def _eviction_index(self, incoming: MemoryEntry, gram: np.ndarray, sims: np.ndarray) -> int:
        """Index of the existing entry to drop so ``incoming`` fits.

        Pairs are ranked by similarity; among equally similar pairs the one
        whose older member has the lower frame index (then earlier list
        position) wins. The incoming entry counts as the newest member, so the
        victim is always an existing entry. ``gram`` holds the pairwise
        similarities of the stored entries and ``sims`` their similarity to
        ``incoming``.
        """
        n = len(self.entries)
        iu, ju = _pairs(n)
        stored = gram[iu, ju]
        best = float(sims.max()) if stored.size == 0 else max(float(sims.max()), float(stored.max()))
        victims = [int(i) for i in np.flatnonzero(sims == best)]
        for k in np.flatnonzero(stored == best):
            i, j = int(iu[k]), int(ju[k])
            victims.append(i if self.entries[i].frame <= self.entries[j].frame else j)
        return min(victims, key=lambda v: (self.entries[v].frame, v))

    def maxsim(self, candidate: np.ndarray) -> float:
        """Largest similarity to any entry, floored at 0; an empty bank gives 0."""
        vec = np.asarray(candidate, dtype=float)
        self._check(vec)
        if not self.entries:
            return 0.0
        return max(0.0, float(_row_dots(self.matrix(), vec).max()))

    def copy(self) -> MemoryBank:
        return MemoryBank(self.polarity, self.capacity, self.novelty_epsilon, self.dim, list(self.entries))

    def snapshot(self) -> dict:
        return {
            "polarity": self.polarity.value,
            "capacity": self.capacity,
            "novelty_epsilon": self.novelty_epsilon,
            "dim": self.dim,
            "entries": [
                {"frame": e.frame, "polarity": e.polarity.value, "embedding": e.embedding.tolist()} for e in self.entries
            ],
        }

    @classmethod
    def from_snapshot(cls, d: dict) -> MemoryBank:
        bank = cls(Polarity(d["polarity"]), d["capacity"], d["novelty_epsilon"], d["dim"])
        bank.entries = [_restore(e) for e in d["entries"]]
        return bank


def _restore(e: dict) -> MemoryEntry:
    v = np.asarray(e["embedding"], dtype=float)
    pol = Polarity(e["polarity"])
    # snapshots written to disk carry six decimals, which breaks the norm slightly
    if abs(float(np.linalg.norm(v)) - 1.0) <= NORM_TOLERANCE:
        return MemoryEntry(v, e["frame"], pol)
    return MemoryEntry.normalized(v, e["frame"], pol)


@functools.lru_cache(maxsize=64)
def _pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(n, 1)
    iu.flags.writeable = False
    ju.flags.writeable = False
    return iu, ju


def _drop(a: np.ndarray, i: int) -> np.ndarray:
    return np.concatenate((a[:i], a[i + 1 :]))


def _grow(gram: np.ndarray, row: np.ndarray) -> np.ndarray:
    n = gram.shape[0]
    out = np.empty((n + 1, n + 1))
    out[:n, :n] = gram
    out[n, :n] = row
    out[:n, n] = row
    out[n, n] = 1.0
    return out


def _row_dots(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    # each row reduced on its own, so a row's value never depends on how many
    # other rows the bank holds (BLAS matvec can differ in the last ulp)
    return (m * v).sum(axis=1)


def score(candidate, m_pos: MemoryBank, m_neg: MemoryBank, lam: float = 1.0) -> float:
    """Memory-conditioned preference for a candidate embedding (higher is more target-like)."""
    if m_pos.polarity is not Polarity.POSITIVE or m_neg.polarity is not Polarity.NEGATIVE:
        raise MemoryContractError("score expects (positive bank, negative bank)")
    return m_pos.maxsim(candidate) - lam * m_neg.maxsim(candidate)


def new_bank_pair(capacity: int = 16, novelty_epsilon: float = 0.1, dim: int = 16) -> tuple[MemoryBank, MemoryBank]:
    return (
        MemoryBank(Polarity.POSITIVE, capacity, novelty_epsilon, dim),
        MemoryBank(Polarity.NEGATIVE, capacity, novelty_epsilon, dim),
    )


def pairwise_novel(bank: MemoryBank) -> bool:
    if len(bank) < 2:
        return True
    m = bank.matrix()
    sims = m @ m.T
    np.fill_diagonal(sims, -np.inf)
    return float(sims.max()) <= bank.max_similarity


# --- embeddings ------------------------------------------------------------


def histogram_embedding(image: np.ndarray, box: BoundingBox, bins: int = 8) -> np.ndarray:
    """L2-normalised joint RGB histogram (``bins**3`` values) of the box crop.

    ``image`` is ``(H, W, 3)`` uint8. The crop is clipped to the image; an
    empty crop is a contract error.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise MemoryContractError(f"expected an (H, W, 3) image, got shape {img.shape}")
    H, W = img.shape[:2]
    x0 = int(np.floor(max(0.0, box.x)))
    y0 = int(np.floor(max(0.0, box.y)))
    x1 = int(np.ceil(min(float(W), box.x + box.w)))
    y1 = int(np.ceil(min(float(H), box.y + box.h)))
    crop = img[y0:y1, x0:x1]
    if crop.size == 0:
        raise MemoryContractError(f"box {box.to_list()} does not overlap the image")
    q = (crop.astype(np.int64) * bins) // 256
    idx = (q[..., 0] * bins + q[..., 1]) * bins + q[..., 2]
    hist = np.bincount(idx.ravel(), minlength=bins**3).astype(float)
    return hist / np.linalg.norm(hist)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def background_embedding(box: BoundingBox, frame_width: int, frame_height: int, dim: int, grid: int = 8) -> np.ndarray:
    """Deterministic stand-in for "whatever is behind the box" in geometric mode.

    The frame is split into ``grid x grid`` cells; every cell owns a fixed
    pseudo-random unit vector.
    """
    cx = min(max(box.x + box.w / 2, 0.0), frame_width - 1e-9)
    cy = min(max(box.y + box.h / 2, 0.0), frame_height - 1e-9)
    cell = int(cy * grid // frame_height) * grid + int(cx * grid // frame_width)
    rng = np.random.default_rng([0xB6, cell, dim])
    return _unit(rng.standard_normal(dim))


class GeometricEmbedder:
    """Embeds a box using the sequence's per-object features.

    A box that overlaps some object with IoU >= ``match_iou`` takes that
    object's feature for the frame; otherwise it falls back to the background
    embedding of its location.
    """

    def __init__(self, seq, match_iou: float = 0.5):
        self.seq = seq
        self.match_iou = match_iou
        feats = seq.features or {}
        self.dim = next(iter(feats.values())).shape[1] if feats else 0

    @property
    def available(self) -> bool:
        return bool(self.seq.features) and self.seq.objects is not None

    def match(self, t: int, box: BoundingBox) -> str | None:
        if self.seq.objects is None:
            return None
        best, best_iou = None, 0.0
        for oid in sorted(self.seq.objects, key=_oid_key):
            ob = self.seq.objects[oid][t]
            if ob is None:
                continue
            v = iou(box, ob)
            if v > best_iou:
                best, best_iou = oid, v
        return best if best_iou >= self.match_iou else None

    def object_feature(self, t: int, oid: str) -> np.ndarray:
        return _unit(np.asarray(self.seq.features[oid][t], dtype=float))

    def __call__(self, t: int, box: BoundingBox | None) -> np.ndarray | None:
        if box is None or not self.available:
            return None
        oid = self.match(t, box)
        if oid is not None and oid in self.seq.features:
            return self.object_feature(t, oid)
        return background_embedding(box, self.seq.size.width, self.seq.size.height, self.dim)


def _oid_key(oid: str):
    return (0, int(oid)) if oid.isdigit() else (1, oid)


def entries_from(vectors: Iterable, polarity: Polarity, start_frame: int = 0) -> list[MemoryEntry]:
    return [MemoryEntry.normalized(v, start_frame + i, polarity) for i, v in enumerate(vectors)]
