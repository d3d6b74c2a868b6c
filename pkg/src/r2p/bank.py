"""The frozen motion bank: trajectory/embedding key-value pairs.

The bank maps physically realizable future trajectories to unit-norm
embeddings.  Embeddings are a seeded orthonormal random projection of
geometric trajectory features, so geometric similarity maps to embedding
proximity while staying exactly reproducible.  Once built, the bank is
immutable; a CRC recorded at build time lets training detect accidental
mutation.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import BankCorruptionError, BankFormatError

BANK_MAGIC = b"R2PBANK1"
_BUILD_MODES = ("clustered", "random")


@dataclass
class MotionBank:
    trajectories: np.ndarray  # [B, T_f, 2] float32, agent-centric
    embeddings: np.ndarray    # [B, D_emb] float32, rows l2-normalized
    n_clusters: int
    n_elements: int
    build_mode: str
    projection_seed: int

    @property
    def size(self) -> int:
        return self.trajectories.shape[0]

    @property
    def t_future(self) -> int:
        return self.trajectories.shape[1]

    @property
    def d_emb(self) -> int:
        return self.embeddings.shape[1]

    @property
    def topology(self) -> tuple[int, int]:
        return (self.n_clusters, self.n_elements)

    def validate(self) -> None:
        if self.build_mode not in _BUILD_MODES:
            raise ValueError(f"unknown build mode {self.build_mode!r}")
        if self.size != self.n_clusters * self.n_elements:
            raise ValueError(
                f"bank size {self.size} != n_clusters*n_elements "
                f"({self.n_clusters}x{self.n_elements})")
        if self.embeddings.shape[0] != self.size:
            raise ValueError("trajectory/embedding count mismatch")
        if not np.all(np.isfinite(self.trajectories)):
            raise ValueError("trajectories contain non-finite values")
        norms = np.linalg.norm(self.embeddings.astype(np.float64), axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("embedding rows are not unit norm")
        start = np.linalg.norm(self.trajectories[:, 0, :], axis=1)
        if np.max(start) > 1e-6:
            raise ValueError("bank trajectories must start at the origin")

    def checksum(self) -> int:
        """CRC32 over the serialized header+payload; stored in checkpoints."""
        return zlib.crc32(_bank_bytes(self))


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _projection_matrix(projection_seed: int, d_emb: int, feat_dim: int) -> np.ndarray:
    """Fixed random matrix with orthonormal rows, [d_emb, feat_dim]."""
    if d_emb > feat_dim:
        raise ValueError(f"d_emb={d_emb} exceeds feature dimension {feat_dim}")
    rng = np.random.default_rng(projection_seed)
    gauss = rng.standard_normal((feat_dim, d_emb))
    q, _ = np.linalg.qr(gauss)
    return np.ascontiguousarray(q.T)


def _trajectory_features(trajs: np.ndarray) -> np.ndarray:
    """Flattened positions + endpoint + mean finite-difference heading."""
    trajs = np.asarray(trajs, dtype=np.float64)
    squeeze = trajs.ndim == 2
    if squeeze:
        trajs = trajs[None]
    m, t_f, _ = trajs.shape
    flat = trajs.reshape(m, 2 * t_f)
    endpoint = trajs[:, -1, :]
    if t_f > 1:
        diffs = np.diff(trajs, axis=1)
        heading = np.arctan2(diffs[..., 1], diffs[..., 0]).mean(axis=1, keepdims=True)
    else:
        heading = np.zeros((m, 1))
    feats = np.concatenate([flat, endpoint, heading], axis=1)
    return feats[0] if squeeze else feats


def embed_trajectory(traj: np.ndarray, projection_seed: int, d_emb: int) -> np.ndarray:
    """Unit-norm embedding of one trajectory via the frozen seeded projection."""
    traj = np.asarray(traj, dtype=np.float64)
    if not np.all(np.isfinite(traj)):
        raise ValueError("trajectory contains non-finite values")
    feats = _trajectory_features(traj)
    proj = _projection_matrix(projection_seed, d_emb, feats.shape[-1])
    vec = proj @ feats
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        out = np.zeros(d_emb)
        out[0] = 1.0
        return out
    return vec / norm


def embed_trajectories(trajs: np.ndarray, projection_seed: int, d_emb: int) -> np.ndarray:
    trajs = np.asarray(trajs, dtype=np.float64)
    feats = _trajectory_features(trajs)
    proj = _projection_matrix(projection_seed, d_emb, feats.shape[-1])
    vecs = feats @ proj.T
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    degenerate = norms[:, 0] < 1e-12
    norms[degenerate] = 1.0
    vecs = vecs / norms
    vecs[degenerate] = 0.0
    vecs[degenerate, 0] = 1.0
    return vecs


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _fix_empty_clusters(labels, centers, x):
    """Re-seed each empty cluster from the farthest member of the largest one."""
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    for c in np.nonzero(counts == 0)[0]:
        donor = int(np.argmax(counts))
        members = np.nonzero(labels == donor)[0]
        dists = np.sum((x[members] - centers[donor]) ** 2, axis=1)
        victim = members[int(np.argmax(dists))]
        labels[victim] = c
        centers[c] = x[victim]
        counts[donor] -= 1
        counts[c] += 1
    return labels, centers


def kmeans(x: np.ndarray, k: int, seed: int, n_iter: int = 50):
    """Seeded k-means++ with a fixed iteration count (no early stop).

    Squared-Euclidean distance; ties in assignment go to the lowest cluster
    index, keeping the whole procedure deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if k <= 0 or k > x.shape[0]:
        raise ValueError(f"k={k} out of range for {x.shape[0]} points")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(n_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        labels, centers = _fix_empty_clusters(labels, centers, x)
        for c in range(k):
            members = labels == c
            centers[c] = x[members].mean(axis=0)
    return labels, centers


# ---------------------------------------------------------------------------
# bank construction
# ---------------------------------------------------------------------------

def build_bank(futures: np.ndarray, n_clusters: int, n_elements: int,
               mode: str = "clustered", seed: int = 0, d_emb: int = 32,
               projection_seed: int | None = None) -> MotionBank:
    """Build a frozen bank of B = n_clusters * n_elements trajectories.

    Clustered mode runs seeded k-means over flattened trajectories and keeps,
    from each cluster, the ``n_elements`` members closest to the centroid
    (padded from the centroid's global neighborhood if a cluster runs short).
    Random mode samples uniformly without replacement.
    """
    futures = np.asarray(futures, dtype=np.float64)
    if futures.ndim != 3 or futures.shape[2] != 2:
        raise ValueError("futures must have shape [M, T_f, 2]")
    m = futures.shape[0]
    b = n_clusters * n_elements
    if mode not in _BUILD_MODES:
        raise ValueError(f"unknown build mode {mode!r}")
    if m < b:
        raise ValueError(f"need at least {b} futures, got {m}")
    if projection_seed is None:
        projection_seed = seed

    if mode == "random":
        rng = np.random.default_rng(seed)
        selected = np.sort(rng.choice(m, size=b, replace=False))
    else:
        flat = futures.reshape(m, -1)
        labels, centers = kmeans(flat, n_clusters, seed)
        taken = np.zeros(m, dtype=bool)
        selected = []
        for c in range(n_clusters):
            members = np.nonzero(labels == c)[0]
            dists = np.linalg.norm(flat[members] - centers[c], axis=1)
            order = members[np.argsort(dists, kind="stable")]
            chosen = list(order[:n_elements])
            if len(chosen) < n_elements:
                outside = np.nonzero(~taken)[0]
                outside = outside[~np.isin(outside, chosen)]
                od = np.linalg.norm(flat[outside] - centers[c], axis=1)
                fill = outside[np.argsort(od, kind="stable")]
                chosen.extend(fill[: n_elements - len(chosen)])
            taken[chosen] = True
            selected.extend(chosen)
        selected = np.asarray(selected)

    trajectories = futures[selected].astype(np.float32)
    embeddings = embed_trajectories(trajectories, projection_seed, d_emb).astype(np.float32)
    bank = MotionBank(
        trajectories=trajectories,
        embeddings=embeddings,
        n_clusters=n_clusters,
        n_elements=n_elements,
        build_mode=mode,
        projection_seed=int(projection_seed),
    )
    bank.validate()
    return bank


def futures_for_bank(scenes) -> np.ndarray:
    """Extract origin-anchored future paths [M, T_f, 2] from scenes.

    The stored path is the ground-truth future resampled onto T_f uniform
    times spanning [0, T_f*dt], so that it starts exactly at the origin (the
    agent-centric convention) and ends at the true endpoint.
    """
    out = []
    for scene in scenes:
        fut = scene.target_future[:, :2].astype(np.float64)
        t_f = fut.shape[0]
        pts = np.concatenate([np.zeros((1, 2)), fut], axis=0)  # times 0..T_f
        t_query = np.linspace(0.0, t_f, t_f)
        xs = np.interp(t_query, np.arange(t_f + 1), pts[:, 0])
        ys = np.interp(t_query, np.arange(t_f + 1), pts[:, 1])
        out.append(np.stack([xs, ys], axis=1))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def nearest_anchor_oracle(bank: MotionBank, future: np.ndarray) -> tuple[int, float]:
    """Exhaustive nearest bank entry by mean per-step Euclidean distance.

    Ties break toward the lowest index.
    """
    if bank.size == 0:
        raise ValueError("bank is empty")
    future = np.asarray(future, dtype=np.float64)
    if future.shape != bank.trajectories.shape[1:]:
        raise ValueError(f"future shape {future.shape} does not match bank "
                         f"{bank.trajectories.shape[1:]}")
    dists = np.linalg.norm(bank.trajectories.astype(np.float64) - future, axis=2).mean(axis=1)
    idx = int(np.argmin(dists))
    return idx, float(dists[idx])


# ---------------------------------------------------------------------------
# binary IO
# ---------------------------------------------------------------------------

def _bank_bytes(bank: MotionBank) -> bytes:
    mode_code = _BUILD_MODES.index(bank.build_mode)
    if not (0 <= bank.projection_seed < 2 ** 32):
        raise ValueError("projection_seed must fit an unsigned 32-bit integer")
    header = BANK_MAGIC + struct.pack(
        "<7I", bank.size, bank.t_future, bank.d_emb,
        bank.n_clusters, bank.n_elements, mode_code, bank.projection_seed)
    body = (bank.trajectories.astype("<f4").tobytes()
            + bank.embeddings.astype("<f4").tobytes())
    return header + body


def save_bank(path, bank: MotionBank) -> None:
    data = _bank_bytes(bank)
    crc = zlib.crc32(data)
    with open(path, "wb") as f:
        f.write(data)
        f.write(struct.pack("<I", crc))


def load_bank(path) -> MotionBank:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(BANK_MAGIC) + 28 + 4:
        raise BankFormatError("bank file too short")
    if data[: len(BANK_MAGIC)] != BANK_MAGIC:
        raise BankFormatError(f"bad magic {data[:8]!r}")
    fields = struct.unpack("<7I", data[8:36])
    b, t_f, d_emb, n_clusters, n_elements, mode_code, projection_seed = fields
    if mode_code >= len(_BUILD_MODES):
        raise BankFormatError(f"unknown build-mode code {mode_code}")
    if b != n_clusters * n_elements:
        raise BankCorruptionError(
            f"header size {b} inconsistent with topology {n_clusters}x{n_elements}")
    traj_bytes = b * t_f * 2 * 4
    emb_bytes = b * d_emb * 4
    expected = 36 + traj_bytes + emb_bytes + 4
    if len(data) != expected:
        raise BankCorruptionError(
            f"payload length {len(data)} does not match header (expected {expected})")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise BankCorruptionError("checksum mismatch")
    trajectories = np.frombuffer(
        data, dtype="<f4", count=b * t_f * 2, offset=36).reshape(b, t_f, 2).copy()
    embeddings = np.frombuffer(
        data, dtype="<f4", count=b * d_emb, offset=36 + traj_bytes).reshape(b, d_emb).copy()
    bank = MotionBank(
        trajectories=trajectories,
        embeddings=embeddings,
        n_clusters=int(n_clusters),
        n_elements=int(n_elements),
        build_mode=_BUILD_MODES[mode_code],
        projection_seed=int(projection_seed),
    )
    bank.validate()
    return bank


def bank_io(path, bank: MotionBank | None = None, mode: str = "read"):
    """Single-entry bank file IO: mode 'read' returns a bank, 'write' stores one."""
    if mode == "read":
        return load_bank(path)
    if mode == "write":
        if bank is None:
            raise ValueError("write mode requires a bank")
        save_bank(path, bank)
        return None
    raise ValueError(f"unknown mode {mode!r}")
