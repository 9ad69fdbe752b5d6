"""Embedding container I/O, open-set protocol, and the synthetic benchmark
generator (shared classes under covariate shift plus target-private unknowns).

Container layout (little-endian): magic "OSDE", format version u32 = 1,
feature_dim u32, num_records u64; then per record: id (u32 length + UTF-8),
label i32, domain tag (u32 length + UTF-8), feature_dim x f32. Features are
stored in 32-bit and widened to 64-bit on load.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"OSDE"
FORMAT_VERSION = 1


class EmbeddingFormatError(IOError):
    """Base class for container format errors."""


class BadMagicError(EmbeddingFormatError):
    pass


class VersionMismatchError(EmbeddingFormatError):
    pass


class TruncatedFileError(EmbeddingFormatError):
    pass


class DimensionMismatchError(EmbeddingFormatError):
    pass


@dataclass
class EmbeddingRecord:
    id: str
    label: int  # class index; -1 reserved for unlabeled
    domain: str
    feature: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.label < -1:
            raise ValueError(f"label must be >= -1, got {self.label}")


@dataclass(frozen=True)
class OpenSetProtocol:
    known_class_indices: tuple

    def __post_init__(self):
        idx = self.known_class_indices
        if not idx:
            raise ValueError("protocol needs at least one known class")
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate known class indices")
        if tuple(sorted(idx)) != tuple(idx):
            raise ValueError("known class indices must be sorted")

    def is_known(self, label):
        return label in self.known_class_indices


@dataclass(frozen=True)
class SynthConfig:
    num_known_classes: int = 10
    num_unknown_classes: int = 5
    samples_per_class: int = 50
    feature_dim: int = 64
    cluster_spread: float = 0.15
    covariate_shift_angle: float = 0.5  # radians
    seed: int = 0

    def __post_init__(self):
        if min(self.num_known_classes, self.num_unknown_classes,
               self.samples_per_class, self.feature_dim) < 1:
            raise ValueError("all counts must be >= 1")
        if self.cluster_spread <= 0:
            raise ValueError("cluster_spread must be positive")


def write_embeddings(path, records, feature_dim):
    for rec in records:
        if rec.feature.shape != (feature_dim,):
            raise DimensionMismatchError(
                f"record {rec.id!r} has feature shape {rec.feature.shape}, "
                f"expected ({feature_dim},)")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, feature_dim, len(records)))
        for rec in records:
            id_bytes = rec.id.encode("utf-8")
            domain_bytes = rec.domain.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<i", rec.label))
            fh.write(struct.pack("<I", len(domain_bytes)))
            fh.write(domain_bytes)
            fh.write(rec.feature.astype("<f4").tobytes())


def _read_exact(fh, count, path):
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"{path}: unexpected end of file")
    return data


def read_embeddings(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path)
        if magic != MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        version, feature_dim, num_records = struct.unpack(
            "<IIQ", _read_exact(fh, 16, path))
        if version != FORMAT_VERSION:
            raise VersionMismatchError(
                f"{path}: format version {version}, expected {FORMAT_VERSION}")
        records = []
        for _ in range(num_records):
            (id_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
            rec_id = _read_exact(fh, id_len, path).decode("utf-8")
            (label,) = struct.unpack("<i", _read_exact(fh, 4, path))
            (dom_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
            domain = _read_exact(fh, dom_len, path).decode("utf-8")
            feat = np.frombuffer(
                _read_exact(fh, 4 * feature_dim, path), dtype="<f4")
            records.append(EmbeddingRecord(
                id=rec_id, label=label, domain=domain,
                feature=feat.astype(np.float64)))
        if fh.read(1):
            raise EmbeddingFormatError(f"{path}: trailing bytes after records")
    return records


def write_manifest(path, class_names, known_classes, feature_dim):
    """Sidecar plain-text manifest: class names in label-index order plus the
    protocol's known-class count."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"feature_dim={feature_dim}\n")
        fh.write(f"num_classes={len(class_names)}\n")
        fh.write(f"known_classes={known_classes}\n")
        for i, name in enumerate(class_names):
            fh.write(f"class_{i}={name}\n")


def read_manifest(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    num_classes = int(values["num_classes"])
    class_names = [values[f"class_{i}"] for i in range(num_classes)]
    return {"feature_dim": int(values["feature_dim"]),
            "known_classes": int(values["known_classes"]),
            "class_names": class_names}


def split_protocol(all_class_names, num_known):
    """First num_known classes in case-insensitive alphabetical order become
    known; indices refer to positions in the given list."""
    if not 1 <= num_known <= len(all_class_names):
        raise ValueError(
            f"num_known={num_known} out of range for "
            f"{len(all_class_names)} classes")
    order = sorted(range(len(all_class_names)),
                   key=lambda i: all_class_names[i].lower())
    return OpenSetProtocol(known_class_indices=tuple(sorted(order[:num_known])))


def _normalize_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _rotate(rows, a, b, angle):
    """Rotate row vectors by `angle` in the plane spanned by orthonormal a, b."""
    ca = rows @ a
    cb = rows @ b
    c, s = np.cos(angle), np.sin(angle)
    return (rows
            + np.outer(ca * (c - 1) - cb * s, a)
            + np.outer(cb * (c - 1) + ca * s, b))


def synth_generate(cfg):
    """Seeded synthetic open-set benchmark on the unit sphere.

    Known classes get orthonormal cluster centers; source samples are
    normalized center + spread * noise; target known samples are additionally
    rotated by covariate_shift_angle in a fixed 2-plane per class; unknown
    classes appear only in the target records.
    """
    total = cfg.num_known_classes + cfg.num_unknown_classes
    if cfg.feature_dim < total:
        raise ValueError(
            f"feature_dim={cfg.feature_dim} too small to orthogonalize "
            f"{total} class centers")
    rng = np.random.default_rng(cfg.seed)
    # Orthonormal centers, plus (when room allows) a spare orthonormal
    # rotation partner per known class so the covariate shift leaves the
    # known-class subspace.
    num_dirs = min(cfg.feature_dim, total + cfg.num_known_classes)
    q, _ = np.linalg.qr(rng.standard_normal((cfg.feature_dim, num_dirs)))
    centers = q[:, :total].T
    partners = [q[:, total + c] if total + c < num_dirs
                else centers[(c + 1) % total]
                for c in range(cfg.num_known_classes)]

    def draw_cluster(center):
        noise = cfg.cluster_spread * rng.standard_normal(
            (cfg.samples_per_class, cfg.feature_dim))
        return _normalize_rows(center + noise)

    source, target = [], []
    for c in range(cfg.num_known_classes):
        for j, feat in enumerate(draw_cluster(centers[c])):
            source.append(EmbeddingRecord(
                id=f"s{c:03d}_{j:04d}", label=c, domain="source", feature=feat))
    for c in range(cfg.num_known_classes):
        rows = draw_cluster(centers[c])
        rows = _rotate(rows, centers[c], partners[c], cfg.covariate_shift_angle)
        for j, feat in enumerate(rows):
            target.append(EmbeddingRecord(
                id=f"t{c:03d}_{j:04d}", label=c, domain="target", feature=feat))
    for u in range(cfg.num_unknown_classes):
        c = cfg.num_known_classes + u
        for j, feat in enumerate(draw_cluster(centers[c])):
            target.append(EmbeddingRecord(
                id=f"t{c:03d}_{j:04d}", label=c, domain="target", feature=feat))
    return source, target


def class_means(records, labels):
    """Normalized per-class mean features, in the given label order."""
    means = []
    for label in labels:
        feats = np.stack([r.feature for r in records if r.label == label])
        means.append(feats.mean(axis=0))
    return _normalize_rows(np.stack(means))
