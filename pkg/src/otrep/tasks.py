"""Synthetic classification tasks with controllable source/target shift.

Every generator first draws a fixed latent structure (cluster centres, an
embedding) from ``seed`` and then samples points from it. The shift is
applied on top of that structure, so a source spec and a target spec that
differ only in their shift share the same underlying geometry:

* ``rotation_angle`` (degrees): inputs are rotated in consecutive
  coordinate planes,
* ``label_refinement`` (0 or 1): labels become the sub-cluster index
  instead of the class index, i.e. a finer labelling of the same points,
* ``class_subset`` (integer): that many classes are dropped.

A magnitude of 0 means no shift for every kind. Inputs are stored
feature-major, ``X.shape == (input_dim, n)``, like network activations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from otrep.errors import InputError

GENERATORS = ("gaussian_blobs", "two_moons_variant", "rotated_mixture")
SHIFTS = ("none", "label_refinement", "rotation_angle", "class_subset")


@dataclass(frozen=True)
class TaskSpec:
    generator: str = "gaussian_blobs"
    num_classes: int = 4
    input_dim: int = 20
    samples_train: int = 2000
    samples_val: int | None = None
    samples_test: int = 1000
    shift: str = "none"
    shift_magnitude: float = 0.0
    subclusters: int = 1
    separation: float = 3.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InputError(f"unknown generator {self.generator!r}")
        if self.shift not in SHIFTS:
            raise InputError(f"unknown shift {self.shift!r}")
        if self.num_classes < 2:
            raise InputError("need at least two classes")
        if self.input_dim < 2:
            raise InputError("input_dim must be >= 2")
        if self.samples_train < 1 or self.samples_test < 1:
            raise InputError("sample counts must be >= 1")
        if self.samples_val is not None and self.samples_val < 1:
            raise InputError("samples_val must be >= 1")
        if self.subclusters < 1:
            raise InputError("subclusters must be >= 1")
        m = self.shift_magnitude
        if not np.isfinite(m) or m < 0:
            raise InputError("shift magnitude must be finite and nonnegative")
        if self.shift == "label_refinement" and m not in (0, 1):
            raise InputError("label_refinement magnitude must be 0 or 1")
        if self.shift == "class_subset" and (m != int(m) or self.num_classes - m < 2):
            raise InputError("class_subset must drop an integer number of classes, keeping >= 2")

    @property
    def n_val(self):
        if self.samples_val is not None:
            return self.samples_val
        return max(1, int(round(0.2 * self.samples_train)))

    def with_shift(self, shift, magnitude):
        return replace(self, shift=shift, shift_magnitude=magnitude)

    def to_dict(self):
        return asdict(self)


@dataclass
class TaskData:
    spec: TaskSpec
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    num_labels: int

    def subsample_train(self, fraction, rng):
        """Random subset of the training split (at least one example)."""
        n = self.X_train.shape[1]
        k = max(1, int(round(fraction * n)))
        idx = np.sort(rng.choice(n, size=k, replace=False))
        return self.X_train[:, idx], self.y_train[idx]


def _structure(spec):
    """Latent geometry, drawn from the seed alone."""
    rng = np.random.default_rng([spec.seed, 0])
    K, S, D = spec.num_classes, spec.subclusters, spec.input_dim
    if spec.generator == "gaussian_blobs":
        class_centres = rng.normal(size=(K, D)) * spec.separation
        offsets = rng.normal(size=(K, S, D)) * (0.5 * spec.separation)
        centres = class_centres[:, None, :] + offsets
    elif spec.generator == "rotated_mixture":
        # sub-clusters of a class are scattered independently, so classes are
        # unions of far-apart blobs and not linearly separable
        centres = rng.normal(size=(K, S, D)) * spec.separation
    else:
        centres = None
    basis, _ = np.linalg.qr(rng.normal(size=(D, D)))
    return {"centres": centres, "basis": basis}


def _sample_points(spec, structure, n, rng):
    K, S, D = spec.num_classes, spec.subclusters, spec.input_dim
    cls = rng.integers(0, K, size=n)
    sub = rng.integers(0, S, size=n)
    if spec.generator == "two_moons_variant":
        # class k is an arc of the circle of radius 1 centred at a point on a
        # ring, arcs alternately flipped; sub-clusters split the arc
        theta = (sub + rng.uniform(size=n)) / S * np.pi
        flip = np.where(cls % 2 == 0, 1.0, -1.0)
        ring = 2 * np.pi * cls / K
        cx, cy = spec.separation * np.cos(ring), spec.separation * np.sin(ring)
        xy = np.stack([cx + np.cos(theta), cy + flip * np.sin(theta)], axis=1)
        Z = np.zeros((n, D))
        Z[:, :2] = xy
        Z += rng.normal(size=(n, D)) * (0.1 * spec.noise)
        X = Z @ structure["basis"].T
    else:
        X = structure["centres"][cls, sub] + rng.normal(size=(n, D)) * spec.noise
    return X, cls, sub


def _rotation(D, degrees):
    R = np.eye(D)
    c, s = np.cos(np.deg2rad(degrees)), np.sin(np.deg2rad(degrees))
    for i in range(0, D - 1, 2):
        R[i : i + 2, i : i + 2] = [[c, -s], [s, c]]
    return R


def _apply_shift(spec, X, cls, sub):
    m = spec.shift_magnitude
    labels = cls
    num_labels = spec.num_classes
    keep = np.ones(cls.size, dtype=bool)
    if spec.shift == "rotation_angle" and m:
        X = X @ _rotation(spec.input_dim, m).T
    elif spec.shift == "label_refinement" and m:
        labels = cls * spec.subclusters + sub
        num_labels = spec.num_classes * spec.subclusters
    elif spec.shift == "class_subset" and m:
        kept = spec.num_classes - int(m)
        keep = cls < kept
        num_labels = kept
    return X[keep], labels[keep], num_labels


def generate_task(spec: TaskSpec) -> TaskData:
    """Draw train/val/test splits for ``spec`` (deterministic in the seed)."""
    structure = _structure(spec)
    splits = []
    sizes = (spec.samples_train, spec.n_val, spec.samples_test)
    for stream, n in enumerate(sizes, start=1):
        rng = np.random.default_rng([spec.seed, stream])
        # class_subset drops points; oversample so every split keeps its size
        X_parts, y_parts = [], []
        have = 0
        while have < n:
            X, cls, sub = _sample_points(spec, structure, 2 * n, rng)
            X, y, num_labels = _apply_shift(spec, X, cls, sub)
            X_parts.append(X)
            y_parts.append(y)
            have += y.size
        X = np.concatenate(X_parts)[:n]
        y = np.concatenate(y_parts)[:n]
        splits.append((np.ascontiguousarray(X.T), y.astype(np.int64)))
    (Xtr, ytr), (Xva, yva), (Xte, yte) = splits
    return TaskData(spec, Xtr, ytr, Xva, yva, Xte, yte, num_labels)
