"""Multi-view brain network populations.

A subject is a stack of ``n_v`` symmetric, nonnegative ``n_r x n_r`` views
with zero diagonal. This module holds the data model, a synthetic population
generator, the per-view normalisers of the centeredness loss, fold splitting
and the on-disk directory format.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataio
from .errors import DataError, DegenerateViewError, DimensionError, SamplingError, SchemaError, SplitError

log = logging.getLogger(__name__)


@dataclass
class MultiViewNetwork:
    """One subject. ``views`` has shape ``(n_v, n_r, n_r)``."""

    views: np.ndarray
    subject_id: str
    class_label: str = ""
    repaired: bool = False

    def __post_init__(self):
        self.views = np.asarray(self.views, dtype=np.float64)
        if self.views.ndim != 3 or self.views.shape[1] != self.views.shape[2]:
            raise DimensionError(f"views must be (n_v, n_r, n_r), got {self.views.shape}")

    @property
    def n_v(self) -> int:
        return self.views.shape[0]

    @property
    def n_r(self) -> int:
        return self.views.shape[1]

    def edge_features(self) -> np.ndarray:
        """Edge feature tensor ``(n_r, n_r, n_v)``: entry ``[p, q]`` is ``e_pq``."""
        return np.ascontiguousarray(np.moveaxis(self.views, 0, -1))

    def check_invariants(self) -> None:
        v = self.views
        if not np.all(np.isfinite(v)):
            raise DataError(f"{self.subject_id}: non-finite weights")
        if np.any(v < 0):
            raise DataError(f"{self.subject_id}: negative weights")
        if not np.array_equal(v, np.swapaxes(v, 1, 2)):
            raise DataError(f"{self.subject_id}: asymmetric view")
        if np.any(np.diagonal(v, axis1=1, axis2=2) != 0):
            raise DataError(f"{self.subject_id}: nonzero diagonal")


@dataclass
class Population:
    subjects: list
    view_names: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.subjects:
            raise DataError("a population needs at least one subject")
        n_r, n_v = self.subjects[0].n_r, self.subjects[0].n_v
        for s in self.subjects:
            if (s.n_r, s.n_v) != (n_r, n_v):
                raise DimensionError(f"{s.subject_id}: shape ({s.n_r}, {s.n_v}) != ({n_r}, {n_v})")
        if not self.view_names:
            self.view_names = [f"view_{k}" for k in range(n_v)]
        if len(self.view_names) != n_v:
            raise DimensionError("view_names length does not match n_v")

    @property
    def n_s(self) -> int:
        return len(self.subjects)

    @property
    def n_r(self) -> int:
        return self.subjects[0].n_r

    @property
    def n_v(self) -> int:
        return self.subjects[0].n_v

    @property
    def ids(self) -> list:
        return [s.subject_id for s in self.subjects]

    def select(self, ids: Sequence[str]) -> "Population":
        lookup = {s.subject_id: s for s in self.subjects}
        try:
            chosen = [lookup[i] for i in ids]
        except KeyError as exc:
            raise DataError(f"unknown subject id {exc.args[0]!r}") from None
        return Population(chosen, list(self.view_names), dict(self.metadata))

    def stacked(self) -> np.ndarray:
        """All views, shape ``(n_s, n_v, n_r, n_r)``."""
        return np.stack([s.views for s in self.subjects])


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: tuple
    test_ids: tuple


def compute_view_normalizers(pop: Population) -> np.ndarray:
    """Per-view scale factors ``lambda_v = (1/mu_v) / max_j (1/mu_j)``.

    ``mu_v`` is the mean off-diagonal weight of view ``v`` over all subjects
    of ``pop`` (callers pass the training fold only).
    """
    stack = pop.stacked()
    n_r = pop.n_r
    off = ~np.eye(n_r, dtype=bool)
    if n_r < 2:
        raise DegenerateViewError("views need at least two regions")
    mu = stack[:, :, off].mean(axis=(0, 2))
    if np.any(mu <= 0):
        bad = [pop.view_names[k] for k in np.flatnonzero(mu <= 0)]
        raise DegenerateViewError(f"views with zero mean weight: {bad}")
    inv = 1.0 / mu
    return inv / inv.max()


def _symmetric_noise(rng: np.random.Generator, n_r: int, sigma: float) -> np.ndarray:
    upper = np.triu(rng.normal(0.0, sigma, size=(n_r, n_r)), 1)
    return upper + upper.T


def generate_synthetic_population(
    n_s: int,
    n_r: int,
    n_v: int,
    classes: int = 2,
    noise_sigma: float = 0.1,
    view_scales=None,
    seed: int = 0,
    latent_dim: int = 1,
) -> Population:
    """Draw a labelled population around per-class ground-truth templates.

    Each class template is the pairwise absolute difference of a random
    regional attribute (averaged over ``latent_dim`` attributes), the way
    morphological networks are built. Subject ``i`` belongs to class
    ``i % classes`` and its view ``v`` is ``|template + noise| * view_scales[v]``
    with symmetric Gaussian noise and a zeroed diagonal. The templates are kept in ``metadata``.
    """
    if min(n_s, n_r, n_v, classes, latent_dim) < 1:
        raise ValueError("all counts must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    scales = np.ones(n_v) if view_scales is None else np.asarray(view_scales, dtype=np.float64)
    if scales.shape != (n_v,):
        raise DimensionError(f"view_scales has length {scales.size}, expected {n_v}")
    rng = np.random.default_rng(seed)
    templates = {}
    for c in range(classes):
        z = rng.uniform(0.0, 1.0, size=(n_r, latent_dim))
        templates[f"class_{c}"] = np.abs(z[:, None, :] - z[None, :, :]).mean(axis=2)
    subjects = []
    for i in range(n_s):
        label = f"class_{i % classes}"
        views = np.empty((n_v, n_r, n_r))
        for v in range(n_v):
            noisy = np.abs(templates[label] + _symmetric_noise(rng, n_r, noise_sigma))
            noisy = noisy * scales[v]
            noisy = 0.5 * (noisy + noisy.T)
            np.fill_diagonal(noisy, 0.0)
            views[v] = noisy
        subjects.append(MultiViewNetwork(views, f"subj_{i:03d}", label))
    return Population(
        subjects,
        [f"view_{k}" for k in range(n_v)],
        {"templates": templates, "view_scales": scales, "noise_sigma": noise_sigma, "seed": seed},
    )


def kfold_split(ids: Sequence[str] | Population, k: int, seed: int = 0) -> list:
    """Shuffled k-fold partition; the first ``n_s % k`` folds hold one extra subject."""
    if isinstance(ids, Population):
        ids = ids.ids
    ids = list(ids)
    n = len(ids)
    if k < 2:
        raise SplitError("k must be >= 2")
    if n < k:
        raise SplitError(f"cannot split {n} subjects into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        test_idx = set(order[start:start + size].tolist())
        start += size
        test = tuple(ids[i] for i in sorted(test_idx))
        train = tuple(ids[i] for i in range(n) if i not in test_idx)
        folds.append(FoldSplit(f, train, test))
    return folds


def sample_training_subset(train_ids: Sequence, subset_size: int, seed: int = 0, epoch: int = 0, step: int = 0) -> list:
    """Uniform sample without replacement, reproducible per ``(seed, epoch, step)``."""
    train_ids = list(train_ids)
    if subset_size < 1 or subset_size > len(train_ids):
        raise SamplingError(f"cannot draw {subset_size} of {len(train_ids)} subjects")
    rng = np.random.default_rng([seed, epoch, step])
    picks = rng.choice(len(train_ids), size=subset_size, replace=False)
    return [train_ids[i] for i in picks]


def save_population(pop: Population, root) -> None:
    """Write one directory per subject with ``view_<k>.csv`` files and ``meta.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for s in pop.subjects:
        d = root / s.subject_id
        d.mkdir()
        for k in range(s.n_v):
            dataio.write_matrix_csv(d / f"view_{k}.csv", s.views[k])
        dataio.write_json(d / "meta.json", {
            "subject_id": s.subject_id,
            "class_label": s.class_label,
            "view_names": list(pop.view_names),
        })
    templates = pop.metadata.get("templates")
    if templates:
        tdir = root / "templates"
        tdir.mkdir()
        for label, t in sorted(templates.items()):
            dataio.write_matrix_csv(tdir / f"{label}.csv", t)


def load_subject(d) -> tuple:
    """Load and repair one subject directory; returns ``(subject, view_names)``."""
    d = Path(d)
    meta_path = d / "meta.json"
    meta = dataio.read_json(meta_path)
    for key in ("subject_id", "class_label", "view_names"):
        if key not in meta:
            raise SchemaError(meta_path, f"missing key {key!r}")
    names = list(meta["view_names"])
    views = []
    for k in range(len(names)):
        path = d / f"view_{k}.csv"
        if not path.exists():
            raise SchemaError(path, "missing view file")
        views.append(dataio.read_matrix_csv(path))
    if not views:
        raise SchemaError(meta_path, "subject lists no views")
    shape = views[0].shape
    if shape[0] != shape[1] or any(v.shape != shape for v in views):
        raise SchemaError(d, "views must be equally sized square matrices")
    raw = np.stack(views)
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise SchemaError(d, "views must hold finite nonnegative weights")
    fixed = 0.5 * (raw + np.swapaxes(raw, 1, 2))
    for v in fixed:
        np.fill_diagonal(v, 0.0)
    repaired = not np.array_equal(fixed, raw)
    if repaired:
        log.warning("subject %s: symmetrised views / zeroed diagonal", meta["subject_id"])
    return MultiViewNetwork(fixed, str(meta["subject_id"]), str(meta["class_label"]), repaired), names


def load_population(root) -> Population:
    root = Path(root)
    if not root.is_dir():
        raise SchemaError(root, "population directory not found")
    subjects, names = [], None
    for d in sorted(p for p in root.iterdir() if (p / "meta.json").is_file()):
        subj, view_names = load_subject(d)
        if names is not None and view_names != names:
            raise SchemaError(d, "view names differ from other subjects")
        names = view_names
        subjects.append(subj)
    if not subjects:
        raise SchemaError(root, "no subject directories found")
    return Population(subjects, names)
