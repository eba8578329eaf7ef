"""Synthetic multi-annotator ordinal data, annotation algebra and CSV I/O.

A :class:`Dataset` is columnar. Class labels inside arrays are 0-based and
missing entries are -1; the CSV format and public helpers that take lists
of annotations use 1-based grades.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .numcore import InvalidArgument, seeded_rng

MAX_ANNOTATIONS = 4
# Malignancy counts 1..5 of the reference training set; used as a class prior.
REFERENCE_COUNTS = (400, 1140, 1476, 708, 370)


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LabeledSample(NamedTuple):
    image_id: int
    views: np.ndarray  # (n_views, view_dim)
    annotations: tuple[int, ...]  # 0-based
    clean: int | None  # 0-based


@dataclass
class Dataset:
    ids: np.ndarray  # (N,) int
    views: np.ndarray  # (N, n_views, view_dim)
    annotations: np.ndarray  # (N, 4) int, -1 = blank
    clean: np.ndarray  # (N,) int, -1 = unknown
    n_classes: int = 5

    def __post_init__(self):
        n = len(self.ids)
        if self.views.ndim != 3 or self.views.shape[0] != n:
            raise SchemaError("views must have shape (N, n_views, view_dim)")
        if self.annotations.shape != (n, MAX_ANNOTATIONS) or self.clean.shape != (n,):
            raise SchemaError("annotation/clean columns do not match sample count")
        if n and np.any((self.annotations >= 0).sum(axis=1) == 0):
            raise SchemaError("every sample needs at least one annotation")
        if np.any(self.annotations >= self.n_classes) or np.any(self.clean >= self.n_classes):
            raise SchemaError("class index out of range")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> LabeledSample:
        ann = tuple(int(a) for a in self.annotations[i] if a >= 0)
        c = int(self.clean[i])
        return LabeledSample(int(self.ids[i]), self.views[i], ann, c if c >= 0 else None)

    @property
    def n_views(self) -> int:
        return self.views.shape[1]

    @property
    def view_dim(self) -> int:
        return self.views.shape[2]

    @property
    def n_annotations(self) -> np.ndarray:
        return (self.annotations >= 0).sum(axis=1)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.ids[index], self.views[index], self.annotations[index],
                       self.clean[index], self.n_classes)

    def features(self, n_views: int | None = None) -> np.ndarray:
        """Flattened model inputs using the first ``n_views`` views."""
        v = self.views if n_views is None else self.views[:, :n_views]
        return concat_views(v)

    def or_labels(self) -> np.ndarray:
        out = np.zeros((len(self), self.n_classes))
        for j in range(MAX_ANNOTATIONS):
            col = self.annotations[:, j]
            has = col >= 0
            out[np.flatnonzero(has), col[has]] = 1.0
        return out

    def ave_labels(self) -> np.ndarray:
        """AVE proxy class (0-based) for every sample."""
        ann = self.annotations.astype(np.float64)
        mask = self.annotations >= 0
        mean = np.where(mask, ann + 1, 0.0).sum(axis=1) / mask.sum(axis=1)
        return np.floor(mean + 0.5).astype(np.int64) - 1


@dataclass
class GeneratorConfig:
    n_samples: int = 2000
    n_classes: int = 5
    prior: tuple[float, ...] | None = None  # default: REFERENCE_COUNTS normalised
    latent_dim: int = 4
    n_views: int = 3
    view_dim: int = 4
    view_noise: float = 1.0
    class_separation: float = 2.0
    annotators: tuple[int, int] = (1, 4)
    sigma: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    shared_projection: bool = False

    def class_prior(self) -> np.ndarray:
        if self.prior is None:
            if self.n_classes != len(REFERENCE_COUNTS):
                prior = np.full(self.n_classes, 1.0 / self.n_classes)
            else:
                prior = np.asarray(REFERENCE_COUNTS, dtype=np.float64)
        else:
            prior = np.asarray(self.prior, dtype=np.float64)
        if prior.shape != (self.n_classes,) or np.any(prior < 0) or prior.sum() <= 0:
            raise InvalidArgument("prior must be non-negative with one entry per class")
        return prior / prior.sum()

    def validate(self):
        if min(self.n_samples, self.n_classes, self.latent_dim, self.n_views, self.view_dim) < 1:
            raise InvalidArgument("generator counts must be positive")
        lo, hi = self.annotators
        if not 1 <= lo <= hi <= MAX_ANNOTATIONS:
            raise InvalidArgument(f"annotator range must lie in [1, {MAX_ANNOTATIONS}]")
        if not 0 < self.sigma[0] <= self.sigma[1]:
            raise InvalidArgument("sigma range must be positive and ordered")
        if self.view_noise < 0:
            raise InvalidArgument("view noise must be non-negative")


# generator streams
_S_LABEL, _S_LATENT, _S_PROJ, _S_VIEW, _S_COUNT, _S_SIGMA, _S_ANNOT = range(7)


@dataclass
class AnnotatorModel:
    """Rater whose confusion row for grade c is a discretised Gaussian around c."""

    n_classes: int
    sigma: float
    confusion: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.confusion = confusion_matrix(self.n_classes, self.sigma)

    def annotate(self, clean: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_classes, p=self.confusion[clean]))


def confusion_matrix(n_classes: int, sigma: float) -> np.ndarray:
    """Row c, column k proportional to exp(-(k - c)^2 / (2 sigma^2))."""
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    k = np.arange(n_classes)
    d = k[None, :] - k[:, None]
    logits = -(d**2) / (2 * sigma**2)
    rows = np.exp(logits - logits.max(axis=1, keepdims=True))
    return rows / rows.sum(axis=1, keepdims=True)


def simulate_annotations(clean: int, annotators: Sequence[AnnotatorModel],
                         rng: np.random.Generator) -> list[int]:
    if not annotators:
        raise InvalidArgument("at least one annotator is required")
    return [a.annotate(clean, rng) for a in annotators]


def _draw_annotations(clean: np.ndarray, cfg: GeneratorConfig, base: int) -> np.ndarray:
    n = len(clean)
    lo, hi = cfg.annotators
    counts = seeded_rng(cfg.seed, base + _S_COUNT).integers(lo, hi + 1, size=n)
    sigmas = seeded_rng(cfg.seed, base + _S_SIGMA).uniform(cfg.sigma[0], cfg.sigma[1], size=(n, MAX_ANNOTATIONS))
    u = seeded_rng(cfg.seed, base + _S_ANNOT).random((n, MAX_ANNOTATIONS))
    k = np.arange(cfg.n_classes)
    logits = -((k[None, None, :] - clean[:, None, None]) ** 2) / (2 * sigmas[..., None] ** 2)
    rows = np.exp(logits - logits.max(axis=-1, keepdims=True))
    cdf = np.cumsum(rows / rows.sum(axis=-1, keepdims=True), axis=-1)
    draws = np.minimum((u[..., None] > cdf).sum(axis=-1), cfg.n_classes - 1)
    slots = np.arange(MAX_ANNOTATIONS)[None, :] < counts[:, None]
    return np.where(slots, draws, -1)


def ordinal_direction(cfg: GeneratorConfig) -> np.ndarray:
    """Unit latent direction along which class means are spaced."""
    u = seeded_rng(cfg.seed, _S_PROJ).normal(size=cfg.latent_dim)
    return u / np.linalg.norm(u)


def view_projections(cfg: GeneratorConfig) -> np.ndarray:
    """(n_views, view_dim, latent_dim) projection matrices."""
    rng = seeded_rng(cfg.seed, _S_PROJ)
    rng.normal(size=cfg.latent_dim)  # consumed by ordinal_direction
    if cfg.shared_projection:
        one = rng.normal(size=(cfg.view_dim, cfg.latent_dim)) / math.sqrt(cfg.latent_dim)
        return np.repeat(one[None], cfg.n_views, axis=0)
    return rng.normal(size=(cfg.n_views, cfg.view_dim, cfg.latent_dim)) / math.sqrt(cfg.latent_dim)


def generate_synthetic(cfg: GeneratorConfig, stream_offset: int = 0, id_offset: int = 0) -> Dataset:
    """Draw an ordinal dataset with simulated multi-rater annotations.

    Grade c (0-based) has latent mean c * separation * u for a fixed unit
    direction u and identity covariance. Every view is its own random linear
    projection of the latent plus Gaussian noise. ``stream_offset`` selects
    fresh sample streams while keeping the same geometry (used for test
    sets drawn from the same population).
    """
    cfg.validate()
    n, c = cfg.n_samples, cfg.n_classes
    base = 16 * (stream_offset + 1)
    clean = seeded_rng(cfg.seed, base + _S_LABEL).choice(c, size=n, p=cfg.class_prior())
    u = ordinal_direction(cfg)
    latent = clean[:, None] * cfg.class_separation * u[None, :]
    latent = latent + seeded_rng(cfg.seed, base + _S_LATENT).normal(size=(n, cfg.latent_dim))
    proj = view_projections(cfg)
    views = np.einsum("vdl,nl->nvd", proj, latent)
    if cfg.view_noise > 0:
        views = views + cfg.view_noise * seeded_rng(cfg.seed, base + _S_VIEW).normal(size=views.shape)
    annotations = _draw_annotations(clean, cfg, base)
    ids = np.arange(id_offset, id_offset + n)
    return Dataset(ids, views, annotations, clean.astype(np.int64), c)


def consistent_subset(ds: Dataset, min_annotations: int = 2) -> Dataset:
    """Samples with >= ``min_annotations`` ratings that all agree.

    The agreed grade replaces the hidden label as the evaluation target in
    ``annotations`` (a single column); the hidden label is kept in ``clean``.
    """
    ann = ds.annotations
    mask = ann >= 0
    first = ann[:, 0]
    agree = np.all(~mask | (ann == first[:, None]), axis=1) & (mask.sum(axis=1) >= min_annotations)
    return ds.subset(np.flatnonzero(agree))


def generate_test_set(cfg: GeneratorConfig, n_test: int, n_annotators: int | None = None) -> Dataset:
    """``n_test`` consistently-annotated samples from the training population.

    Every candidate is rated by ``n_annotators`` raters (default: the top of
    the configured range) and kept only if all ratings agree.
    """
    k = cfg.annotators[1] if n_annotators is None else n_annotators
    if not 2 <= k <= MAX_ANNOTATIONS:
        raise InvalidArgument("a consistent test set needs 2..4 annotators per sample")
    tcfg = dataclasses.replace(cfg, annotators=(k, k), n_samples=max(4 * n_test, 1000))
    pool, have, chunk = [], 0, 0
    while have < n_test:
        if chunk >= 50:
            raise InvalidArgument("annotators agree too rarely to build a consistent test set")
        part = consistent_subset(generate_synthetic(tcfg, stream_offset=1 + chunk,
                                                    id_offset=10**6 * (1 + chunk)))
        pool.append(part)
        have += len(part)
        chunk += 1
    return _concat(pool).subset(np.arange(n_test))


def _concat(parts: list[Dataset]) -> Dataset:
    return Dataset(
        np.concatenate([p.ids for p in parts]),
        np.concatenate([p.views for p in parts]),
        np.concatenate([p.annotations for p in parts]),
        np.concatenate([p.clean for p in parts]),
        parts[0].n_classes,
    )


# -- annotation algebra ------------------------------------------------------

def _one_hot_rows(annotations, n_classes: int | None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(annotations, dtype=np.float64))
    if a.size == 0:
        raise InvalidArgument("at least one annotation is required")
    if n_classes is not None and a.shape[1] != n_classes:
        raise InvalidArgument("annotations must be one-hot over n_classes")
    if not (np.all((a == 0) | (a == 1)) and np.all(a.sum(axis=1) == 1)):
        raise InvalidArgument("annotations must be one-hot")
    return a


def or_label(annotations, n_classes: int | None = None) -> np.ndarray:
    """Elementwise OR of one-hot annotation rows."""
    return _one_hot_rows(annotations, n_classes).max(axis=0)


def proxy_label(grades: Sequence[int], mode: str, rng: np.random.Generator | None = None) -> int:
    """Single proxy grade from 1-based annotation grades.

    AVE rounds the mean grade half away from zero; LS picks one annotation
    uniformly at random.
    """
    if len(grades) == 0:
        raise InvalidArgument("at least one annotation is required")
    if mode == "AVE":
        return int(math.floor(sum(grades) / len(grades) + 0.5))
    if mode == "LS":
        if rng is None:
            raise InvalidArgument("LS needs a random generator")
        return int(grades[rng.integers(len(grades))])
    raise InvalidArgument(f"unknown proxy mode {mode!r}")


def sample_ls_labels(ds: Dataset, rng: np.random.Generator) -> np.ndarray:
    """One uniformly drawn annotation (0-based) per sample."""
    counts = ds.n_annotations
    pick = (rng.random(len(ds)) * counts).astype(np.int64)
    # annotations are packed left, so the j-th present one is column j
    return ds.annotations[np.arange(len(ds)), pick]


@dataclass
class SplitDataset:
    """One row per (image, annotation) pair."""

    image_ids: np.ndarray
    rows: np.ndarray  # index into the source dataset
    labels: np.ndarray  # 0-based

    def __len__(self) -> int:
        return len(self.image_ids)


def split_to_single_annotation(ds: Dataset, rng: np.random.Generator | None = None) -> SplitDataset:
    """Expand every annotation into its own entry, then shuffle if ``rng`` is given."""
    rows, cols = np.nonzero(ds.annotations >= 0)
    out = SplitDataset(ds.ids[rows], rows, ds.annotations[rows, cols])
    if rng is not None:
        perm = rng.permutation(len(out))
        out = SplitDataset(out.image_ids[perm], out.rows[perm], out.labels[perm])
    return out


def concat_views(views) -> np.ndarray:
    """Join views in their fixed order.

    Accepts a sequence of 1-D views for one sample or an array shaped
    (..., n_views, view_dim).
    """
    if isinstance(views, np.ndarray):
        if views.ndim < 2 or views.shape[-2] < 1:
            raise InvalidArgument("need at least one view")
        return views.reshape(*views.shape[:-2], -1).astype(np.float64)
    views = [np.asarray(v, dtype=np.float64) for v in views]
    if not views:
        raise InvalidArgument("need at least one view")
    return np.concatenate(views)


def train_val_split(ds: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset, list[str]]:
    """Image-level split stratified by AVE proxy class.

    Returns (train, validation, warnings). A stratum with fewer than two
    images makes the whole split fall back to unstratified sampling.
    """
    if not 0 < fraction < 1:
        raise InvalidArgument("fraction must be in (0, 1)")
    warnings: list[str] = []
    strata = ds.ave_labels()
    classes, counts = np.unique(strata, return_counts=True)
    if np.any(counts < 2):
        warnings.append("stratum too small; validation split is unstratified")
        perm = rng.permutation(len(ds))
        n_val = int(round(fraction * len(ds)))
        val_idx = perm[:n_val]
    else:
        val_idx = []
        for k in classes:
            members = np.flatnonzero(strata == k)
            members = members[rng.permutation(len(members))]
            val_idx.extend(members[: int(round(fraction * len(members)))])
        val_idx = np.asarray(val_idx, dtype=np.int64)
    is_val = np.zeros(len(ds), dtype=bool)
    is_val[val_idx] = True
    return ds.subset(np.flatnonzero(~is_val)), ds.subset(np.flatnonzero(is_val)), warnings


def add_feature_jitter(x: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    if scale <= 0:
        return x
    return x + scale * rng.normal(size=x.shape)


# -- CSV ---------------------------------------------------------------------

def _header(n_features: int) -> list[str]:
    return (["id", "view_count", "dim_per_view"] + [f"f_{i}" for i in range(n_features)]
            + [f"a_{j}" for j in range(1, MAX_ANNOTATIONS + 1)] + ["clean"])


def write_csv(ds: Dataset, path) -> None:
    n_feat = ds.n_views * ds.view_dim
    flat = ds.features()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_header(n_feat))
        for i in range(len(ds)):
            ann = ["" if a < 0 else str(int(a) + 1) for a in ds.annotations[i]]
            clean = "" if ds.clean[i] < 0 else str(int(ds.clean[i]) + 1)
            w.writerow([int(ds.ids[i]), ds.n_views, ds.view_dim]
                       + [format(v, ".17g") for v in flat[i]] + ann + [clean])


def load_csv(path, n_classes: int = 5) -> Dataset:
    """Read a dataset written by :func:`write_csv` (grades are 1-based in the file)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        n_feat = sum(1 for h in header if h.startswith("f_"))
        expected = _header(n_feat)
        missing = [h for h in expected if h not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {h: header.index(h) for h in expected}
        ids, feats, anns, cleans = [], [], [], []
        shape = None
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            try:
                v, d = int(row[col["view_count"]]), int(row[col["dim_per_view"]])
                if shape is None:
                    shape = (v, d)
                    if v * d != n_feat:
                        raise SchemaError(f"{path}: view_count*dim_per_view={v * d} but {n_feat} feature columns")
                elif (v, d) != shape:
                    raise SchemaError(f"{path}: line {line} has view layout {(v, d)}, expected {shape}")
                ids.append(int(row[col["id"]]))
                feats.append([float(row[col[f"f_{i}"]]) for i in range(n_feat)])
                a = []
                for j in range(1, MAX_ANNOTATIONS + 1):
                    cell = row[col[f"a_{j}"]].strip()
                    a.append(int(cell) - 1 if cell else -1)
                c = row[col["clean"]].strip()
                cleans.append(int(c) - 1 if c else -1)
            except ValueError as exc:
                if isinstance(exc, SchemaError):
                    raise
                raise ParseError(str(exc), line) from None
            present = [x for x in a if x >= 0]
            if not present:
                raise ParseError("row has no annotations", line)
            if any(not 0 <= x < n_classes for x in present) or cleans[-1] >= n_classes:
                raise ParseError(f"grade outside 1..{n_classes}", line)
            anns.append(present + [-1] * (MAX_ANNOTATIONS - len(present)))
    if shape is None:
        raise SchemaError(f"{path}: no data rows")
    views = np.asarray(feats, dtype=np.float64).reshape(len(ids), *shape)
    return Dataset(np.asarray(ids, dtype=np.int64), views, np.asarray(anns, dtype=np.int64),
                   np.asarray(cleans, dtype=np.int64), n_classes)
