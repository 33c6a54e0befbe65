"""Per-class, per-block Gaussian classifiers.

A :class:`BlockClassifier` holds one Gaussian per class over a single feature
block and scores observations in the log domain under three semantics:

* ``unnormalized`` -- just the exponent, -1/2 (z - mu)^T Sigma^{-1} (z - mu);
  exponentiating gives a confidence in (0, 1] that peaks at the class mean.
* ``density`` -- a proper multivariate normal log-density (the exponent plus
  the log normalizing constant -(d/2) log(2 pi) - 1/2 log|Sigma|).
* ``posterior`` -- log-density plus the log class prior (a posterior
  numerator; no evidence term).

Fitted classifiers are immutable; scoring is read-only and safe to call from
any number of workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyClass,
    IndexOutOfRange,
    NotPositiveDefinite,
    SchemaMismatch,
)
from .linalg import SpdMatrix, as_vector, mahalanobis_sq, mahalanobis_sq_rows

__all__ = [
    "MODEL_FORMAT_VERSION",
    "PRIOR_SUM_TOL",
    "VARIANCE_FLOOR",
    "BlockClassifier",
    "ClassGaussian",
    "CovarianceKind",
    "FeatureBlockSpec",
    "SCORINGS",
    "block_log_scores",
    "fit_block",
    "load_model",
    "log_confidence_unnormalized",
    "log_density",
    "log_posterior_numerator",
    "model_from_dict",
    "model_to_dict",
    "save_model",
    "validate_blocks",
]

MODEL_FORMAT_VERSION = 1

#: Smallest variance a fit will produce; keeps every Cholesky well-posed while
#: perturbing well-conditioned fits negligibly.
VARIANCE_FLOOR = 1e-9

PRIOR_SUM_TOL = 1e-12

SCORINGS = ("unnormalized", "density", "posterior")


class CovarianceKind(str, Enum):
    """Structure of the per-class covariance estimate."""

    ISOTROPIC = "isotropic"
    DIAGONAL = "diagonal"
    FULL = "full"


@dataclass(frozen=True)
class FeatureBlockSpec:
    """Names one feature block and locates it inside the concatenated vector."""

    name: str
    offset: int
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionMismatch(f"block {self.name!r}: dim must be >= 1, got {self.dim}")
        if self.offset < 0:
            raise DimensionMismatch(f"block {self.name!r}: offset must be >= 0")

    @property
    def columns(self) -> slice:
        return slice(self.offset, self.offset + self.dim)


def validate_blocks(blocks, total_dim: int | None = None) -> int:
    """Check blocks are contiguous, non-overlapping, and cover the full width.

    Returns the total dimension.
    """
    blocks = list(blocks)
    if not blocks:
        raise DimensionMismatch("at least one feature block is required")
    at = 0
    for b in blocks:
        if b.offset != at:
            raise DimensionMismatch(
                f"block {b.name!r} starts at column {b.offset}, expected {at}"
            )
        at += b.dim
    if total_dim is not None and at != total_dim:
        raise DimensionMismatch(f"blocks cover {at} columns, expected {total_dim}")
    return at


@dataclass(frozen=True, eq=False)
class ClassGaussian:
    """Mean, covariance, and prior for one class on one block."""

    mean: np.ndarray
    cov: SpdMatrix
    prior: float

    def __post_init__(self):
        object.__setattr__(self, "mean", as_vector(self.mean, "mean"))
        self.mean.setflags(write=False)
        if self.mean.shape[0] != self.cov.dim:
            raise DimensionMismatch(
                f"mean has dim {self.mean.shape[0]}, covariance has dim {self.cov.dim}"
            )
        if not (0.0 < self.prior <= 1.0):
            raise ValueError(f"prior must be in (0, 1], got {self.prior}")


@dataclass(frozen=True, eq=False)
class BlockClassifier:
    """K class-conditional Gaussians over one feature block.

    ``class_labels`` fixes the canonical class order; every decision rule
    breaks ties toward the smallest index in this order.
    """

    block: FeatureBlockSpec
    kind: CovarianceKind
    class_labels: tuple
    classes: tuple

    def __post_init__(self):
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        object.__setattr__(self, "classes", tuple(self.classes))
        k = len(self.class_labels)
        if k < 1:
            raise ValueError("a classifier needs at least one class")
        if len(set(self.class_labels)) != k:
            raise ValueError("class labels must be distinct")
        if len(self.classes) != k:
            raise ValueError(f"{k} labels but {len(self.classes)} class models")
        for g in self.classes:
            if g.mean.shape[0] != self.block.dim:
                raise DimensionMismatch(
                    f"class model dim {g.mean.shape[0]} != block dim {self.block.dim}"
                )
        total = math.fsum(g.prior for g in self.classes)
        if abs(total - 1.0) > PRIOR_SUM_TOL:
            raise ValueError(f"priors sum to {total!r}, expected 1")

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def fit_block(
    features,
    labels,
    block: FeatureBlockSpec,
    class_labels,
    kind: CovarianceKind = CovarianceKind.FULL,
    prior_mode: str = "empirical",
) -> BlockClassifier:
    """Fit per-class Gaussians on one block by maximum likelihood.

    Parameters
    ----------
    features : ndarray, shape (n, block.dim)
        Observations already sliced to the block's columns.
    labels : ndarray of int, shape (n,)
        Class indices into ``class_labels`` (in the order given here).
    block : FeatureBlockSpec
    class_labels : sequence of str
        Labels in any order; the fitted classifier reorders classes into
        sorted label order, the canonical order used by every rule.
    kind : CovarianceKind
        Isotropic fits a single sigma^2 per class (the mean of the
        per-coordinate MLE variances); diagonal fits one variance per
        coordinate; full fits the dense MLE covariance.
    prior_mode : {"empirical", "uniform"}
        Class priors n_k / N or 1 / K.

    Notes
    -----
    Covariance MLEs divide by n_k, not n_k - 1. Isotropic and diagonal
    variances are floored at ``VARIANCE_FLOOR``; a full covariance whose
    Cholesky fails is ridge-regularized once by eps * I with
    eps = VARIANCE_FLOOR * max(1, trace/d).
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    kind = CovarianceKind(kind)
    if prior_mode not in ("empirical", "uniform"):
        raise ValueError(f"unknown prior_mode {prior_mode!r}")
    if X.ndim != 2 or X.shape[1] != block.dim:
        raise DimensionMismatch(
            f"features have shape {X.shape}, block {block.name!r} has dim {block.dim}"
        )
    if y.shape != (X.shape[0],):
        raise DimensionMismatch("labels must be one index per sample")

    given = tuple(class_labels)
    order = sorted(range(len(given)), key=lambda i: given[i])
    sorted_labels = tuple(given[i] for i in order)
    n_total = X.shape[0]
    k_total = len(given)

    gaussians = []
    for k in order:
        rows = X[y == k]
        n_k = rows.shape[0]
        if n_k == 0:
            raise EmptyClass(f"class {given[k]!r} has no samples")
        mean = rows.mean(axis=0)
        centered = rows - mean
        if kind is CovarianceKind.ISOTROPIC:
            sigma_sq = max(float(np.mean(centered**2)), VARIANCE_FLOOR)
            cov = SpdMatrix.isotropic(sigma_sq, block.dim)
        elif kind is CovarianceKind.DIAGONAL:
            variances = np.maximum(np.mean(centered**2, axis=0), VARIANCE_FLOOR)
            cov = SpdMatrix.diagonal(variances)
        else:
            mle = centered.T @ centered / n_k
            try:
                cov = SpdMatrix.from_matrix(mle)
            except NotPositiveDefinite:
                eps = VARIANCE_FLOOR * max(1.0, float(np.trace(mle)) / block.dim)
                cov = SpdMatrix.from_matrix(mle + eps * np.eye(block.dim))
        prior = n_k / n_total if prior_mode == "empirical" else 1.0 / k_total
        gaussians.append(ClassGaussian(mean, cov, prior))

    return BlockClassifier(block, kind, sorted_labels, tuple(gaussians))


def _check_class_index(c: BlockClassifier, k: int) -> None:
    if not 0 <= k < c.n_classes:
        raise IndexOutOfRange(f"class index {k} outside [0, {c.n_classes})")


def _log_normalizer(cov: SpdMatrix) -> float:
    return -0.5 * cov.dim * math.log(2.0 * math.pi) - 0.5 * cov.log_det


def log_confidence_unnormalized(c: BlockClassifier, k: int, z) -> float:
    """-1/2 (z - mu_k)^T Sigma_k^{-1} (z - mu_k); always <= 0."""
    _check_class_index(c, k)
    g = c.classes[k]
    return -0.5 * mahalanobis_sq(z, g.mean, g.cov)


def log_density(c: BlockClassifier, k: int, z) -> float:
    """Multivariate normal log-density of z under class k."""
    _check_class_index(c, k)
    g = c.classes[k]
    return _log_normalizer(g.cov) - 0.5 * mahalanobis_sq(z, g.mean, g.cov)


def log_posterior_numerator(c: BlockClassifier, k: int, z) -> float:
    """log-density plus log prior (unnormalized log posterior)."""
    _check_class_index(c, k)
    return log_density(c, k, z) + math.log(c.classes[k].prior)


def block_log_scores(c: BlockClassifier, Z, scoring: str = "density") -> np.ndarray:
    """Score a batch Z of shape (n, dim) for every class; returns (n, K).

    One triangular solve per class handles all rows at once.
    """
    if scoring not in SCORINGS:
        raise ValueError(f"unknown scoring {scoring!r}; expected one of {SCORINGS}")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != c.block.dim:
        raise DimensionMismatch(
            f"batch has shape {Z.shape}, block {c.block.name!r} has dim {c.block.dim}"
        )
    out = np.empty((Z.shape[0], c.n_classes))
    for k, g in enumerate(c.classes):
        col = -0.5 * mahalanobis_sq_rows(Z, g.mean, g.cov)
        if scoring != "unnormalized":
            col = col + _log_normalizer(g.cov)
        if scoring == "posterior":
            col = col + math.log(g.prior)
        out[:, k] = col
    return out


# --------------------------------------------------------------------------
# JSON serialization.
#
# A model is a single JSON document:
#   {"format_version": 1,
#    "class_labels": [...],
#    "blocks": [{"name", "offset", "dim", "kind",
#                "classes": [{"mean", "cov", "prior"}, ...]}, ...]}
# "cov" is a scalar (isotropic sigma^2), a list of variances (diagonal), or a
# nested list (full). Floats pass through json's shortest round-trip repr, so
# load(save(m)) rebuilds bit-identical parameters and therefore reproduces
# identical decisions on any input.


def _cov_to_json(kind: CovarianceKind, cov: SpdMatrix):
    if kind is CovarianceKind.ISOTROPIC:
        return float(cov.data[0, 0])
    if kind is CovarianceKind.DIAGONAL:
        return [float(v) for v in np.diag(cov.data)]
    return [[float(v) for v in row] for row in cov.data]


def _cov_from_json(kind: CovarianceKind, doc, dim: int) -> SpdMatrix:
    if kind is CovarianceKind.ISOTROPIC:
        return SpdMatrix.isotropic(float(doc), dim)
    if kind is CovarianceKind.DIAGONAL:
        return SpdMatrix.diagonal(np.asarray(doc, dtype=np.float64))
    return SpdMatrix.from_matrix(np.asarray(doc, dtype=np.float64))


def model_to_dict(blocks) -> dict:
    """Serialize fitted block classifiers to a plain JSON-ready dict."""
    blocks = list(blocks)
    if not blocks:
        raise ValueError("cannot serialize an empty model")
    labels = blocks[0].class_labels
    for b in blocks:
        if b.class_labels != labels:
            raise SchemaMismatch("all blocks must share one class label set")
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "class_labels": list(labels),
        "blocks": [
            {
                "name": b.block.name,
                "offset": b.block.offset,
                "dim": b.block.dim,
                "kind": b.kind.value,
                "classes": [
                    {
                        "mean": [float(v) for v in g.mean],
                        "cov": _cov_to_json(b.kind, g.cov),
                        "prior": float(g.prior),
                    }
                    for g in b.classes
                ],
            }
            for b in blocks
        ],
    }


def model_from_dict(doc: dict):
    """Rebuild block classifiers from :func:`model_to_dict` output."""
    try:
        version = doc["format_version"]
        if version != MODEL_FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported model format_version {version!r}")
        labels = tuple(doc["class_labels"])
        blocks = []
        for bdoc in doc["blocks"]:
            kind = CovarianceKind(bdoc["kind"])
            spec = FeatureBlockSpec(bdoc["name"], int(bdoc["offset"]), int(bdoc["dim"]))
            classes = tuple(
                ClassGaussian(
                    np.asarray(cdoc["mean"], dtype=np.float64),
                    _cov_from_json(kind, cdoc["cov"], spec.dim),
                    float(cdoc["prior"]),
                )
                for cdoc in bdoc["classes"]
            )
            blocks.append(BlockClassifier(spec, kind, labels, classes))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"malformed model document: {exc}") from exc
    validate_blocks([b.block for b in blocks])
    return tuple(blocks)


def save_model(path, blocks) -> None:
    """Write the model JSON document to ``path``."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(blocks), fh, indent=2)
        fh.write("\n")


def load_model(path):
    """Read a model JSON document; returns a tuple of BlockClassifier."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(doc)
