"""Decision rules over N block classifiers and their equivalence checks.

Rules
-----
* ``product`` -- class score is the product of per-block confidences,
  computed as a sum of per-block log scores (a strictly monotone
  reparameterization, so the argmax is preserved and nothing underflows).
* ``sum`` -- per-block confidences are exponentiated and added; comparison
  happens in the linear domain because the sum rule is not shift-invariant.
* ``sqdist`` -- minimizes the sum over blocks of squared distances to the
  class means, each weighted by the inverse of the class spread 1/sigma^2;
  requires isotropic covariances.
* ``map`` -- maximizes likelihood times prior on the full concatenated
  vector, using the model's joint classifier.

The three verifiers check, on concrete samples, that

1. joint MAP with a factorized (block-diagonal) joint and uniform priors
   picks the same class as the product rule over densities;
2. the weighted squared-distance objective equals -2 times the product
   rule's unnormalized log score, class by class;
3. the sum of per-block log-densities equals the joint log-density built on
   the block-diagonal covariance (and the log-determinants add up).

Each verifier distinguishes "hypothesis violated" (no claim is made) from
"falsified" (hypotheses hold but the equivalence fails -- never expected).

Ties: a report's winner is the smallest class index whose log score is
within ``TIE_TOL`` of the maximum; reruns are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingJointModel,
    RequiresIsotropic,
)
from .linalg import block_diag
from .model import (
    BlockClassifier,
    ClassGaussian,
    CovarianceKind,
    FeatureBlockSpec,
    block_log_scores,
    fit_block,
    validate_blocks,
)

__all__ = [
    "RULES",
    "TIE_TOL",
    "DecisionReport",
    "Disagreement",
    "FusionModel",
    "VerificationReport",
    "decide_batch",
    "decide_map_joint",
    "decide_product",
    "decide_sum",
    "decide_weighted_sqdist",
    "factorized_joint",
    "fit_fusion_model",
    "rule_log_scores",
    "verify_concat_equivalence",
    "verify_map_equivalence",
    "verify_sqdist_equivalence",
    "with_factorized_joint",
]

TIE_TOL = 1e-12

RULES = ("product", "sum", "sqdist", "map")


@dataclass(frozen=True, eq=False)
class FusionModel:
    """An ordered list of block classifiers sharing one class set.

    ``joint``, when present, is a classifier over the concatenated space
    whose decisions the verifiers compare against the per-block rules.
    """

    blocks: tuple
    joint: BlockClassifier | None = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        total = validate_blocks([b.block for b in self.blocks])
        labels = self.blocks[0].class_labels
        for b in self.blocks:
            if b.class_labels != labels:
                raise ValueError("all blocks must agree on class labels and order")
        if self.joint is not None:
            if self.joint.block.dim != total:
                raise DimensionMismatch(
                    f"joint dim {self.joint.block.dim} != total block dim {total}"
                )
            if self.joint.class_labels != labels:
                raise ValueError("joint classifier must share the blocks' class labels")

    @property
    def class_labels(self) -> tuple:
        return self.blocks[0].class_labels

    @property
    def n_classes(self) -> int:
        return self.blocks[0].n_classes

    @property
    def total_dim(self) -> int:
        return sum(b.block.dim for b in self.blocks)


def fit_fusion_model(dataset, kind=CovarianceKind.FULL, prior_mode="empirical") -> FusionModel:
    """Fit one block classifier per dataset block; no joint."""
    X = dataset.features
    fitted = tuple(
        fit_block(X[:, b.columns], dataset.labels, b, dataset.class_labels, kind, prior_mode)
        for b in dataset.blocks
    )
    return FusionModel(fitted)


def factorized_joint(blocks, priors=None) -> BlockClassifier:
    """Build the concatenated-space classifier implied by independent blocks.

    Per class, the joint mean is the concatenation of the block means and the
    joint covariance is the block-diagonal assembly of the block covariances
    (the off-diagonal blocks are exactly zero: the blocks are uncorrelated
    given the class).

    Parameters
    ----------
    priors : None, "uniform", or sequence of K floats
        None copies the first block's priors; "uniform" sets 1/K.
    """
    blocks = tuple(blocks)
    total = validate_blocks([b.block for b in blocks])
    labels = blocks[0].class_labels
    k_total = len(labels)
    if priors is None:
        prior_values = [g.prior for g in blocks[0].classes]
    elif isinstance(priors, str) and priors == "uniform":
        prior_values = [1.0 / k_total] * k_total
    else:
        prior_values = [float(p) for p in priors]
        if len(prior_values) != k_total:
            raise ValueError(f"expected {k_total} priors, got {len(prior_values)}")
    spec = FeatureBlockSpec("joint", 0, total)
    kinds = {b.kind for b in blocks}
    kind = kinds.pop() if len(kinds) == 1 else CovarianceKind.FULL
    classes = []
    for k in range(k_total):
        mean = np.concatenate([b.classes[k].mean for b in blocks])
        cov = block_diag([b.classes[k].cov for b in blocks])
        classes.append(ClassGaussian(mean, cov, prior_values[k]))
    return BlockClassifier(spec, kind, labels, tuple(classes))


def with_factorized_joint(m: FusionModel, priors=None) -> FusionModel:
    """Return a copy of ``m`` whose joint is :func:`factorized_joint`."""
    return FusionModel(m.blocks, factorized_joint(m.blocks, priors))


@dataclass(frozen=True, eq=False)
class DecisionReport:
    """Per-class log scores under one rule, plus the winning class."""

    rule: str
    log_scores: np.ndarray
    winner: int
    tie: bool


def _winners_ties(scores: np.ndarray):
    """Smallest index within TIE_TOL of each row's max; tie if >1 qualify."""
    best = scores.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        near = scores >= best - TIE_TOL
    winners = near.argmax(axis=1)
    ties = near.sum(axis=1) > 1
    return winners, ties


def _as_batch(m: FusionModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.total_dim:
        raise DimensionMismatch(
            f"batch has shape {X.shape}, model expects {m.total_dim} columns"
        )
    return X


def _per_block_scores(m: FusionModel, X: np.ndarray, scoring: str):
    return [block_log_scores(b, X[:, b.block.columns], scoring) for b in m.blocks]


def _sqdist_objectives(m: FusionModel, X: np.ndarray) -> np.ndarray:
    obj = np.zeros((X.shape[0], m.n_classes))
    for b in m.blocks:
        if b.kind is not CovarianceKind.ISOTROPIC:
            raise RequiresIsotropic(
                f"block {b.block.name!r} has {b.kind.value} covariance; "
                "the sqdist rule needs isotropic spreads"
            )
        Z = X[:, b.block.columns]
        for k, g in enumerate(b.classes):
            diff = Z - g.mean
            sigma_sq = float(g.cov.data[0, 0])
            obj[:, k] += np.einsum("nd,nd->n", diff, diff) / sigma_sq
    return obj


def rule_log_scores(m: FusionModel, X, rule: str, scoring: str = "density") -> np.ndarray:
    """(n, K) log scores for a whole batch under one rule.

    For the sum rule the returned values are log of the linear-domain sums;
    rows whose per-block scores all underflow come back as -inf.
    """
    X = _as_batch(m, X)
    if rule == "product":
        total = np.zeros((X.shape[0], m.n_classes))
        for part in _per_block_scores(m, X, scoring):
            total += part
        return total
    if rule == "sum":
        linear = np.zeros((X.shape[0], m.n_classes))
        for part in _per_block_scores(m, X, scoring):
            linear += np.exp(part)
        with np.errstate(divide="ignore"):
            return np.log(linear)
    if rule == "sqdist":
        return -0.5 * _sqdist_objectives(m, X)
    if rule == "map":
        if m.joint is None:
            raise MissingJointModel("the map rule needs a joint classifier")
        return block_log_scores(m.joint, X, "posterior")
    raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")


def decide_batch(m: FusionModel, X, rule: str, scoring: str = "density"):
    """Winners, tie flags, and log scores for a batch; shapes (n,), (n,), (n, K)."""
    scores = rule_log_scores(m, X, rule, scoring)
    winners, ties = _winners_ties(scores)
    return winners, ties, scores


def _decide_one(m: FusionModel, sample, rule: str, scoring: str) -> DecisionReport:
    from .linalg import as_vector

    x = as_vector(sample, "sample")
    winners, ties, scores = decide_batch(m, x[None, :], rule, scoring)
    row = scores[0]
    row.setflags(write=False)
    return DecisionReport(rule, row, int(winners[0]), bool(ties[0]))


def decide_product(m: FusionModel, sample, scoring: str = "density") -> DecisionReport:
    """Pick the class whose product of per-block confidences is largest."""
    return _decide_one(m, sample, "product", scoring)


def decide_sum(m: FusionModel, sample, scoring: str = "density") -> DecisionReport:
    """Pick the class whose sum of per-block confidences is largest."""
    return _decide_one(m, sample, "sum", scoring)


def decide_weighted_sqdist(m: FusionModel, sample) -> DecisionReport:
    """Minimize the spread-weighted sum of squared distances to class means.

    Scores are -objective/2, so the report's argmax is the objective's
    argmin and aligns with the product rule's unnormalized scores.
    """
    return _decide_one(m, sample, "sqdist", "unnormalized")


def decide_map_joint(m: FusionModel, sample) -> DecisionReport:
    """Maximize likelihood times prior on the concatenated feature vector."""
    return _decide_one(m, sample, "map", "posterior")


# --------------------------------------------------------------------------
# Equivalence verification.


@dataclass(frozen=True, eq=False)
class Disagreement:
    """One sample where the two rules disagreed, with both score vectors."""

    index: int
    left_scores: np.ndarray
    right_scores: np.ndarray
    left_winner: int
    right_winner: int


@dataclass(frozen=True, eq=False)
class VerificationReport:
    """Outcome of checking one equivalence on a set of samples.

    ``hypothesis_ok`` distinguishes a conditional claim whose premises fail
    (nothing is asserted) from a genuine counterexample: ``falsified`` is
    true only when the hypotheses hold and the equivalence does not.
    """

    check: str
    n_samples: int
    agreements: int
    max_abs_delta: float
    equivalent: bool
    hypothesis_ok: bool
    hypothesis_notes: tuple = ()
    disagreements: tuple = ()
    tolerance: float | None = None
    max_rel_delta: float | None = None
    max_log_det_delta: float | None = None

    @property
    def falsified(self) -> bool:
        return self.hypothesis_ok and not self.equivalent

    def summary(self) -> str:
        lines = [
            f"check: {self.check}",
            f"samples: {self.n_samples}",
            f"winner agreement: {self.agreements}/{self.n_samples}",
            f"max |delta log score|: {self.max_abs_delta:.3e}",
        ]
        if self.max_rel_delta is not None:
            lines.append(f"max relative pairing error: {self.max_rel_delta:.3e}")
        if self.max_log_det_delta is not None:
            lines.append(f"max |delta log det|: {self.max_log_det_delta:.3e}")
        if self.tolerance is not None:
            lines.append(f"tolerance: {self.tolerance:.3e}")
        if not self.hypothesis_ok:
            lines.append("hypothesis violated: " + "; ".join(self.hypothesis_notes))
            lines.append("no claim is made for this configuration")
        else:
            lines.append("result: " + ("equivalent" if self.equivalent else "FALSIFIED"))
        return "\n".join(lines)


def _collect_disagreements(winners_a, winners_b, scores_a, scores_b, limit=10):
    out = []
    for i in np.nonzero(winners_a != winners_b)[0]:
        if len(out) >= limit:
            break
        out.append(
            Disagreement(
                int(i),
                scores_a[i].copy(),
                scores_b[i].copy(),
                int(winners_a[i]),
                int(winners_b[i]),
            )
        )
    return tuple(out)


def _factorization_notes(m: FusionModel, atol: float = 0.0) -> list:
    """Check the joint is the block-diagonal assembly of the block models."""
    notes = []
    if m.joint is None:
        raise MissingJointModel("verification needs a joint classifier")
    for k in range(m.n_classes):
        jg = m.joint.classes[k]
        mean = np.concatenate([b.classes[k].mean for b in m.blocks])
        if not np.allclose(jg.mean, mean, rtol=1e-12, atol=1e-12):
            notes.append(f"joint mean of class {k} is not the concatenated block means")
            break
    for k in range(m.n_classes):
        cov = m.joint.classes[k].cov.data
        at = 0
        for b in m.blocks:
            d = b.block.dim
            if not np.allclose(cov[at : at + d, at : at + d], b.classes[k].cov.data,
                               rtol=1e-12, atol=1e-12):
                notes.append(f"joint covariance of class {k} differs on block {b.block.name!r}")
                break
            at += d
        off = cov.copy()
        at = 0
        for b in m.blocks:
            d = b.block.dim
            off[at : at + d, at : at + d] = 0.0
            at += d
        if np.any(np.abs(off) > atol):
            notes.append(f"joint covariance of class {k} has nonzero cross-block entries")
            break
    return notes


def verify_map_equivalence(m: FusionModel, samples) -> VerificationReport:
    """Check joint MAP against the product of per-block densities.

    Hypotheses: the joint factorizes across blocks (block-diagonal
    covariance, concatenated means) and its class priors are uniform.
    The reported delta compares joint posterior-numerator scores with the
    factorized equivalent (sum of block log-densities plus the same log
    prior), which is an identity whenever the factorization hypothesis
    holds, independent of the priors.
    """
    X = _as_batch(m, samples)
    notes = _factorization_notes(m)
    priors = np.array([g.prior for g in m.joint.classes])
    if np.any(np.abs(priors - priors[0]) > 1e-12):
        notes.append("joint priors are not uniform")
    hypothesis_ok = not notes

    map_w, _, map_s = decide_batch(m, X, "map")
    prod_w, _, prod_s = decide_batch(m, X, "product", "density")
    factorized = prod_s + np.log(priors)
    max_delta = float(np.max(np.abs(map_s - factorized))) if X.shape[0] else 0.0
    agreements = int(np.sum(map_w == prod_w))
    return VerificationReport(
        check="map-vs-product",
        n_samples=X.shape[0],
        agreements=agreements,
        max_abs_delta=max_delta,
        equivalent=agreements == X.shape[0],
        hypothesis_ok=hypothesis_ok,
        hypothesis_notes=tuple(notes),
        disagreements=_collect_disagreements(map_w, prod_w, map_s, prod_s),
    )


def verify_sqdist_equivalence(m: FusionModel, samples, rel_tol: float = 1e-10) -> VerificationReport:
    """Check the weighted squared-distance rule against the product rule.

    Winners must match sample by sample, and every class objective must
    equal -2 times the product rule's unnormalized log score to within
    ``rel_tol`` relative (exact zeros on both sides also pass).

    Raises
    ------
    RequiresIsotropic
        If any block has a non-isotropic covariance.
    """
    X = _as_batch(m, samples)
    objectives = _sqdist_objectives(m, X)
    sq_s = -0.5 * objectives
    sq_w, _ = _winners_ties(sq_s)
    prod_w, _, prod_s = decide_batch(m, X, "product", "unnormalized")
    paired = -2.0 * prod_s
    denom = np.abs(paired)
    err = np.abs(objectives - paired)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(denom > 0, err / denom, np.where(err > 0, np.inf, 0.0))
    max_rel = float(rel.max()) if rel.size else 0.0
    agreements = int(np.sum(sq_w == prod_w))
    equivalent = agreements == X.shape[0] and max_rel <= rel_tol
    return VerificationReport(
        check="sqdist-vs-product",
        n_samples=X.shape[0],
        agreements=agreements,
        max_abs_delta=float(err.max()) if err.size else 0.0,
        equivalent=equivalent,
        hypothesis_ok=True,
        disagreements=_collect_disagreements(sq_w, prod_w, sq_s, prod_s),
        tolerance=rel_tol,
        max_rel_delta=max_rel,
    )


def verify_concat_equivalence(
    m: FusionModel, samples, tol: float = 1e-9, log_det_tol: float = 1e-10
) -> VerificationReport:
    """Check the product of block densities against the joint density.

    Hypothesis: the joint covariance is the block-diagonal assembly of the
    block covariances (the blocks are uncorrelated given the class). Under
    it, sum-of-block log-densities and the joint log-density must agree
    within ``tol`` absolute for every sample and class, and the joint
    log-determinants must equal the per-block sums within ``log_det_tol``.
    """
    X = _as_batch(m, samples)
    notes = _factorization_notes(m)
    hypothesis_ok = not notes

    prod_w, _, prod_s = decide_batch(m, X, "product", "density")
    joint_s = block_log_scores(m.joint, X, "density")
    joint_w, _ = _winners_ties(joint_s)
    deltas = np.abs(prod_s - joint_s)
    max_delta = float(deltas.max()) if deltas.size else 0.0

    log_det_delta = 0.0
    for k in range(m.n_classes):
        parts = math.fsum(b.classes[k].cov.log_det for b in m.blocks)
        log_det_delta = max(log_det_delta, abs(m.joint.classes[k].cov.log_det - parts))

    agreements = int(np.sum(prod_w == joint_w))
    equivalent = (
        max_delta < tol and log_det_delta <= log_det_tol and agreements == X.shape[0]
    )
    return VerificationReport(
        check="concat-vs-product",
        n_samples=X.shape[0],
        agreements=agreements,
        max_abs_delta=max_delta,
        equivalent=equivalent,
        hypothesis_ok=hypothesis_ok,
        hypothesis_notes=tuple(notes),
        disagreements=_collect_disagreements(prod_w, joint_w, prod_s, joint_s),
        tolerance=tol,
        max_log_det_delta=log_det_delta,
    )
