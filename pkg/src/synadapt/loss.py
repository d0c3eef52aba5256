"""Hard-negative-reweighted contrastive objective over pooled embeddings.

For every instance the positive mass is the summed temperature-scaled
similarity to its same-uid batch mates. The negative mass reweights each
cross-uid similarity by a concentration exponent (so harder negatives
count more), debiases with a class-prior correction, and is clamped from
below at exp(-1/t) to keep the per-instance term well-defined.

Everything is built on the autodiff tape, so gradients w.r.t. the input
embeddings (and anything upstream) come from the same code path that
produces the loss value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError, EmptyBatchError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.5
    tau_plus: float = 0.05   # class-prior probability of a positive pair
    beta: float = 1.0        # concentration on hard negatives

    def __post_init__(self) -> None:
        if self.temperature <= 0.0:
            raise DataError("temperature must be positive")
        if not 0.0 <= self.tau_plus < 1.0:
            raise DataError("tau_plus must lie in [0, 1)")
        if self.beta < 0.0:
            raise DataError("beta must be non-negative")


@dataclass
class BatchEmbeddings:
    """Unit-norm pooled vectors and their synset uids, one row each."""

    vectors: np.ndarray
    uids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.uids):
            raise DataError("vectors must be B x width with one uid per row")
        if self.vectors.shape[0] < 2:
            raise DataError("a contrastive batch needs at least two rows")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise DataError("batch embedding rows must be unit-norm")


def positives_of(uids: list[str], i: int) -> set[int]:
    """Indexes of the other batch members sharing uid with instance i."""
    if not 0 <= i < len(uids):
        raise DataError(f"index {i} outside batch of size {len(uids)}")
    return {j for j, u in enumerate(uids) if j != i and u == uids[i]}


def _batch_masks(uids: list[str]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(uids, dtype=object)
    same = arr[:, None] == arr[None, :]
    off_diag = ~np.eye(len(uids), dtype=bool)
    pos = same & off_diag
    neg = ~same & off_diag
    return pos, neg


def contrastive_loss_var(v: ad.Var, uids: list[str], cfg: LossConfig) -> ad.Var:
    """Tape node for the batch loss; instances without positives are
    skipped with a warning and contribute exactly zero."""
    batch = len(uids)
    if v.shape[0] != batch:
        raise DataError("one uid per embedding row required")
    pos_mask, neg_mask = _batch_masks(uids)
    include = pos_mask.any(axis=1)
    skipped = np.flatnonzero(~include)
    if skipped.size:
        log.warning("skipping %d instance(s) without in-batch positives: %s",
                    skipped.size, skipped.tolist())
    if not include.any():
        raise EmptyBatchError("every instance in the batch lacks a positive")

    t, tau, beta = cfg.temperature, cfg.tau_plus, cfg.beta
    n_neg = neg_mask.sum(axis=1, keepdims=True).astype(np.float64)
    has_neg = n_neg > 0.0
    include_col = include[:, None].astype(np.float64)

    sims = ad.matmul(v, ad.transpose(v))
    s_plus = ad.sum_rows(ad.mul_const(ad.exp(ad.scale(sims, 1.0 / t)),
                                      pos_mask.astype(np.float64)))
    reweighted = ad.sum_rows(ad.mul_const(ad.exp(ad.scale(sims, (1.0 + beta) / t)),
                                          neg_mask.astype(np.float64)))
    weights = ad.sum_rows(ad.mul_const(ad.exp(ad.scale(sims, beta / t)),
                                       neg_mask.astype(np.float64)))
    # rows without negatives would divide 0/0; give them a 1 denominator
    weights_safe = ad.add_const(weights, (~has_neg).astype(np.float64))
    s_tilde = ad.mul_const(ad.div(reweighted, weights_safe), n_neg)

    debiased = ad.scale(ad.add(ad.mul_const(s_plus, -tau * n_neg), s_tilde),
                        1.0 / (1.0 - tau))
    floor = np.exp(-1.0 / t)
    take_raw = has_neg & (debiased.value > floor)
    s_minus = ad.where_const(take_raw, debiased,
                             np.full_like(debiased.value, floor))

    # +1 on skipped rows keeps the log finite; those rows are masked out
    s_plus_safe = ad.add_const(s_plus, (~include[:, None]).astype(np.float64))
    frac = ad.div(s_plus_safe, ad.add(s_plus_safe, s_minus))
    per_instance = ad.scale(ad.log(frac), -1.0)
    return ad.sum_all(ad.mul_const(per_instance, include_col))


def contrastive_loss(batch: BatchEmbeddings, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Scalar loss and its gradient w.r.t. every embedding row."""
    v = ad.leaf(batch.vectors)
    loss = contrastive_loss_var(v, batch.uids, cfg)
    loss.backward()
    grad = v.grad if v.grad is not None else np.zeros_like(batch.vectors)
    return float(loss.value[0, 0]), grad


# ---------------------------------------------------------------------------
# optional comparison objectives behind the same interface


def info_nce_loss(batch: BatchEmbeddings, temperature: float = 0.5) -> tuple[float, np.ndarray]:
    """Multi-positive InfoNCE: positives over all non-self pairs."""
    uids = batch.uids
    pos_mask, _ = _batch_masks(uids)
    include = pos_mask.any(axis=1)
    if not include.any():
        raise EmptyBatchError("every instance in the batch lacks a positive")
    off_diag = ~np.eye(len(uids), dtype=bool)
    v = ad.leaf(batch.vectors)
    e = ad.exp(ad.scale(ad.matmul(v, ad.transpose(v)), 1.0 / temperature))
    numer = ad.sum_rows(ad.mul_const(e, pos_mask.astype(np.float64)))
    denom = ad.sum_rows(ad.mul_const(e, off_diag.astype(np.float64)))
    numer_safe = ad.add_const(numer, (~include[:, None]).astype(np.float64))
    denom_safe = ad.add_const(denom, (~include[:, None]).astype(np.float64))
    per_instance = ad.scale(ad.log(ad.div(numer_safe, denom_safe)), -1.0)
    loss = ad.sum_all(ad.mul_const(per_instance, include[:, None].astype(np.float64)))
    loss.backward()
    return float(loss.value[0, 0]), v.grad if v.grad is not None else np.zeros_like(batch.vectors)


def triplet_margin_loss(batch: BatchEmbeddings, margin: float = 1.0) -> tuple[float, np.ndarray]:
    """Hinge on mean positive-vs-negative similarity gaps per anchor."""
    uids = batch.uids
    pos_mask, neg_mask = _batch_masks(uids)
    include = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    if not include.any():
        raise EmptyBatchError("no anchor has both a positive and a negative")
    pos_n = np.maximum(pos_mask.sum(axis=1, keepdims=True), 1).astype(np.float64)
    neg_n = np.maximum(neg_mask.sum(axis=1, keepdims=True), 1).astype(np.float64)
    v = ad.leaf(batch.vectors)
    sims = ad.matmul(v, ad.transpose(v))
    mean_pos = ad.mul_const(ad.sum_rows(ad.mul_const(sims, pos_mask.astype(np.float64))),
                            1.0 / pos_n)
    mean_neg = ad.mul_const(ad.sum_rows(ad.mul_const(sims, neg_mask.astype(np.float64))),
                            1.0 / neg_n)
    gap = ad.add_const(ad.sub(mean_neg, mean_pos), np.full_like(mean_pos.value, margin))
    hinged = ad.where_const(gap.value > 0.0, gap, np.zeros_like(gap.value))
    loss = ad.sum_all(ad.mul_const(hinged, include[:, None].astype(np.float64)))
    loss.backward()
    return float(loss.value[0, 0]), v.grad if v.grad is not None else np.zeros_like(batch.vectors)
