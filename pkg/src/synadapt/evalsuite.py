"""Similarity-oriented evaluation: embedding extraction, top-k retrieval,
agglomerative canonicalization with cluster-level F1, and the
context-ambiguity probe.

Everything here is read-only over the model and deterministic, including
tie handling (lower index wins everywhere a tie can occur).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Instance
from .errors import DataError, NoAmbiguityError
from .model import (BackboneStateCache, EncoderBundle, adapter_forward,
                    aggregate_feature_extractor, aggregate_pretrain)
from .tensor import l2_normalize_rows, matmul

MODES = ("pretrain-pooled", "feature-extractor")


@dataclass
class EmbeddingSet:
    """Row-aligned vectors with their uids and source instance ids."""

    vectors: np.ndarray
    uids: list[str]
    ids: list[str]

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DataError("embedding vectors must be 2-D")
        if not (len(self.uids) == len(self.ids) == self.vectors.shape[0]):
            raise DataError("one uid and id per embedding row required")
        if not np.all(np.isfinite(self.vectors)):
            raise DataError("embedding rows must be finite")

    def __len__(self) -> int:
        return self.vectors.shape[0]


def embed_instances(bundle: EncoderBundle, instances: list[Instance],
                    mode: str, domain: str,
                    cache: BackboneStateCache | None = None) -> EmbeddingSet:
    """Embed instances with one domain adapter.

    pretrain-pooled emits the unit pooled vector per instance;
    feature-extractor averages the fused per-token features over the
    closed marker span.
    """
    if mode not in MODES:
        raise DataError(f"unknown embedding mode {mode!r}; expected one of {MODES}")
    adapter = bundle.adapter_for(domain)
    if cache is None:
        cache = BackboneStateCache(bundle.backbone)
    rows: list[np.ndarray] = []
    for inst in instances:
        states = cache.states(inst.tokens)
        h_a = adapter_forward(states, adapter, inst.p_s, inst.p_e)
        if mode == "pretrain-pooled":
            aggregator = bundle.aggregator_for(domain)
            rows.append(aggregate_pretrain(states[-1], h_a, inst.p_s, inst.p_e,
                                           aggregator))
        else:
            fused = aggregate_feature_extractor(states[-1], h_a)
            rows.append(np.mean(fused[inst.p_s:inst.p_e + 1, :], axis=0,
                                keepdims=True))
    vectors = np.concatenate(rows, axis=0) if rows else np.zeros((0, 1))
    return EmbeddingSet(vectors=vectors,
                        uids=[inst.uid for inst in instances],
                        ids=[str(i) for i in range(len(instances))])


def retrieval_acc_at_k(queries: EmbeddingSet, candidates: EmbeddingSet,
                       k: int) -> float:
    """Fraction of queries whose top-k dot-product candidates include the
    query's uid; ties rank the lower candidate index first."""
    if k < 1:
        raise DataError("k must be >= 1")
    if len(queries) == 0 or len(candidates) == 0:
        raise DataError("retrieval needs at least one query and one candidate")
    candidate_uids = set(candidates.uids)
    for uid in queries.uids:
        if uid not in candidate_uids:
            raise DataError(f"query uid {uid!r} absent from candidates")
    cand_uid_arr = np.asarray(candidates.uids, dtype=object)
    hits = 0
    scores_all = matmul(queries.vectors, candidates.vectors.T)
    for qi in range(len(queries)):
        order = np.argsort(-scores_all[qi], kind="stable")
        top = cand_uid_arr[order[:k]]
        if np.any(top == queries.uids[qi]):
            hits += 1
    return hits / len(queries)


# ---------------------------------------------------------------------------
# agglomerative canonicalization


@dataclass
class Clustering:
    """Disjoint clusters covering item indexes 0..n-1 exactly once."""

    clusters: list[list[int]]
    n_items: int = field(default=0)

    def __post_init__(self) -> None:
        flat = sorted(i for c in self.clusters for i in c)
        if self.n_items == 0:
            self.n_items = len(flat)
        if flat != list(range(self.n_items)):
            raise DataError("clusters must cover every item exactly once")
        self.clusters = sorted((sorted(c) for c in self.clusters),
                               key=lambda c: c[0])


def cosine_distance_matrix(vectors: np.ndarray) -> np.ndarray:
    """1 - cosine similarity; rows of norm zero sit at distance 1 from
    everything (cosine undefined there)."""
    unit = l2_normalize_rows(vectors)
    sims = matmul(unit, unit.T)
    dist = 1.0 - np.clip(sims, -1.0, 1.0)
    np.fill_diagonal(dist, 0.0)
    return dist


def hac_cluster(vectors: np.ndarray, linkage: str = "average",
                distance_threshold: float = 0.5) -> Clustering:
    """Agglomerate under cosine distance until the closest pair of
    clusters sits beyond the threshold.

    Linkage distances follow the usual min/max/size-weighted-mean
    updates; merge ties go to the lexicographically smallest index pair,
    and the merged cluster keeps the smaller index.
    """
    if linkage not in ("single", "complete", "average"):
        raise DataError(f"unknown linkage {linkage!r}")
    if distance_threshold <= 0.0:
        raise DataError("distance_threshold must be positive")
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if n == 0:
        raise DataError("need at least one item to cluster")
    if n == 1:
        return Clustering(clusters=[[0]], n_items=1)

    work = cosine_distance_matrix(vectors)
    np.fill_diagonal(work, np.inf)
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n)
    members: list[list[int]] = [[i] for i in range(n)]

    while active.sum() > 1:
        flat = int(np.argmin(work))
        i, j = divmod(flat, n)
        best = work[i, j]
        if best > distance_threshold:
            break
        if i > j:
            i, j = j, i
        others = active.copy()
        others[i] = others[j] = False
        if linkage == "single":
            merged = np.minimum(work[i], work[j])
        elif linkage == "complete":
            merged = np.maximum(work[i], work[j])
        else:
            merged = (sizes[i] * work[i] + sizes[j] * work[j]) / (sizes[i] + sizes[j])
        work[i, :] = np.where(others, merged, np.inf)
        work[:, i] = work[i, :]
        work[i, i] = np.inf
        work[j, :] = np.inf
        work[:, j] = np.inf
        sizes[i] += sizes[j]
        members[i].extend(members[j])
        members[j] = []
        active[j] = False

    return Clustering(clusters=[members[i] for i in range(n) if active[i]],
                      n_items=n)


def _containment(inner: list[list[int]], outer: list[list[int]]) -> float:
    outer_sets = [set(c) for c in outer]
    contained = sum(1 for c in inner if any(set(c) <= o for o in outer_sets))
    return contained / len(inner)


def _overlap_mass(source: list[list[int]], target: list[list[int]], n: int) -> float:
    target_sets = [set(c) for c in target]
    total = sum(max(len(set(c) & t) for t in target_sets) for c in source)
    return total / n


def macro_micro_f1(pred: Clustering, gold: Clustering) -> tuple[float, float]:
    macro_f1, micro_f1, _ = clustering_scores(pred, gold)
    return macro_f1, micro_f1


def clustering_scores(pred: Clustering, gold: Clustering) -> tuple[float, float, dict]:
    """Purity-style cluster F1.

    Macro precision is the fraction of predicted clusters wholly inside
    some gold cluster (recall swaps the roles); micro precision sums each
    predicted cluster's best gold overlap over the item count (recall
    swaps the roles). F1 is the harmonic mean, 0 when both parts are 0.
    """
    if pred.n_items != gold.n_items:
        raise DataError("clusterings cover different item universes")
    n = pred.n_items
    macro_p = _containment(pred.clusters, gold.clusters)
    macro_r = _containment(gold.clusters, pred.clusters)
    micro_p = _overlap_mass(pred.clusters, gold.clusters, n)
    micro_r = _overlap_mass(gold.clusters, pred.clusters, n)

    def f1(p: float, r: float) -> float:
        return 2.0 * p * r / (p + r) if (p + r) > 0.0 else 0.0

    details = {"macro_precision": macro_p, "macro_recall": macro_r,
               "micro_precision": micro_p, "micro_recall": micro_r}
    return f1(macro_p, macro_r), f1(micro_p, micro_r), details


def uid_gold_clustering(uids: list[str]) -> Clustering:
    """Gold partition that groups items by uid."""
    groups: dict[str, list[int]] = {}
    for i, uid in enumerate(uids):
        groups.setdefault(uid, []).append(i)
    return Clustering(clusters=list(groups.values()), n_items=len(uids))


# ---------------------------------------------------------------------------
# context-ambiguity probe


def ambiguity_probe(bundle: EncoderBundle, probe_corpus: list[Instance],
                    domain: str) -> dict:
    """Measure whether context separates shared surfaces.

    Returns the mean pooled-vector cosine between same-uid instances with
    different token sequences, the mean cosine between same-surface
    instances of different uids, and their margin.
    """
    embeddings = embed_instances(bundle, probe_corpus, "pretrain-pooled", domain)
    return probe_from_embeddings(embeddings, probe_corpus)


def probe_from_embeddings(embeddings: EmbeddingSet,
                          probe_corpus: list[Instance]) -> dict:
    vectors = embeddings.vectors
    by_uid: dict[str, list[int]] = {}
    by_surface: dict[tuple[int, ...], list[int]] = {}
    for idx, inst in enumerate(probe_corpus):
        by_uid.setdefault(inst.uid, []).append(idx)
        by_surface.setdefault(inst.span_ids(), []).append(idx)

    same_uid: list[float] = []
    for indexes in by_uid.values():
        for a_pos in range(len(indexes)):
            for b_pos in range(a_pos + 1, len(indexes)):
                a, b = indexes[a_pos], indexes[b_pos]
                if probe_corpus[a].tokens == probe_corpus[b].tokens:
                    continue
                same_uid.append(float(vectors[a] @ vectors[b]))

    cross_uid: list[float] = []
    for indexes in by_surface.values():
        for a_pos in range(len(indexes)):
            for b_pos in range(a_pos + 1, len(indexes)):
                a, b = indexes[a_pos], indexes[b_pos]
                if probe_corpus[a].uid != probe_corpus[b].uid:
                    cross_uid.append(float(vectors[a] @ vectors[b]))

    if not cross_uid:
        raise NoAmbiguityError("probe corpus has no surface shared across uids")
    if not same_uid:
        raise DataError("probe corpus has no same-uid pair with distinct contexts")
    same_mean = float(np.mean(same_uid))
    cross_mean = float(np.mean(cross_uid))
    return {
        "same_uid_mean_cosine": same_mean,
        "shared_surface_cross_uid_mean_cosine": cross_mean,
        "margin": same_mean - cross_mean,
        "same_uid_pairs": len(same_uid),
        "cross_uid_pairs": len(cross_uid),
    }


def holdout_split(instances: list[Instance], fraction: float,
                  rng_seed: int) -> tuple[list[Instance], list[Instance]]:
    """Per-uid seeded split into (rest, held_out); every uid with at
    least two instances contributes at least one to each side."""
    if not 0.0 < fraction < 1.0:
        raise DataError("holdout fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(rng_seed)
    by_uid: dict[str, list[Instance]] = {}
    for inst in instances:
        by_uid.setdefault(inst.uid, []).append(inst)
    rest: list[Instance] = []
    held: list[Instance] = []
    for uid in by_uid:
        group = by_uid[uid]
        if len(group) < 2:
            rest.extend(group)
            continue
        order = rng.permutation(len(group))
        n_hold = min(len(group) - 1, max(1, math.ceil(fraction * len(group))))
        held.extend(group[i] for i in order[:n_hold])
        rest.extend(group[i] for i in order[n_hold:])
    return rest, held
