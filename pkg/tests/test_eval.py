from __future__ import annotations

import itertools

import numpy as np
import pytest

from synadapt.corpus import Instance, mark_entity
from synadapt.errors import DataError, NoAmbiguityError
from synadapt.evalsuite import (Clustering, EmbeddingSet, ambiguity_probe,
                                clustering_scores, cosine_distance_matrix,
                                embed_instances, hac_cluster, holdout_split,
                                macro_micro_f1, probe_from_embeddings,
                                retrieval_acc_at_k, uid_gold_clustering)
from synadapt.model import (Aggregator, Backbone, EncoderBundle,
                            EntityAwareAdapter)
from synadapt.tensor import l2_normalize_rows
from synadapt.vocab import Vocabulary

from test_trainer import tiny_corpus


# ---------------------------------------------------------------------------
# exhaustive agglomeration oracle (recomputes all linkage distances from
# scratch at every merge; no incremental updates)

def oracle_hac(vectors: np.ndarray, linkage: str, threshold: float) -> list[list[int]]:
    dist = cosine_distance_matrix(vectors)
    clusters: list[list[int]] = [[i] for i in range(len(vectors))]
    while len(clusters) > 1:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            pair_ds = [dist[i, j] for i in clusters[a] for j in clusters[b]]
            if linkage == "single":
                d = min(pair_ds)
            elif linkage == "complete":
                d = max(pair_ds)
            else:
                d = sum(pair_ds) / len(pair_ds)
            key = (d, min(clusters[a][0], clusters[b][0]),
                   max(clusters[a][0], clusters[b][0]))
            if best is None or key < best[0]:
                best = (key, a, b)
        if best[0][0] > threshold:
            break
        _, a, b = best
        merged = sorted(clusters[a] + clusters[b])
        clusters = [c for idx, c in enumerate(clusters) if idx not in (a, b)]
        clusters.append(merged)
    return sorted((sorted(c) for c in clusters), key=lambda c: c[0])


@pytest.fixture
def trained_free_bundle(tiny_config):
    """Untrained bundle; evaluation only needs the forward path."""
    bundle = EncoderBundle(config=tiny_config,
                           backbone=Backbone(tiny_config, seed=1))
    bundle.adapters.append(EntityAwareAdapter(tiny_config, "dom", seed=2))
    bundle.aggregators["dom"] = Aggregator(tiny_config, "dom", seed=3)
    return bundle


class TestEmbedInstances:
    def test_duplicate_instances_embed_identically(self, trained_free_bundle):
        vocab = Vocabulary()
        corpus = tiny_corpus(vocab)
        dup = [corpus[0], corpus[0], corpus[1]]
        out = embed_instances(trained_free_bundle, dup, "pretrain-pooled", "dom")
        assert np.array_equal(out.vectors[0], out.vectors[1])
        assert not np.array_equal(out.vectors[0], out.vectors[2])

    def test_pooled_rows_unit_norm(self, trained_free_bundle):
        vocab = Vocabulary()
        corpus = tiny_corpus(vocab)
        out = embed_instances(trained_free_bundle, corpus[:5], "pretrain-pooled",
                              "dom")
        norms = np.linalg.norm(out.vectors, axis=1)
        assert np.max(np.abs(norms - 1.0)) <= 1e-12

    def test_feature_extractor_width(self, trained_free_bundle, tiny_config):
        vocab = Vocabulary()
        corpus = tiny_corpus(vocab)
        out = embed_instances(trained_free_bundle, corpus[:3],
                              "feature-extractor", "dom")
        assert out.vectors.shape == (3, tiny_config.hidden_dim)

    def test_missing_adapter_is_an_error(self, trained_free_bundle):
        vocab = Vocabulary()
        corpus = tiny_corpus(vocab)
        with pytest.raises(DataError):
            embed_instances(trained_free_bundle, corpus[:2], "pretrain-pooled",
                            "other-domain")

    def test_unknown_mode_rejected(self, trained_free_bundle):
        with pytest.raises(DataError):
            embed_instances(trained_free_bundle, [], "nope", "dom")


def _embedding_set(vectors, uids):
    return EmbeddingSet(vectors=np.asarray(vectors, dtype=np.float64),
                        uids=list(uids),
                        ids=[str(i) for i in range(len(uids))])


class TestRetrievalAccAtK:
    def test_exact_match_wins(self):
        queries = _embedding_set(np.eye(3)[:1], ["A"])
        candidates = _embedding_set(np.eye(3), ["A", "B", "C"])
        assert retrieval_acc_at_k(queries, candidates, 1) == 1.0

    def test_k_covering_all_candidates(self):
        queries = _embedding_set(np.eye(4)[:2], ["A", "B"])
        candidates = _embedding_set(np.eye(4)[::-1], ["D", "C", "B", "A"])
        assert retrieval_acc_at_k(queries, candidates, 4) == 1.0

    def test_crafted_ranks(self):
        # gold candidates rank 1, 2, and 5 for the three queries
        candidates = _embedding_set(np.eye(5), ["g0", "g1", "x", "y", "g2"])
        q = np.array([
            [1.0, 0.0, 0.0, 0.0, 0.0],      # gold g0 at rank 1
            [0.0, 0.8, 0.9, 0.0, 0.0],      # gold g1 at rank 2
            [0.0, 0.2, 0.9, 0.8, 0.1],      # gold g2 at rank 5
        ])
        queries = _embedding_set(q, ["g0", "g1", "g2"])
        assert retrieval_acc_at_k(queries, candidates, 2) == pytest.approx(2 / 3)

    def test_monotone_in_k(self, rng):
        vecs = l2_normalize_rows(rng.standard_normal((30, 6)))
        uids = [f"u{i % 6}" for i in range(30)]
        candidates = _embedding_set(vecs, uids)
        queries = _embedding_set(l2_normalize_rows(rng.standard_normal((10, 6))),
                                 [f"u{i % 6}" for i in range(10)])
        accs = [retrieval_acc_at_k(queries, candidates, k) for k in range(1, 31)]
        assert all(a <= b + 1e-12 for a, b in zip(accs, accs[1:]))
        assert accs[-1] == 1.0

    def test_tie_break_prefers_lower_index(self):
        candidates = _embedding_set(np.array([[1.0, 0], [1.0, 0]]), ["A", "B"])
        queries = _embedding_set(np.array([[1.0, 0]]), ["A"])
        assert retrieval_acc_at_k(queries, candidates, 1) == 1.0
        queries_b = _embedding_set(np.array([[1.0, 0]]), ["B"])
        assert retrieval_acc_at_k(queries_b, candidates, 1) == 0.0

    def test_missing_uid_rejected(self):
        queries = _embedding_set(np.eye(2)[:1], ["missing"])
        candidates = _embedding_set(np.eye(2), ["A", "B"])
        with pytest.raises(DataError):
            retrieval_acc_at_k(queries, candidates, 1)

    def test_empty_sets_rejected(self):
        empty = _embedding_set(np.zeros((0, 2)), [])
        filled = _embedding_set(np.eye(2), ["A", "B"])
        with pytest.raises(DataError):
            retrieval_acc_at_k(empty, filled, 1)
        with pytest.raises(DataError):
            retrieval_acc_at_k(filled, empty, 1)


class TestHacCluster:
    def test_two_orthogonal_groups(self):
        vectors = np.array([[1.0, 0.0]] * 3 + [[0.0, 1.0]] * 3)
        clustering = hac_cluster(vectors, "average", 0.5)
        assert clustering.clusters == [[0, 1, 2], [3, 4, 5]]

    def test_tiny_threshold_gives_singletons(self, rng):
        vectors = l2_normalize_rows(rng.standard_normal((8, 4)))
        clustering = hac_cluster(vectors, "average", 1e-9)
        assert clustering.clusters == [[i] for i in range(8)]

    @pytest.mark.parametrize("linkage", ["single", "complete", "average"])
    def test_matches_exhaustive_oracle(self, linkage, rng):
        for trial in range(20):
            n = int(rng.integers(2, 9))
            vectors = l2_normalize_rows(rng.standard_normal((n, 3)))
            threshold = float(rng.uniform(0.05, 1.5))
            got = hac_cluster(vectors, linkage, threshold).clusters
            want = oracle_hac(vectors, linkage, threshold)
            assert got == want

    def test_permutation_invariant_up_to_relabel(self, rng):
        base = np.vstack([
            l2_normalize_rows(rng.standard_normal((4, 5)) * 0.1 + center)
            for center in (np.eye(5)[0], np.eye(5)[2], np.eye(5)[4])
        ])
        perm = rng.permutation(len(base))
        direct = hac_cluster(base, "average", 0.5).clusters
        shuffled = hac_cluster(base[perm], "average", 0.5).clusters
        remapped = sorted(sorted(int(perm[i]) for i in c) for c in shuffled)
        assert sorted(map(sorted, direct)) == remapped

    def test_single_item(self):
        assert hac_cluster(np.array([[1.0, 0.0]]), "single", 0.5).clusters == [[0]]

    def test_bad_args(self, rng):
        with pytest.raises(DataError):
            hac_cluster(rng.standard_normal((3, 2)), "ward", 0.5)
        with pytest.raises(DataError):
            hac_cluster(rng.standard_normal((3, 2)), "single", 0.0)


class TestMacroMicroF1:
    def test_perfect_prediction(self):
        gold = Clustering(clusters=[[0, 1], [2, 3, 4]])
        macro, micro = macro_micro_f1(Clustering(clusters=[[0, 1], [2, 3, 4]]),
                                      gold)
        assert macro == 1.0 and micro == 1.0

    def test_singletons_vs_one_gold_cluster(self):
        pred = Clustering(clusters=[[0], [1], [2], [3]])
        gold = Clustering(clusters=[[0, 1, 2, 3]])
        macro, micro = macro_micro_f1(pred, gold)
        _, _, details = clustering_scores(pred, gold)
        assert details["macro_precision"] == 1.0
        assert details["macro_recall"] == 0.0
        assert macro == 0.0
        assert details["micro_precision"] == 1.0
        assert details["micro_recall"] == 0.25
        assert micro == pytest.approx(2 * 1.0 * 0.25 / 1.25)

    def test_one_big_cluster_vs_gold_singletons_mirror(self):
        pred = Clustering(clusters=[[0, 1, 2, 3]])
        gold = Clustering(clusters=[[0], [1], [2], [3]])
        _, _, details = clustering_scores(pred, gold)
        assert details["macro_precision"] == 0.0
        assert details["macro_recall"] == 1.0
        assert details["micro_precision"] == 0.25
        assert details["micro_recall"] == 1.0

    def test_bounded_and_symmetric_universe_check(self, rng):
        labels = [int(x) for x in rng.integers(0, 4, 12)]
        pred = uid_gold_clustering([str(x) for x in labels])
        shuffled = [int(x) for x in rng.integers(0, 4, 12)]
        gold = uid_gold_clustering([str(x) for x in shuffled])
        macro, micro = macro_micro_f1(pred, gold)
        assert 0.0 <= macro <= 1.0 and 0.0 <= micro <= 1.0

    def test_universe_mismatch_rejected(self):
        with pytest.raises(DataError):
            macro_micro_f1(Clustering(clusters=[[0, 1]]),
                           Clustering(clusters=[[0, 1, 2]]))

    def test_clustering_validates_coverage(self):
        with pytest.raises(DataError):
            Clustering(clusters=[[0, 1], [1, 2]])


class TestAmbiguityProbe:
    def _probe_corpus(self):
        vocab = Vocabulary()
        corpus = []
        # shared surface "amb" under two uids, distinct contexts
        for uid, ctx in (("A", "actx"), ("B", "bctx")):
            for i in range(3):
                words = [f"{ctx}{i}", "amb", f"{ctx}{i + 1}"]
                ids = [vocab.add(w) for w in words]
                tokens, p_s, p_e = mark_entity(ids, 1, 2)
                corpus.append(Instance(uid=uid, tokens=tokens, p_s=p_s, p_e=p_e))
        return corpus, vocab

    def test_oracle_one_hot_embeddings_margin_one(self):
        corpus, _ = self._probe_corpus()
        vectors = np.array([[1.0, 0.0]] * 3 + [[0.0, 1.0]] * 3)
        emb = _embedding_set(vectors, [i.uid for i in corpus])
        probe = probe_from_embeddings(emb, corpus)
        assert probe["margin"] == pytest.approx(1.0)
        assert probe["same_uid_mean_cosine"] == pytest.approx(1.0)
        assert probe["shared_surface_cross_uid_mean_cosine"] == pytest.approx(0.0)

    def test_untrained_model_reports_a_margin(self, trained_free_bundle):
        corpus, vocab = self._probe_corpus()
        probe = ambiguity_probe(trained_free_bundle, corpus, "dom")
        assert "margin" in probe and np.isfinite(probe["margin"])

    def test_no_shared_surface_is_an_error(self, trained_free_bundle):
        vocab = Vocabulary()
        corpus = tiny_corpus(vocab)  # every uid owns a distinct surface
        with pytest.raises(NoAmbiguityError):
            ambiguity_probe(trained_free_bundle, corpus, "dom")


class TestHoldoutSplit:
    def test_every_uid_keeps_a_candidate(self, rng):
        vocab = Vocabulary()
        corpus = tiny_corpus(vocab, n_uids=5, per_uid=4)
        rest, held = holdout_split(corpus, 0.25, rng_seed=3)
        assert len(rest) + len(held) == len(corpus)
        rest_uids = {i.uid for i in rest}
        assert {i.uid for i in held} <= rest_uids

    def test_deterministic(self):
        vocab = Vocabulary()
        corpus = tiny_corpus(vocab)
        a = holdout_split(corpus, 0.2, rng_seed=3)
        b = holdout_split(corpus, 0.2, rng_seed=3)
        assert a == b

    def test_bad_fraction(self):
        with pytest.raises(DataError):
            holdout_split([], 0.0, 1)
