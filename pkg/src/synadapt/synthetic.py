"""Synthetic context-marked synonym corpora for desk-scale experiments.

Synsets are built in consecutive pairs; a configurable fraction of each
pair's surfaces is shared verbatim between the two uids, so those
surfaces can only be disambiguated through the per-synset context
vocabularies (which are disjoint by construction).

Sentences follow a fixed template: a constant-width lead of context
tokens, the marked span, then a variable-length tail of context tokens.
The constant lead keeps marker positions aligned across instances so
positional variation does not drown the context signal at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Instance, Synset, mark_entity
from .errors import DataError
from .vocab import Vocabulary

_CONTEXT_POOL = 6
_LEAD_LEN = 3


@dataclass(frozen=True)
class SyntheticSpec:
    n_synsets: int
    surfaces_per_synset: int
    contexts_per_surface: int
    ambiguous_fraction: float = 0.0

    def __post_init__(self) -> None:
        if min(self.n_synsets, self.surfaces_per_synset,
               self.contexts_per_surface) < 1:
            raise DataError("all synthetic corpus counts must be >= 1")
        if not 0.0 <= self.ambiguous_fraction <= 1.0:
            raise DataError("ambiguous_fraction must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str, ambiguous_fraction: float = 0.0) -> "SyntheticSpec":
        """Parse the CLI shorthand "NxSxC" (synsets x surfaces x contexts)."""
        parts = text.lower().split("x")
        if len(parts) != 3:
            raise DataError(f"synthetic spec {text!r} is not of the form NxSxC")
        try:
            n, s, c = (int(p) for p in parts)
        except ValueError as exc:
            raise DataError(f"synthetic spec {text!r} has non-integer parts") from exc
        return cls(n, s, c, ambiguous_fraction)


def _surface_tokens(synset_idx: int, surface_idx: int, shared_pair: int | None) -> list[str]:
    # alternate 1- and 2-token surfaces so span lengths vary
    if shared_pair is not None:
        stem = f"shared{shared_pair}n{surface_idx}"
    else:
        stem = f"ent{synset_idx}n{surface_idx}"
    if surface_idx % 2 == 1:
        return [stem, f"{stem}tail"]
    return [stem]


def generate_synthetic_corpus(spec: SyntheticSpec, rng_seed: int,
                              vocab: Vocabulary | None = None,
                              domain: str = "general"
                              ) -> tuple[dict[str, Synset], list[Instance], Vocabulary]:
    """Build (synset store, corpus, vocabulary) deterministically.

    Emits exactly n_synsets * surfaces_per_synset * contexts_per_surface
    instances. Roughly `ambiguous_fraction` of surface slots are shared
    verbatim between the two synsets of a pair.
    """
    rng = np.random.default_rng(rng_seed)
    if vocab is None:
        vocab = Vocabulary()

    shared_per_pair = int(round(spec.ambiguous_fraction * spec.surfaces_per_synset))
    surfaces: list[list[list[str]]] = []
    for s in range(spec.n_synsets):
        pair = s // 2
        paired = (s % 2 == 0 and s + 1 < spec.n_synsets) or (s % 2 == 1)
        row = []
        for j in range(spec.surfaces_per_synset):
            if paired and j < shared_per_pair:
                row.append(_surface_tokens(s, j, shared_pair=pair))
            else:
                row.append(_surface_tokens(s, j, shared_pair=None))
        surfaces.append(row)

    synsets: dict[str, Synset] = {}
    corpus: list[Instance] = []
    for s in range(spec.n_synsets):
        uid = f"Q{s:04d}"
        synsets[uid] = Synset(uid=uid,
                              surfaces=tuple(" ".join(t) for t in surfaces[s]),
                              domain=domain)
        pool = [f"ctx{s}w{t}" for t in range(_CONTEXT_POOL)]
        for token in pool:
            vocab.add(token)
        for j in range(spec.surfaces_per_synset):
            span_words = surfaces[s][j]
            for word in span_words:
                vocab.add(word)
            for _ in range(spec.contexts_per_surface):
                n_tail = int(rng.integers(2, 6))
                lead = [pool[int(k)] for k in rng.integers(0, _CONTEXT_POOL, _LEAD_LEN)]
                tail = [pool[int(k)] for k in rng.integers(0, _CONTEXT_POOL, n_tail)]
                words = lead + span_words + tail
                ids = [vocab.add(w) for w in words]
                tokens, p_s, p_e = mark_entity(ids, _LEAD_LEN,
                                               _LEAD_LEN + len(span_words))
                corpus.append(Instance(uid=uid, tokens=tokens, p_s=p_s, p_e=p_e))
    return synsets, corpus, vocab
