"""Corpus construction: marked-span instances, synsets, filtering,
low-frequency balancing, statistics, and positive-guaranteeing batching.

Instances hold token ids in memory; the JSONL interchange format stores
token strings and resolves them against the saved vocabulary at load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidSpanError, NoPositivesError
from .vocab import MARK_CLOSE, MARK_OPEN, Vocabulary, tokenize


@dataclass(frozen=True)
class Synset:
    """One synonym set: a uid and its distinct surface forms."""

    uid: str
    surfaces: tuple[str, ...]
    domain: str = "general"

    def __post_init__(self) -> None:
        if not self.surfaces:
            raise DataError(f"synset {self.uid} has no surfaces")
        if len(set(self.surfaces)) != len(self.surfaces):
            raise DataError(f"synset {self.uid} has duplicate surfaces")


@dataclass(frozen=True)
class Instance:
    """A token sequence with exactly one marked entity span.

    p_s and p_e index the opening and closing marker tokens (the names
    mirror the JSONL schema keys).
    """

    uid: str
    tokens: tuple[int, ...]
    p_s: int
    p_e: int

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        n = len(self.tokens)
        if not (0 <= self.p_s and self.p_s + 2 <= self.p_e < n):
            raise InvalidSpanError(
                f"span ({self.p_s}, {self.p_e}) invalid for length {n}")
        if self.tokens[self.p_s] != MARK_OPEN or self.tokens[self.p_e] != MARK_CLOSE:
            raise InvalidSpanError("marker tokens missing at span indexes")
        opens = sum(1 for t in self.tokens if t == MARK_OPEN)
        closes = sum(1 for t in self.tokens if t == MARK_CLOSE)
        if opens != 1 or closes != 1:
            raise InvalidSpanError("instance must contain exactly one marker pair")

    def span_ids(self) -> tuple[int, ...]:
        """Token ids strictly between the markers."""
        return self.tokens[self.p_s + 1:self.p_e]

    def surface(self, vocab: Vocabulary) -> str:
        return " ".join(vocab.decode(list(self.span_ids())))


def mark_entity(tokens: list[int] | tuple[int, ...], start: int, end: int) -> tuple[tuple[int, ...], int, int]:
    """Insert markers around the half-open token range [start, end).

    Returns (new_tokens, p_s, p_e) with p_s = start and p_e = end + 1.
    """
    n = len(tokens)
    if not (0 <= start < end <= n):
        raise InvalidSpanError(f"span [{start}, {end}) invalid for length {n}")
    new_tokens = (*tokens[:start], MARK_OPEN, *tokens[start:end], MARK_CLOSE,
                  *tokens[end:])
    return new_tokens, start, end + 1


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute edit distance."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1,
                         cur[j - 1] + 1,
                         prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def filter_pairs(pairs: list[tuple[str, str, str]], min_edit: int = 10,
                 cap_per_uid: int = 50, rng_seed: int = 0) -> list[tuple[str, str, str]]:
    """Drop near-duplicate synonym pairs and cap the count per uid.

    Pairs whose raw-surface edit distance is below `min_edit` are
    removed; each uid then keeps at most `cap_per_uid` pairs, chosen as
    the first entries of a seeded shuffle so truncation carries no
    ordering bias.
    """
    if min_edit < 0 or cap_per_uid < 1:
        raise DataError("min_edit must be >= 0 and cap_per_uid >= 1")
    by_uid: dict[str, list[tuple[str, str, str]]] = {}
    for surface_a, surface_b, uid in pairs:
        if levenshtein(surface_a, surface_b) < min_edit:
            continue
        by_uid.setdefault(uid, []).append((surface_a, surface_b, uid))
    rng = np.random.default_rng(rng_seed)
    kept: list[tuple[str, str, str]] = []
    for uid in by_uid:
        group = by_uid[uid]
        order = rng.permutation(len(group))
        kept.extend(group[i] for i in order[:cap_per_uid])
    return kept


def balance_low_frequency(instances: list[Instance], synsets: dict[str, Synset],
                          surface_counts: dict[str, int], quantile: float,
                          rng_seed: int, vocab: Vocabulary,
                          replace_prob: float = 0.5) -> list[Instance]:
    """Swap marked spans for rare synonyms in a seeded subset of instances.

    An instance is eligible when its marked surface appears in its uid's
    synset and that synset holds a different surface whose corpus count
    is at or below the `quantile` count level. Eligible instances are
    independently rewritten with probability `replace_prob`; the rarest
    such synonym (ties broken lexicographically) replaces the span and
    p_e shifts to the new span length. Corpus size, order, and uids are
    preserved.
    """
    if not 0.0 < quantile < 1.0:
        raise DataError("quantile must lie strictly between 0 and 1")
    if not surface_counts:
        return list(instances)
    threshold = float(np.quantile(np.array(sorted(surface_counts.values()),
                                           dtype=np.float64), quantile))
    rng = np.random.default_rng(rng_seed)
    out: list[Instance] = []
    for inst in instances:
        synset = synsets.get(inst.uid)
        if synset is None:
            out.append(inst)
            continue
        current = inst.surface(vocab)
        lowered = {s.lower() for s in synset.surfaces}
        candidates = [
            s for s in synset.surfaces
            if s.lower() != current
            and surface_counts.get(s.lower(), surface_counts.get(s, 0)) <= threshold
        ]
        if current not in lowered or not candidates:
            out.append(inst)
            continue
        # draw for every eligible instance so the stream stays aligned
        draw = rng.random()
        if draw >= replace_prob:
            out.append(inst)
            continue
        pick = min(candidates,
                   key=lambda s: (surface_counts.get(s.lower(), surface_counts.get(s, 0)), s))
        span = tokenize(pick, vocab, grow=True)
        tokens = (*inst.tokens[:inst.p_s + 1], *span, *inst.tokens[inst.p_e:])
        out.append(Instance(uid=inst.uid, tokens=tokens, p_s=inst.p_s,
                            p_e=inst.p_s + 1 + len(span)))
    return out


@dataclass(frozen=True)
class CorpusStats:
    uid_count: int
    synonym_pair_count: int
    pairs_per_uid: float
    avg_sentence_len: float
    avg_edit_distance: float

    def to_dict(self) -> dict:
        return {
            "uid_count": self.uid_count,
            "synonym_pair_count": self.synonym_pair_count,
            "pairs_per_uid": self.pairs_per_uid,
            "avg_sentence_len": self.avg_sentence_len,
            "avg_edit_distance": self.avg_edit_distance,
        }


def compute_stats(corpus: list[Instance], vocab: Vocabulary) -> CorpusStats:
    """Corpus-level statistics.

    Synonym pairs are unordered same-uid instance pairs; sentence length
    counts content tokens (markers excluded); edit distance averages the
    character-level distance between paired marked surfaces.
    """
    if not corpus:
        return CorpusStats(0, 0, 0.0, 0.0, 0.0)
    by_uid: dict[str, list[Instance]] = {}
    for inst in corpus:
        by_uid.setdefault(inst.uid, []).append(inst)
    pair_count = sum(math.comb(len(v), 2) for v in by_uid.values())
    avg_len = float(np.mean([len(inst.tokens) - 2 for inst in corpus]))
    dist_total = 0
    for members in by_uid.values():
        surfaces = [m.surface(vocab) for m in members]
        for i in range(len(surfaces)):
            for j in range(i + 1, len(surfaces)):
                dist_total += levenshtein(surfaces[i], surfaces[j])
    uid_count = len(by_uid)
    return CorpusStats(
        uid_count=uid_count,
        synonym_pair_count=pair_count,
        pairs_per_uid=pair_count / uid_count,
        avg_sentence_len=avg_len,
        avg_edit_distance=dist_total / pair_count if pair_count else 0.0,
    )


@dataclass
class BatchPlan:
    """Batches in which every instance has a same-uid partner, plus the
    instances that had to be left out to keep that guarantee."""

    batches: list[list[Instance]]
    excluded: list[Instance]


_CHUNK_TARGET = 4


def _chunk_sizes(n: int, batch_size: int) -> tuple[list[int], int]:
    """Split n uid-mates into chunk sizes of 2..min(4, batch_size).

    Chunks of ~4 give each instance several in-batch positives, which
    substantially lowers the reachable loss. Returns (sizes, dropped).
    """
    target = min(_CHUNK_TARGET, batch_size)
    full, rem = divmod(n, target)
    sizes = [target] * full
    dropped = 0
    if rem == 1:
        if target >= 3:
            sizes[-1] = target - 1
            sizes.append(2)
        elif batch_size >= 3:
            sizes[-1] = 3
        else:
            dropped = 1
    elif rem >= 2:
        sizes.append(rem)
    return sizes, dropped


def make_batches(corpus: list[Instance], batch_size: int, rng_seed: int) -> BatchPlan:
    """Group uid-mates into small chunks and pack them into batches.

    Chunking guarantees at least one in-batch positive per instance.
    Instances whose uid occurs once (or that are the odd one out when
    the batch size cannot absorb the remainder) are excluded and
    reported. Deterministic for a given seed.
    """
    if batch_size < 2:
        raise DataError("batch_size must be >= 2")
    rng = np.random.default_rng(rng_seed)
    by_uid: dict[str, list[Instance]] = {}
    for inst in corpus:
        by_uid.setdefault(inst.uid, []).append(inst)

    chunks: list[list[Instance]] = []
    excluded: list[Instance] = []
    for uid in by_uid:
        members = by_uid[uid]
        if len(members) < 2:
            excluded.extend(members)
            continue
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        sizes, dropped = _chunk_sizes(len(shuffled), batch_size)
        for _ in range(dropped):
            excluded.append(shuffled.pop())
        start = 0
        for size in sizes:
            chunks.append(shuffled[start:start + size])
            start += size

    if not chunks:
        raise NoPositivesError("no uid occurs at least twice in the corpus")

    chunk_order = rng.permutation(len(chunks))
    batches: list[list[Instance]] = []
    current: list[Instance] = []
    for idx in chunk_order:
        chunk = chunks[idx]
        if current and len(current) + len(chunk) > batch_size:
            batches.append(current)
            current = []
        current.extend(chunk)
    if current:
        batches.append(current)
    return BatchPlan(batches=batches, excluded=excluded)


# ---------------------------------------------------------------------------
# JSON-lines interchange


def write_instances(path: str | Path, instances: list[Instance],
                    vocab: Vocabulary) -> None:
    lines = []
    for inst in instances:
        lines.append(json.dumps({
            "uid": inst.uid,
            "tokens": vocab.decode(list(inst.tokens)),
            "p_s": inst.p_s,
            "p_e": inst.p_e,
        }, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_instances(path: str | Path, vocab: Vocabulary) -> list[Instance]:
    instances: list[Instance] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            tokens = tuple(vocab.id_of(t) for t in obj["tokens"])
            instances.append(Instance(uid=obj["uid"], tokens=tokens,
                                      p_s=int(obj["p_s"]), p_e=int(obj["p_e"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError,
                InvalidSpanError) as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return instances


def write_synsets(path: str | Path, synsets: dict[str, Synset]) -> None:
    lines = [json.dumps({"uid": s.uid, "surfaces": list(s.surfaces),
                         "domain": s.domain}, ensure_ascii=False)
             for s in synsets.values()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_synsets(path: str | Path) -> dict[str, Synset]:
    store: dict[str, Synset] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            synset = Synset(uid=obj["uid"], surfaces=tuple(obj["surfaces"]),
                            domain=obj.get("domain", "general"))
        except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
        if synset.uid in store:
            raise DataError(f"{path}: line {lineno}: duplicate uid {synset.uid}")
        store[synset.uid] = synset
    return store
