"""Closed vocabulary with fixed reserved ids and a whitespace tokenizer."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DataError

PAD, UNK, MARK_OPEN, MARK_CLOSE = 0, 1, 2, 3

PAD_TOKEN = "⟨pad⟩"
UNK_TOKEN = "⟨unk⟩"
MARK_OPEN_TOKEN = "⟨e⟩"
MARK_CLOSE_TOKEN = "⟨/e⟩"

RESERVED = {
    PAD_TOKEN: PAD,
    UNK_TOKEN: UNK,
    MARK_OPEN_TOKEN: MARK_OPEN,
    MARK_CLOSE_TOKEN: MARK_CLOSE,
}


class Vocabulary:
    """token -> id map; ids 0-3 are reserved and stable across save/load."""

    def __init__(self) -> None:
        self._token_to_id: dict[str, int] = dict(RESERVED)
        self._id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN,
                                        MARK_OPEN_TOKEN, MARK_CLOSE_TOKEN]

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        """Resolve a token, falling back to UNK."""
        return self._token_to_id.get(token, UNK)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._id_to_token):
            raise DataError(f"token id {token_id} outside vocabulary of size {len(self)}")
        return self._id_to_token[token_id]

    def add(self, token: str) -> int:
        """Register a token (idempotent) and return its id."""
        existing = self._token_to_id.get(token)
        if existing is not None:
            return existing
        new_id = len(self._id_to_token)
        self._token_to_id[token] = new_id
        self._id_to_token.append(token)
        return new_id

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    def save(self, path: str | Path) -> None:
        payload = {tok: i for i, tok in enumerate(self._id_to_token)}
        Path(path).write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read vocabulary {path}: {exc}") from exc
        for token, want in RESERVED.items():
            if payload.get(token) != want:
                raise DataError(f"vocabulary {path} lost reserved token {token!r}")
        vocab = cls()
        for token, token_id in sorted(payload.items(), key=lambda kv: kv[1]):
            if token_id < len(RESERVED):
                continue
            assigned = vocab.add(token)
            if assigned != token_id:
                raise DataError(
                    f"vocabulary {path} has non-contiguous ids near {token!r}")
        return vocab


def tokenize(text: str, vocab: Vocabulary, grow: bool = False) -> list[int]:
    """Whitespace-split, lowercase, UNK for unknown tokens.

    Raw text can never produce a reserved id: a literal marker or pad
    string in input text maps to UNK.
    """
    ids: list[int] = []
    for word in text.lower().split():
        if word in RESERVED:
            ids.append(UNK)
        elif grow:
            ids.append(vocab.add(word))
        else:
            ids.append(vocab.id_of(word))
    return ids
