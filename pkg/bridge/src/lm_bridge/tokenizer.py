"""Word-level tokenizer over a plain vocabulary file.

The file format matches the engine's vocabulary files: one token per
line (line order = id) with header lines ``#eos=<id>``, ``#unk=<id>``
and optionally ``#pad=<id>``. Tokenization is whitespace splitting;
unknown words map to the unk id; detokenization joins with spaces.
"""
from __future__ import annotations

from collections.abc import Iterable, Sequence


class WordTokenizer:
    def __init__(self, tokens: Sequence[str], eos_id: int, unk_id: int, pad_id: int | None = None):
        self.tokens = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.eos_id = eos_id
        self.unk_id = unk_id
        self.pad_id = eos_id if pad_id is None else pad_id
        for name, value in (("eos", eos_id), ("unk", unk_id), ("pad", self.pad_id)):
            if not 0 <= value < len(self.tokens):
                raise ValueError(f"{name} id {value} outside vocabulary of size {len(self.tokens)}")
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(
        cls,
        words: Iterable[str],
        eos_token: str = "<eos>",
        unk_token: str = "<unk>",
        pad_token: str = "<pad>",
    ) -> "WordTokenizer":
        tokens = list(dict.fromkeys(words))
        for special in (eos_token, unk_token, pad_token):
            if special not in tokens:
                tokens.append(special)
        return cls(tokens, tokens.index(eos_token), tokens.index(unk_token), tokens.index(pad_token))

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self._index.get(w, self.unk_id) for w in text.split()]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#eos={self.eos_id}\n#unk={self.unk_id}\n#pad={self.pad_id}\n")
            for token in self.tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path: str) -> "WordTokenizer":
        specials: dict[str, int] = {}
        tokens: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.rstrip("\n")
                if line.startswith("#"):
                    key, _, value = line[1:].partition("=")
                    specials[key.strip()] = int(value)
                else:
                    tokens.append(line)
        return cls(tokens, specials["eos"], specials["unk"], specials.get("pad"))
