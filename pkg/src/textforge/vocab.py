"""Vocabulary with fixed special entries and deterministic ordering."""

from .errors import EmptyCorpus


class Vocabulary:
    """Maps strings to dense ids.

    Entry 0 is always the padding token and entry 1 the unknown token.
    Remaining entries are ordered by descending frequency with ties broken
    lexicographically, so the same corpus always yields the same table.
    """

    PAD = "<pad>"
    UNK = "<unk>"
    PAD_ID = 0
    UNK_ID = 1

    def __init__(self, entries):
        entries = list(entries)
        if entries[:2] != [self.PAD, self.UNK]:
            entries = [self.PAD, self.UNK] + entries
        self.entries = entries
        self.index = {tok: i for i, tok in enumerate(entries)}
        if len(self.index) != len(self.entries):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, counts: dict, min_freq: int = 1) -> "Vocabulary":
        """Build from a token -> frequency mapping, dropping rare tokens."""
        if not counts:
            raise EmptyCorpus("no tokens to build a vocabulary from")
        kept = [(tok, n) for tok, n in counts.items() if n >= min_freq]
        kept.sort(key=lambda item: (-item[1], item[0]))
        return cls([tok for tok, _ in kept])

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.UNK_ID)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.entries == other.entries

    def __repr__(self):
        return "Vocabulary(%d entries)" % len(self.entries)
