"""
Token-of-interest selection and idf weighting for the token-level loss.

A token of interest is any token whose POS tag is in the configured target
set (nouns and verbs by default). Each selected word is weighted by its
inverse document frequency over the caption corpus::

    idf(w) = log(|D| / (1 + df(w)))

with ``df`` counting captions containing the case-folded word at least once.
Weights are clamped at `.IDF_FLOOR`, copied onto every subword token of the
word, and normalized to sum to 1 per sentence.
"""

import math
from collections import namedtuple

from tokalign.align_exception import InputError
from tokalign.common import DEFAULT_TARGET_POS, IDF_FLOOR
from tokalign.data import CorpusRecord, Token, word_surface
from tokalign.util import clamp_value, get_logger


ToiWeights = namedtuple("ToiWeights", ["positions", "weights"])
ToiWeights.__doc__ = """
Token positions of interest within one sentence and their normalized weights.
"""


def _tokens(sentence):
    if isinstance(sentence, CorpusRecord):
        return sentence.tokens
    return [Token(*t) for t in sentence]


def _word_groups(tokens):
    # [(surface, [indices])] for maximal runs sharing a word_id; special
    # tokens (pos None) are skipped.
    groups = []
    last = None
    for idx, token in enumerate(tokens):
        if token.pos is None:
            last = None
            continue
        if last is not None and token.word_id == last:
            groups[-1][1].append(idx)
        else:
            groups.append([None, [idx]])
        last = token.word_id
    return [
        (word_surface([tokens[i].text for i in idxs]).casefold(), idxs)
        for _, idxs in groups
    ]


def _toi_words(tokens, target_pos):
    # A word is of interest when its first piece's tag is a target; all of
    # its pieces are then selected together.
    return [
        (word, idxs)
        for word, idxs in _word_groups(tokens)
        if tokens[idxs[0]].pos in target_pos
    ]


class IdfTable:
    """
    Document frequencies over a caption corpus, with idf lookups.

    Immutable once built.

    :param dict df: case-folded word -> number of captions containing it
    :param int corpus_size: number of captions ``|D|``
    """

    def __init__(self, df, corpus_size):
        if corpus_size < 1:
            raise InputError("idf table needs a nonempty corpus")
        self._df = dict(df)
        self._size = corpus_size

    @property
    def corpus_size(self):
        return self._size

    def __len__(self):
        return len(self._df)

    def __contains__(self, word):
        return word.casefold() in self._df

    def __eq__(self, other):
        return (
            isinstance(other, IdfTable)
            and self._size == other._size
            and self._df == other._df
        )

    def df(self, word):
        return self._df.get(word.casefold(), 0)

    def lookup(self, word):
        """
        idf of ``word``; words never seen get ``df = 0``, i.e. ``log |D|``.
        """
        return math.log(self._size / (1.0 + self.df(word)))

    def __getitem__(self, word):
        return self.lookup(word)

    def ranked(self):
        """
        ``(word, idf)`` pairs from rarest to most frequent, ties by word.
        """
        return sorted(
            ((w, self.lookup(w)) for w in self._df),
            key=lambda p: (-p[1], p[0]),
        )

    def as_dict(self):
        return {
            "corpus_size": self._size,
            "idf": {w: self.lookup(w) for w in sorted(self._df)},
            "df": {w: self._df[w] for w in sorted(self._df)},
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["df"], obj["corpus_size"])


def compute_idf(corpus):
    """
    Build an `IdfTable` from a list of captions (`.CorpusRecord` objects or
    token lists). Every word counts, whatever its tag.

    :raises: `.InputError` -- on an empty corpus
    """
    if not corpus:
        raise InputError("cannot compute idf over an empty corpus")
    df = {}
    for sentence in corpus:
        for word in {w for w, _ in _word_groups(_tokens(sentence))}:
            df[word] = df.get(word, 0) + 1
    table = IdfTable(df, len(corpus))
    get_logger(__name__).debug(
        "idf over {} captions, {} distinct words".format(len(corpus), len(df))
    )
    return table


def select_toi(sentence, target_pos=DEFAULT_TARGET_POS):
    """
    Indices of tokens tagged with one of ``target_pos``. ``[CLS]`` and
    ``[SEP]`` carry no tag and are never selected. Subword pieces follow
    the tag of their word's first piece, the same rule `sentence_weights`
    applies.
    """
    return sorted(
        idx
        for _, idxs in _toi_words(_tokens(sentence), target_pos)
        for idx in idxs
    )


def sentence_weights(sentence, idf, target_pos=DEFAULT_TARGET_POS):
    """
    Normalized idf weights over the tokens of interest of ``sentence``.

    Positions index into ``sentence`` as given, so pass the encoder's framed
    sequence (see `.CorpusRecord.sequence`) to get positions into the text
    encoder output.

    :return: `ToiWeights`; empty when nothing is selected
    """
    tokens = _tokens(sentence)
    positions, raw = [], []
    for word, idxs in _toi_words(tokens, target_pos):
        value = clamp_value(IDF_FLOOR, idf.lookup(word), math.inf)
        for idx in idxs:
            positions.append(idx)
            raw.append(value)
    total = math.fsum(raw)
    return ToiWeights(positions, [v / total for v in raw])


def batch_weights(sequences, idf, target_pos=DEFAULT_TARGET_POS):
    return [sentence_weights(seq, idf, target_pos) for seq in sequences]


def corpus_statistics(corpus, target_pos=DEFAULT_TARGET_POS):
    """
    Token counts of a caption corpus: captions, tokens, tokens of interest
    and distinct words of interest.
    """
    tokens = toi = 0
    words = set()
    for sentence in corpus:
        toks = _tokens(sentence)
        tokens += len(toks)
        toi += len(select_toi(toks, target_pos))
        words.update(word for word, _ in _toi_words(toks, target_pos))
    return {
        "sentences": len(corpus),
        "tokens": tokens,
        "toi_tokens": toi,
        "toi_words": len(words),
    }
