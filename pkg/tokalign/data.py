"""
Corpus records, the JSON-lines corpus format, vocabularies, and the
planted-alignment synthetic generator.

Corpus files hold one JSON object per line::

    {"id": "clip-0007",
     "video_features": [[0.1, ...], ...],
     "tokens": [{"text": "add", "pos": "VERB", "word_id": 0}, ...]}

``video_features`` is an ``m x d_video_in`` matrix with ``m >= 1``. Tokens are
pre-tagged with Universal POS strings; ``word_id`` groups subword tokens into
their source word and never decreases along a sentence. ``[CLS]``/``[SEP]``
are not stored; the language encoder adds them.
"""

import json
from collections import namedtuple

import numpy as np

from tokalign.align_exception import (
    ConfigurationError,
    CorpusParseError,
    CorpusValidationError,
)
from tokalign.common import (
    ADP,
    CLS,
    DET,
    NOUN,
    SEP,
    SPECIAL_TOKENS,
    UNIVERSAL_POS,
    UNK_ID,
    VERB,
)
from tokalign.util import Rng, get_logger


Token = namedtuple("Token", ["text", "pos", "word_id"])

CLS_TOKEN = Token(CLS, None, -1)
SEP_TOKEN = Token(SEP, None, -1)


def word_surface(pieces):
    """
    Join subword pieces of one word, dropping ``##`` continuation markers.
    """
    return "".join(
        p[2:] if i and p.startswith("##") else p for i, p in enumerate(pieces)
    )


class CorpusRecord:
    """
    One video-text pair.

    :param str id: record identifier
    :param video_features: ``(m, d_video_in)`` array-like, ``m >= 1``
    :param tokens: list of `Token`
    """

    def __init__(self, id, video_features, tokens):
        self.id = id
        self.video_features = np.asarray(video_features, dtype=np.float64)
        self.tokens = [Token(*t) for t in tokens]

    def __repr__(self):
        return "CorpusRecord(id={!r}, frames={}, tokens={})".format(
            self.id, self.video_features.shape[0], len(self.tokens)
        )

    def __eq__(self, other):
        return (
            isinstance(other, CorpusRecord)
            and self.id == other.id
            and self.tokens == other.tokens
            and self.video_features.shape == other.video_features.shape
            and bool(np.all(self.video_features == other.video_features))
        )

    @property
    def text(self):
        return " ".join(t.text for t in self.tokens)

    def words(self):
        """
        Group tokens by ``word_id``.

        :return: list of ``(word_id, surface, [token indices])``
        """
        groups = []
        for idx, token in enumerate(self.tokens):
            if groups and groups[-1][0] == token.word_id:
                groups[-1][2].append(idx)
            else:
                groups.append((token.word_id, None, [idx]))
        return [
            (wid, word_surface([self.tokens[i].text for i in idxs]), idxs)
            for wid, _, idxs in groups
        ]

    def sequence(self, max_text_tokens):
        """
        Tokens as the language encoder sees them: ``[CLS]``, the first
        ``max_text_tokens - 2`` tokens, ``[SEP]``.
        """
        body = self.tokens[: max(0, max_text_tokens - 2)]
        return [CLS_TOKEN] + body + [SEP_TOKEN]

    def frames(self, max_video_tokens):
        return self.video_features[:max_video_tokens]

    @classmethod
    def from_line(cls, line, lineno=None):
        """
        Parse one corpus line.

        :raises: `.CorpusParseError` -- on schema violations
        :raises: `.CorpusValidationError` -- on a video with no frames, or a
            word whose pieces carry different tags
        """
        try:
            obj = json.loads(line)
        except ValueError as e:
            raise CorpusParseError(lineno, None, "invalid JSON ({})".format(e))
        if not isinstance(obj, dict):
            raise CorpusParseError(lineno, None, "not a JSON object")
        for field in ("id", "video_features", "tokens"):
            if field not in obj:
                raise CorpusParseError(lineno, field, "missing")
        if not isinstance(obj["id"], str):
            raise CorpusParseError(lineno, "id", "must be a string")
        feats = obj["video_features"]
        if not isinstance(feats, list):
            raise CorpusParseError(lineno, "video_features", "must be a list")
        if not feats:
            raise CorpusValidationError(
                lineno, "video_features", "video has no frames"
            )
        widths = set()
        for row in feats:
            if not isinstance(row, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool)
                for v in row
            ):
                raise CorpusParseError(
                    lineno, "video_features", "rows must be lists of numbers"
                )
            widths.add(len(row))
        if len(widths) != 1 or 0 in widths:
            raise CorpusParseError(
                lineno, "video_features", "rows must share a nonzero width"
            )
        if not isinstance(obj["tokens"], list):
            raise CorpusParseError(lineno, "tokens", "must be a list")
        tokens = []
        last_word = last_pos = None
        for token in obj["tokens"]:
            if not isinstance(token, dict):
                raise CorpusParseError(lineno, "tokens", "must be objects")
            for field, kind in (("text", str), ("pos", str), ("word_id", int)):
                if field not in token:
                    raise CorpusParseError(lineno, field, "missing")
                if not isinstance(token[field], kind) or isinstance(
                    token[field], bool
                ):
                    raise CorpusParseError(
                        lineno, field, "must be {}".format(kind.__name__)
                    )
            if token["pos"] not in UNIVERSAL_POS:
                raise CorpusParseError(
                    lineno, "pos", "unknown tag {!r}".format(token["pos"])
                )
            if token["text"] in SPECIAL_TOKENS:
                raise CorpusParseError(
                    lineno, "text", "special token {!r}".format(token["text"])
                )
            if last_word is not None and token["word_id"] < last_word:
                raise CorpusParseError(lineno, "word_id", "must not decrease")
            if token["word_id"] == last_word and token["pos"] != last_pos:
                raise CorpusValidationError(
                    lineno, "pos", "pieces of one word carry different tags"
                )
            last_word, last_pos = token["word_id"], token["pos"]
            tokens.append(Token(token["text"], token["pos"], token["word_id"]))
        return cls(obj["id"], feats, tokens)

    def to_line(self):
        obj = {
            "id": self.id,
            "video_features": self.video_features.tolist(),
            "tokens": [
                {"text": t.text, "pos": t.pos, "word_id": t.word_id}
                for t in self.tokens
            ],
        }
        return json.dumps(obj) + "\n"


def load_corpus(path):
    """
    Read a JSON-lines corpus file. Blank lines are skipped.

    :param str path: corpus file
    :return: list of `CorpusRecord`
    :raises: `.CorpusParseError` -- naming the offending line and field
    """
    records = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            records.append(CorpusRecord.from_line(line, lineno))
    get_logger(__name__).debug(
        "Loaded {} records from {}".format(len(records), path)
    )
    return records


def save_corpus(records, path):
    with open(path, "w") as f:
        for record in records:
            f.write(record.to_line())


class Vocabulary:
    """
    Token string to id table. Ids 0-3 are always ``[PAD]``, ``[CLS]``,
    ``[SEP]`` and ``[UNK]``; strings not in the table map to ``[UNK]``.
    """

    def __init__(self, words=()):
        self.words = list(SPECIAL_TOKENS)
        self._ids = {w: i for i, w in enumerate(self.words)}
        for word in words:
            self.add(word)

    @classmethod
    def from_corpus(cls, records):
        return cls(sorted({t.text for r in records for t in r.tokens}))

    def add(self, word):
        if word not in self._ids:
            self._ids[word] = len(self.words)
            self.words.append(word)
        return self._ids[word]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.words == other.words

    def id_of(self, word):
        return self._ids.get(word, UNK_ID)

    def encode(self, tokens):
        """
        Map a token sequence (`Token` objects or strings) to ids.
        """
        return [
            self.id_of(t.text if isinstance(t, Token) else t) for t in tokens
        ]


#
# Synthetic planted-alignment corpora
#

# Fixed function-word inventory used as filler between concept words.
DET_FILLERS = ("the", "a", "some", "this")
ADP_FILLERS = ("with", "in", "on", "into", "from")

_NOUNS = (
    "tomato onion garlic pepper carrot potato egg flour butter sugar salt "
    "oil pan pot bowl knife board oven lid sauce dough cheese noodle rice "
    "bread lemon herb steak fish shrimp bean corn"
).split()
_VERBS = (
    "chop slice dice stir whisk pour add mix fry boil bake grill peel "
    "crack knead roll season drain rinse grate mash blend simmer toss cut "
    "spread melt fold press squeeze serve cover"
).split()

# Concept words alternate nouns and verbs so any prefix mixes both tags.
DEFAULT_VOCAB = tuple(
    pair
    for noun, verb in zip(_NOUNS, _VERBS)
    for pair in ((noun, NOUN), (verb, VERB))
)


class SyntheticSpec:
    """
    Parameters of a planted-alignment corpus.

    Each of ``concepts`` latent unit vectors is tied to one concept word of
    ``vocab``. A record draws between ``min_concepts`` and ``max_concepts``
    distinct concepts; its caption interleaves the concept words with filler
    determiners and adpositions, and its video plants each concept vector
    (plus Gaussian noise of scale ``noise_sigma``) on its own frame, every
    other frame being pure noise.
    """

    FIELDS = (
        "num_pairs",
        "d_video_in",
        "concepts",
        "noise_sigma",
        "seed",
        "frames",
        "min_concepts",
        "max_concepts",
        "unique_sets",
    )

    def __init__(
        self,
        num_pairs=500,
        d_video_in=16,
        vocab=DEFAULT_VOCAB,
        concepts=48,
        noise_sigma=0.1,
        seed=0,
        frames=6,
        min_concepts=1,
        max_concepts=3,
        unique_sets=False,
    ):
        self.num_pairs = num_pairs
        self.d_video_in = d_video_in
        self.vocab = [tuple(v) for v in vocab]
        self.concepts = concepts
        self.noise_sigma = noise_sigma
        self.seed = seed
        self.frames = frames
        self.min_concepts = min_concepts
        self.max_concepts = max_concepts
        self.unique_sets = unique_sets

    def as_dict(self):
        out = {name: getattr(self, name) for name in self.FIELDS}
        out["vocab"] = [list(v) for v in self.vocab]
        return out

    def validate(self):
        if self.num_pairs < 0:
            raise ConfigurationError("num_pairs must be >= 0")
        if self.d_video_in < 1:
            raise ConfigurationError("d_video_in must be >= 1")
        if not 1 <= self.concepts <= len(self.vocab):
            raise ConfigurationError(
                "concepts ({}) must be in 1..{} (vocabulary size)".format(
                    self.concepts, len(self.vocab)
                )
            )
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if not 1 <= self.min_concepts <= self.max_concepts <= self.concepts:
            raise ConfigurationError(
                "need 1 <= min_concepts <= max_concepts <= concepts"
            )
        if self.frames < self.max_concepts:
            raise ConfigurationError(
                "frames ({}) cannot hold {} planted concepts".format(
                    self.frames, self.max_concepts
                )
            )
        for word, pos in self.vocab:
            if pos not in UNIVERSAL_POS:
                raise ConfigurationError(
                    "vocabulary word {!r} has unknown tag {!r}".format(
                        word, pos
                    )
                )
        return self


def concept_vectors(spec):
    """
    The latent unit vectors of ``spec``, one row per concept.
    """
    rng = Rng(spec.seed).spawn("concepts")
    vectors = rng.normal(1.0, (spec.concepts, spec.d_video_in))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def generate_synthetic(spec):
    """
    Generate ``spec.num_pairs`` records with planted alignments.

    Every record also exposes ``record.concepts`` (drawn concept indices) and
    ``record.planted`` (the frame index of each concept) for oracles.

    :raises: `.ConfigurationError` -- on an invalid spec, or when
        ``unique_sets`` cannot be satisfied
    """
    spec.validate()
    vectors = concept_vectors(spec)
    rng = Rng(spec.seed).spawn("records")
    seen = set()
    records = []
    for r in range(spec.num_pairs):
        for _ in range(1000):
            k = int(rng.integers(spec.min_concepts, spec.max_concepts + 1))
            picked = rng.choice(spec.concepts, k, replace=False)
            chosen = [int(c) for c in picked]
            if not spec.unique_sets or frozenset(chosen) not in seen:
                break
        else:
            raise ConfigurationError(
                "could not draw {} distinct concept sets".format(
                    spec.num_pairs
                )
            )
        seen.add(frozenset(chosen))
        slots = [int(s) for s in rng.choice(spec.frames, k, replace=False)]
        feats = rng.normal(spec.noise_sigma, (spec.frames, spec.d_video_in))
        for concept, slot in zip(chosen, slots):
            feats[slot] += vectors[concept]
        words = []
        for idx, concept in enumerate(chosen):
            if idx:
                adp = ADP_FILLERS[rng.integers(len(ADP_FILLERS))]
                words.append((adp, ADP))
            det = DET_FILLERS[rng.integers(len(DET_FILLERS))]
            words.append((det, DET))
            words.append(spec.vocab[concept])
        tokens = [Token(w, pos, i) for i, (w, pos) in enumerate(words)]
        record = CorpusRecord("syn-{:05d}".format(r), feats, tokens)
        record.concepts = chosen
        record.planted = slots
        records.append(record)
    return records


def split_corpus(records, held_out, rng):
    """
    Seeded split into ``(train, held_out)``.
    """
    if not 0 <= held_out <= len(records):
        raise ConfigurationError(
            "cannot hold out {} of {} records".format(held_out, len(records))
        )
    order = rng.permutation(len(records))
    held = [records[i] for i in sorted(order[:held_out])]
    train = [records[i] for i in sorted(order[held_out:])]
    return train, held


def iter_batches(records, batch_size, rng):
    """
    Yield batches of ``batch_size`` distinct records forever, reshuffling
    every epoch and dropping each epoch's remainder.
    """
    if len(records) < batch_size:
        raise ConfigurationError(
            "corpus of {} records is smaller than batch size {}".format(
                len(records), batch_size
            )
        )
    while True:
        order = rng.permutation(len(records))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            yield [records[i] for i in order[start : start + batch_size]]
