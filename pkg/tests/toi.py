import math
from collections import Counter

from pytest import approx, raises

from tokalign import (
    IdfTable,
    InputError,
    Token,
    ToiWeights,
    batch_weights,
    compute_idf,
    corpus_statistics,
    select_toi,
    sentence_weights,
)
from tokalign.common import IDF_FLOOR
from tokalign.selfcheck import toy_corpus
from tokalign.util import Rng

from ._util import make_record


def _kitchen():
    return [
        make_record("0", [("stir", "VERB"), ("the", "DET"), ("soup", "NOUN")]),
        make_record("1", [("Stir", "VERB"), ("the", "DET"), ("pan", "NOUN")]),
        make_record("2", [("add", "VERB"), ("the", "DET"), ("salt", "NOUN")]),
        make_record("3", [("pour", "VERB"), ("the", "DET"), ("oil", "NOUN")]),
    ]


class _ScaledIdf:
    def __init__(self, table, factor):
        self._table = table
        self._factor = factor

    def lookup(self, word):
        return self._factor * self._table.lookup(word)


class compute_idf_:
    def matches_closed_forms(self):
        table = compute_idf(toy_corpus())
        assert abs(table.lookup("stir") - math.log(2)) <= 1e-12
        assert abs(table.lookup("the") - math.log(4 / 5)) <= 1e-12

    def unseen_words_get_log_corpus_size(self):
        assert compute_idf(toy_corpus())["saffron"] == approx(math.log(4))

    def counts_case_folded_words_once_per_caption(self):
        corpus = _kitchen()
        corpus.append(
            make_record("4", [("stir", "VERB"), ("STIR", "VERB")])
        )
        table = compute_idf(corpus)
        assert table.df("stir") == 3
        assert "STIR" in table
        assert table.corpus_size == 5

    def joins_subwords_before_counting(self):
        corpus = [
            [Token("chop", "VERB", 0), Token("##ped", "VERB", 0)],
            [Token("chopped", "VERB", 0)],
        ]
        assert compute_idf(corpus).df("chopped") == 2

    def counts_every_tag(self):
        assert compute_idf(_kitchen()).df("the") == 4

    def matches_direct_counts_on_random_corpora(self):
        rng = Rng(17)
        words = ["Stir", "stir", "PAN", "pan", "oil", "salt", "the", "add"]
        for _ in range(100):
            corpus = []
            for k in range(int(rng.integers(1, 8))):
                size = int(rng.integers(1, 6))
                picked = [str(w) for w in rng.choice(words, size)]
                corpus.append(
                    make_record(str(k), [(w, "NOUN") for w in picked])
                )
            df = Counter()
            for record in corpus:
                df.update({t.text.casefold() for t in record.tokens})
            table = compute_idf(corpus)
            assert table.corpus_size == len(corpus)
            for word in set(w.casefold() for w in words):
                assert table.df(word) == df[word]
                want = math.log(len(corpus) / (1.0 + df[word]))
                assert table.lookup(word) == approx(want, abs=1e-12)

    def empty_corpus(self):
        with raises(InputError):
            compute_idf([])


class IdfTable_:
    def needs_a_nonempty_corpus(self):
        with raises(InputError):
            IdfTable({}, 0)

    def ranked_goes_from_rare_to_common(self):
        ranked = compute_idf(_kitchen()).ranked()
        words = [w for w, _ in ranked]
        assert words[-1] == "the"
        assert words[-2] == "stir"
        # ties broken alphabetically
        assert words[:5] == ["add", "oil", "pan", "pour", "salt"]
        values = [v for _, v in ranked]
        assert values == sorted(values, reverse=True)

    def dict_round_trip(self):
        table = compute_idf(_kitchen())
        assert IdfTable.from_dict(table.as_dict()) == table
        assert table.as_dict()["idf"]["stir"] == approx(math.log(4 / 3))


class select_toi_:
    def picks_target_tags(self):
        record = _kitchen()[0]
        assert select_toi(record) == [0, 2]
        assert select_toi(record, {"DET"}) == [1]

    def never_picks_cls_or_sep(self):
        seq = _kitchen()[0].sequence(10)
        assert select_toi(seq) == [1, 3]
        assert select_toi(seq, {"DET", "NOUN", "VERB", "X"}) == [1, 2, 3]

    def agrees_with_sentence_weights_on_mixed_pieces(self):
        # pieces follow the first piece's tag in both
        mixed = [
            Token("chop", "VERB", 0),
            Token("##ped", "ADJ", 0),
            Token("fresh", "ADJ", 1),
            Token("##ly", "VERB", 1),
        ]
        table = compute_idf([mixed])
        assert select_toi(mixed) == [0, 1]
        assert sentence_weights(mixed, table).positions == select_toi(mixed)
        assert select_toi(mixed, {"ADJ"}) == [2, 3]


class sentence_weights_:
    def are_normalized_idf(self):
        corpus = _kitchen()
        table = compute_idf(corpus)
        got = sentence_weights(corpus[0], table)
        stir, soup = math.log(4 / 3), math.log(2)
        assert got.positions == [0, 2]
        total = stir + soup
        assert got.weights == approx([stir / total, soup / total])
        assert math.fsum(got.weights) == approx(1.0, abs=1e-12)

    def positions_follow_the_framed_sequence(self):
        corpus = _kitchen()
        got = sentence_weights(corpus[0].sequence(10), compute_idf(corpus))
        assert got.positions == [1, 3]

    def copy_word_weight_onto_subwords(self):
        corpus = [
            [Token("chop", "VERB", 0), Token("##ped", "VERB", 0)],
            [Token("onion", "NOUN", 0)],
            [Token("oil", "NOUN", 0)],
        ]
        got = sentence_weights(corpus[0], compute_idf(corpus))
        assert got.positions == [0, 1]
        assert got.weights == approx([0.5, 0.5])

    def clamp_common_words_at_the_floor(self):
        corpus = [
            make_record(str(k), [("pan", "NOUN"), (word, "VERB")])
            for k, word in enumerate(["stir", "add", "pour", "fry"])
        ]
        table = compute_idf(corpus)
        assert table.lookup("pan") < 0
        got = sentence_weights(corpus[0], table)
        rare = math.log(2)
        assert got.weights[0] == approx(IDF_FLOOR / (IDF_FLOOR + rare))
        assert all(w > 0 for w in got.weights)

    def ignore_a_common_idf_scale(self):
        corpus = _kitchen() + [
            make_record(str(k), [("boil", "VERB"), ("water", "NOUN")])
            for k in range(4, 8)
        ]
        table = compute_idf(corpus)
        want = sentence_weights(corpus[0], table)
        for factor in (0.5, 2.0, 10.0):
            scaled = _ScaledIdf(table, factor)
            assert all(
                scaled.lookup(t.text) > IDF_FLOOR for t in corpus[0].tokens
            )
            got = sentence_weights(corpus[0], scaled)
            assert got.positions == want.positions
            assert got.weights == approx(want.weights, abs=1e-12)

    def single_floored_word_gets_everything(self):
        corpus = [make_record(str(k), [("pan", "NOUN")]) for k in range(3)]
        got = sentence_weights(corpus[0], compute_idf(corpus))
        assert got == ToiWeights([0], [1.0])

    def empty_without_tokens_of_interest(self):
        record = make_record("r", [("the", "DET")])
        assert sentence_weights(record, compute_idf([record])) == ToiWeights(
            [], []
        )

    def batch_is_one_per_sentence(self):
        corpus = _kitchen()
        table = compute_idf(corpus)
        assert len(batch_weights(corpus, table)) == 4


class corpus_statistics_:
    def counts_tokens_and_words_of_interest(self):
        corpus = _kitchen()
        stats = corpus_statistics(corpus)
        assert stats == {
            "sentences": 4,
            "tokens": 12,
            "toi_tokens": 8,
            # "stir" and "Stir" are one word
            "toi_words": 7,
        }
