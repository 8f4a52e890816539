import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from saner.corpus import (BIO, BIOES, EntitySpan, LabeledSentence, TagScheme, Token, bio_to_bioes,
                          bioes_to_bio, corpus_stats, format_conll, is_valid, parse_conll, read_conll,
                          repair_tags, spans_to_tags, tags_to_spans, write_conll)
from saner.errors import ParseError, SchemeError

TYPES = ["PER", "LOC", "ORG"]


@st.composite
def span_sets(draw, max_len=15):
    """Non-overlapping spans over a sentence of random length."""
    n = draw(st.integers(1, max_len))
    spans, pos = [], draw(st.integers(0, 2))
    while pos < n:
        length = draw(st.integers(1, 4))
        if pos + length > n:
            break
        spans.append(EntitySpan(draw(st.sampled_from(TYPES)), pos, pos + length - 1))
        pos += length + draw(st.integers(0, 2))
    return n, spans


class TestReadConll:
    def test_two_sentences(self, tmp_path):
        path = tmp_path / "a.conll"
        path.write_text("EU B-ORG\n\nhi O\n", encoding="utf-8")
        sents = read_conll(path, 1, TagScheme(BIO))
        assert [len(s) for s in sents] == [1, 1]
        assert sents[0].tags == ("B-ORG",)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.conll"
        path.write_text("", encoding="utf-8")
        assert read_conll(path) == []

    def test_invalid_start_strict(self, tmp_path):
        path = tmp_path / "bad.conll"
        path.write_text("Chris I-PER\nsaid O\n", encoding="utf-8")
        with pytest.raises(SchemeError):
            read_conll(path, 1, TagScheme(BIO))

    def test_repair_mode_coerces_bare_inside(self, tmp_path):
        path = tmp_path / "bad.conll"
        path.write_text("Chris I-PER\nsaid O\n", encoding="utf-8")
        assert read_conll(path, 1, TagScheme(BIO), mode="repair")[0].tags == ("B-PER", "O")
        assert read_conll(path, 1, TagScheme(BIOES), mode="repair")[0].tags == ("S-PER", "O")

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(ParseError, match="line 3"):
            parse_conll("a O\nb O\nlonely\n", 1, TagScheme(BIO))

    def test_tag_column_configurable_and_whitespace_runs(self):
        sents = parse_conll("Paris\tNNP   B-LOC\nis VBZ O\n", 2, TagScheme(BIO))
        assert sents[0].words == ["Paris", "is"]
        assert sents[0].tags == ("B-LOC", "O")

    def test_round_trip(self, tmp_path):
        text = "Chris B-PER\nBrown I-PER\nsaid O\n\n@you O\n"
        sents = parse_conll(text, 1, TagScheme(BIO))
        write_conll(tmp_path / "out.conll", sents)
        assert (tmp_path / "out.conll").read_text(encoding="utf-8").rstrip() == text.rstrip()

    def test_closed_label_set(self):
        with pytest.raises(SchemeError, match="MISC"):
            parse_conll("x B-MISC\n", 1, TagScheme(BIO, ("PER",)))


class TestTypes:
    def test_token_normalized_is_lowercase_only(self):
        assert Token("ÉCOLE").normalized == "école"
        assert Token("@Chris").normalized == "@chris"

    @pytest.mark.parametrize("bad", ["", "a b", "tab\there"])
    def test_token_rejects_whitespace(self, bad):
        with pytest.raises(ValueError):
            Token(bad)

    def test_sentence_lengths_must_match(self):
        with pytest.raises(ValueError):
            LabeledSentence.from_words(["a", "b"], ["O"])

    def test_tag_set_order(self):
        assert TagScheme(BIOES, ("LOC",)).tag_set() == ["O", "B-LOC", "I-LOC", "E-LOC", "S-LOC"]

    @pytest.mark.parametrize("tags,scheme,valid", [
        (["B-PER", "I-PER", "O"], BIO, True),
        (["I-PER"], BIO, False),
        (["B-PER", "I-LOC"], BIO, False),
        (["S-PER"], BIO, False),
        (["B-PER", "E-PER"], BIOES, True),
        (["B-PER"], BIOES, False),
        (["B-PER", "O"], BIOES, False),
        (["B-PER", "E-LOC"], BIOES, False),
        (["O", "E-PER"], BIOES, False),
        (["S-PER", "S-PER"], BIOES, True),
    ])
    def test_validation(self, tags, scheme, valid):
        assert is_valid(tags, TagScheme(scheme)) is valid


class TestConversion:
    def test_singleton(self):
        assert bio_to_bioes(["B-PER"]) == ["S-PER"]

    def test_span_end(self):
        assert bio_to_bioes(["B-PER", "I-PER", "O"]) == ["B-PER", "E-PER", "O"]

    def test_outside_identity(self):
        assert bio_to_bioes(["O", "O"]) == ["O", "O"]

    def test_invalid_bio(self):
        with pytest.raises(SchemeError):
            bio_to_bioes(["O", "I-PER"])

    def test_adjacent_same_type_spans(self):
        assert bio_to_bioes(["B-PER", "B-PER", "I-PER"]) == ["S-PER", "B-PER", "E-PER"]

    def test_back_to_bio(self):
        assert bioes_to_bio(["S-PER", "B-LOC", "I-LOC", "E-LOC"]) == ["B-PER", "B-LOC", "I-LOC", "I-LOC"]


class TestSpans:
    def test_bioes_pair(self):
        assert tags_to_spans(["B-LOC", "E-LOC"], TagScheme(BIOES)) == [EntitySpan("LOC", 0, 1)]

    def test_singletons(self):
        assert tags_to_spans(["S-PER", "O", "S-PER"], TagScheme(BIOES)) == [
            EntitySpan("PER", 0, 0), EntitySpan("PER", 2, 2)]

    def test_strict_rejects_invalid(self):
        with pytest.raises(SchemeError):
            tags_to_spans(["B-LOC", "O"], TagScheme(BIOES))

    def test_lenient_follows_conlleval(self):
        assert tags_to_spans(["I-PER", "I-PER", "O"], TagScheme(BIO), strict=False) == [EntitySpan("PER", 0, 1)]

    def test_span_bounds(self):
        with pytest.raises(ValueError):
            EntitySpan("PER", 3, 2)

    @given(span_sets())
    def test_round_trip_bioes(self, case):
        n, spans = case
        tags = spans_to_tags(spans, n, TagScheme(BIOES))
        assert is_valid(tags, TagScheme(BIOES))
        assert tags_to_spans(tags, TagScheme(BIOES)) == spans

    @given(span_sets())
    def test_conversion_preserves_spans(self, case):
        n, spans = case
        bio = spans_to_tags(spans, n, TagScheme(BIO))
        assert tags_to_spans(bio_to_bioes(bio), TagScheme(BIOES)) == tags_to_spans(bio, TagScheme(BIO))

    @given(span_sets())
    def test_repair_is_identity_on_valid(self, case):
        n, spans = case
        tags = spans_to_tags(spans, n, TagScheme(BIOES))
        assert repair_tags(tags, TagScheme(BIOES)) == tags


class TestStats:
    def corpus(self, text):
        return parse_conll(text, 1, TagScheme(BIO))

    def test_counts(self):
        data = self.corpus("Chris B-PER\nBrown I-PER\nin O\nParis B-LOC\n\nhi O\n")
        stats = corpus_stats(data)
        assert (stats.n_sentences, stats.n_entities, stats.pct_unseen) == (2, 2, None)

    def test_all_seen(self):
        train = self.corpus("Paris B-LOC\n\nChris B-PER\n")
        dev = self.corpus("in O\nParis B-LOC\n\nChris B-ORG\n")
        assert corpus_stats(dev, train).pct_unseen == 0.0

    def test_all_unseen(self):
        train = self.corpus("Paris B-LOC\n")
        dev = self.corpus("xyz B-PER\n")
        assert corpus_stats(dev, train).pct_unseen == 100.0

    def test_case_sensitive_and_counts_occurrences(self):
        train = self.corpus("Paris B-LOC\n")
        dev = self.corpus("paris B-LOC\n\nparis B-LOC\n\nParis B-LOC\n")
        assert corpus_stats(dev, train).pct_unseen == pytest.approx(200 / 3)

    @given(st.lists(span_sets(8), min_size=1, max_size=6))
    def test_entities_equal_sum_of_spans(self, cases):
        sents = [LabeledSentence.from_words([f"w{i}" for i in range(n)], spans_to_tags(sp, n, TagScheme(BIOES)))
                 for n, sp in cases]
        assert corpus_stats(sents).n_entities == sum(len(sp) for _, sp in cases)

    def test_json_shape(self):
        data = self.corpus("Paris B-LOC\n")
        assert json.loads(corpus_stats(data, data).to_json()) == {"sentences": 1, "entities": 1, "pct_unseen": 0.0}


def test_format_conll_with_predictions():
    sents = parse_conll("a O\nb B-PER\n", 1, TagScheme(BIO))
    assert format_conll(sents, [["B-LOC", "O"]]) == "a B-LOC\nb O\n\n"
