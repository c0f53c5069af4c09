import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reprrec.corpus import (CorpusError, EntityToken, ItemMetadata, Namespace, RatingRecord,
                            TagRecord, Vocabulary, actor, build_sentences, build_vocabulary,
                            director, movie, parse_metadata, parse_ratings, parse_tags,
                            read_sentences, tag, user, write_sentences)

raw_text = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")), min_size=1, max_size=12)
namespaces = st.sampled_from(list(Namespace))
tokens = st.builds(EntityToken, namespaces, raw_text)


class TestEntityToken:
    def test_canonical_form(self):
        assert str(movie("122")) == "m:122"
        assert str(actor("Tom Hanks")) == "a:Tom Hanks"

    def test_tag_and_actor_with_same_text_differ(self):
        assert tag("tom hanks") != actor("tom hanks")
        assert len({tag("x"), actor("x"), tag("x")}) == 2

    @given(tokens)
    def test_round_trip(self, tok):
        assert EntityToken.parse(str(tok)) == tok

    def test_missing_prefix(self):
        with pytest.raises(ValueError):
            EntityToken.parse("122")


class TestParseRatings:
    def test_single_line(self):
        assert parse_ratings("1,122,5.0,83891") == [RatingRecord(user("1"), movie("122"), 5.0, 83891)]

    def test_empty(self):
        assert parse_ratings("") == []

    def test_out_of_scale_names_line(self):
        with pytest.raises(CorpusError, match="line 1"):
            parse_ratings("1,122,9.0", (0.5, 5.0))

    def test_header_and_bytes(self):
        recs = parse_ratings(b"userId,movieId,rating,timestamp\n1,2,3.5,10\n4,5,1.0\n")
        assert [(r.user.raw, r.movie.raw, r.rating, r.timestamp) for r in recs] == [
            ("1", "2", 3.5, 10), ("4", "5", 1.0, None)]

    def test_malformed_line_number(self):
        with pytest.raises(CorpusError, match="line 2"):
            parse_ratings("1,2,3.0\nbad\n")
        with pytest.raises(CorpusError, match="line 1"):
            parse_ratings("1,2,abc")


class TestParseTags:
    def test_normalized(self):
        assert parse_tags("1,122,Funny ") == [TagRecord(user("1"), movie("122"), tag("funny"))]

    def test_empty_tag(self):
        with pytest.raises(CorpusError, match="line 1"):
            parse_tags("1,122,")

    def test_duplicates_kept(self):
        assert len(parse_tags("1,122,funny\n1,122,funny\n")) == 2

    def test_timestamp_column(self):
        (rec,) = parse_tags(io.StringIO("7,8,Dark Comedy,1234\n"))
        assert rec.tag == tag("dark comedy")


class TestParseMetadata:
    def test_full_line(self):
        assert parse_metadata("122\tJ. Doe\tA. One|B. Two") == [
            ItemMetadata(movie("122"), director("J. Doe"), (actor("A. One"), actor("B. Two")))]

    def test_empty_fields(self):
        assert parse_metadata("122\t\t") == [ItemMetadata(movie("122"), None, ())]

    def test_duplicate_movie(self):
        with pytest.raises(CorpusError, match="line 2"):
            parse_metadata("122\ta\tb\n122\tc\td\n")

    def test_actor_duplicates_removed_in_order(self):
        (m,) = parse_metadata("1\td\tB|A|B")
        assert m.actors == (actor("B"), actor("A"))


class TestBuildSentences:
    def test_assembly_order(self):
        s = build_sentences([RatingRecord(user(1), movie(122), 4.0)],
                            [TagRecord(user(1), movie(122), tag("funny"))],
                            [ItemMetadata(movie(122), director("doe"), (actor("one"), actor("two"), actor("three")))],
                            max_actors=2)
        assert s == [[user(1), movie(122), tag("funny"), director("doe"), actor("one"), actor("two")]]

    def test_missing_context(self):
        assert build_sentences([RatingRecord(user(1), movie(9), 3.0)]) == [[user(1), movie(9)]]

    def test_tags_are_per_pair(self):
        s = build_sentences([RatingRecord(user(2), movie(122), 3.0)],
                            [TagRecord(user(1), movie(122), tag("funny"))])
        assert not any(t.namespace is Namespace.TAG for t in s[0])

    def test_tags_sorted_and_deduplicated(self):
        tags = [TagRecord(user(1), movie(1), tag(t)) for t in ("b", "a", "b")]
        assert build_sentences([RatingRecord(user(1), movie(1), 3.0)], tags)[0] == [
            user(1), movie(1), tag("a"), tag("b")]

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=30))
    def test_one_sentence_per_rating(self, pairs):
        ratings = [RatingRecord(user(u), movie(m), 3.0) for u, m in pairs]
        sentences = build_sentences(ratings)
        assert len(sentences) == len(ratings)
        for s, r in zip(sentences, ratings):
            assert s[0] == r.user and s[1] == r.movie
            assert all(EntityToken.parse(str(t)) == t for t in s)


class TestVocabulary:
    def test_two_tokens(self):
        v = build_vocabulary([[user(1), movie(2)]])
        assert len(v) == 2 and user(1) in v and movie(2) in v

    def test_min_count(self):
        v = build_vocabulary([[user(1), movie(2)], [user(1), movie(3)]], min_count=2)
        assert v.tokens == [user(1)]

    def test_tie_break(self):
        sentences = [[movie(5), user(1), tag("x")], [movie(5), user(1)], [movie(5), user(1)]]
        v = build_vocabulary(sentences)
        assert (v.index[movie(5)], v.index[user(1)], v.index[tag("x")]) == (0, 1, 2)

    def test_hand_counted_fixture(self):
        ratings = parse_ratings("1,10,4\n1,11,3\n2,10,5\n")
        meta = parse_metadata("10\tD\tA|B\n")
        v = build_vocabulary(build_sentences(ratings, [], meta))
        expected = {"m:10": 2, "u:1": 2, "a:A": 2, "a:B": 2, "d:D": 2, "m:11": 1, "u:2": 1}
        assert {str(t): c for t, c in zip(v.tokens, v.counts)} == expected
        assert [str(t) for t in v.tokens] == ["a:A", "a:B", "d:D", "m:10", "u:1", "m:11", "u:2"]

    def test_empty_after_filter(self):
        with pytest.raises(CorpusError):
            build_vocabulary([[user(1), movie(2)]], min_count=5)

    @given(st.lists(st.lists(tokens, min_size=2, max_size=6), min_size=1, max_size=10), st.integers(1, 3))
    def test_properties(self, sentences, min_count):
        counts = {}
        for s in sentences:
            for t in s:
                counts[t] = counts.get(t, 0) + 1
        if max(counts.values()) < min_count:
            return
        v = build_vocabulary(sentences, min_count)
        assert sorted(v.index.values()) == list(range(len(v)))
        assert all(c >= min_count for c in v.counts)
        assert build_vocabulary(list(reversed(sentences)), min_count) == v
        for s in sentences:
            kept = [t for t in s if t in v]
            assert [v.tokens[i] for i in v.encode(s)] == kept

    def test_write_read(self):
        v = build_vocabulary([[user(1), movie(2), actor("A B")], [user(1)]])
        buf = io.StringIO()
        v.write(buf)
        assert Vocabulary.read(buf.getvalue()) == v


@given(st.lists(st.lists(tokens.filter(lambda t: " " not in t.raw), min_size=2, max_size=5), max_size=5))
def test_sentence_file_round_trip(sentences):
    buf = io.StringIO()
    write_sentences(sentences, buf)
    assert read_sentences(buf.getvalue()) == sentences


def test_sentence_file_names_with_spaces():
    s = [[user(1), movie(2), director("J. Doe"), actor("Tom Hanks")]]
    buf = io.StringIO()
    write_sentences(s, buf)
    assert buf.getvalue() == "u:1 m:2 d:J. Doe a:Tom Hanks\n"
    assert read_sentences(buf.getvalue()) == s
