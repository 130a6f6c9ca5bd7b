import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skim.corpus import (
    EOS, CorpusError, CorpusStore, NoDocumentsError, detokenize, fetch_chunk, ingest,
    short_chunks, shuffled_short_chunks, tokenize,
)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return path


def test_tokenize_examples():
    assert tokenize("") == []
    assert tokenize("AB") == [65, 66]
    assert tokenize("é") == [195, 169]


@given(st.text())
def test_roundtrip(text):
    assert detokenize(tokenize(text)) == text


def test_detokenize_drops_specials():
    assert detokenize([104, 256, 105, 258, 259]) == "hi"


def test_ingest_filter_boundary(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [json.dumps({"text": "a" * n}) for n in (3999, 4000, 12000)])
    store = ingest(p, 4000)
    assert len(store) == 2
    assert [len(d) for d in store.documents] == [4000, 12000]
    assert store.dropped == 1
    assert [d.id for d in store.documents] == [0, 1]


def test_ingest_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    with pytest.raises(NoDocumentsError, match="no documents passed filter"):
        ingest(p, 4000)


def test_ingest_counts(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [json.dumps({"text": "q" * 5000})] * 100)
    store = ingest(p, 4000)
    assert len(store) == 100
    assert store.total_tokens == 500000


def test_ingest_malformed_line_number(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [json.dumps({"text": "a" * 10}), "{not json", json.dumps({"text": "b"})])
    with pytest.raises(CorpusError, match=r":2:"):
        ingest(p, 1)


def test_ingest_missing_text_field(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [json.dumps({"body": "a"})])
    with pytest.raises(CorpusError, match=r":1:"):
        ingest(p, 1)


def test_source_offsets(tmp_path):
    lines = [json.dumps({"text": "abc"}), json.dumps({"text": "defg"})]
    p = write_lines(tmp_path / "c.jsonl", lines)
    store = ingest(p, 1)
    raw = p.read_bytes()
    for doc in store.documents:
        rec = json.loads(raw[doc.source_offset:].split(b"\n", 1)[0])
        assert tokenize(rec["text"]) == doc.tokens.tolist()


def test_fetch_chunk_examples():
    store = CorpusStore.from_texts(["a" * 1000, "b" * 600])
    c = fetch_chunk(store, 0, 0, 512)
    assert len(c) == 512 and not c.partial
    c = fetch_chunk(store, 1, 512, 512)
    assert len(c) == 88 and c.partial
    with pytest.raises(IndexError):
        fetch_chunk(store, 0, 1000, 512)
    with pytest.raises(IndexError):
        fetch_chunk(store, 2, 0, 512)


def test_fetch_chunk_deterministic(tiny_store):
    a = fetch_chunk(tiny_store, 1, 17, 100)
    b = fetch_chunk(tiny_store, 1, 17, 100)
    assert np.array_equal(a.tokens, b.tokens)


def test_short_chunk_counts():
    store = CorpusStore.from_texts(["a" * 1023])
    assert len(list(shuffled_short_chunks(store, 512, 0))) == 2
    store = CorpusStore.from_texts(["a" * 512, "b" * 512, "c" * 512])
    chunks = list(shuffled_short_chunks(store, 512, 3))
    assert len(chunks) == 3
    # concatenated length 1539; the three trailing tokens form no chunk
    ordered = short_chunks(store, 512)
    assert ordered[1].tokens[0] == EOS


def test_shuffle_is_seeded_permutation(tiny_store):
    a = [c.tokens.tobytes() for c in shuffled_short_chunks(tiny_store, 64, 7)]
    b = [c.tokens.tobytes() for c in shuffled_short_chunks(tiny_store, 64, 7)]
    base = [c.tokens.tobytes() for c in short_chunks(tiny_store, 64)]
    assert a == b
    assert sorted(a) == sorted(base)
    c = [c.tokens.tobytes() for c in shuffled_short_chunks(tiny_store, 64, 8)]
    assert c != a


def test_store_order_seeded(tiny_store):
    assert np.array_equal(tiny_store.order(5), tiny_store.order(5))
    assert sorted(tiny_store.order(5).tolist()) == [0, 1, 2]
