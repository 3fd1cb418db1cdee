"""Material ingestion, chunking, and keyword retrieval."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnflow.content import MAX_CHUNK_WORDS, ContentStore, chunk_body, tokenize
from learnflow.errors import EmptyBody


def paragraph(n_words: int, prefix: str) -> str:
    return " ".join(f"{prefix}{i}" for i in range(n_words))


def test_three_paragraph_article_maps_to_three_chunks():
    # Manual word counts: 180 / 150 / 120, all under the 200-word cap.
    body = "\n\n".join(
        [paragraph(180, "alpha"), paragraph(150, "beta"), paragraph(120, "gamma")]
    )
    store = ContentStore()
    material_id = store.ingest("Ecology article", body)
    material = store.get(material_id)
    assert [len(c.text.split()) for c in material.chunks] == [180, 150, 120]
    assert material.chunks[0].text.startswith("alpha0")
    assert material.chunks[2].text.startswith("gamma0")


def test_single_word_material():
    store = ContentStore()
    material = store.get(store.ingest("Tiny", "ecology"))
    assert len(material.chunks) == 1
    assert material.chunks[0].text == "ecology"


def test_empty_body_rejected():
    store = ContentStore()
    with pytest.raises(EmptyBody):
        store.ingest("Nothing", "   \n  ")


def test_long_paragraph_splits_at_sentences_then_hard():
    sentences = " ".join(f"Sentence {i} has exactly five words." for i in range(80))
    chunks = chunk_body(sentences)
    assert all(len(c.split()) <= MAX_CHUNK_WORDS for c in chunks)
    giant = "word " * 450
    chunks = chunk_body(giant)
    assert [len(c.split()) for c in chunks] == [200, 200, 50]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.lists(st.sampled_from("eco bio food water density growth".split()), min_size=1, max_size=300),
        min_size=1,
        max_size=4,
    )
)
def test_chunking_preserves_word_sequence(paragraphs):
    body = "\n\n".join(" ".join(words) for words in paragraphs)
    rebuilt = " ".join(chunk_body(body)).split()
    assert rebuilt == body.split()


def test_retrieval_exact_match_ranks_first():
    store = ContentStore()
    store.ingest("Density", "population density depends on food competition")
    store.ingest("Weather", "temperature changes are density independent effects")
    store.ingest("Rain", "rainfall patterns vary by season")
    results = store.retrieve("population density", k=5)
    top = results[0]
    assert top[0] == "density"
    assert top[2] == 1.0
    assert all(0 < score <= 1 for _, _, score in results)


def test_retrieve_k_zero_and_empty_corpus():
    store = ContentStore()
    assert store.retrieve("anything", 0) == []
    assert store.retrieve("anything", 5) == []
    store.ingest("One", "just one chunk")
    assert store.retrieve("unrelated query terms", 5) == []


def brute_force_retrieve(materials: dict[str, list[str]], query: str, k: int):
    """Straight re-statement of the scoring rule, scanning every chunk."""
    q = tokenize(query)
    if not q or k <= 0:
        return []
    scored = []
    for material_id in materials:
        for index, text in enumerate(materials[material_id]):
            overlap = len(q & tokenize(text))
            if overlap > 0:
                scored.append((material_id, index, overlap / len(q)))
    scored.sort(key=lambda item: (-item[2], item[0], item[1]))
    return scored[:k]


def test_retrieval_agrees_with_brute_force_on_100_random_cases():
    vocabulary = (
        "ecology population density food competition temperature rainfall season "
        "growth policy energy climate habitat model survey data field study"
    ).split()
    rng = random.Random(17)
    for case in range(100):
        store = ContentStore()
        corpus: dict[str, list[str]] = {}
        for m in range(rng.randint(1, 4)):
            paragraphs = [
                " ".join(rng.choice(vocabulary) for _ in range(rng.randint(3, 30)))
                for _ in range(rng.randint(1, 3))
            ]
            body = "\n\n".join(paragraphs)
            material_id = store.ingest(f"material {case} {m}", body)
            corpus[material_id] = [c.text for c in store.get(material_id).chunks]
        query = " ".join(rng.choice(vocabulary) for _ in range(rng.randint(1, 4)))
        k = rng.randint(0, 6)
        assert store.retrieve(query, k) == brute_force_retrieve(corpus, query, k)


def test_retrieve_is_pure():
    store = ContentStore()
    store.ingest("Density", "population density depends on food competition")
    store.ingest("Weather", "temperature changes are density independent effects")
    first = store.retrieve("density food", 3)
    assert store.retrieve("density food", 3) == first
    assert store.retrieve("density food", 3) == first


def test_load_directory_uses_filename_stems(tmp_path):
    (tmp_path / "biology-course-notes.md").write_text("food competition regulates density")
    (tmp_path / "ignored.pdf").write_text("binary-ish")
    store = ContentStore()
    assert store.load_directory(tmp_path) == ["biology-course-notes"]
    assert store.retrieve("food competition", 1)[0][0] == "biology-course-notes"
