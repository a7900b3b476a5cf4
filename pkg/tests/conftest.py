import json

import pytest

from factnli.head import LogicHeadParams


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return path


def random_params(rng, d, h):
    """Head parameters with non-zero biases so every path carries gradient."""
    p = LogicHeadParams.init(d, h, seed=int(rng.integers(2**31)))
    for hp in (p.c, p.e):
        hp.b1 = rng.normal(size=h)
        hp.b2 = float(rng.normal())
        hp.blogit = float(rng.normal())
        hp.W3 = float(rng.normal(scale=2.0))
        hp.b3 = float(rng.normal())
    return p


@pytest.fixture
def tiny_records():
    return [
        {
            "id": "o1",
            "premise": "The river flooded the village. Nobody was hurt.",
            "hypothesis": "The village flooded.",
            "label": "entailment",
            "round": "R1",
            "facts": [
                {"text": "The river flooded the village.", "provenance": "list1"},
                {"text": "Nobody was hurt.", "provenance": "list1"},
                {"text": "the river flooded the village", "provenance": "list2"},
                {"text": "The flood reached the village.", "provenance": "hypcond"},
            ],
        },
        {
            "id": "o2",
            "premise": "Anna sold her bike in May.",
            "hypothesis": "Anna never owned a bike.",
            "label": "contradiction",
            "round": "R2",
            "facts": [
                {"text": "Anna sold her bike.", "provenance": "list1"},
                {"text": "The sale happened in May.", "provenance": "list2"},
            ],
        },
        {
            "id": "o3",
            "premise": "The museum opens at nine.",
            "hypothesis": "The museum is popular.",
            "label": "neutral",
            "facts": [{"text": "The museum opens at nine.", "provenance": "list2"}],
        },
    ]


@pytest.fixture
def tiny_path(tmp_path, tiny_records):
    return write_jsonl(tmp_path / "tiny.jsonl", tiny_records)
