import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from factnli.data import (
    DatasetError,
    Fact,
    FactBundle,
    NliLabel,
    Provenance,
    Strategy,
    StrategyNotAllowed,
    UnknownLabel,
    combine_bundles,
    dump_dataset,
    load_dataset,
    normalize_fact_text,
    select_facts,
)

from conftest import write_jsonl


def bundle(*texts, prov=Provenance.LIST1):
    return FactBundle(tuple(Fact(t, prov) for t in texts))


def test_label_parsing():
    assert NliLabel.parse("Entailment") is NliLabel.ENTAILMENT
    with pytest.raises(UnknownLabel):
        NliLabel.parse("maybe")


def test_fact_invariants():
    with pytest.raises(DatasetError):
        Fact("   ")
    assert Fact("x", Provenance.HYPCOND).eval_only


def test_load_train_drops_hypcond(tiny_path):
    train = load_dataset(tiny_path, "train")
    evald = load_dataset(tiny_path, "eval")
    assert len(train[0].facts) == 3
    assert len(evald[0].facts) == 4
    assert evald[0].facts[-1].eval_only
    assert not any(f.eval_only for o in train for f in o.facts)


def test_load_passthrough(tmp_path):
    rec = {"id": "a", "premise": "p", "hypothesis": "h", "label": "neutral",
           "facts": [{"text": t, "provenance": "list2"} for t in "ABC"]}
    obs = load_dataset(write_jsonl(tmp_path / "d.jsonl", [rec]), "train")
    assert [f.text for f in obs[0].facts] == ["A", "B", "C"]


def test_load_list1_and_hypcond_for_train(tmp_path):
    rec = {"id": "a", "premise": "p", "hypothesis": "h", "label": "neutral",
           "facts": [{"text": "A", "provenance": "list1"}, {"text": "B", "provenance": "list1"},
                     {"text": "H", "provenance": "hypcond"}]}
    obs = load_dataset(write_jsonl(tmp_path / "d.jsonl", [rec]), "train")
    assert [f.text for f in obs[0].facts] == ["A", "B"]


def test_load_errors(tmp_path, tiny_records):
    bad = dict(tiny_records[0], label="maybe")
    with pytest.raises(UnknownLabel, match=r"d.jsonl:1"):
        load_dataset(write_jsonl(tmp_path / "d.jsonl", [bad]))

    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(tiny_records[0]) + "\n{not json\n")
    with pytest.raises(DatasetError, match=r"m.jsonl:2"):
        load_dataset(path)

    with pytest.raises(DatasetError, match="duplicate id"):
        load_dataset(write_jsonl(tmp_path / "dup.jsonl", [tiny_records[0], tiny_records[0]]))

    empty = dict(tiny_records[2], facts=[])
    with pytest.raises(DatasetError, match="empty fact list"):
        load_dataset(write_jsonl(tmp_path / "e.jsonl", [empty]))

    only_hyp = dict(tiny_records[2], facts=[{"text": "H", "provenance": "hypcond"}])
    p = write_jsonl(tmp_path / "h.jsonl", [only_hyp])
    assert len(load_dataset(p, "eval")) == 1
    with pytest.raises(DatasetError):
        load_dataset(p, "train")


def test_unknown_keys_warn(tmp_path, tiny_records, caplog):
    rec = dict(tiny_records[2], extra_field=1)
    load_dataset(write_jsonl(tmp_path / "d.jsonl", [rec]))
    assert "extra_field" in caplog.text


def test_round_trip(tmp_path, tiny_path):
    first = load_dataset(tiny_path)
    dump_dataset(first, tmp_path / "out.jsonl")
    assert load_dataset(tmp_path / "out.jsonl") == first


def test_normalization():
    assert normalize_fact_text("  The  cat sat.  ") == normalize_fact_text("the cat sat")


def test_factcomb_union():
    out = combine_bundles(bundle("A", "B"), [bundle("B", "C", prov=Provenance.LIST2)], Strategy.FACT_COMB)
    assert out.texts == ["A", "B", "C"]
    assert out.dedup_applied


def test_factext_merge():
    out = combine_bundles(bundle("A"), [bundle("A", "D", prov=Provenance.EXTENSION)], Strategy.FACT_EXT)
    assert out.texts == ["A", "D"]


def test_hypcond_attach():
    out = combine_bundles(bundle("A"), [bundle("H", prov=Provenance.HYPCOND)], Strategy.HYPCOND_ATTACH)
    assert out.texts == ["A", "H"]
    assert [f.eval_only for f in out] == [False, True]


def test_empty_extras_keep_primary():
    for s in Strategy:
        assert combine_bundles(bundle("A", "B"), [], s).texts == ["A", "B"]


def test_group_order():
    mixed = FactBundle((Fact("H", Provenance.HYPCOND), Fact("X", Provenance.EXTENSION), Fact("two", Provenance.LIST2)))
    out = combine_bundles(bundle("one"), [mixed], Strategy.FACT_COMB)
    assert out.texts == ["one", "two", "X", "H"]


def test_select_facts(tiny_path):
    obs = load_dataset(tiny_path)[0]
    assert select_facts(obs, "list1").bundle.texts == ["The river flooded the village.", "Nobody was hurt."]
    assert len(select_facts(obs, "factcomb").facts) == 2  # list2 fact is a near-duplicate
    assert select_facts(obs, "hypcond").facts[-1].eval_only
    with pytest.raises(StrategyNotAllowed):
        select_facts(obs, "hypcond", "train")


_texts = st.lists(st.sampled_from(["a", "A.", "b", "c d", "C  d", "e"]), max_size=6)
_prov = st.sampled_from(list(Provenance))


@given(st.lists(st.tuples(_texts, _prov), max_size=3), _texts, st.sampled_from(list(Strategy)))
def test_combine_idempotent(extras, primary, strategy):
    prim = bundle(*primary)
    ex = [bundle(*t, prov=p) for t, p in extras]
    once = combine_bundles(prim, ex, strategy)
    assert combine_bundles(prim, ex, strategy) == once
    assert combine_bundles(once, ex, strategy) == once
    keys = [normalize_fact_text(f.text) for f in once]
    assert len(keys) == len(set(keys))
    ranks = [f.provenance.rank for f in once]
    assert ranks == sorted(ranks)
