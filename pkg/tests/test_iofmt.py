import json

import pytest
from hypothesis import given, settings, strategies as st

from cvinenma.iofmt import (InputError, StudyFile, atomic_write_text, dumps_studies, load_studies,
                            parse_flat_csv, parse_studies)
from cvinenma.model import StudyRecord

GOOD = {"format": "cvinenma-studies", "version": 1, "K": 2, "studies": [
    {"id": "a", "design": "gold_one_test", "tests": [1], "n_diseased": 20, "n_nondiseased": 30,
     "counts": {"1": {"tp": 16, "fn": 4, "fp": 3, "tn": 27}}},
    {"id": "b", "design": "no_gold_pair", "tests": [1, 2], "m11": 5, "m10": 6, "m01": 7, "m00": 8}]}


def text(doc):
    return json.dumps(doc, indent=2)


def test_parse_good():
    sf = parse_studies(text(GOOD))
    assert sf.K == 2
    assert [s.design for s in sf.studies] == ["gold_one_test", "no_gold_pair"]
    assert sf.studies[1].cross == (5, 6, 7, 8)


def mutate(path, value):
    doc = json.loads(text(GOOD))
    obj = doc
    for p in path[:-1]:
        obj = obj[p]
    obj[path[-1]] = value
    return doc


@pytest.mark.parametrize("path,value,needle", [
    (["studies", 0, "counts", "1", "tp"], -1, "minimum"),
    (["studies", 0, "n_diseased"], 21, "tp + fn"),
    (["studies", 1, "tests"], [1], "tests"),
    (["studies", 1, "id"], "a", "duplicate"),
    (["studies", 0, "tests"], [3], "exceeds K"),
    (["studies", 0, "counts"], {"2": {"tp": 1, "fn": 1, "fp": 1, "tn": 1}}, "counts given"),
    (["format"], "other", "format"),
    (["studies", 0, "design"], "gold_all", "design"),
])
def test_rejections_name_the_place(path, value, needle):
    with pytest.raises(InputError) as err:
        parse_studies(text(mutate(path, value)), "f.json")
    msg = str(err.value)
    assert needle in msg
    assert msg.startswith("f.json:")


def test_line_numbers():
    bad = mutate(["studies", 1, "m00"], "x")
    with pytest.raises(InputError, match=r"line \d+"):
        parse_studies(text(bad))
    with pytest.raises(InputError, match="line 3, column"):
        parse_studies('{\n "K": 2,\n oops}')


def test_template_nulls_explained():
    from importlib import resources
    t = resources.files("cvinenma.data").joinpath("dvt_template.json").read_text()
    with pytest.raises(InputError, match="null"):
        parse_studies(t)
    doc = json.loads(t)
    assert len(doc["studies"]) == 12
    assert [s["design"] for s in doc["studies"]].count("no_gold_pair") == 5


def study_strategy():
    cnt = st.integers(0, 500)

    @st.composite
    def one(draw, i):
        if draw(st.booleans()):
            return StudyRecord.no_gold(f"n{i}", (1, 2), *[draw(cnt) for _ in range(4)])
        tests = draw(st.sampled_from([(1,), (2,), (1, 2)]))
        tp, fn, fp, tn = (draw(cnt) for _ in range(4))
        return StudyRecord.gold_standard(f"g{i}", tp + fn, fp + tn,
                                         {k: (tp, fn, fp, tn) for k in tests})
    return st.integers(1, 6).flatmap(lambda n: st.tuples(*[one(i) for i in range(n)]))


@settings(max_examples=40)
@given(study_strategy())
def test_round_trip(studies):
    sf = StudyFile(2, list(studies))
    back = parse_studies(dumps_studies(sf))
    assert back.studies == list(studies)


def test_flat_csv():
    sf = parse_flat_csv("id,test,tp,fn,fp,tn\nx,1,5,5,2,8\ny,2,3,1,0,9\n")
    assert sf.K == 2
    assert sf.studies[1].n_diseased == 4
    with pytest.raises(InputError, match="line 2"):
        parse_flat_csv("id,test,tp,fn,fp,tn\nx,1,5,-5,2,8\n")
    with pytest.raises(InputError, match="header"):
        parse_flat_csv("a,b\n1,2\n")


def test_load_digest_is_file_hash(tmp_path):
    import hashlib
    p = tmp_path / "d.json"
    p.write_text(text(GOOD))
    assert load_studies(p).digest == hashlib.sha256(p.read_bytes()).hexdigest()
    with pytest.raises(InputError):
        load_studies(tmp_path / "missing.json")


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_text(tmp_path / "sub" / "o.txt", "hello")
    assert (tmp_path / "sub" / "o.txt").read_text() == "hello"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["o.txt"]
