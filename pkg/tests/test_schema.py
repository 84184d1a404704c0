import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartbatch import ClassSchema, DataError, LabelMap, RemapTable, load_remap, load_schema, remap
from smartbatch.schema import CITYSCAPES_CLASSES, IGNORE, check_canonical


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_load_default_19_classes(tmp_path):
    doc = {"classes": [{"id": i, "name": n} for i, n in enumerate(CITYSCAPES_CLASSES)],
           "ignore_id": 255}
    schema = load_schema(write_json(tmp_path / "s.json", doc))
    assert schema.n_classes == 19
    assert schema.names[0] == "Road" and schema.names[-1] == "Bicycle"
    assert schema == ClassSchema.default()


def test_load_single_class(tmp_path):
    schema = load_schema(write_json(tmp_path / "s.json", {"classes": [{"id": 0, "name": "all"}],
                                                          "ignore_id": 255}))
    assert schema.n_classes == 1


@pytest.mark.parametrize("classes, message", [
    ([{"id": 0, "name": "a"}, {"id": 2, "name": "b"}], "gapped canonical IDs"),
    ([{"id": 0, "name": "a"}, {"id": 0, "name": "b"}], "duplicate canonical IDs"),
    ([], "empty class list"),
])
def test_load_rejects_bad_ids(tmp_path, classes, message):
    with pytest.raises(DataError, match=message):
        load_schema(write_json(tmp_path / "s.json", {"classes": classes, "ignore_id": 255}))


def test_load_rejects_unparseable(tmp_path):
    (tmp_path / "s.json").write_text("{not json")
    with pytest.raises(DataError, match="cannot parse"):
        load_schema(tmp_path / "s.json")


def test_ignore_must_not_be_canonical():
    with pytest.raises(DataError, match="collides"):
        ClassSchema(((0, "a"), (1, "b")), ignore_id=1)


def test_class_lookup_is_lenient_about_punctuation():
    schema = ClassSchema.default()
    assert schema.index_of("Traffic light") == schema.index_of("traffic-light") == 6
    with pytest.raises(DataError, match="NotAClass"):
        schema.index_of("NotAClass")


def test_remap_file_round_trip(tmp_path):
    schema = ClassSchema.default()
    doc = {"corpus": "cityscapes", "map": {"7": 0, "26": 13, "0": "ignore"}}
    table = load_remap(write_json(tmp_path / "r.json", doc), schema)
    assert table.mapping == {0: None, 7: 0, 26: 13}
    assert table.to_dict() == {"corpus": "cityscapes", "map": {"0": IGNORE, "7": 0, "26": 13}}


def test_remap_table_rejects_unknown_target(tmp_path):
    doc = {"corpus": "x", "map": {"3": 40}}
    with pytest.raises(DataError, match="not a canonical ID"):
        load_remap(write_json(tmp_path / "r.json", doc), ClassSchema.default())


def test_remap_table_rejects_duplicate_raw():
    with pytest.raises(DataError, match="more than once"):
        RemapTable("x", ((1, 0), (1, 2)))


def test_identity_remap_is_bitwise_equal(schema2):
    m = LabelMap("a", np.array([[0, 1, 255], [1, 0, 0]]))
    out = remap(m, RemapTable.identity(schema2), schema2)
    assert out == m


def test_two_entry_remap():
    schema = ClassSchema.default()
    table = RemapTable("cs", ((7, 0), (26, 13)))
    m = LabelMap("a", np.array([[7, 26], [26, 7]]))
    out = remap(m, table, schema)
    np.testing.assert_array_equal(out.data, [[0, 13], [13, 0]])


def test_strict_unmapped_reports_value_and_position():
    schema = ClassSchema.default()
    table = RemapTable("cs", ((7, 0),))
    m = LabelMap("img", np.array([[7, 7, 7], [7, 99, 7]]))
    with pytest.raises(DataError, match=r"99 at pixel \(row=1, col=1\)"):
        remap(m, table, schema, strict=True)


def test_lenient_unmapped_becomes_ignore_and_is_tallied():
    schema = ClassSchema.default()
    table = RemapTable("cs", ((7, 0),))
    m = LabelMap("img", np.array([[7, 99, 99], [42, 7, 7]]))
    tally = Counter()
    out = remap(m, table, schema, strict=False, tally=tally)
    np.testing.assert_array_equal(out.data, [[0, 255, 255], [255, 0, 0]])
    assert tally == {99: 2, 42: 1}


def test_check_canonical_flags_missed_remap(schema2):
    with pytest.raises(DataError, match="non-canonical ID 7"):
        check_canonical(LabelMap("a", np.array([[0, 7]])), schema2)


raw_maps = st.lists(st.lists(st.integers(0, 9), min_size=3, max_size=3), min_size=1, max_size=4)
tables = st.dictionaries(st.integers(0, 9), st.one_of(st.none(), st.integers(0, 3)), min_size=10,
                         max_size=10)


@settings(max_examples=60, deadline=None)
@given(raw_maps, tables, st.dictionaries(st.integers(0, 3), st.one_of(st.none(), st.integers(0, 3)),
                                         min_size=4, max_size=4))
def test_remap_composition(rows, first, second):
    schema = ClassSchema(tuple((i, f"c{i}") for i in range(4)))
    m = LabelMap("m", np.array(rows))
    t1 = RemapTable("t1", tuple(first.items()))
    t2 = RemapTable("t2", tuple(second.items()))
    two_step = remap(remap(m, t1, schema), t2, schema)
    one_step = remap(m, t1.compose(t2, schema), schema)
    assert two_step == one_step
    assert two_step.data.size == m.data.size


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from([0, 1, 2, 255]), min_size=2, max_size=2), min_size=1,
                max_size=5))
def test_identity_remap_idempotent(rows):
    schema = ClassSchema(tuple((i, f"c{i}") for i in range(3)))
    m = LabelMap("m", np.array(rows))
    ident = RemapTable.identity(schema)
    once = remap(m, ident, schema)
    assert remap(once, ident, schema) == once == m
