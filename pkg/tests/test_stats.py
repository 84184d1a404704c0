import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartbatch import ClassSchema, DataError, LabelMap, class_density, density_compare, scan_corpus
from smartbatch.labelmap import write_labelmap
from smartbatch.stats import ClassDensityReport, format_ratio, tally


def report(name, counts, schema=None):
    names = schema.names if schema else ClassSchema.default().names
    return ClassDensityReport(name, tuple(names), tuple(counts))


def test_tally_two_by_two(schema2):
    counts, ignored = tally(LabelMap("m", np.array([[0, 0], [1, 255]])), schema2)
    assert counts.tolist() == [2, 1] and ignored == 1


def test_corpus_example(tmp_path, schema2):
    write_labelmap(LabelMap("m", np.array([[0, 0], [1, 255]])), tmp_path / "m.png")
    rep = class_density(scan_corpus(tmp_path), None, schema2)
    assert rep.counts == (2, 1)
    assert rep.fractions == pytest.approx((2 / 3, 1 / 3))
    assert rep.ignored_pixels == 1 and rep.n_images == 1


def test_empty_corpus_flagged(tmp_path, schema2):
    rep = class_density(scan_corpus(tmp_path), None, schema2)
    assert rep.empty
    assert all(math.isnan(f) for f in rep.fractions)
    assert "empty corpus" in rep.to_text()


def test_all_ignore_corpus(tmp_path, schema2):
    write_labelmap(LabelMap("m", np.full((3, 3), 255)), tmp_path / "m.png")
    rep = class_density(scan_corpus(tmp_path), None, schema2)
    assert rep.empty and rep.ignored_pixels == 9


def test_recount_oracle(tmp_path, rng):
    schema = ClassSchema.default()
    pool = np.array(list(range(19)) + [255])
    maps = [pool[rng.integers(0, 20, size=(rng.integers(1, 20), rng.integers(1, 20)))] for _ in range(100)]
    for i, m in enumerate(maps):
        write_labelmap(LabelMap(f"m{i:03d}", m), tmp_path / f"m{i:03d}.png")
    rep = class_density(scan_corpus(tmp_path), None, schema, workers=2)
    expected = [0] * 19
    ignored = 0
    for m in maps:
        for v in m.ravel():
            if v == 255:
                ignored += 1
            else:
                expected[v] += 1
    assert list(rep.counts) == expected
    assert rep.ignored_pixels == ignored
    assert rep.total_valid_pixels + ignored == sum(m.size for m in maps)
    assert math.fsum(rep.fractions) == pytest.approx(1.0, abs=1e-12)


counts19 = st.lists(st.integers(0, 10**6), min_size=19, max_size=19)


@settings(max_examples=100, deadline=None)
@given(counts19, counts19)
def test_merge_adds_counts(a, b):
    merged = report("a", a) + report("b", b)
    assert merged.counts == tuple(x + y for x, y in zip(a, b))
    if merged.total_valid_pixels:
        assert math.fsum(merged.fractions) == pytest.approx(1.0)


def test_compare_identity_and_doubling():
    schema = ClassSchema.default()
    base = [100] * 19
    comp = density_compare(report("a", base), report("b", base))
    assert [r[0] for r in comp.rows] == ["Traffic-light", "Traffic-sign", "Rider", "Truck", "Bus",
                                         "Train", "Motorcycle", "Bicycle"]
    assert all(r[3] == 1.0 for r in comp.rows)
    bus = schema.index_of("Bus")
    doubled = list(base)
    doubled[bus] = 200
    doubled[0] = 0  # keep the total fixed so Bus's share exactly doubles
    (row,) = density_compare(report("a", base), report("b", doubled), focus=["Bus"]).rows
    assert row[3] == pytest.approx(2.0, rel=1e-12)


def test_compare_unknown_class():
    with pytest.raises(DataError, match="NotAClass"):
        density_compare(report("a", [1] * 19), report("b", [1] * 19), focus=["Bus", "NotAClass"])


def test_compare_zero_denominator(tmp_path):
    a = [1] * 19
    a[ClassSchema.default().index_of("Train")] = 0
    b = [1] * 19
    comp = density_compare(report("a", a), report("b", b), focus=["Train"])
    assert comp.rows[0][3] == math.inf
    assert "inf" in comp.to_text()
    assert comp.write_csv(tmp_path / "c.csv").read_text().strip().endswith(",inf")
    assert format_ratio(math.nan) == "nan"


def test_compare_schema_mismatch(schema2):
    with pytest.raises(DataError, match="different schemas"):
        density_compare(report("a", [1] * 19), report("b", [1, 1], schema2))
