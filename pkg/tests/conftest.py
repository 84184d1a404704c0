import hashlib
from pathlib import Path

import numpy as np
import pytest

from smartbatch import ClassSchema, SliceGrid, extract_corpus, load_remap, load_schema, scan_corpus
from smartbatch.cli import main
from smartbatch.index import NeighborList

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """Default seed-42 toy corpora (300 real, 2500 synthetic)."""
    out = tmp_path_factory.mktemp("toy") / "toy"
    assert main(["gen-toy", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def toy_features(toy_dir):
    schema = load_schema(toy_dir / "schema.json")
    table = load_remap(toy_dir / "remap_real.json", schema)
    grid = SliceGrid()
    real = extract_corpus(scan_corpus(toy_dir / "real"), table, schema, grid, corpus_name="real")
    synth = extract_corpus(scan_corpus(toy_dir / "synthetic"), None, schema, grid,
                           corpus_name="synthetic")
    return real, synth


@pytest.fixture
def abc_neighbors():
    """Two queries that rank the same three candidates identically."""
    ranked = (("A", 0.1), ("B", 0.2), ("C", 0.3))
    return [NeighborList("q1", ranked), NeighborList("q2", ranked)]


@pytest.fixture
def schema2():
    return ClassSchema(((0, "zero"), (1, "one")), ignore_id=255)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
