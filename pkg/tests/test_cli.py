import json

import pytest

from smartbatch.batcher import read_plan, validate_plan
from smartbatch.cli import main
from smartbatch.pairing import read_manifest
from smartbatch.spfeat import read_feature_set

from conftest import tree_digest

TOY_SEED42_DIGEST = "f842f9854facaebb4ad61bdebdf016c7cecfe806d32fad856e8415e03e63db04"


@pytest.fixture(scope="module")
def small_toy(tmp_path_factory):
    out = tmp_path_factory.mktemp("small") / "toy"
    assert main(["gen-toy", "--out", str(out), "--n-real", "40", "--n-synth", "200",
                 "--width", "64", "--height", "32"]) == 0
    return out


def run(config, out, *extra):
    return main([*extra[:1], "--config", str(config), "--out", str(out), *extra[1:]])


def test_gen_toy_digest_pinned(toy_dir):
    assert tree_digest(toy_dir) == TOY_SEED42_DIGEST


def test_gen_toy_same_seed_same_tree(tmp_path):
    args = ["gen-toy", "--n-real", "5", "--n-synth", "9", "--seed", "3"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert main(["gen-toy", "--n-real", "5", "--n-synth", "9", "--seed", "4",
                 "--out", str(tmp_path / "c")]) == 0
    assert tree_digest(tmp_path / "c") != tree_digest(tmp_path / "a")


def test_gen_toy_empty_real(tmp_path, capsys):
    out = tmp_path / "toy"
    assert main(["gen-toy", "--n-real", "0", "--n-synth", "5", "--out", str(out)]) == 0
    assert list((out / "real").iterdir()) == []
    assert main(["stats", "--config", str(out / "pipeline.json")]) == 0
    assert "empty corpus" in capsys.readouterr().out


def test_gen_toy_invalid_size(tmp_path, capsys):
    assert main(["gen-toy", "--width", "0", "--out", str(tmp_path / "t")]) == 1
    assert capsys.readouterr().err.count("\n") == 1


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["pair", "--k", "notanint"])
    assert exc.value.code == 1


def test_missing_config_and_roots(tmp_path, capsys):
    assert main(["extract", "--config", str(tmp_path / "none.json")]) == 1
    assert main(["extract", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert all(line.startswith("error: ") for line in err.splitlines())


def test_pipeline_outputs_validate(small_toy, tmp_path, capsys):
    cfg = small_toy / "pipeline.json"
    out = tmp_path / "o"
    assert run(cfg, out, "pipeline") == 0
    stdout = capsys.readouterr().out
    assert "coverage" in stdout and "density comparison" in stdout
    names = sorted(p.name for p in out.iterdir())
    for expected in ("real.spf.csv", "real.spf.meta.json", "synthetic.spf.csv", "manifest.pairs.json",
                     "batches.plan.jsonl", "coverage.csv", "density_real.csv",
                     "density_synthetic.csv", "density_compare.csv"):
        assert expected in names
    manifest = read_manifest(out / "manifest.pairs.json")
    manifest.check()
    assert validate_plan(read_plan(out / "batches.plan.jsonl"), manifest)
    real = read_feature_set(out / "real.spf.csv")
    assert real.X.shape == (40, 19 * 9)


def test_pipeline_byte_reproducible(small_toy, tmp_path):
    cfg = small_toy / "pipeline.json"
    for name in ("a", "b"):
        assert run(cfg, tmp_path / name, "pipeline", "--workers", "2" if name == "a" else "1") == 0
    for f in ("manifest.pairs.json", "batches.plan.jsonl", "real.spf.csv", "density_compare.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert run(cfg, tmp_path / "c", "pipeline", "--seed", "7") == 0
    assert ((tmp_path / "a" / "manifest.pairs.json").read_bytes()
            == (tmp_path / "c" / "manifest.pairs.json").read_bytes())
    pa = read_plan(tmp_path / "a" / "batches.plan.jsonl")
    pc = read_plan(tmp_path / "c" / "batches.plan.jsonl")
    assert [r for r, _ in pa.epoch_pairs(0)] != [r for r, _ in pc.epoch_pairs(0)]


def test_k_exceeds_window(small_toy, tmp_path, capsys):
    assert run(small_toy / "pipeline.json", tmp_path, "pair", "--k", "5", "--window", "2") == 1
    assert "k exceeds window" in capsys.readouterr().err


def test_k1_none_is_nearest_neighbor(small_toy, tmp_path):
    cfg = small_toy / "pipeline.json"
    assert run(cfg, tmp_path, "extract") == 0
    assert run(cfg, tmp_path, "pair", "--k", "1", "--weighting", "none", "--dump-knn") == 0
    manifest = read_manifest(tmp_path / "manifest.pairs.json")
    lines = (tmp_path / "neighbors.knn.jsonl").read_text().splitlines()
    nearest = {}
    for ln in lines:
        rec = json.loads(ln)
        nearest[rec["query"]] = rec["ranked"][0][0]
    assert {q: s[0] for q, s in manifest.assignments.items()} == nearest


def test_stale_grid_refused_at_pair_time(small_toy, tmp_path, capsys):
    cfg = small_toy / "pipeline.json"
    assert run(cfg, tmp_path, "extract", "--levels", "2x4") == 0
    assert run(cfg, tmp_path, "pair") == 2
    assert "stale" in capsys.readouterr().err


def test_batch_refuses_stale_manifest(small_toy, tmp_path, capsys):
    cfg = small_toy / "pipeline.json"
    assert run(cfg, tmp_path, "extract") == 0
    assert run(cfg, tmp_path, "batch") == 2  # no manifest yet
    assert run(cfg, tmp_path, "pair") == 0
    assert run(cfg, tmp_path, "batch", "--k", "3") == 2
    assert "different configuration" in capsys.readouterr().err
    assert run(cfg, tmp_path, "batch", "--batch-size", "3", "--epochs", "2") == 0
    plan = read_plan(tmp_path / "batches.plan.jsonl")
    assert plan.epochs == 2 and plan.batch_size == 3
    first = (tmp_path / "batches.plan.jsonl").read_bytes()
    assert run(cfg, tmp_path, "batch", "--batch-size", "3", "--epochs", "2") == 0
    assert (tmp_path / "batches.plan.jsonl").read_bytes() == first


def test_sweep_command(small_toy, tmp_path, capsys):
    cfg = small_toy / "pipeline.json"
    assert run(cfg, tmp_path, "extract") == 0
    assert run(cfg, tmp_path, "sweep", "--k-values", "1,3,5", "--weighting", "none") == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0] == "k,coverage,mean_rank"
    covs = [float(r.split(",")[1]) for r in rows[1:]]
    assert covs == sorted(covs) and len(covs) == 3


def test_fid_command(tmp_path, rng, capsys):
    paths = []
    for i, shift in enumerate((0.0, 1.0, 2.0)):
        X = rng.normal(size=(50, 3)) + shift
        p = tmp_path / f"e{i}.csv"
        p.write_text("id,f0,f1,f2\n" + "".join(f"x{r}," + ",".join("%.17g" % v for v in row) + "\n"
                                               for r, row in enumerate(X)))
        paths.append(str(p))
    assert main(["fid", *paths, "--out", str(tmp_path / "o")]) == 0
    text = capsys.readouterr().out.splitlines()
    assert text[0].split() == ["set", "e0", "e1", "e2"]
    row = [float(v) for v in text[1].split()[1:]]
    assert row[0] == 0.0 and row[0] < row[1] < row[2]
    assert (tmp_path / "o" / "fid.csv").exists()
    (tmp_path / "bad.csv").write_text("id,f0,f1\nx,1,2\ny,3,4\n")
    assert main(["fid", paths[0], str(tmp_path / "bad.csv")]) == 2
    (tmp_path / "one.csv").write_text("id,f0,f1,f2\nx,1,2,3\n")
    assert main(["fid", str(tmp_path / "one.csv")]) == 2
