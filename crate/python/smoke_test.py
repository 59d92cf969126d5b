"""End-to-end smoke test of the footprint_py extension.

Build and install first:

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/footprint_py-*.whl
    python python/smoke_test.py
"""

import json
import math
import random
import tempfile
from pathlib import Path

import footprint_py as fp


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)
    print(f"ok  {msg}")


def raises(exc, fn, msg):
    try:
        fn()
    except exc:
        print(f"ok  {msg}")
        return
    raise AssertionError(f"expected {exc.__name__}: {msg}")


def primitives():
    check(fp.categories() == ["FakeNews", "Organizations", "PoliticalAffiliates", "DefaultIndividuals"],
          "category order")
    check(math.isclose(fp.cosine_similarity({1: 2, 2: 1}, {1: 4, 2: 2}), 1.0), "cosine of parallel vectors")
    check(fp.cosine_similarity({1: 1}, {2: 1}) == 0.0, "cosine of disjoint vectors")
    check(math.isclose(fp.gini_impurity([5, 5, 0, 0]), 0.5), "gini of an even two-class node")

    report = fp.classification_report(["FakeNews", "FakeNews", "Organizations"],
                                      ["FakeNews", "Organizations", "Organizations"])
    check(math.isclose(report["accuracy"], 2 / 3), "accuracy from classification_report")

    labels = {f"a{i}": fp.categories()[i % 4] for i in range(40)}
    folds = fp.stratified_folds(labels, k=5, seed=1)
    check(sorted(set(folds.values())) == [0, 1, 2, 3, 4] and len(folds) == 40, "stratified folds cover every account")

    raises(ValueError, lambda: fp.classification_report(["Nonsense"], ["FakeNews"]),
           "unknown category raises ValueError")


def forest():
    rng = random.Random(3)
    cats = fp.categories()
    X, y = [], []
    for i in range(200):
        c = i % 4
        X.append([c + rng.gauss(0, 0.3), rng.random()])
        y.append(cats[c])
    model = fp.Forest.train(X, y, feature_names=["signal", "noise"], n_trees=25, seed=7)
    check(model.n_trees == 25 and model.feature_names == ["signal", "noise"], "forest metadata")
    acc = sum(p == t for p, t in zip(model.predict(X), y)) / len(y)
    check(acc > 0.9, f"training accuracy {acc:.3f}")
    proba = model.predict_proba(X[:3])
    check(all(math.isclose(sum(r), 1.0) for r in proba), "vote shares sum to one")

    again = fp.Forest.from_json(model.to_json())
    check(again.predict(X) == model.predict(X), "model JSON round-trip")

    cv = fp.cross_validate_forest(X, y, k=4, n_trees=15, seed=2)
    check(cv["accuracy"] > 0.85, f"cross-validated accuracy {cv['accuracy']:.3f}")

    raises(ValueError, lambda: model.predict([[1.0]]), "wrong dimension raises ValueError")


def pipeline(tmp):
    files = fp.generate_synthetic(tmp / "syn", seed=5, accounts_per_category=40)
    check(all(Path(p).is_file() for p in files.values()), "synthetic files written")

    pipe = fp.Pipeline(files["pipeline"], threads=1)
    report = pipe.run()
    check(report["census"]["accounts"] == 160, "run covers every account")
    check(report["cv"]["accuracy"] > 0.8, f"pipeline CV accuracy {report['cv']['accuracy']:.3f}")
    check(report["truth"] is not None, "ground truth scored")
    on_disk = json.loads(Path(pipe.artifact("run_report.json")).read_text())
    check(on_disk == report, "returned report matches run_report.json")

    model = pipe.load_model()
    check(len(model.feature_names) == len(report["selected_features"]), "trained model loads")

    stage = fp.Pipeline(files["pipeline"], output_dir=tmp / "stage").run_stage("propagate")
    check(stage["stage"] == "propagate", "single stage from an empty directory")

    raises(ValueError, lambda: fp.Pipeline(tmp / "missing.toml"), "missing config raises ValueError")
    raises(ValueError, lambda: pipe.run_stage("bogus"), "unknown stage raises ValueError")


def main():
    primitives()
    forest()
    with tempfile.TemporaryDirectory() as d:
        pipeline(Path(d))
    print("smoke test passed")


if __name__ == "__main__":
    main()
