"""Smoke test for the Python extension: synthesize, train, explain, persist."""

import json
import os
import tempfile

import diconstruct_py as dc

SPEC = """
n_concepts = 3
n_features = 6
n_train = 400
n_validation = 150
n_test = 150
seed = 3
"""

CONFIG = """
epochs = 4
batch_size = 32
common_layers = [16]
concept_layers = [8]
"""


def main():
    train, val, test, dag = dc.synthesize(SPEC)
    assert len(train) == 400 and len(test) == 150
    assert dag.concepts == ["C1", "C2", "C3"]
    assert all(child == "Y" or child in dag.concepts for _, child in dag.edges)

    model = dc.Model.fit(train, val, dag, CONFIG)
    assert model.selection_score > 0.0
    report = model.evaluate(test)
    assert 0.0 < report["fidelity"] <= 1.0
    print(f"fidelity {report['fidelity']:.4f}, concept accuracy {report['concept_accuracy']:.4f}")

    pred = model.predict(test)
    assert len(pred["scores"]) == len(test)
    assert all(0.0 < u < 1.0 for row in pred["u"] for u in row)

    factual, cf, tce = model.intervene(test, 0, "C2", True, mode="propagate")
    assert abs((cf - factual) - tce) < 1e-15
    attr = model.attribute(test, 0, mode="propagate")
    assert abs(attr["C2"][1] - tce) < 1e-12

    doc, dot = model.explain(test, 0)
    assert json.loads(doc)["nodes"][-1]["type"] == "sink"
    assert dot.startswith("digraph")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.model")
        model.save(path)
        again = dc.Model.load(path)
        assert again.predict(test)["scores"] == pred["scores"]
        try:
            dc.Model.load(os.path.join(d, "missing.model"))
            raise AssertionError("expected an I/O error")
        except OSError:
            pass

    assert dc.fidelity([0.2, 0.6], [0.3, 0.5]) == 0.9
    assert dc.diversity([[0.0], [1.0]]) == 0.25
    try:
        dc.Dag.parse("C1 -> C2\nC2 -> C1\n", ["C1", "C2"])
        raise AssertionError("expected a cycle error")
    except ValueError:
        pass
    print("smoke test passed")


if __name__ == "__main__":
    main()
