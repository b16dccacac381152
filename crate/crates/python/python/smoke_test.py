"""Exercise the Python bindings end to end on a tiny generated dataset."""

import math
import pathlib
import sys
import tempfile

import rest_kg


def main() -> int:
    assert all(rest_kg.verify_instance(seed, k=3) for seed in range(20))

    with tempfile.TemporaryDirectory() as tmp:
        root = pathlib.Path(tmp)
        data = root / "composition"
        rest_kg.write_composition_dataset(str(data), seed=1)
        ds = rest_kg.Dataset(str(data))
        assert ds.relations == ["r1", "r2", "r3", "r4"], ds.relations
        assert ds.num_train_edges > 0

        head, rel, tail = ds.test_triples()[0]
        sg = ds.extract(head, rel, tail, graph="test")
        assert sg.edges()[sg.query_edge][1] == 2

        config = {"dim": "16", "hops": "2"}
        model, losses = rest_kg.train(ds, epochs=1, learning_rate=5e-3, batch_size=8, seed=3, config=config)
        assert len(losses) == 1 and math.isfinite(losses[0])

        score = model.score(sg)
        assert 0.0 < score < 1.0

        path = root / "model.ckpt"
        model.save(str(path))
        again = rest_kg.Model.load(str(path))
        assert again.score(sg) == score
        assert again.config()["dim"] == "16"

        rules = again.rules("r3", top_k=3)
        assert len(rules) == 3 and all(0.0 < s < 1.0 for _, s in rules)

        metrics = again.evaluate(ds, num_negatives=10, seed=0)
        assert 0.0 < metrics["mrr"] <= 1.0

        triangle = rest_kg.Subgraph(3, (0, 2, 1), [(1, 1, 2), (2, 0, 0)])
        fresh = rest_kg.Model(["r1", "r2", "r3", "r4"], seed=0, config={"dim": "16"})
        assert 0.0 < fresh.score(triangle) < 1.0
        try:
            rest_kg.Model(["a"], config={"dimm": "16"})
        except ValueError:
            pass
        else:
            raise AssertionError("unknown setting accepted")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
