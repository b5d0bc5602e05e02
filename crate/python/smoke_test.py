"""Smoke test for the pydiffbots extension module."""

import pydiffbots as db

CONFIG = """
seed = 3
[lattice]
a = 4
b = 2
[sim]
steps = 200
[learning]
iterations = 4
[evolution]
pop_size = 4
generations = 1
"""


def main():
    assert db.lattice_counts(22, 13) == (168, 453)

    genome = db.Genome.random(4, 2, seed=1)
    assert db.Genome(str(genome)) == genome
    body = genome.morphology()
    assert body.mass_count == len(body.positions)
    assert body.spring_count == len(body.springs)
    assert 0.0 <= body.active_fraction <= 1.0

    result = db.train(genome, CONFIG)
    assert len(result.losses) == 4
    assert result.fitness == max(-l for l in result.losses)

    loss, trace = db.simulate(genome, result.params, CONFIG)
    assert len(trace) == 201
    assert abs(-loss - result.fitness) < 1e-9

    stats, best = db.evolve(CONFIG, workers=2)
    assert [row["generation"] for row in stats] == [0.0, 1.0]
    assert stats[1]["best_trained"] >= stats[0]["best_trained"]
    assert best is not None and best.dims == (4, 2)

    assert abs(db.spearman([1, 2, 3, 4], [2, 1, 4, 3]) - 0.6) < 1e-12
    assert len(db.config_hash(CONFIG)) == 64
    assert db.rugged_terrain(5) == db.rugged_terrain(5)

    try:
        db.Genome("4 2 00 ffff").morphology()
    except ValueError:
        pass
    else:
        raise AssertionError("empty body should raise")

    print("pydiffbots smoke test passed")


if __name__ == "__main__":
    main()
