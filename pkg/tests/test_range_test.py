import csv

import numpy as np
import pytest

from errors import ConfigInvalid, NoLink
from network_simulator import LinkModel, Topology
from range_test import BASEMENT_LOSS, RANGE_SCENARIOS, range_test, run_range_scenario


@pytest.mark.parametrize("name", ["i", "ii", "iii"])
def test_lossless_scenarios_receive_everything(name):
    result = run_range_scenario(name, seed=3)
    (counts,) = result.counts.values()
    assert len(counts) == 50
    assert (counts == 1000).all()
    assert result.summary()["1->2"] == {"mean": 1000.0, "min": 1000, "rate": 1.0}


def test_four_transmitters_do_not_interfere():
    result = run_range_scenario("v", seed=1)
    assert sorted(result.counts) == [(1, 5), (2, 5), (3, 5), (4, 5)]
    for counts in result.counts.values():
        assert (counts == 1000).all()


def test_basement_mean_near_measured_rate():
    inside = 0
    for seed in range(20):
        mean = run_range_scenario("iv", seed=seed).summary()["1->2"]["mean"]
        inside += 954 <= mean <= 960
    assert inside >= 19


def test_range_test_is_seeded():
    a = run_range_scenario("iv", seed=7)
    b = run_range_scenario("iv", seed=7)
    assert np.array_equal(a.counts[(1, 2)], b.counts[(1, 2)])


def test_total_loss_link():
    topo = Topology.full_mesh([1, 2], LinkModel(loss_prob=1.0))
    result = range_test(topo, 1, [2], messages=100, loops=3)
    assert list(result.counts[(1, 2)]) == [0, 0, 0]
    assert result.delivery_rate() == 0.0
    assert result.duration_ms == 3 * 100 * 10


def test_range_test_needs_a_link():
    topo = Topology.full_mesh([1, 2])
    with pytest.raises(NoLink):
        range_test(topo, 1, [3])


def test_unknown_scenario():
    with pytest.raises(ConfigInvalid):
        run_range_scenario("vii")


def test_bad_parameters():
    with pytest.raises(ConfigInvalid):
        range_test(Topology.full_mesh([1, 2]), 1, [2], messages=0)


def test_scenario_iv_uses_basement_loss():
    topo = RANGE_SCENARIOS["iv"].topology()
    assert topo.link(1, 2).loss_prob == BASEMENT_LOSS
    assert topo.link(2, 1).loss_prob == BASEMENT_LOSS


def test_csv_one_file_per_stream(tmp_path):
    result = run_range_scenario("v", loops=3, messages=10)
    paths = result.write_csv(tmp_path, "all_nodes.csv")
    assert [p.name for p in paths] == [f"all_nodes_node{i}.csv" for i in range(1, 5)]
    with paths[0].open() as f:
        rows = list(csv.reader(f))
    assert rows == [["Loopcount", "RecvMsg"], ["1", "10"], ["2", "10"], ["3", "10"]]


def test_csv_single_stream_keeps_name(tmp_path):
    result = run_range_scenario("i", loops=2, messages=5)
    (path,) = result.write_csv(tmp_path / "out", "same_room.csv")
    assert path.name == "same_room.csv"
