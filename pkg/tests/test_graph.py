import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import FLAT, box_object, floor_plane, minimal_graph
from hpsg.annotation import StubAnnotator
from hpsg.geometry import Box3D
from hpsg.graph import (
    EmptySceneError,
    GraphFormatError,
    build_hpsg,
    dumps_canonical,
    graph_from_dict,
    load_graph,
    mst_candidate_pool,
    mst_weight,
    save_graph,
    similarity_matrix,
    validate_graph,
)
from hpsg.oracles import box_iou, brute_mst, count_spanning_trees, is_spanning_tree


def random_boxes(rng, n):
    lo = rng.uniform(0, 3, (n, 3))
    return [Box3D(tuple(a), tuple(a + rng.uniform(0.2, 1.5, 3))) for a in lo]


def test_similarity_examples():
    b = Box3D((0, 0, 0), (1, 1, 1))
    S = similarity_matrix([b, b, Box3D((5, 5, 5), (6, 6, 6))])
    assert S[0, 1] == 1.0 and S[0, 2] == 0.0 and np.array_equal(S, S.T)


def test_similarity_matches_pairwise_oracle():
    boxes = random_boxes(np.random.default_rng(3), 5)
    S = similarity_matrix(boxes)
    for i, a in enumerate(boxes):
        for j, b in enumerate(boxes):
            want = 1.0 if i == j else box_iou((*a.lo, *a.hi), (*b.lo, *b.hi))
            assert S[i, j] == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_two_components():
    assert mst_candidate_pool(np.eye(2), [(0, 0, 0), (1, 0, 0)]) == [(0, 1)]


def test_three_components_keep_strongest_pairs():
    S = np.array([[1, 0.9, 0.1], [0.9, 1, 0.5], [0.1, 0.5, 1]])
    assert count_spanning_trees(3) == 3
    assert mst_candidate_pool(S, np.zeros((3, 3))) == [(0, 1), (1, 2)]


def weights_of(S, cents):
    n = len(cents)
    return [[mst_weight(float(S[i, j]), cents[i], cents[j]) for j in range(n)] for i in range(n)]


@given(st.integers(2, 7), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_mst_is_minimal_spanning_tree(n, seed):
    boxes = random_boxes(np.random.default_rng(seed), n)
    S = similarity_matrix(boxes)
    cents = [b.center for b in boxes]
    pairs = mst_candidate_pool(S, cents)
    W = weights_of(S, cents)
    assert is_spanning_tree(n, pairs)
    assert sum(W[i][j] for i, j in pairs) == pytest.approx(brute_mst(W)[0], abs=1e-9)


def test_minimal_graph():
    g = minimal_graph()
    assert [n.level for n in g.nodes] == [0, 1, 2]
    assert [(e.level, e.endpoints, e.relation) for e in g.edges] == [(0, (0, 1), "default"),
                                                                     (1, (1, 2), "topological")]
    assert g.node(1).caption == "This is a floor in the room."
    assert validate_graph(g) == []


def test_cup_on_table():
    table = box_object(0, (1, 1, 0), (2, 2, 0.75), "a wooden table")
    cup = box_object(1, (1.4, 1.4, 0.75), (1.5, 1.5, 0.87), "a white cup")
    g = build_hpsg([floor_plane()], [table, cup], StubAnnotator(), FLAT)
    rels = {(g.node(e.endpoints[0]).caption, e.relation, g.node(e.endpoints[1]).caption)
            for e in g.edges if e.level == 2}
    assert ("a white cup", "on", "a wooden table") in rels


def test_far_apart_objects_stay_connected():
    a = box_object(0, (0, 0, 0), (0.2, 0.2, 0.2), "a red ball")
    b = box_object(1, (9, 9, 0), (9.2, 9.2, 0.2), "a blue ball")
    g = build_hpsg([], [a, b], StubAnnotator())
    assert validate_graph(g) == []
    assert {e.relation for e in g.edges if e.level == 2} <= {"next_to"}


def test_empty_scene_is_an_error():
    with pytest.raises(EmptySceneError):
        build_hpsg([], [], StubAnnotator())


def test_room_graph(room_run):
    g = room_run.graph
    assert len(g.nodes) == 12
    assert sum(1 for e in g.edges if e.level == 0) == 6
    assert validate_graph(g) == []


def test_round_trip(tmp_path):
    g = minimal_graph()
    path = tmp_path / "g.json"
    save_graph(g, path)
    loaded = load_graph(path)
    assert loaded == g
    save_graph(loaded, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_room_round_trip_rebuilds_adjacency(room_run, tmp_path):
    save_graph(room_run.graph, tmp_path / "g.json")
    loaded = load_graph(tmp_path / "g.json")
    assert loaded.adjacency == room_run.graph.adjacency
    assert loaded.to_json() == room_run.graph.to_json()


def test_load_rejects_bad_documents(tmp_path):
    doc = minimal_graph().to_dict()
    with pytest.raises(GraphFormatError):
        graph_from_dict({**doc, "version": 99})
    bad = json.loads(json.dumps(doc))
    bad["edges"][1]["endpoints"] = [0, 2]  # level-0 edge may not reach an object when planes exist
    with pytest.raises(GraphFormatError):
        graph_from_dict(bad)
    cut = json.loads(json.dumps(doc))
    cut["edges"] = cut["edges"][:1]
    with pytest.raises(GraphFormatError, match="connected"):
        graph_from_dict(cut)
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(GraphFormatError):
        load_graph(tmp_path / "x.json")


def test_canonical_floats():
    assert dumps_canonical({"b": 1 / 3, "a": [2.0, 1e-9]}) == '{"a":[2.0,1e-09],"b":0.333333}\n'
