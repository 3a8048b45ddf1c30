import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpsg.fusion import (
    CandidateDropped,
    FusionConfig,
    LocalObjectCandidate,
    densify_filter,
    extract_candidates,
    fuse,
)
from hpsg.geometry import Box3D
from hpsg.ingest import PointCloud
from hpsg.oracles import brute_dbscan, brute_unionfind_fusion, euclidean_matrix

CFG = FusionConfig()


def corners(lo, hi):
    return np.array(list(itertools.product(*zip(lo, hi))), dtype=np.float64)


def det(view, inst, lo, hi, hint=None):
    return LocalObjectCandidate(PointCloud(corners(lo, hi), view), inst, view, 0.9, hint)


def test_single_cluster_unchanged():
    rng = np.random.default_rng(0)
    cand = LocalObjectCandidate(PointCloud(rng.normal(0, 0.01, (50, 3)), 0), 1, 0)
    assert densify_filter(cand, CFG) is cand


def test_stragglers_are_removed():
    rng = np.random.default_rng(1)
    blob = rng.uniform(0, 0.2, (100, 3))
    far = rng.uniform(0, 0.02, (5, 3)) + np.array([1.0, 1.0, 1.0])
    far = far * np.array([[1], [3], [5], [7], [9]])  # spread apart so they stay noise
    pts = np.vstack([blob, far])
    cfg = FusionConfig(dbscan_eps_m=0.1, dbscan_min_pts=5)
    out = densify_filter(LocalObjectCandidate(PointCloud(pts, 0), 1, 0), cfg)
    assert len(out.geometry) == 100
    labels = brute_dbscan(euclidean_matrix(pts), 0.1, 5)
    assert [i for i, lab in enumerate(labels) if lab == 0] == list(range(100))


def test_all_noise_drops_candidate():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
    with pytest.raises(CandidateDropped):
        densify_filter(LocalObjectCandidate(PointCloud(pts, 0), 1, 0), FusionConfig(0.25, 0.1, 2))


def test_same_id_zero_iou_is_one_object():
    objs = fuse([det(0, 7, (0, 0, 0), (1, 1, 1)), det(1, 7, (5, 5, 5), (6, 6, 6))], CFG)
    assert len(objs) == 1
    assert objs[0].bbox == Box3D((0, 0, 0), (6, 6, 6))
    assert [o.view_id for o in objs[0].view_observations] == [0, 1]


def test_different_ids_zero_iou_are_two_objects():
    objs = fuse([det(0, 1, (0, 0, 0), (1, 1, 1)), det(1, 2, (5, 5, 5), (6, 6, 6))], CFG)
    assert len(objs) == 2


def test_high_iou_merges_across_ids():
    objs = fuse([det(0, 1, (0, 0, 0), (1, 1, 1)), det(1, 2, (0.1, 0, 0), (1.1, 1, 1))], CFG)
    assert len(objs) == 1 and objs[0].instance_id == 1 and objs[0].members == (0, 1)


def test_bbox_contains_points():
    objs = fuse([det(0, 1, (0, 0, 0), (1, 1, 1)), det(1, 1, (0.5, 0, 0), (2, 1, 1))], CFG)
    assert objs[0].bbox.contains(objs[0].merged_points.points)


def random_sequence(rng, n=20):
    centers = rng.uniform(-2, 2, (5, 3))
    dets = []
    for _ in range(n):
        c = centers[rng.integers(5)] + rng.normal(0, 0.15, 3)
        half = rng.uniform(0.2, 0.5, 3)
        dets.append((int(rng.integers(0, 4)), int(rng.integers(0, 8)), (*(c - half), *(c + half))))
    return dets


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_fuse_matches_union_find_replay(seed):
    dets = random_sequence(np.random.default_rng(seed))
    cands = [det(v, i, b[:3], b[3:]) for v, i, b in dets]
    got = [list(o.members) for o in fuse(cands, CFG)]
    assert got == brute_unionfind_fusion(dets, CFG.kappa)


def test_room_objects(room_run):
    objs = room_run.parsed.objects
    assert sorted(o.label for o in objs) == ["bed", "cabinet", "chair", "cup", "table"]
    for o in objs:
        ids = {ob.instance_id for ob in o.view_observations}
        assert len(ids) == 1
        assert len(o.raw_captions) <= 5


def test_extract_candidates_counts(room_run):
    kept, dropped = extract_candidates(room_run.scene.views, CFG)
    n_masks = sum(len(v.masks_of_kind("instance")) for v in room_run.scene.views)
    assert len(kept) + dropped <= n_masks
    assert all(len(c.geometry) > 0 for c in kept)


def test_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(kappa=1.5)
