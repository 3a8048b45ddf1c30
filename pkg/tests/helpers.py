"""Small graph builders shared by the graph, retrieval and CLI tests."""

import itertools

import numpy as np

from hpsg.annotation import StubAnnotator
from hpsg.fusion import ObjectInstance, Observation
from hpsg.geometry import Box3D, PlaneParams
from hpsg.graph import Edge, Hpsg, Node, build_hpsg
from hpsg.ingest import PointCloud
from hpsg.labeling import GravityFrame, LabeledPlane, StructuralLabel
from hpsg.planes import GlobalPlane

FLAT = GravityFrame((0.0, 0.0, 1.0), 0.0)


def floor_plane(size=4.0, z=0.0):
    g = np.linspace(0, size, 8)
    X, Y = np.meshgrid(g, g)
    pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, z)])
    plane = GlobalPlane(PlaneParams.from_arrays((0, 0, 1), z), PointCloud(pts), (0, 1), size * size, 4 * size)
    return LabeledPlane(plane, StructuralLabel.FLOOR, Box3D((0, 0, z), (size, size, z)))


def box_object(key, lo, hi, caption, instance_id=None):
    pts = np.array(list(itertools.product(*zip(lo, hi))), dtype=np.float64)
    tag = caption.split()[-1]
    return ObjectInstance(key, PointCloud(pts), key if instance_id is None else instance_id, Box3D(lo, hi),
                          (Observation(0, key, 0.9),), (caption,), caption, tag, (tag,))


def minimal_graph():
    obj = box_object(0, (1, 1, 0), (1.5, 1.5, 0.5), "a blue box")
    return build_hpsg([floor_plane()], [obj], StubAnnotator(), FLAT)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return tuple(v / np.linalg.norm(v))


def path_graph():
    """scene - floor - table - cup, as a plain chain with hand-set embeddings."""
    nodes = [Node(0, 0, "office", {"label": "scene"}, unit([1, 0, 0, 0])),
             Node(1, 1, "This is a floor in the office.", {"label": "floor"}, unit([0, 1, 0, 0])),
             Node(2, 2, "a table", {"label": "table"}, unit([0, 0, 1, 0])),
             Node(3, 2, "a cup", {"label": "cup"}, unit([0, 0, 0, 1]))]
    edges = [Edge(0, (0, 1), 0, "default", 1.0), Edge(1, (1, 2), 1, "topological", 1.0),
             Edge(2, (3, 2), 2, "on", 0.5)]
    return Hpsg(nodes, edges)
