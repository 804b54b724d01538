"""
Delaunay neighbourhoods of feature points
=========================================

Centroids of a synthetic segmentation, their Delaunay graph, and the
plain-text graph file that lets the triangulation be reused.
"""

import tempfile
from pathlib import Path

import numpy as np

from polaffini import delaunay_graph, extract_centroids
from polaffini.graph import read_graph, write_graph
from polaffini.synth import SynthSpec, generate

pair = generate(SynthSpec(seed=1, n_regions=30, dims=(48, 48, 48)))
points = extract_centroids(pair.reference)
graph = delaunay_graph(points)

sizes = [len(nb) for nb in graph.neighbors]
print(f"{len(points)} points, {len(graph.tetrahedra)} tetrahedra, {len(graph.edges())} edges")
print("neighbourhood sizes: min", min(sizes), "max", max(sizes))
print("centre of N(0):", graph.centers[0])

# each point is its own neighbour, and adjacency is symmetric
assert all(i in nb for i, nb in enumerate(graph.neighbors))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "graph.txt"
    write_graph(graph, path)
    print(path.read_text().splitlines()[0])
    again = read_graph(path, points)
    print("reloaded identical:", again.edges() == graph.edges())
