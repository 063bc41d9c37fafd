"""Dual-layer scene memory: semantic topology graph plus spatial network.

The topology graph holds object vertices, validated relationship edges, and
free-form VLM-perceived features. Every vertex links through spatial_index
into the spatial network of Gaussian envelopes. Relationship assertions are
only admitted as edges when the envelope geometry supports them.
"""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .envelope import GaussianEnvelope
from .errors import MissingVertexError, UnknownRelationError


class VertexState(enum.Enum):
    UNTOUCHED = "untouched"
    GRASPED = "grasped"
    PLACED = "placed"
    IN_MANIPULATION = "in_manipulation"


# Relationship vocabulary; supporting/adjacent imply physical contact and
# validate under the contact band.
_RELATION_BAND = {
    "containing": 0,
    "contact": 1,
    "supporting": 1,
    "adjacent": 1,
    "nearby": 2,
    "separate": 3,
}


@dataclass
class Vertex:
    id: str
    category: str
    spatial_index: int
    state: VertexState = VertexState.UNTOUCHED


@dataclass
class Edge:
    src: str
    dst: str
    rel_type: str
    constraints: dict = field(default_factory=dict)


@dataclass
class FeatureRecord:
    vertex_id: str
    attributes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SceneSnapshot:
    vertices: dict
    edges: dict
    features: dict
    envelopes: dict
    timestamp: int


@dataclass
class EdgeDelta:
    added: list = field(default_factory=list)
    removed: list = field(default_factory=list)
    kept: list = field(default_factory=list)


def normalized_distance(si: GaussianEnvelope, sj: GaussianEnvelope) -> float:
    """Center separation scaled by the combined envelopes' largest extent."""
    lam_max = float(np.linalg.eigvalsh(si.sigma + sj.sigma)[-1])
    lam_max = max(lam_max, 1e-12)
    return float(np.linalg.norm(si.mu - sj.mu)) / float(np.sqrt(lam_max))


def band_of(d: float) -> int:
    """Band index for a normalized distance: 0 containing .. 3 separate."""
    if d <= 2.0:
        return 0
    if d <= 3.0:
        return 1
    if d <= 6.0:
        return 2
    return 3


def validate_geometry(si: GaussianEnvelope, sj: GaussianEnvelope, sr: str) -> bool:
    """Check a semantic relationship against the envelope distance bands."""
    rel = sr.lower()
    if rel not in _RELATION_BAND:
        raise UnknownRelationError(f"unknown relationship {sr!r}")
    return _RELATION_BAND[rel] == band_of(normalized_distance(si, sj))


class SceneGraph:
    """Single-writer topology graph owning the spatial network."""

    def __init__(self):
        self.vertices: dict[str, Vertex] = {}
        self.edges: dict[tuple[str, str], Edge] = {}
        self.features: dict[str, FeatureRecord] = {}
        self.envelopes: dict[int, GaussianEnvelope] = {}
        self._next_index = 1
        self._timestamp = 0

    @staticmethod
    def _pair(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def upsert_vertex(self, vid: str, category: str, envelope: GaussianEnvelope) -> Vertex:
        if not category:
            raise ValueError("category must be non-empty")
        vertex = self.vertices.get(vid)
        if vertex is None:
            index = self._next_index
            self._next_index += 1
            vertex = Vertex(vid, category, index)
            self.vertices[vid] = vertex
        else:
            vertex.category = category
        self.envelopes[vertex.spatial_index] = GaussianEnvelope(
            envelope.mu, envelope.sigma, vertex.spatial_index, envelope.stale_frames
        )
        return vertex

    def envelope_of(self, vid: str) -> GaussianEnvelope:
        vertex = self.vertices.get(vid)
        if vertex is None:
            raise MissingVertexError(vid)
        return self.envelopes[vertex.spatial_index]

    def set_envelope(self, vid: str, env: GaussianEnvelope) -> None:
        vertex = self.vertices.get(vid)
        if vertex is None:
            raise MissingVertexError(vid)
        self.envelopes[vertex.spatial_index] = GaussianEnvelope(
            env.mu, env.sigma, vertex.spatial_index, env.stale_frames
        )

    def set_feature(self, vid: str, attributes: dict) -> FeatureRecord:
        if vid not in self.vertices:
            raise MissingVertexError(vid)
        record = self.features.get(vid)
        if record is None:
            record = FeatureRecord(vid, {})
            self.features[vid] = record
        record.attributes.update(attributes)
        return record

    def update_edges(
        self,
        assertions: Iterable[tuple[str, str, str, dict]],
        validate: bool = True,
    ) -> EdgeDelta:
        """Rebuild the edge set from relationship assertions.

        An edge (i, j) exists after the call iff an assertion for the pair
        was given and passed geometric validation (or validation is off).
        Edges whose pair no longer carries a valid assertion are removed.
        """
        new_edges: dict[tuple[str, str], Edge] = {}
        for src, dst, sr, constraints in assertions:
            for vid in (src, dst):
                if vid not in self.vertices:
                    raise MissingVertexError(vid)
            if src == dst:
                continue
            if validate:
                ok = validate_geometry(self.envelope_of(src), self.envelope_of(dst), sr)
            else:
                if sr.lower() not in _RELATION_BAND:
                    raise UnknownRelationError(sr)
                ok = True
            if ok:
                new_edges[self._pair(src, dst)] = Edge(src, dst, sr.lower(), dict(constraints))
        delta = EdgeDelta()
        for key, edge in new_edges.items():
            old = self.edges.get(key)
            if old is not None and old.rel_type == edge.rel_type:
                delta.kept.append(key)
            else:
                delta.added.append(key)
        for key in self.edges:
            if key not in new_edges:
                delta.removed.append(key)
        self.edges = new_edges
        return delta

    def tick(self) -> int:
        self._timestamp += 1
        return self._timestamp

    def snapshot(self) -> SceneSnapshot:
        return SceneSnapshot(
            vertices=copy.deepcopy(self.vertices),
            edges=copy.deepcopy(self.edges),
            features=copy.deepcopy(self.features),
            envelopes=copy.deepcopy(self.envelopes),
            timestamp=self._timestamp,
        )

    def to_dump(self) -> dict:
        """JSON-serializable graph dump (used for scoring and debugging)."""
        return {
            "vertices": [
                {
                    "id": v.id,
                    "category": v.category,
                    "state": v.state.value,
                    "spatial_index": v.spatial_index,
                }
                for v in sorted(self.vertices.values(), key=lambda v: v.id)
            ],
            "edges": [
                {"src": e.src, "dst": e.dst, "rel_type": e.rel_type}
                for _, e in sorted(self.edges.items())
            ],
            "features": [
                {"vertex_id": f.vertex_id, "attributes": f.attributes}
                for f in sorted(self.features.values(), key=lambda f: f.vertex_id)
            ],
            "envelopes": [
                {
                    "id": idx,
                    "mu": [round(x, 9) for x in env.mu.tolist()],
                    "sigma": [round(x, 12) for x in env.sigma.reshape(-1).tolist()],
                }
                for idx, env in sorted(self.envelopes.items())
            ],
        }
