"""Prompt synthesis and strict response parsing."""

import json
from pathlib import Path

import numpy as np
import pytest

from provlm.envelope import ComponentVoxels, GaussianEnvelope
from provlm.errors import (
    MalformedResponseError,
    NoActiveSubtaskError,
)
from provlm.geometry import CameraIntrinsics, Observation, RigidTransform
from provlm.scene_graph import SceneGraph
from provlm.task_memory import (
    ActionKind,
    MotionRecord,
    Outcome,
    SubtaskNode,
    init_from_plan,
)
from provlm.vlm import (
    COARSE_SECTIONS,
    FINE_SECTIONS,
    ActionCommand,
    Mode,
    PromptBundle,
    ResponseKind,
    build_coarse_prompt,
    build_fine_prompt,
    parse_response,
    request,
)

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_state():
    """Deterministic memory + graph + observation used for golden prompts."""
    plan = [
        SubtaskNode("approach_plug", "Move above the plug.", ActionKind.APPROACH, "plug"),
        SubtaskNode(
            "grasp_plug", "Close on the plug.", ActionKind.GRASP, "plug",
            depends_on=("approach_plug",),
        ),
    ]
    memory = init_from_plan(plan)
    memory.activate_next()
    memory.update(
        MotionRecord(
            "approach_plug", ActionKind.APPROACH, "plug", {"speed": 1}, Outcome.SUCCESS, 0
        )
    )
    graph = SceneGraph()
    graph.upsert_vertex(
        "plug", "plug", GaussianEnvelope(np.array([0.16, 0.06, 0.02]), 1e-4 * np.eye(3))
    )
    graph.upsert_vertex(
        "socket", "socket",
        GaussianEnvelope(np.array([0.20, -0.04, 0.0125]), 1e-4 * np.eye(3)),
    )
    graph.update_edges([("plug", "socket", "separate", {})])
    intr = CameraIntrinsics(fx=20.0, fy=20.0, cx=8.0, cy=6.0, width=16, height=12)
    depth = np.zeros((12, 16))
    depth[4:8, 4:8] = 0.3
    obs = Observation(
        rgb=np.zeros((12, 16, 3), dtype=np.uint8),
        depth=depth,
        intrinsics=intr,
        cam_to_base=RigidTransform(np.eye(3), np.zeros(3)),
        timestamp=7,
    )
    components = [
        ComponentVoxels(component_id=1, voxels=frozenset({(0, 0, 0), (1, 0, 0)})),
        ComponentVoxels(component_id=2, voxels=frozenset({(0, 0, 3)})),
    ]
    return memory, graph.snapshot(), obs, components


class TestPromptBundle:
    def test_rejects_wrong_sections_for_mode(self):
        with pytest.raises(ValueError):
            PromptBundle(Mode.COARSE, tuple((tag, "x") for tag in FINE_SECTIONS))

    def test_rejects_reordered_sections(self):
        tags = COARSE_SECTIONS[::-1]
        with pytest.raises(ValueError):
            PromptBundle(Mode.COARSE, tuple((tag, "x") for tag in tags))

    def test_text_concatenates_in_order(self):
        bundle = PromptBundle(Mode.FINE, tuple((tag, tag.lower()) for tag in FINE_SECTIONS))
        text = bundle.text()
        positions = [text.index(f"[{tag}]") for tag in FINE_SECTIONS]
        assert positions == sorted(positions)


class TestBuildPrompts:
    def test_coarse_structure(self):
        memory, snap, _, _ = fixture_state()
        bundle = build_coarse_prompt(memory, snap)
        assert bundle.mode is Mode.COARSE
        assert tuple(tag for tag, _ in bundle.sections) == COARSE_SECTIONS

    def test_fine_structure(self):
        memory, snap, obs, comps = fixture_state()
        bundle = build_fine_prompt(memory, snap, obs, np.array([0.45, 0.0, 0.55]), comps)
        assert bundle.mode is Mode.FINE
        assert tuple(tag for tag, _ in bundle.sections) == FINE_SECTIONS

    def test_requires_active_subtask(self):
        memory, snap, _, _ = fixture_state()
        memory.update(
            MotionRecord("grasp_plug", ActionKind.GRASP, "plug", {}, Outcome.SUCCESS, 1)
        )
        with pytest.raises(NoActiveSubtaskError):
            build_coarse_prompt(memory, snap)

    def test_coarse_mentions_target_and_statuses(self):
        memory, snap, _, _ = fixture_state()
        text = build_coarse_prompt(memory, snap).text()
        assert "grasp_plug" in text and "plug" in text
        assert "1/2 subtasks succeeded" in text
        assert "socket" in text  # global section lists every vertex

    def test_fine_includes_components_and_sensor_frame(self):
        memory, snap, obs, comps = fixture_state()
        text = build_fine_prompt(memory, snap, obs, np.array([0.45, 0.0, 0.55]), comps).text()
        assert "component 1: 2 voxels" in text
        assert "component 2: 1 voxels" in text
        assert "Frame 7" in text and "16 valid depth pixels" in text

    def test_coarse_golden(self):
        memory, snap, _, _ = fixture_state()
        got = build_coarse_prompt(memory, snap).text()
        assert got == (FIXTURES / "coarse_prompt.txt").read_text()

    def test_fine_golden(self):
        memory, snap, obs, comps = fixture_state()
        got = build_fine_prompt(memory, snap, obs, np.array([0.45, 0.0, 0.55]), comps).text()
        assert got == (FIXTURES / "fine_prompt.txt").read_text()

    def test_unknown_target_falls_back(self):
        memory, snap, obs, _ = fixture_state()
        memory.plan[1] = SubtaskNode(
            "grasp_plug", "x", ActionKind.GRASP, "mystery", depends_on=("approach_plug",)
        )
        memory._nodes["grasp_plug"] = memory.plan[1]
        text = build_fine_prompt(memory, snap, obs, np.zeros(3)).text()
        assert "mystery: unknown" in text


def enc(doc):
    return json.dumps(doc).encode()


class TestParseSegmentation:
    def test_valid(self):
        doc = {
            "kind": "segmentation",
            "objects": [{"id": "a", "category": "bolt", "pixels": [[1, 2], [3, 4]]}],
        }
        resp = parse_response(enc(doc))
        assert resp.kind is ResponseKind.SEGMENTATION
        obj = resp.payload[0]
        assert obj.id == "a" and obj.category == "bolt"
        assert np.array_equal(obj.pixels, [[1, 2], [3, 4]])

    def test_bad_pixels_shape(self):
        doc = {"kind": "segmentation", "objects": [{"id": "a", "category": "b", "pixels": [1, 2]}]}
        with pytest.raises(MalformedResponseError):
            parse_response(enc(doc))

    def test_missing_category(self):
        doc = {"kind": "segmentation", "objects": [{"id": "a", "pixels": [[1, 2]]}]}
        with pytest.raises(MalformedResponseError):
            parse_response(enc(doc))

    def test_empty_category(self):
        doc = {"kind": "segmentation", "objects": [{"id": "a", "category": "", "pixels": [[1, 2]]}]}
        with pytest.raises(MalformedResponseError):
            parse_response(enc(doc))


class TestParseRelationships:
    def test_valid(self):
        doc = {
            "kind": "relationships",
            "assertions": [
                {"src": "a", "dst": "b", "rel_type": "contact", "constraints": {"k": 1}}
            ],
        }
        resp = parse_response(enc(doc))
        assert resp.payload == [("a", "b", "contact", {"k": 1})]

    def test_non_string_field(self):
        doc = {"kind": "relationships", "assertions": [{"src": 1, "dst": "b", "rel_type": "c"}]}
        with pytest.raises(MalformedResponseError):
            parse_response(enc(doc))


class TestParsePlan:
    def test_valid(self):
        doc = {
            "kind": "plan",
            "subtasks": [
                {"id": "s1", "action_kind": "approach", "target_object": "bolt"},
                {"id": "s2", "action_kind": "grasp", "target_object": "bolt",
                 "depends_on": ["s1"]},
            ],
        }
        plan = parse_response(enc(doc)).payload
        assert plan[0].action_kind is ActionKind.APPROACH
        assert plan[1].depends_on == ("s1",)

    def test_unknown_action_kind(self):
        doc = {"kind": "plan", "subtasks": [{"id": "s", "action_kind": "teleport",
                                             "target_object": "x"}]}
        with pytest.raises(MalformedResponseError):
            parse_response(enc(doc))


class TestParseAction:
    def test_move_to(self):
        doc = {"kind": "action", "verb": "MoveTo", "target": [0.1, 0.2, 0.3]}
        cmd = parse_response(enc(doc)).payload
        assert isinstance(cmd, ActionCommand)
        assert cmd.verb == "MoveTo" and cmd.target == [0.1, 0.2, 0.3]

    def test_move_to_requires_vector(self):
        doc = {"kind": "action", "verb": "MoveTo", "target": "over there"}
        with pytest.raises(MalformedResponseError):
            parse_response(enc(doc))

    def test_insert_requires_axis_and_distance(self):
        doc = {"kind": "action", "verb": "InsertAlong", "parameters": {"axis": [0, 0, -1]}}
        with pytest.raises(MalformedResponseError):
            parse_response(enc(doc))
        doc["parameters"]["distance"] = 0.02
        cmd = parse_response(enc(doc)).payload
        assert cmd.parameters["distance"] == 0.02

    def test_unknown_verb(self):
        doc = {"kind": "action", "verb": "Levitate"}
        with pytest.raises(MalformedResponseError):
            parse_response(enc(doc))


class TestParseEnvelope:
    def test_not_json(self):
        with pytest.raises(MalformedResponseError):
            parse_response(b"not json{")

    def test_not_utf8(self):
        with pytest.raises(MalformedResponseError):
            parse_response(b"\xff\xfe")

    def test_not_object(self):
        with pytest.raises(MalformedResponseError):
            parse_response(b"[1,2,3]")

    def test_unknown_kind(self):
        with pytest.raises(MalformedResponseError):
            parse_response(enc({"kind": "poetry"}))

    def test_raw_bytes_preserved(self):
        raw = enc({"kind": "action", "verb": "Release"})
        assert parse_response(raw).raw == raw


class _StubBackend:
    def handle(self, query):
        return enc({"kind": "action", "verb": "Release"})


def test_request_parses_backend_bytes():
    resp = request(_StubBackend(), object())
    assert resp.kind is ResponseKind.ACTION and resp.payload.verb == "Release"
