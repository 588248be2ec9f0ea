import json
import math

import numpy as np
import pytest

from util import build_synth_store, running_backend

from voxcut.client.session import advect
from voxcut.explore import CameraKey, ExploreScript, SpecEvent, TimestepEvent, run_explore
from voxcut.model import CameraState, Limit, NodeId, ResultMesh, SubVolumeSpec


def cam(position, target=(16, 16, 16), fov=1.1):
    fwd = tuple(t - p for p, t in zip(position, target))
    up = (0.0, 0.0, 1.0) if abs(fwd[0]) + abs(fwd[1]) > 1e-9 else (0.0, 1.0, 0.0)
    return CameraState(
        position=position,
        forward=fwd,
        up=up,
        vertical_fov=fov,
        aspect=1.6,
        near=0.05,
        far=1e6,
    )


def blob_spec(lo=0.25):
    return (SubVolumeSpec(0, (Limit("q", lo, 1e30),)),)


@pytest.fixture(scope="module")
def store(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("exp")
    store, _ = build_synth_store(tmp, dims=(33, 33, 33), block_size=8, timesteps=2)
    yield store
    store.close()


class TestAdvect:
    def _mesh(self, vel):
        return ResultMesh(
            node=NodeId(0, 0, 0, 0),
            timestep=0,
            spec_version=1,
            subvolume_id=0,
            positions=np.array([[1, 2, 3], [4, 5, 6]], np.float32),
            normals=np.zeros((2, 3), np.float32),
            attributes={},
            velocities=vel,
        )

    def test_zero_fraction_is_identity(self):
        mesh = self._mesh(np.full((2, 3), 2.0, np.float32))
        assert (advect(mesh, 0.0, 120.0) == mesh.positions).all()

    def test_constant_velocity_displacement(self):
        vel = np.tile(np.array([[1, 0, 0]], np.float32), (2, 1))
        mesh = self._mesh(vel)
        moved = advect(mesh, 1.0, 120.0)
        assert (moved == mesh.positions + np.array([120, 0, 0], np.float32)).all()

    def test_half_fraction_halves_exactly(self):
        # zero base positions isolate the displacement term, which is the
        # part the linearity claim is about (adding to positions rounds)
        vel = np.array([[0.3, -1.7, 2.9], [0.1, 0.2, 0.3]], np.float32)
        mesh = self._mesh(vel)
        mesh.positions = np.zeros((2, 3), np.float32)
        full = advect(mesh, 1.0, 7.0)
        half = advect(mesh, 0.5, 7.0)
        assert (half * 2 == full).all()

    def test_missing_velocities_identity(self):
        mesh = self._mesh(None)
        assert advect(mesh, 1.0, 100.0) is mesh.positions


class TestExploreScript:
    def test_keyframe_times_must_increase(self):
        c = cam((100.0, 16.0, 16.0))
        with pytest.raises(ValueError):
            ExploreScript(
                dataset_id="", camera_keys=[CameraKey(0, c), CameraKey(0, c)]
            )

    def test_camera_interpolation(self):
        a = cam((100.0, 16.0, 16.0))
        b = cam((200.0, 16.0, 16.0))
        script = ExploreScript(
            dataset_id="", camera_keys=[CameraKey(0, a), CameraKey(1, b)]
        )
        mid = script.camera_at(0.5)
        assert abs(mid.position[0] - 150.0) < 1e-9

    def test_json_round_trip(self, tmp_path):
        doc = {
            "dataset": "d",
            "duration": 0.5,
            "fps": 10,
            "camera": [
                {"time": 0, "position": [90, 16, 16], "forward": [-1, 0, 0]}
            ],
            "specs": [
                {
                    "time": 0,
                    "subvolumes": [
                        {"id": 0, "limits": [{"field": "q", "lower": 0.2, "upper": 1e9}]}
                    ],
                }
            ],
            "timesteps": [{"time": 0.2, "timestep": 1}],
        }
        path = tmp_path / "script.json"
        path.write_text(json.dumps(doc))
        script = ExploreScript.load(path)
        assert script.fps == 10
        assert script.timestep_events[0].timestep == 1


class TestRunExplore:
    def test_static_scene_settles_with_no_new_requests(self, store):
        with running_backend(store.root, workers=2) as backend:
            script = ExploreScript(
                dataset_id=store.dataset_id,
                camera_keys=[CameraKey(0, cam((300.0, 16.0, 16.0)))],
                spec_events=[SpecEvent(0.0, blob_spec())],
                duration=1.0,
                fps=10,
                settle=20.0,
            )
            report = run_explore(script, backend.address)
        det = report["deterministic"]
        obs = report["observed"]
        assert obs["connected"] and obs["all_fresh"]
        assert det["per_frame_new_requests"][0] > 0
        assert all(v == 0 for v in det["per_frame_new_requests"][1:])
        assert obs["abort_acks"] == 1  # the single spec event
        assert obs["final_triangles"] > 0

    def test_one_abort_ack_per_change(self, store):
        with running_backend(store.root, workers=2) as backend:
            script = ExploreScript(
                dataset_id=store.dataset_id,
                camera_keys=[CameraKey(0, cam((300.0, 16.0, 16.0)))],
                spec_events=[
                    SpecEvent(0.0, blob_spec()),
                    SpecEvent(0.4, blob_spec(0.4)),
                ],
                timestep_events=[TimestepEvent(0.7, 1)],
                duration=1.2,
                fps=10,
                settle=20.0,
            )
            report = run_explore(script, backend.address)
        assert report["observed"]["abort_acks"] == 3
        assert report["deterministic"]["spec_changes"] == 3
        assert report["observed"]["all_fresh"]

    def test_near_script_has_smaller_fresh_distances(self, store):
        """Near vs far script: compare request-distance distributions."""
        reports = {}
        with running_backend(store.root, workers=2) as backend:
            for name, pos in (("near", (40.0, 16.0, 16.0)), ("far", (700.0, 16.0, 16.0))):
                script = ExploreScript(
                    dataset_id=store.dataset_id,
                    camera_keys=[CameraKey(0, cam(pos))],
                    spec_events=[SpecEvent(0.0, blob_spec())],
                    duration=0.5,
                    fps=10,
                    settle=20.0,
                )
                reports[name] = run_explore(script, backend.address)
        def median_distance(rep):
            return float(np.median(list(rep["observed"]["request_distances"].values())))
        assert median_distance(reports["near"]) < median_distance(reports["far"])

    def test_report_schema_and_file(self, store, tmp_path):
        out = tmp_path / "report.json"
        with running_backend(store.root) as backend:
            script = ExploreScript(
                dataset_id=store.dataset_id,
                camera_keys=[CameraKey(0, cam((250.0, 16.0, 16.0)))],
                spec_events=[SpecEvent(0.0, blob_spec())],
                duration=0.3,
                fps=10,
                report_path=str(out),
            )
            run_explore(script, backend.address)
        doc = json.loads(out.read_text())
        assert doc["schema"] == "voxcut-explore-report/1"
        assert set(doc) == {"schema", "deterministic", "observed", "timing"}
        # wall-clock data only in the isolated timing section
        assert "wall_seconds" in doc["timing"]
