import numpy as np
import pytest

from voxcut.preprocess import RawDataset
from voxcut.synth import Blob, SynthSpec, Wind, synth_generate


class TestSynth:
    def test_zero_blobs_is_zero(self, tmp_path):
        spec = SynthSpec(dims=(9, 9, 9))
        synth_generate(spec, tmp_path / "raw")
        raw = RawDataset(tmp_path / "raw")
        assert (np.asarray(raw.field(0, "q")) == 0).all()

    def test_blob_peak_at_center_sample(self, tmp_path):
        spec = SynthSpec(
            dims=(9, 9, 9),
            blobs=(Blob(center=(4.0, 4.0, 4.0), radius=2.0, amplitude=1.0),),
        )
        synth_generate(spec, tmp_path / "raw")
        raw = RawDataset(tmp_path / "raw")
        assert raw.field(0, "q")[4, 4, 4] == 1.0

    def test_constant_wind(self, tmp_path):
        spec = SynthSpec(dims=(9, 9, 9), timesteps=2, wind=Wind("constant", vector=(1, 0, 0)))
        synth_generate(spec, tmp_path / "raw")
        raw = RawDataset(tmp_path / "raw")
        for t in range(2):
            assert (np.asarray(raw.field(t, "u")) == 1).all()
            assert (np.asarray(raw.field(t, "v")) == 0).all()
            assert (np.asarray(raw.field(t, "w")) == 0).all()

    def test_rotation_wind(self, tmp_path):
        spec = SynthSpec(
            dims=(9, 9, 9),
            wind=Wind("rotation", center=(4, 4, 4), angular=(0, 0, 1)),
        )
        synth_generate(spec, tmp_path / "raw")
        raw = RawDataset(tmp_path / "raw")
        # v = omega x r with omega = +z: u = -(y-cy), v = (x-cx), w = 0
        u = np.asarray(raw.field(0, "u"))
        v = np.asarray(raw.field(0, "v"))
        w = np.asarray(raw.field(0, "w"))
        assert u[0, 6, 0] == -(6 - 4)
        assert v[0, 0, 7] == 7 - 4
        assert (w == 0).all()

    def test_drift_moves_peak(self, tmp_path):
        spec = SynthSpec(
            dims=(17, 9, 9),
            timesteps=3,
            blobs=(Blob(center=(4, 4, 4), radius=2.0, amplitude=1.0, drift=(2, 0, 0)),),
        )
        synth_generate(spec, tmp_path / "raw")
        raw = RawDataset(tmp_path / "raw")
        for t in range(3):
            q = np.asarray(raw.field(t, "q"))
            peak = np.unravel_index(np.argmax(q), q.shape)
            assert peak == (4, 4, 4 + 2 * t)

    def test_deterministic(self, tmp_path):
        spec = SynthSpec(
            dims=(9, 9, 9),
            blobs=(Blob(center=(3, 3, 3), radius=1.5, amplitude=0.7),),
        )
        synth_generate(spec, tmp_path / "a")
        synth_generate(spec, tmp_path / "b")
        for name in ("meta.json", "t0_q.raw", "t0_u.raw"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_json_loading(self, tmp_path):
        doc = {
            "dims": [9, 9, 9],
            "timesteps": 2,
            "blobs": [{"center": [4, 4, 4], "radius": 2, "amplitude": 1, "drift": [1, 0, 0]}],
            "wind": {"kind": "rotation", "center": [4, 4, 4], "angular": [0, 0, 0.5]},
        }
        spec = SynthSpec.from_json(doc)
        assert spec.timesteps == 2
        assert spec.blobs[0].drift == (1, 0, 0)
        assert spec.wind.kind == "rotation"

    def test_validation(self):
        with pytest.raises(ValueError):
            SynthSpec(dims=(4, 9, 9))
        with pytest.raises(ValueError):
            Blob(center=(0, 0, 0), radius=0.0, amplitude=1.0)
        with pytest.raises(ValueError):
            Wind("vortex")
