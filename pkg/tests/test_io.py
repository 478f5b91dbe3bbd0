import numpy as np
import pytest

from mcmotion import fileio
from mcmotion.errors import IoError, ValidationError
from mcmotion.motion import MotionSequence
from mcmotion.nn import param_checksum
from mcmotion.autodiff import parameter

RNG = np.random.default_rng


class TestMotionContainer:
    def test_roundtrip_byte_identical(self, tmp_path):
        seq = MotionSequence(frames=RNG(0).standard_normal((7, 263)).astype(np.float32), fps=20.0)
        p1, p2 = tmp_path / "a.mcmv", tmp_path / "b.mcmv"
        fileio.write_motion(p1, seq)
        loaded = fileio.read_motion(p1)
        assert np.array_equal(loaded.frames, seq.frames)
        assert loaded.fps == 20.0
        fileio.write_motion(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        seq = MotionSequence(frames=np.zeros((2, 263), dtype=np.float32), fps=20.0)
        p = tmp_path / "h.mcmv"
        fileio.write_motion(p, seq)
        raw = p.read_bytes()
        assert raw[:4] == b"MCMV"
        assert len(raw) == 20 + 4 * 2 * 263

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.mcmv"
        p.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(IoError):
            fileio.read_motion(p)

    def test_truncated_payload(self, tmp_path):
        seq = MotionSequence(frames=np.zeros((3, 263), dtype=np.float32), fps=20.0)
        p = tmp_path / "t.mcmv"
        fileio.write_motion(p, seq)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(IoError):
            fileio.read_motion(p)

    def test_json_form(self):
        seq = MotionSequence(frames=RNG(1).standard_normal((3, 263)).astype(np.float32), fps=20.0)
        back = fileio.motion_from_json(fileio.motion_to_json(seq))
        assert np.allclose(back.frames, seq.frames, atol=1e-6)
        assert back.fps == seq.fps

    def test_json_validation(self):
        with pytest.raises(ValidationError):
            fileio.motion_from_json('{"fps": 20, "frames": [[1, 2, 3]]}')


class TestFeatureContainer:
    def test_roundtrip(self, tmp_path):
        arr = RNG(2).standard_normal((5, 12)).astype(np.float32)
        p = tmp_path / "f.mcmf"
        fileio.write_features(p, arr, fps=20.0)
        got, fps = fileio.read_features(p)
        assert np.array_equal(got, arr)
        assert fps == 20.0
        assert p.read_bytes()[:4] == b"MCMF"

    def test_fps_zero_for_token_features(self, tmp_path):
        p = tmp_path / "t.mcmf"
        fileio.write_features(p, np.ones((3, 4), dtype=np.float32))
        _, fps = fileio.read_features(p)
        assert fps == 0.0


class TestCheckpointContainer:
    def test_roundtrip_exact(self, tmp_path):
        rng = RNG(3)
        params = {
            "a/weight": parameter(rng.standard_normal((4, 3)).astype(np.float32)),
            "b/bias": parameter(rng.standard_normal(7).astype(np.float32)),
        }
        meta = {"kind": "test", "stage": 1, "config": {"d": 4}}
        p = tmp_path / "m.mcmw"
        fileio.write_checkpoint(p, params, meta)
        arrays, got_meta = fileio.read_checkpoint(p)
        assert got_meta == meta
        assert set(arrays) == set(params)
        for name in params:
            assert np.array_equal(arrays[name], params[name].data)
        assert p.read_bytes()[:4] == b"MCMW"

    def test_checksum_survives_roundtrip(self, tmp_path):
        rng = RNG(4)
        params = {f"p{i}": parameter(rng.standard_normal((3, 3)).astype(np.float32)) for i in range(4)}
        p = tmp_path / "c.mcmw"
        fileio.write_checkpoint(p, params, {"stage": 1})
        arrays, _ = fileio.read_checkpoint(p)
        restored = {n: parameter(a) for n, a in arrays.items()}
        assert param_checksum(restored) == param_checksum(params)


class TestBeatsAndLogs:
    def test_beats_roundtrip(self, tmp_path):
        p = tmp_path / "b.json"
        fileio.write_beats(p, [0.5, 1.25, 2.0])
        assert np.array_equal(fileio.read_beats(p), [0.5, 1.25, 2.0])

    def test_jsonl(self, tmp_path):
        p = tmp_path / "log.jsonl"
        fileio.write_jsonl(p, [{"epoch": 1, "loss": 0.5}, {"epoch": 2, "loss": 0.25}])
        lines = p.read_text().strip().split("\n")
        assert len(lines) == 2

    def test_atomic_overwrite(self, tmp_path):
        p = tmp_path / "x.bin"
        fileio.atomic_write(p, b"one")
        fileio.atomic_write(p, b"two")
        assert p.read_bytes() == b"two"
        assert [f for f in tmp_path.iterdir()] == [p]  # no temp litter
