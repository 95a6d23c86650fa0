import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from painfusion.dataset import (
    ROOT_ENV,
    export_features_text,
    load_features,
    load_manifest,
    persist_features,
    read_au_file,
    read_landmarks,
    write_landmarks,
)
from painfusion.errors import DimMismatch, IoError, ParseError, ValidationError
from painfusion.face_model import canonical_face
from painfusion.facs import compute_pspi
from painfusion.geometry import geometric_matrix
from painfusion.registration import canonical_template, compute_mean_shape, procrustes_align
from painfusion.synthetic import SyntheticSpec, decompose_level, generate_synthetic
from painfusion.temporal import FeatureTable


def write_frame(root, name, aus="AU4 2\nAU6 1\nAU7 3\nAU9 0\nAU10 1\nAU43 1\n", n_points=66):
    from PIL import Image

    Image.fromarray(np.full((128, 128), 100, np.uint8)).save(root / f"{name}.png")
    write_landmarks(root / f"{name}.pts", canonical_face()[:n_points])
    (root / f"{name}.au").write_text(aus)
    return {"frame_id": name, "image": f"{name}.png", "landmarks": f"{name}.pts", "aus": f"{name}.au"}


def minimal_manifest(root, **kw):
    frames = [dict(write_frame(root, "a", **kw), index=1), dict(write_frame(root, "b", aus="AU4 0\nAU6 0\nAU7 0\nAU9 0\nAU10 0\nAU43 0\n"), index=0)]
    doc = {"format_version": 1, "subjects": [{"subject_id": "S1", "sequences": [{"sequence_id": "q", "frames": frames}]}]}
    path = root / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_minimal_manifest_loads(tmp_path):
    data = load_manifest(minimal_manifest(tmp_path))
    assert [f.frame_id for f in data.frames] == ["b", "a"]  # ordered by index
    assert data.frame("a").pspi == 2 + 3 + 1 + 1
    assert data.frame("b").pspi == 0
    assert data.subjects == ["S1"] and data.stats["n_frames"] == 2
    assert data.image("a").shape == (128, 128)


def test_short_landmark_file_names_the_file(tmp_path):
    path = tmp_path / "x.pts"
    write_landmarks(path, canonical_face()[:65])
    with pytest.raises(ParseError, match="x.pts"):
        read_landmarks(path)


def test_bad_landmark_line_has_line_number(tmp_path):
    path = tmp_path / "x.pts"
    write_landmarks(path, canonical_face())
    lines = path.read_text().splitlines()
    lines[4] = "1.0 oops"
    path.write_text("\n".join(lines))
    with pytest.raises(ParseError, match=r"x.pts:5:"):
        read_landmarks(path)


def test_bad_au_file(tmp_path):
    path = tmp_path / "x.au"
    path.write_text("AU4 2\nAU6\n")
    with pytest.raises(ParseError, match=r"x.au:2:"):
        read_au_file(path)
    path.write_text("AU4 9\nAU6 1\nAU7 3\nAU9 0\nAU10 1\nAU43 1\n")
    with pytest.raises(ParseError, match="x.au"):
        read_au_file(path)


def test_unresolved_path_is_io_error(tmp_path):
    path = minimal_manifest(tmp_path)
    (tmp_path / "a.png").unlink()
    with pytest.raises(IoError, match="a.png"):
        load_manifest(path)
    with pytest.raises(IoError):
        load_manifest(tmp_path / "nope.json")


def test_root_override(tmp_path, monkeypatch):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    path = minimal_manifest(data_dir)
    moved = tmp_path / "elsewhere" / "manifest.json"
    moved.parent.mkdir()
    moved.write_text(path.read_text())
    monkeypatch.setenv(ROOT_ENV, str(data_dir))
    assert len(load_manifest(moved)) == 2


def test_duplicate_frame_ids(tmp_path):
    path = minimal_manifest(tmp_path)
    doc = json.loads(path.read_text())
    doc["subjects"].append({"subject_id": "S2", "sequences": [{"sequence_id": "r", "frames": [dict(doc["subjects"][0]["sequences"][0]["frames"][0])]}]})
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        load_manifest(path)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 16), st.integers(0, 2**32 - 1))
def test_decomposition_reproduces_level(level, seed):
    coding = decompose_level(level, np.random.default_rng(seed))
    assert compute_pspi(coding) == level


def tree_bytes(root):
    return {os.path.relpath(p, root): Path(p).read_bytes() for p in sorted(map(str, Path(root).rglob("*"))) if Path(p).is_file()}


def test_generation_is_byte_deterministic(tmp_path):
    spec = SyntheticSpec(seed=1, n_subjects=2, sequences_per_subject=1, frames_per_sequence=50)
    generate_synthetic(spec, tmp_path / "a")
    generate_synthetic(spec, tmp_path / "b")
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) == 2 * 50 * 3 + 1
    assert a == b


def test_generated_dataset_round_trips(tmp_path):
    spec = SyntheticSpec(seed=2, n_subjects=2, sequences_per_subject=2, frames_per_sequence=20)
    made = generate_synthetic(spec, tmp_path)
    loaded = load_manifest(tmp_path / "manifest.json")
    assert loaded.same_content(made)
    assert loaded.stats == made.stats


def test_all_zero_spec(tmp_path):
    data = generate_synthetic(SyntheticSpec(seed=3, n_subjects=1, sequences_per_subject=2, frames_per_sequence=15, zero_fraction=1.0), tmp_path)
    assert all(f.pspi == 0 for f in data.frames)


@pytest.fixture(scope="module")
def seven(tmp_path_factory):
    return generate_synthetic(SyntheticSpec(seed=7), tmp_path_factory.mktemp("seven"))


def test_zero_fraction_near_target(seven):
    assert abs(seven.stats["zero_fraction"] - 0.83) <= 0.03
    assert seven.stats["n_frames"] == 1200


def test_latent_level_equals_pspi(seven):
    for f in seven.frames:
        assert compute_pspi(f.coding) == f.pspi


def test_geometric_features_track_pain(seven):
    mean = compute_mean_shape([f.landmark_frame() for f in seven.frames])
    tpl = canonical_template(mean)
    gf, _ = geometric_matrix(np.stack([procrustes_align(f.landmark_frame(), tpl).landmarks for f in seven.frames]), tpl)
    y = seven.labels()
    corr = [abs(np.corrcoef(gf[:, j], y)[0, 1]) for j in range(gf.shape[1]) if np.std(gf[:, j]) > 0]
    assert max(corr) >= 0.5


def test_features_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    tables = {"GF": FeatureTable("GF", 218, [f"f{i}" for i in range(10)], rng.normal(size=(10, 218))),
              "EMPTY": FeatureTable("EMPTY", 5)}
    path = tmp_path / "feat.bin"
    persist_features(tables, path)
    back = load_features(path)
    assert list(back) == ["GF", "EMPTY"]
    assert back["GF"].values.tobytes() == tables["GF"].values.tobytes()
    assert back["GF"].frame_ids == tables["GF"].frame_ids
    assert len(back["EMPTY"]) == 0 and back["EMPTY"].dim == 5
    export_features_text(tables, tmp_path / "feat.csv")
    assert len((tmp_path / "feat.csv").read_text().splitlines()) == 10


def test_empty_feature_file_is_valid(tmp_path):
    persist_features({}, tmp_path / "e.bin")
    assert load_features(tmp_path / "e.bin") == {}


def test_corrupted_header(tmp_path):
    path = tmp_path / "feat.bin"
    persist_features({"GF": FeatureTable("GF", 2, ["a"], [[1.0, 2.0]])}, path)
    raw = bytearray(path.read_bytes())
    raw[14] = ord("#")
    path.write_bytes(bytes(raw))
    with pytest.raises(ParseError):
        load_features(path)
    path.write_bytes(b"garbage!")
    with pytest.raises(ParseError):
        load_features(path)


def test_truncated_features_are_dim_mismatch(tmp_path):
    path = tmp_path / "feat.bin"
    persist_features({"GF": FeatureTable("GF", 3, ["a", "b"], np.ones((2, 3)))}, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DimMismatch):
        load_features(path)
