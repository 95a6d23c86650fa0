import pytest

from painfusion.experiment import ExperimentConfig, run_loso
from painfusion.fusion import FusionOptions
from painfusion.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    spec = SyntheticSpec(seed=5, n_subjects=3, sequences_per_subject=1, frames_per_sequence=30)
    return generate_synthetic(spec, tmp_path_factory.mktemp("small"))


FAST = FusionOptions(grid=(1.0,))


def test_parallel_matches_serial(small):
    cfg = ExperimentConfig((("GF",), ("GF", "HOG")), FAST, seed=2, jobs=1)
    serial, _ = run_loso(small, cfg)
    parallel, _ = run_loso(small, ExperimentConfig(cfg.channel_sets, FAST, seed=2, jobs=2))
    assert serial.to_json() == parallel.to_json()


def test_audit_is_clean_by_default_and_flags_full_mean_shape(small):
    clean, outputs = run_loso(small, ExperimentConfig((("GF",),), FAST, seed=1))
    assert clean.audit["violations"] == []
    for o in outputs:
        assert all(o.test not in subjects for subjects in o.artifacts.values())
    leaky, _ = run_loso(small, ExperimentConfig((("GF",),), FAST, mean_shape_mode="full", seed=1))
    assert {v["artifact"] for v in leaky.audit["violations"]} == {"mean_shape"}
    assert len(leaky.audit["violations"]) == 3


def test_test_predictions_cover_each_subject_once(small):
    report, _ = run_loso(small, ExperimentConfig((("GF",),), FAST, seed=1))
    ids = [fid for s in report.subjects for fid in s.frame_ids]
    assert sorted(ids) == sorted(f.frame_id for f in small.frames)
    assert [s.subject_id for s in report.subjects] == small.subjects
