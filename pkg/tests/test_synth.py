import numpy as np
import pytest

from segqc.errors import GenerationError
from segqc.maps import entropy_map, mc_average, voxelwise_sum
from segqc.metrics import dice_coefficient
from segqc.pipeline import assign_folds, cohort_features, cross_validate, score_cohort
from segqc.regressor import TrainConfig
from segqc.synth import SynthParams, generate_case, generate_cohort, q_ramp, read_manifest
from segqc.volume import binarize

SMALL = SynthParams(shape=(20, 20, 20), lesion_radius=(1.5, 2.5), lesion_count=(1, 3), n_samples=6)


def case_dice(case):
    return dice_coefficient(binarize(mc_average(case.samples)), case.gt)


def spearman(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    return np.corrcoef(ra, rb)[0, 1]


class TestGenerateCase:
    def test_deterministic(self):
        a = generate_case(SMALL, 3)
        b = generate_case(SMALL, 3)
        for name in ("image", "gt", "samples", "reconstruction"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_index_and_seed_matter(self):
        base = generate_case(SMALL, 0).image
        assert not np.array_equal(base, generate_case(SMALL, 1).image)
        other_seed = SynthParams(**{**SMALL.__dict__, "seed": 1})
        assert not np.array_equal(base, generate_case(other_seed, 0).image)

    def test_shapes_and_ranges(self):
        c = generate_case(SMALL, 0)
        assert c.image.shape == c.gt.shape == c.reconstruction.shape == (20, 20, 20)
        assert c.samples.shape == (6, 20, 20, 20)
        assert c.gt.dtype == bool and c.gt.any()
        for arr in (c.image, c.samples, c.reconstruction):
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_clean_cases_segment_well(self):
        params = SynthParams(q=0.0)
        for i in range(10):
            assert case_dice(generate_case(params, i)) >= 0.95

    def test_degraded_cases_fail(self):
        params = SynthParams(q=1.0, seed=5)
        dice = [case_dice(generate_case(params, i)) for i in range(50)]
        assert np.mean(np.array(dice) < 0.75) >= 0.8

    def test_uncertainty_rises_with_quality(self):
        # larger, better segmented lesions have more boundary to be unsure about
        qs = q_ramp(40, 5)
        cases = [generate_case(SynthParams(q=q, seed=2), i) for i, q in enumerate(qs)]
        vs = [voxelwise_sum(entropy_map(mc_average(c.samples))) for c in cases]
        dice = [case_dice(c) for c in cases]
        assert spearman(vs, dice) > 0

    def test_unplaceable_lesions(self):
        crowded = SynthParams(shape=(12, 12, 12), lesion_count=(30, 30), lesion_radius=(2.0, 3.0))
        with pytest.raises(GenerationError, match="could not place"):
            generate_case(crowded, 0)

    @pytest.mark.parametrize("bad", [
        {"q": 1.5}, {"n_samples": 1}, {"lesion_radius": (8.0, 20.0)}, {"lesion_count": (3, 1)},
    ])
    def test_invalid_params(self, bad):
        with pytest.raises(ValueError):
            SynthParams(**bad)


class TestRamp:
    def test_continuous(self):
        assert q_ramp(5) == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_stepped(self):
        qs = q_ramp(10, 5)
        assert qs == [0.0, 0.0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1.0, 1.0]

    def test_forty_in_five_levels(self):
        qs = q_ramp(40, 5)
        assert qs.count(1.0) == 8 and qs == sorted(qs)


@pytest.fixture(scope="module")
def small_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    manifest = generate_cohort(SMALL, 20, q_ramp(20, 5), out)
    return manifest


class TestCohort:
    def test_manifest_round_trip(self, small_cohort):
        entries = read_manifest(small_cohort)
        assert [e.id for e in entries] == [f"case_{i:03d}" for i in range(20)]
        assert [e.q for e in entries] == q_ramp(20, 5)
        for e in entries:
            assert len(e.sample_paths) == 6
            assert e.image_path.exists() and e.recon_path.exists()

    def test_score_matches_in_memory(self, small_cohort):
        cases = score_cohort(read_manifest(small_cohort), folds=5, seed=0)
        c = cases[7]
        mem = generate_case(SynthParams(**{**SMALL.__dict__, "q": 0.25}), 7)
        assert c.true_dice == case_dice(mem)
        # samples are stored as f32, so the entropy sum shifts slightly
        ref = voxelwise_sum(entropy_map(mc_average(mem.samples.astype(np.float32))))
        assert c.uncertainty_vs == ref

    def test_nifti_cohort_scores_identically(self, small_cohort, tmp_path):
        nii = generate_cohort(SMALL, 20, q_ramp(20, 5), tmp_path, fmt="nii")
        a = score_cohort(read_manifest(small_cohort))
        b = score_cohort(read_manifest(nii))
        assert a == b

    def test_cross_validation(self, small_cohort):
        entries = read_manifest(small_cohort)
        cases = score_cohort(entries, folds=4, seed=1)
        features = cohort_features(entries, "uncertainty")
        results, predicted = cross_validate(cases, features, TrainConfig(epochs=20, batch_size=4), "uncertainty")
        assert len(results) == 4
        for r in results:
            assert not set(r.test_ids) & (set(r.train_ids) | set(r.val_ids))
            assert len(r.history) == 20
        assert all(0.0 <= c.predicted_dice <= 1.0 for c in predicted)
        assert sorted(t for r in results for t in r.test_ids) == [c.id for c in cases]


class TestFolds:
    def test_balanced_and_deterministic(self):
        ids = [f"c{i}" for i in range(23)]
        a = assign_folds(ids, 5, 3)
        assert a == assign_folds(list(reversed(ids)), 5, 3)
        sizes = np.bincount(list(a.values()))
        assert sizes.max() - sizes.min() <= 1

    def test_too_few_cases(self):
        with pytest.raises(ValueError):
            assign_folds(["a", "b"], 3, 0)
