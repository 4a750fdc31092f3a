import numpy as np
import pytest
from scipy import stats

from protorect.episodes import Episode, EpisodeSpec, inject_distractors, sample_episode
from protorect.errors import CapacityError
from protorect.featurestore import FeatureSet, synth


@pytest.fixture(scope="module")
def fs():
    return synth(10, 30, 8, 0.1, seed=0)


def test_deterministic(fs):
    spec = EpisodeSpec(5, 2, 4, seed=7)
    assert sample_episode(fs, spec, 3) == sample_episode(fs, spec, 3)


def test_episodes_differ(fs):
    spec = EpisodeSpec(5, 1, 15, seed=7)
    assert not sample_episode(fs, spec, 0) == sample_episode(fs, spec, 1)
    assert not sample_episode(fs, spec, 0) == sample_episode(fs, EpisodeSpec(5, 1, 15, seed=8), 0)


def test_shapes_and_labels(fs):
    spec = EpisodeSpec(5, 3, 7)
    ep = sample_episode(fs, spec, 0)
    assert ep.support.shape == (5, 3) and ep.query.shape == (5, 7)
    assert len(set(ep.class_ids.tolist())) == 5
    for n, c in enumerate(ep.class_ids):
        assert np.all(fs.labels[ep.support[n]] == c)
        assert np.all(fs.labels[ep.query[n]] == c)
    assert np.intersect1d(ep.support, ep.query).size == 0
    assert ep.query_truth.tolist() == np.repeat(np.arange(5), 7).tolist()


def test_exact_partition():
    labels = np.repeat(np.arange(3), 4)
    small = FeatureSet(vectors=np.random.default_rng(0).standard_normal((12, 3)), labels=labels)
    ep = sample_episode(small, EpisodeSpec(3, 1, 3), 5)
    rows = np.concatenate([ep.support.ravel(), ep.query.ravel()])
    assert sorted(rows.tolist()) == list(range(12))
    assert sorted(ep.class_ids.tolist()) == [0, 1, 2]


def test_capacity_names_class():
    labels = np.array([0] * 5 + [1] * 3 + [2] * 5)
    small = FeatureSet(vectors=np.ones((13, 2)), labels=labels)
    with pytest.raises(CapacityError, match="class 1"):
        sample_episode(small, EpisodeSpec(2, 1, 3), 0)


def test_capacity_too_few_classes(fs):
    with pytest.raises(CapacityError):
        sample_episode(fs, EpisodeSpec(11, 1, 1), 0)
    with pytest.raises(CapacityError):
        sample_episode(fs, EpisodeSpec(5, 1, 1, distractors=6), 0)


def test_no_distractors_is_identity(fs):
    spec = EpisodeSpec(5, 1, 15)
    ep = sample_episode(fs, spec, 2)
    assert inject_distractors(fs, ep, spec) is ep


def test_distractors(fs):
    spec = EpisodeSpec(5, 1, 15, distractors=1, seed=3)
    ep = inject_distractors(fs, sample_episode(fs, spec, 4), spec)
    assert ep.distractor_query.size == 15
    assert not np.isin(fs.labels[ep.distractor_query], ep.class_ids).any()
    assert ep.all_query_rows().size == 90


def test_distractors_keep_labelled_part(fs):
    base = sample_episode(fs, EpisodeSpec(5, 1, 15, seed=3), 4)
    for n_extra in (1, 5):
        spec = EpisodeSpec(5, 1, 15, distractors=n_extra, seed=3)
        ep = inject_distractors(fs, sample_episode(fs, spec, 4), spec)
        assert np.array_equal(ep.query, base.query) and np.array_equal(ep.support, base.support)
        assert len(set(ep.distractor_class_ids.tolist())) == n_extra


def test_class_frequencies_uniform(fs):
    # chi-square on how often each class is picked over many episodes
    spec = EpisodeSpec(5, 1, 2, seed=11)
    counts = np.zeros(fs.num_classes)
    for i in range(2000):
        counts[sample_episode(fs, spec, i).class_ids] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_spec_validation():
    with pytest.raises(ValueError):
        EpisodeSpec(ways=1)
    with pytest.raises(ValueError):
        EpisodeSpec(shots=0)
    with pytest.raises(ValueError):
        EpisodeSpec(distractors=-1)
