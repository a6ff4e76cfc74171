import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpgn.episodes import (
    EpisodeSpec,
    EpisodeStream,
    load_dataset,
    make_synthetic_clusters,
    make_synthetic_images,
    read_split_manifest,
    sample_episode,
    write_feature_archive,
    write_split_manifest,
)


@pytest.fixture(scope="module")
def clusters():
    return make_synthetic_clusters(20, 16, 6.0, rng=0, samples_per_class=30, splits=(12, 4, 4))


def test_synthetic_split_counts(clusters):
    assert len(clusters.classes_in("train")) == 12
    assert len(clusters.classes_in("val")) == 4
    assert len(clusters.classes_in("test")) == 4
    parts = [set(clusters.classes_in(s)) for s in ("train", "val", "test")]
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])


def test_cluster_means_respect_separation():
    src = make_synthetic_clusters(20, 16, 6.0, rng=3)
    d = np.linalg.norm(src.means[:, None] - src.means[None], axis=-1)
    assert d[~np.eye(20, dtype=bool)].min() >= 6.0
    hard = make_synthetic_clusters(2, 2, 0.1, rng=3)
    assert np.linalg.norm(hard.means[0] - hard.means[1]) >= 0.1


def test_nearest_centroid_oracle_on_separated_source():
    # independent check that sep=6 is an easy source: classify 1000 fresh
    # points by nearest true mean
    src = make_synthetic_clusters(20, 16, 6.0, rng=1)
    rng = np.random.default_rng(11)
    labels = rng.integers(0, 20, 1000)
    pts = src.means[labels] + rng.normal(size=(1000, 16))
    pred = np.argmin(((pts[:, None] - src.means[None]) ** 2).sum(-1), axis=1)
    assert (pred == labels).mean() > 0.99


@pytest.mark.parametrize("sep", [0.0, -1.0])
def test_nonpositive_separation_rejected(sep):
    with pytest.raises(ValueError):
        make_synthetic_clusters(5, 4, sep)


def test_fully_supervised_episode(clusters):
    spec = EpisodeSpec(n_way=5, k_shot=1, n_query=5)
    src = make_synthetic_clusters(20, 16, 6.0, rng=0, samples_per_class=30, splits=(20, 0, 0))
    ep = sample_episode(src, spec, 7)
    assert ep.num_samples == 10
    assert ep.labeled.all()
    assert ep.support_x.shape == (5, 16) and ep.query_x.shape == (5, 16)


def test_semi_supervised_ratio_split(clusters):
    spec = EpisodeSpec(n_way=5, k_shot=10, n_query=5, labeled_ratio=0.2)
    ep = sample_episode(clusters, spec, 1)
    per_class = ep.labeled.reshape(5, 10).sum(1)
    assert per_class.tolist() == [2] * 5


def test_ratio_clamps_to_one_labeled_shot(clusters):
    spec = EpisodeSpec(n_way=5, k_shot=10, n_query=5, labeled_ratio=0.05)
    with pytest.warns(UserWarning, match="clamping"):
        ep = sample_episode(clusters, spec, 1)
    assert ep.labeled.reshape(5, 10).sum(1).tolist() == [1] * 5


@pytest.mark.parametrize("bad", [dict(n_way=1), dict(k_shot=0), dict(n_query=0),
                                 dict(labeled_ratio=0.0), dict(labeled_ratio=1.5)])
def test_episode_spec_validation(bad):
    with pytest.raises(ValueError):
        EpisodeSpec(**bad)


def test_same_seed_same_episode(clusters):
    spec = EpisodeSpec(5, 2, 7)
    a, b = sample_episode(clusters, spec, 42), sample_episode(clusters, spec, 42)
    for field in ("support_x", "support_y", "labeled", "query_x", "query_y"):
        assert getattr(a, field).tobytes() == getattr(b, field).tobytes()
    assert a.classes == b.classes
    s1 = [e.query_y.tolist() for e in EpisodeStream(clusters, spec, 5).take(4)]
    s2 = [e.query_y.tolist() for e in EpisodeStream(clusters, spec, 5).take(4)]
    assert s1 == s2


def test_insufficient_classes_and_samples():
    src = make_synthetic_clusters(6, 4, 3.0, rng=0, samples_per_class=3, splits=(4, 1, 1))
    with pytest.raises(ValueError, match="classes"):
        sample_episode(src, EpisodeSpec(5, 1, 5), 0)
    with pytest.raises(ValueError, match="samples"):
        sample_episode(src, EpisodeSpec(2, 2, 4), 0)


def test_balanced_and_unbalanced_queries(clusters):
    ep = sample_episode(clusters, EpisodeSpec(4, 1, 8), 3)
    assert np.bincount(ep.query_y, minlength=4).tolist() == [2, 2, 2, 2]
    ep = sample_episode(clusters, EpisodeSpec(4, 1, 8, balanced_queries=False), 3)
    assert len(ep.query_y) == 8 and set(ep.query_y) <= set(range(4))


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 5), k=st.integers(1, 4), tq=st.integers(1, 9),
    ratio=st.sampled_from([0.1, 0.25, 0.5, 1.0]), seed=st.integers(0, 10_000),
)
def test_episode_structure_properties(clusters, n, k, tq, ratio, seed):
    import warnings

    spec = EpisodeSpec(n, k, tq, labeled_ratio=ratio)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ep = sample_episode(clusters, spec, seed)
    assert len(ep.support_y) == n * k and len(ep.query_y) == tq
    # class-major support order
    assert ep.support_y.tolist() == [i // k for i in range(n * k)]
    assert set(ep.query_y.tolist()) <= set(range(n))
    # never unlabel a whole class
    assert (ep.labeled.reshape(n, k).sum(1) >= 1).all()
    # support and query samples are distinct draws
    sup = {r.tobytes() for r in ep.support_x}
    assert not any(r.tobytes() in sup for r in ep.query_x)
    # support shots match the class they are filed under
    mean_idx = [clusters.classes.index(c) for c in ep.classes]
    assert len(set(mean_idx)) == n


def test_feature_archive_roundtrip(tmp_path):
    src = make_synthetic_clusters(20, 8, 4.0, rng=2, samples_per_class=6, splits=(12, 4, 4))
    root = write_feature_archive(src, tmp_path / "feat")
    loaded = load_dataset(root, root / "split.txt")
    assert len(loaded.classes_in("train")) == 12
    assert loaded.sample_shape == (8,)
    name = loaded.classes[3]
    np.testing.assert_array_equal(loaded.load(name, [0, 5]), src.load(name, [0, 5]))
    counts = load_dataset(root, (12, 4, 4))
    assert counts.classes_in("train") == sorted(src.classes)[:12]


def test_class_directory_layout_with_manifest(tmp_path):
    rng = np.random.default_rng(0)
    split = {}
    for i in range(100):
        d = tmp_path / f"n{i:04d}"
        d.mkdir()
        for s in range(2):
            np.save(d / f"{s}.npy", rng.random((1, 4, 4)).astype(np.float32))
        split[d.name] = "train" if i < 64 else ("val" if i < 80 else "test")
    write_split_manifest(split, tmp_path / "split.txt")
    src = load_dataset(tmp_path, tmp_path / "split.txt")
    assert [len(src.classes_in(s)) for s in ("train", "val", "test")] == [64, 16, 20]
    assert src.sample_shape == (1, 4, 4)


def test_image_directory_loader_and_empty_class(tmp_path):
    from PIL import Image

    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        for s in range(3):
            Image.fromarray((np.random.default_rng(s).random((40, 40)) * 255).astype(np.uint8)).save(
                tmp_path / name / f"{s}.png")
    src = load_dataset(tmp_path, {"a": "train", "b": "train"}, image_size=28)
    assert src.load("a", [0, 1]).shape == (2, 1, 28, 28)
    assert 0.0 <= src.load("b", [2]).min() and src.load("b", [2]).max() <= 1.0
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError, match="empty class"):
        load_dataset(tmp_path)


def test_bad_roots_and_splits(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")
    (tmp_path / "a").mkdir()
    np.save(tmp_path / "a" / "0.npy", np.zeros(3))
    with pytest.raises(ValueError, match="unknown class"):
        load_dataset(tmp_path, {"zzz": "train"})
    (tmp_path / "bad.txt").write_text("a nowhere\n")
    with pytest.raises(ValueError):
        read_split_manifest(tmp_path / "bad.txt")


def test_synthetic_images_shape():
    src = make_synthetic_images(6, rng=0, samples_per_class=4)
    assert src.sample_shape == (1, 28, 28)
    assert src.load(src.classes[0], [0, 1, 2]).shape == (3, 1, 28, 28)
