import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dwdr.autodiff import Rng
from dwdr.data import CrossViewDataset, GeoClass, format_manifest, parse_manifest, read_manifest, write_manifest
from dwdr.errors import ConfigError, DataError
from dwdr.synthdata import (SynthSpec, class_prototypes, generate_dataset, latent_prototype_accuracy, split_classes,
                            split_train_test)


def small(**kw):
    base = dict(num_classes=20, train_classes=10, drone_per_class=4)
    base.update(kw)
    return SynthSpec(**base)


def test_structure():
    spec = small(drone_per_class=tuple(range(1, 21)))
    ds = generate_dataset(spec, Rng(0))
    assert ds.num_classes == 20 and ds.dim == spec.input_dim
    for c in ds.classes:
        assert len(c.satellite_items) == 1 and len(c.drone_items) == c.label + 1


def test_zero_noise_zero_jitter_identical_drones():
    ds = generate_dataset(small(noise_sigma=0.0, jitter_sigma=0.0), Rng(1))
    for c in ds.classes:
        first = ds.features[c.drone_items[0]]
        for i in c.drone_items[1:]:
            assert np.array_equal(ds.features[i], first)


def test_zero_noise_drones_depend_only_on_latent():
    ds = generate_dataset(small(noise_sigma=0.0, drone_per_class=1), Rng(2))
    c = ds.classes[0]
    assert not np.array_equal(ds.latents[c.drone_items[0]], ds.latents[c.satellite_items[0]])


def test_platforms_not_linearly_related():
    # with the same latent, the two views differ; the tanh keeps them from being one linear map apart
    ds = generate_dataset(small(noise_sigma=0.0, jitter_sigma=0.0, num_classes=60, train_classes=30), Rng(3))
    s = ds.matrix(ds.satellite_ids())
    d = ds.matrix([c.drone_items[0] for c in ds.classes])
    s1 = np.hstack([s, np.ones((len(s), 1))])
    coef, *_ = np.linalg.lstsq(s1[:40], d[:40], rcond=None)
    held_out = np.abs(s1[40:] @ coef - d[40:]).mean()
    assert held_out > 0.05


@pytest.mark.parametrize("clusters", [0, 6])
def test_prototype_accuracy(clusters):
    spec = SynthSpec(num_classes=20, latent_dim=8, noise_sigma=0.05, train_classes=10, prototype_clusters=clusters)
    for seed in range(3):
        assert latent_prototype_accuracy(generate_dataset(spec, Rng(seed))) > 0.95


def test_clustered_prototypes_marginally_standard_normal():
    spec = SynthSpec(num_classes=6000, train_classes=10, prototype_clusters=6, drone_per_class=1)
    protos = class_prototypes(spec, Rng(4))
    # the centres are a shared draw, so test the construction rather than the sample moments
    s = spec.cluster_spread
    assert protos.shape == (6000, spec.latent_dim)
    member = np.arange(6000) % 6
    within = protos[member == 0]
    spread = within.std(axis=0).mean()
    assert spread == pytest.approx(s / np.sqrt(1 + s * s), rel=0.05)


def test_determinism_bit_identical_manifest():
    spec = small()
    assert format_manifest(generate_dataset(spec, Rng(5))) == format_manifest(generate_dataset(spec, Rng(5)))
    assert format_manifest(generate_dataset(spec, Rng(5))) != format_manifest(generate_dataset(spec, Rng(6)))


def test_platform_maps_fixed_across_data_seeds():
    spec = small(noise_sigma=0.0, jitter_sigma=0.0)
    a, b = generate_dataset(spec, Rng(7)), generate_dataset(spec, Rng(8))
    # same transforms, different prototypes: the features differ but stay in tanh range
    assert not np.array_equal(a.features[0], b.features[0])
    assert np.all(np.abs(a.matrix(list(a.features))) <= 1.0)


@pytest.mark.parametrize("kw", [dict(num_classes=1, train_classes=0), dict(noise_sigma=-0.1),
                                dict(drone_per_class=0), dict(drone_per_class=(1, 2)), dict(train_classes=20),
                                dict(train_classes=0), dict(latent_dim=0)])
def test_invalid_spec(kw):
    with pytest.raises(ConfigError):
        small(**kw)


# -- split -------------------------------------------------------------------------

def test_split_disjoint_and_conserving():
    spec = small()
    ds = generate_dataset(spec, Rng(0))
    train, test = split_train_test(ds, spec)
    tr, te = split_classes(spec)
    assert not set(tr) & set(te) and sorted(tr + te) == list(range(20))
    assert len(train) + len(test) == len(ds)
    assert not set(train.features) & set(test.features)
    assert train.num_classes == 10 and test.num_classes == 10
    # relabelled classes keep their items
    for new, old in enumerate(te):
        assert test.classes[new].drone_items == ds.by_label(old).drone_items


def test_split_deterministic():
    spec = small()
    assert split_classes(spec) == split_classes(spec)
    assert split_classes(spec) != split_classes(small(split_seed=1))


def test_split_spec_mismatch():
    ds = generate_dataset(small(), Rng(0))
    with pytest.raises(ConfigError):
        split_train_test(ds, small(num_classes=21))


# -- manifest format -----------------------------------------------------------------

def same(a: CrossViewDataset, b: CrossViewDataset) -> bool:
    return (a.classes == b.classes and a.dim == b.dim and a.features.keys() == b.features.keys()
            and all(np.array_equal(a.features[i], b.features[i]) for i in a.features))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 6), st.integers(1, 4))
def test_manifest_round_trip(seed, c, n):
    ds = generate_dataset(SynthSpec(num_classes=c, train_classes=1, drone_per_class=n, input_dim=5), Rng(seed))
    assert same(parse_manifest(format_manifest(ds)), ds)


def test_manifest_file_round_trip(tmp_path):
    ds = generate_dataset(small(), Rng(9))
    path = tmp_path / "m.txt"
    write_manifest(ds, path)
    assert same(read_manifest(path), ds)


@pytest.mark.parametrize("text, where", [
    ("", "empty"),
    ("2\n", ":1:"),
    ("1 2\n0 sat 0 1.0\n", ":2:"),
    ("1 2\n0 air 0 1.0 2.0\n", ":2:"),
    ("1 2\n3 sat 0 1.0 2.0\n", ":2:"),
    ("1 2\n0 sat 0 1.0 2.0\n0 drone 0 1.0 2.0\n", ":3:"),
    ("1 2\n0 sat 0 x 2.0\n", ":2:"),
    ("1 2\n0 sat 0 1.0 2.0\n", "each platform"),
])
def test_manifest_errors(text, where):
    with pytest.raises(DataError, match=where):
        parse_manifest(text)


def test_dataset_validation():
    with pytest.raises(DataError):
        CrossViewDataset([GeoClass(1, [0], [1])], {0: np.zeros(2), 1: np.zeros(2)}, 2)
    with pytest.raises(DataError):
        CrossViewDataset([GeoClass(0, [0], [0])], {0: np.zeros(2)}, 2)
    with pytest.raises(DataError):
        CrossViewDataset([GeoClass(0, [0], [1])], {0: np.zeros(2), 1: np.zeros(3)}, 2)
