import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vinehsi import patchset as ps
from vinehsi.patchset import PatchSet


def toy_set(n, m=3, f=2, labels=None, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 3 + 1 if labels is None else np.asarray(labels)
    origins = np.column_stack([np.zeros(n), np.arange(n), np.zeros(n)])
    return PatchSet(rng.random((n, m, m, f)), labels, origins)


def test_window_count():
    feats = np.random.default_rng(0).random((25, 25, 4))
    patches = ps.extract_patches(feats, np.ones((25, 25), int), 23, stride=1)
    assert len(patches) == 9
    assert np.array_equal(patches.features[0], feats[:23, :23].astype(np.float32))
    assert len(ps.extract_patches(feats, np.zeros((25, 25), int), 23)) == 0


def test_patch_centre_carries_label():
    rng = np.random.default_rng(1)
    signatures = rng.random((4, 3))
    labels = rng.integers(0, 4, (15, 15))
    feats = signatures[labels]
    patches = ps.extract_patches(feats, labels, 5, stride=2)
    centre = patches.features[:, 2, 2, :]
    recovered = np.argmin(((centre[:, None, :] - signatures[None]) ** 2).sum(-1), axis=1)
    assert np.array_equal(recovered, patches.labels)
    assert np.array_equal(labels[patches.origins[:, 1], patches.origins[:, 2]], patches.labels)


def test_window_validation():
    with pytest.raises(ValueError):
        ps.candidate_centres(np.ones((5, 5)), 4, 1)
    with pytest.raises(ValueError):
        ps.candidate_centres(np.ones((5, 5)), 7, 1)


def test_split_examples():
    assert [p.size for p in ps.split_indices(100)] == [68, 12, 20]
    assert [p.size for p in ps.split_indices(10)] == [7, 1, 2]
    a, b = ps.split_indices(50, seed=9), ps.split_indices(50, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(ValueError, match="empty"):
        ps.split_indices(5, (0.5, 0.1, 0.4))


@given(st.integers(9, 3000), st.integers(0, 2**31 - 1))
@settings(max_examples=100)
def test_split_is_partition(n, seed):
    parts = ps.split_indices(n, seed=seed)
    union = np.concatenate(parts)
    assert union.size == n and np.array_equal(np.sort(union), np.arange(n))
    assert parts[1].size == int(np.floor(0.12 * n + 1e-9))
    assert parts[2].size == int(np.floor(0.20 * n + 1e-9))


@pytest.mark.parametrize("n", [5, 6, 7, 8])
def test_split_too_small_for_val(n):
    # floor(0.12 n) = 0 leaves validation empty
    with pytest.raises(ValueError, match="val split is empty"):
        ps.split_indices(n)


def test_split_partition_by_origin():
    patches = toy_set(40)
    parts = ps.split(patches, seed=3)
    keys = [set(map(tuple, p.origins)) for p in parts]
    assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])
    assert set.union(*keys) == set(map(tuple, patches.origins))


def _labels_from_counts(counts):
    return np.repeat(np.arange(1, len(counts) + 1), counts)


def test_balance_examples():
    out = ps.balance_indices(_labels_from_counts([100, 90, 80, 70]), 3)
    assert np.bincount(_labels_from_counts([100, 90, 80, 70])[out])[1:].tolist() == [70] * 4
    same = ps.balance_indices(_labels_from_counts([5, 3]), 0)
    assert same.size == 8
    out = ps.balance_indices(_labels_from_counts([100, 10]), 1)
    assert np.bincount(_labels_from_counts([100, 10])[out])[1:].tolist() == [10, 10]


@given(st.lists(st.integers(1, 200), min_size=2, max_size=17), st.integers(0, 16), st.integers(0, 1000))
@settings(max_examples=100)
def test_balance_clamp(counts, k, seed):
    k = min(k, len(counts) - 1)
    labels = _labels_from_counts(counts)
    before = np.bincount(labels, minlength=len(counts) + 1)[1:]
    after = np.bincount(labels[ps.balance_indices(labels, k, seed)], minlength=len(counts) + 1)[1:]
    assert np.all(after <= before)
    if k > 0:
        cap = sorted(counts, reverse=True)[k]
        assert after.max() <= cap
        assert np.all(after == np.minimum(before, cap))
    else:
        assert np.array_equal(after, before)


def test_dihedral_group_table():
    probe = np.arange(12).reshape(3, 4)[:3, :3]
    images = [ps.dihedral(probe, g) for g in ps.DIHEDRAL]
    assert len({im.tobytes() for im in images}) == 8
    table = np.array([[ps.compose(a, b) for b in ps.DIHEDRAL] for a in ps.DIHEDRAL])
    for a in ps.DIHEDRAL:
        assert sorted(table[a]) == list(ps.DIHEDRAL)       # Latin square: closure + cancellation
        assert table[a, 0] == a and table[0, a] == a       # identity
        assert 0 in table[a]                               # inverses
    for a in ps.DIHEDRAL:
        for b in ps.DIHEDRAL:
            for c in ps.DIHEDRAL:
                assert table[table[a, b], c] == table[a, table[b, c]]
    x = np.random.default_rng(0).random((5, 5, 2))
    for a in ps.DIHEDRAL:
        for b in ps.DIHEDRAL:
            assert np.array_equal(ps.dihedral(ps.dihedral(x, b), a), ps.dihedral(x, table[a, b]))


def test_augment_examples():
    x = np.random.default_rng(0).random((5, 5, 3))
    assert all(ps.augment(x, 0.0, seed=s) is x for s in range(20))
    y = x
    for _ in range(4):
        y = ps.dihedral(y, 1)
    assert np.array_equal(y, x)
    assert np.array_equal(ps.dihedral(ps.dihedral(x, 4), 4), x)
    changed = ps.augment(x, 1.0, seed=1)
    assert not np.array_equal(changed, x) and changed.shape == x.shape


def test_augment_batch_matches_single_transform():
    rng = np.random.default_rng(2)
    x = rng.random((50, 5, 5, 2))
    out = ps.augment_batch(x, 0.5, np.random.default_rng(3))
    for k in range(50):
        assert any(np.array_equal(out[k], ps.dihedral(x[k], g)) for g in ps.DIHEDRAL)


def test_batch_sizes():
    sizes = [len(y) for _, y, _ in ps.make_batches(toy_set(10), 4, n_splits=1, transforms_per_split=1)]
    assert sizes == [4, 4, 2]


def test_chunks_of_even_division():
    labels = np.ones(9000, int)
    patches = PatchSet(np.zeros((9000, 1, 1, 1)), labels, np.zeros((9000, 3)))
    per_chunk = {}
    for _, y, ci in ps.make_batches(patches, 10_000, n_splits=9, transforms_per_split=1, p_augment=0):
        per_chunk[ci] = per_chunk.get(ci, 0) + len(y)
    assert per_chunk == {i: 1000 for i in range(9)}


def test_each_patch_twice_per_epoch():
    patches = toy_set(37)
    patches.features[:] = np.arange(37)[:, None, None, None]
    seen = np.concatenate([x[:, 0, 0, 0] for x, _, _ in ps.make_batches(patches, 8, 9, 2, seed=4)])
    assert np.array_equal(np.bincount(seen.astype(int)), np.full(37, 2))


def test_patchset_round_trip(tmp_path):
    splits = dict(zip(ps.SPLIT_NAMES, ps.split(toy_set(30, m=5, f=3), seed=1)))
    ps.save_patchset(tmp_path, splits, {"cube_ids": "0", "window": 5, "n_features": 3, "stride": 1, "seed": 1})
    meta = ps.load_manifest(tmp_path)
    assert int(meta["n.train"]) == len(splits["train"])
    for name, part in splits.items():
        back = ps.load_split(tmp_path, name)
        assert np.array_equal(back.features, part.features)
        assert np.array_equal(back.labels, part.labels)
        assert np.array_equal(back.origins, part.origins)
        # record layout: [u16 label][M*M*F f32]
        assert (tmp_path / f"{name}.bin").stat().st_size == len(part) * (2 + 4 * 5 * 5 * 3)
