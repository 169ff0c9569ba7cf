"""
Tests du pipeline de données: manifestes, partitions, échantillonnage, codecs, augmentations et chargement.
"""
import struct

import numpy as np
import pytest

import config
from autodiff import Tensor
from data_pipeline import (
    AugmentConfig,
    BatchLoader,
    Manifest,
    PKSampler,
    augment,
    decode_art,
    decode_image,
    decode_pgm,
    decode_ppm,
    encode_art,
    encode_pgm,
    encode_ppm,
    erase,
    load_manifest,
    make_splits,
    pk_next,
    prepare,
    random_erase,
    resize,
    save_manifest,
    split_report,
    synth_generate,
)
from errors import ConfigError, ContractError, DecodeError, ParseError, SplitError


def write_text(path, text):
    path.write_bytes(text.encode("utf-8"))
    return path


def grid_manifest(counts, prefix="id"):
    entries = [
        (f"{prefix}{i}/img{j}.ppm", f"{prefix}{i}")
        for i, n in enumerate(counts) for j in range(n)
    ]
    return Manifest(entries)


class TestManifest:
    def test_load(self, tmp_path):
        file = write_text(tmp_path / "m.csv", "path,identity\na/1.ppm,a\na/2.ppm,a\nb/1.ppm,b\n")
        m = load_manifest(file)
        assert len(m) == 3
        assert m.identities == ["a", "b"]
        assert m.labels.tolist() == [0, 0, 1]
        assert m.path_of(2) == tmp_path / "b/1.ppm"
        assert m.splits is None

    def test_load_with_split_column(self, tmp_path):
        file = write_text(tmp_path / "m.csv", "path,identity,split\na/1.ppm,a,train\nb/1.ppm,b,test")
        assert load_manifest(file).splits == ["train", "test"]

    def test_save_then_load(self, tmp_path):
        m = grid_manifest([2, 3])
        loaded = load_manifest(save_manifest(m, tmp_path / "m.csv"))
        assert loaded.entries == m.entries

    @pytest.mark.parametrize("text, line", [
        ("", 1),
        ("file,identity\nx,a\n", 1),
        ("path,identity\na/1.ppm,a,extra\n", 2),
        ("path,identity\na/1.ppm,a\na/2.ppm\n", 3),
        ("path,identity\na/1.ppm,\n", 2),
        ("path,identity\na/1.ppm,a\r\n", 2),
        ("path,identity\na/1.ppm,a\nb/1.ppm,b\na/1.ppm,c\n", 4),
        ("path,identity,split\na/1.ppm,a,val\n", 2),
    ])
    def test_parse_errors(self, tmp_path, text, line):
        file = write_text(tmp_path / "m.csv", text)
        with pytest.raises(ParseError) as info:
            load_manifest(file)
        assert info.value.line == line

    @pytest.mark.parametrize("raw, line", [
        (b"path,identity\n\xff\xfe.ppm,a\n", 2),
        (b"path,identity\na/1.ppm,a\nb/1.ppm,\xc3\n", 3),
        (b"\xffpath,identity\n", 1),
    ])
    def test_invalid_utf8_is_a_parse_error(self, tmp_path, raw, line):
        file = tmp_path / "m.csv"
        file.write_bytes(raw)
        with pytest.raises(ParseError) as info:
            load_manifest(file)
        assert info.value.line == line

    def test_duplicate_paths_in_memory(self):
        with pytest.raises(ContractError):
            Manifest([("a.ppm", "x"), ("a.ppm", "y")])


class TestSplits:
    def test_deterministic(self):
        m = grid_manifest([4] * 10)
        a, b = make_splits(m, seed=3), make_splits(m, seed=3)
        assert (a.train_ids, a.queries, a.gallery) == (b.train_ids, b.queries, b.gallery)

    def test_identity_disjoint(self):
        m = grid_manifest([5] * 12)
        split = make_splits(m, train_fraction=0.5, queries_per_id=2, seed=1)
        assert not set(split.train_ids) & set(split.test_ids)
        assert len(split.train_ids) == 6
        assert not set(split.queries) & set(split.gallery)
        assert not set(split.train) & (set(split.queries) | set(split.gallery))
        query_ids = [m.identity_of(i) for i in split.queries]
        assert all(query_ids.count(identity) == 2 for identity in split.test_ids)
        assert len(split.queries) + len(split.gallery) == 5 * len(split.test_ids)

    def test_small_test_identities_excluded(self):
        m = grid_manifest([4, 4, 4, 2], prefix="x")
        m.splits = ["train"] * 4 + ["test"] * 8 + ["test"] * 2
        split = make_splits(m, queries_per_id=2)
        assert split.excluded_ids == ["x3"]
        assert split.test_ids == ["x1", "x2"]

    def test_published_split_crosses_sides(self):
        m = Manifest([("a1", "a"), ("a2", "a"), ("b1", "b")], splits=["train", "test", "test"])
        with pytest.raises(SplitError):
            make_splits(m)

    def test_single_identity(self):
        with pytest.raises(SplitError):
            make_splits(grid_manifest([6]))

    @pytest.mark.parametrize("kwargs", [{"train_fraction": 0.0}, {"train_fraction": 1.0}, {"queries_per_id": 0}])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ConfigError):
            make_splits(grid_manifest([3, 3, 3]), **kwargs)

    def test_published_split_report(self):
        # 145 identités d'entraînement (1535 images); 52 x 15 + 58 x 14 images de test
        # et une identité de 2 images gardée comme distractrice
        train_counts = [11] * 85 + [10] * 60
        test_counts = [15] * 52 + [14] * 58 + [2]
        entries, splits = [], []
        for side, counts in (("train", train_counts), ("test", test_counts)):
            for i, n in enumerate(counts):
                entries.extend((f"{side}{i}/{j}.ppm", f"{side}{i}") for j in range(n))
                splits.extend([side] * n)
        m = Manifest(entries, splits=splits)

        split = make_splits(m, queries_per_id=2, seed=0, keep_distractors=True)
        report = split_report(m, split).set_index("subset")
        assert report.loc["train"].tolist() == [145, 1535]
        assert report.loc["query"].tolist() == [110, 220]
        assert report.loc["gallery"].tolist() == [111, 1374]
        assert split.distractor_ids == ["test110"]

        strict = split_report(m, make_splits(m, queries_per_id=2, seed=0)).set_index("subset")
        assert strict.loc["gallery"].tolist() == [110, 1372]


class TestSampler:
    def groups(self):
        return {0: [0, 1, 2, 3], 1: [4, 5, 6], 2: [7, 8], 3: [9, 10, 11, 12, 13]}

    def test_batch_structure(self, rng):
        groups = self.groups()
        for _ in range(50):
            indices, labels = pk_next(groups, 3, 3, rng)
            assert len(indices) == 9
            assert len(set(labels.tolist())) == 3
            for label in set(labels.tolist()):
                assert labels.tolist().count(label) == 3
            assert all(idx in groups[lab] for idx, lab in zip(indices.tolist(), labels.tolist()))

    def test_large_identity_without_replacement(self, rng):
        for _ in range(20):
            indices, labels = pk_next({0: list(range(10)), 1: list(range(10, 20))}, 2, 4, rng)
            for label in (0, 1):
                picked = indices[labels == label].tolist()
                assert len(set(picked)) == 4

    def test_small_identity_uses_every_image(self, rng):
        indices, labels = pk_next({0: [7, 8], 1: [1, 2, 3, 4]}, 2, 4, rng)
        assert set(indices[labels == 0].tolist()) == {7, 8}

    def test_state_round_trip(self):
        sampler = PKSampler(self.groups(), 2, 2, seed=9)
        sampler.next_batch()
        state = sampler.get_state()
        expected = [sampler.next_batch()[0].tolist() for _ in range(3)]
        other = PKSampler(self.groups(), 2, 2, seed=0)
        other.set_state(state)
        assert [other.next_batch()[0].tolist() for _ in range(3)] == expected

    def test_batches_per_epoch(self):
        assert PKSampler(self.groups(), 2, 2).batches_per_epoch == 4

    @pytest.mark.parametrize("P, K", [(1, 4), (2, 1), (5, 2)])
    def test_invalid(self, P, K):
        with pytest.raises(ConfigError):
            PKSampler(self.groups(), P, K)


class TestCodecs:
    def test_ppm(self, rng):
        image = rng.integers(0, 256, size=(3, 5, 7)).astype(np.float32) / 255.0
        decoded = decode_ppm(encode_ppm(image))
        assert decoded.shape == (3, 5, 7)
        np.testing.assert_allclose(decoded, image, atol=1e-6)

    def test_ppm_header_comment(self):
        data = b"P6\n# commentaire\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255])
        np.testing.assert_allclose(decode_ppm(data)[:, 0, :], [[1, 0], [0, 0], [0, 1]])

    @pytest.mark.parametrize("data", [
        b"P3\n1 1\n255\n000",
        b"P6\n2 2\n255\n" + bytes(5),
        b"P6\n1 1\n65535\n" + bytes(6),
        b"P6\n1",
    ])
    def test_ppm_errors(self, data):
        with pytest.raises(DecodeError):
            decode_ppm(data)

    def test_pgm(self):
        heat = np.array([[0.0, 0.5], [1.0, 0.25]])
        np.testing.assert_allclose(decode_pgm(encode_pgm(heat)), heat, atol=1 / 255)

    def test_art(self, rng):
        tensor = rng.normal(size=(3, 4, 2)).astype(np.float32)
        data = encode_art(tensor)
        assert data[:5] == b"ART1\x03"
        assert struct.unpack("<3Q", data[5:29]) == (3, 4, 2)
        np.testing.assert_array_equal(decode_art(data), tensor)

    def test_art_errors(self):
        data = encode_art(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(DecodeError):
            decode_art(data[:-1])
        with pytest.raises(DecodeError):
            decode_art(data + b"\x00")
        with pytest.raises(DecodeError):
            decode_art(b"ART0" + data[4:])

    def test_decode_image(self, tmp_path):
        image = np.full((3, 2, 2), 0.5, dtype=np.float32)
        (tmp_path / "a.art").write_bytes(encode_art(image))
        (tmp_path / "b.ppm").write_bytes(encode_ppm(image))
        (tmp_path / "c.art").write_bytes(encode_art(np.zeros((2, 2), dtype=np.float32)))
        (tmp_path / "d.bin").write_bytes(b"\x89PNG")
        assert isinstance(decode_image(tmp_path / "a.art"), Tensor)
        np.testing.assert_array_equal(decode_image(tmp_path / "a.art").data, image)
        assert decode_image(tmp_path / "b.ppm").shape == (3, 2, 2)
        with pytest.raises(ContractError):
            decode_image(tmp_path / "c.art")
        with pytest.raises(DecodeError):
            decode_image(tmp_path / "d.bin")
        with pytest.raises(FileNotFoundError):
            decode_image(tmp_path / "absent.ppm")


class TestResize:
    def test_same_size_is_a_copy(self, rng):
        image = rng.random((3, 4, 4)).astype(np.float32)
        out = resize(image, 4, 4)
        np.testing.assert_array_equal(out, image)
        assert out is not image

    def test_constant_stays_constant(self):
        out = resize(np.full((3, 5, 3), 0.3, dtype=np.float32), 8, 11)
        np.testing.assert_allclose(out, 0.3, atol=1e-6)

    def test_halving_averages_pairs(self):
        row = np.array([0.0, 1.0, 2.0, 3.0], dtype=np.float32)
        image = np.broadcast_to(row, (1, 4, 4)).copy()
        np.testing.assert_allclose(resize(image, 2, 2)[0], [[0.5, 2.5], [0.5, 2.5]])

    def test_upsampling_corners(self):
        image = np.array([[[0.0, 1.0], [2.0, 3.0]]], dtype=np.float32)
        out = resize(image, 4, 4)[0]
        assert out[0, 0] == 0.0 and out[-1, -1] == 3.0
        np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0])

    def test_tensor_in_tensor_out(self):
        assert isinstance(resize(Tensor(np.zeros((3, 2, 2))), 4, 4), Tensor)

    def test_invalid_target(self):
        with pytest.raises(ContractError):
            resize(np.zeros((3, 2, 2)), 0, 2)


class TestAugment:
    def image(self):
        return np.arange(3 * 4 * 6, dtype=np.float32).reshape(3, 4, 6) / 72.0

    def test_flip_then_normalize(self, rng):
        x = self.image()
        out = augment(x, AugmentConfig(flip_prob=1.0), rng)
        np.testing.assert_allclose(out, (x[..., ::-1] - 0.5) / 0.5, atol=1e-6)

    def test_no_flip(self, rng):
        x = self.image()
        out = augment(x, AugmentConfig(flip_prob=0.0), rng)
        np.testing.assert_allclose(out, (x - 0.5) / 0.5, atol=1e-6)

    def test_same_generator_same_result(self):
        cfg = AugmentConfig(random_erasing=True, erasing_prob=1.0)
        a = augment(self.image(), cfg, np.random.default_rng([1, 2, 3]))
        b = augment(self.image(), cfg, np.random.default_rng([1, 2, 3]))
        np.testing.assert_array_equal(a, b)

    def test_erase_rectangle(self):
        out = erase(np.zeros((3, 4, 4), dtype=np.float32), 1, 2, 2, 1, (0.1, 0.2, 0.3))
        assert np.count_nonzero(out[0]) == 2
        np.testing.assert_allclose(out[:, 1:3, 2], [[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])
        with pytest.raises(ContractError):
            erase(out, 3, 0, 2, 2, (0, 0, 0))

    def test_random_erase_probability(self, rng):
        x = np.ones((3, 32, 32), dtype=np.float32)
        unchanged = random_erase(x, AugmentConfig(random_erasing=True, erasing_prob=0.0), rng)
        np.testing.assert_array_equal(unchanged, x)
        cfg = AugmentConfig(random_erasing=True, erasing_prob=1.0, erasing_area=(0.1, 0.2),
                            erasing_aspect=(0.5, 2.0), fill=(0.0, 0.0, 0.0))
        erased = random_erase(x, cfg, rng)
        fraction = np.mean(erased[0] == 0.0)
        assert 0.05 < fraction < 0.3
        np.testing.assert_array_equal(erased[0] == 0.0, erased[2] == 0.0)

    def test_prepare_is_deterministic(self):
        cfg = AugmentConfig(resolution=(8, 12))
        out = prepare(self.image(), cfg)
        assert out.shape == (3, 8, 12)
        np.testing.assert_array_equal(out, prepare(self.image(), cfg))

    @pytest.mark.parametrize("kwargs", [{"flip_prob": 1.5}, {"erasing_prob": -0.1}, {"std": (0.5, 0.0, 0.5)}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            AugmentConfig(**kwargs)


class TestSynth:
    def test_deterministic_corpus(self, tmp_path):
        a = synth_generate(3, 2, 16, seed=5, out_dir=tmp_path / "a")
        b = synth_generate(3, 2, 16, seed=5, out_dir=tmp_path / "b")
        assert a.entries == b.entries
        for path, _ in a.entries:
            assert (tmp_path / "a" / path).read_bytes() == (tmp_path / "b" / path).read_bytes()
        assert (tmp_path / "a/manifest.csv").read_bytes() == (tmp_path / "b/manifest.csv").read_bytes()

    def test_corpus_layout(self, tmp_path):
        m = synth_generate(4, 3, 16, seed=0, out_dir=tmp_path)
        assert len(m) == 12
        assert m.identities == ["id000", "id001", "id002", "id003"]
        loaded = load_manifest(tmp_path / "manifest.csv")
        image = decode_image(loaded.path_of(0))
        assert image.shape == (3, 16, 16)
        assert 0.0 <= image.data.min() and image.data.max() <= 1.0

    def test_seed_changes_images(self, tmp_path):
        synth_generate(2, 1, 16, seed=0, out_dir=tmp_path / "a")
        synth_generate(2, 1, 16, seed=1, out_dir=tmp_path / "b")
        path = "id000/img000.ppm"
        assert (tmp_path / "a" / path).read_bytes() != (tmp_path / "b" / path).read_bytes()

    def test_invalid(self, tmp_path):
        with pytest.raises(ConfigError):
            synth_generate(1, 2, 16, out_dir=tmp_path)


class TestBatchLoader:
    def loader(self, manifest, threads, **kwargs):
        groups = {c: idx for c, idx in enumerate(manifest.samples_by_identity().values())}
        sampler = PKSampler(groups, 2, 2, seed=3)
        cfg = AugmentConfig(resolution=(16, 16), random_erasing=True)
        return BatchLoader(manifest, sampler, cfg, seed=7, threads=threads, **kwargs)

    def test_independent_of_thread_count(self, tmp_path):
        manifest = synth_generate(4, 3, 16, seed=0, out_dir=tmp_path)
        serial, parallel = self.loader(manifest, 1), self.loader(manifest, 4)
        for step in range(3):
            a, b = serial.next_batch(step), parallel.next_batch(step)
            np.testing.assert_array_equal(a.indices, b.indices)
            np.testing.assert_array_equal(a.images.data, b.images.data)

    def test_batch_contents(self, tmp_path):
        manifest = synth_generate(4, 3, 16, seed=0, out_dir=tmp_path)
        batch = self.loader(manifest, 2).next_batch(0)
        assert batch.images.shape == (4, 3, 16, 16)
        assert batch.images.dtype == np.float32
        assert batch.labels.tolist()[0::2] == batch.labels.tolist()[1::2]

    def test_cache_is_bounded(self, tmp_path):
        manifest = synth_generate(4, 3, 16, seed=0, out_dir=tmp_path)
        bounded, uncached = self.loader(manifest, 2, cache_size=3), self.loader(manifest, 1, cache_size=0)
        for step in range(6):
            a, b = bounded.next_batch(step), uncached.next_batch(step)
            assert len(bounded._cache) <= 3
            np.testing.assert_array_equal(a.images.data, b.images.data)
        assert len(uncached._cache) == 0

    def test_cache_evicts_least_recently_used(self, tmp_path):
        manifest = synth_generate(4, 3, 16, seed=0, out_dir=tmp_path)
        loader = self.loader(manifest, 1, cache_size=2)
        for index in (0, 1, 0, 2):
            loader._resized(index)
        assert list(loader._cache) == [0, 2]

    def test_default_cache_size(self, tmp_path):
        manifest = synth_generate(4, 3, 16, seed=0, out_dir=tmp_path)
        assert self.loader(manifest, 1).cache_size == 4 * config.DATA_CONFIG["cache_batches"]

    def test_negative_cache_size(self, tmp_path):
        manifest = synth_generate(2, 2, 16, seed=0, out_dir=tmp_path)
        with pytest.raises(ContractError):
            self.loader(manifest, 1, cache_size=-1)
