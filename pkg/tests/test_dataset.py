from pathlib import Path

import numpy as np
import pytest

from bcfpl.dataset import (
    Label,
    Manifest,
    Sample,
    load_csv_manifest,
    load_label_file,
    load_manifest,
    make_batches,
    preprocess_sample,
    scan_class_folders,
    split_manifest,
    write_csv_manifest,
)
from bcfpl.errors import DataError, EmptyManifestError, ImageError, LabelFileError
from bcfpl.imaging import Image, degrade, write_image


def _write(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_image(Image(data), path)


def _random_ppm(path, seed, w=20, h=16):
    rng = np.random.default_rng(seed)
    _write(path, (rng.integers(0, 256, size=(h, w, 3)) / 255).astype(np.float32))


@pytest.fixture
def tree(tmp_path):
    _random_ppm(tmp_path / "flat" / "Empty" / "a.ppm", 1)
    _random_ppm(tmp_path / "flat" / "Empty" / "b.ppm", 2)
    _random_ppm(tmp_path / "flat" / "Occupied" / "c.ppm", 3)
    return tmp_path / "flat"


def _manifest(n, tmp_path, seed=0):
    samples = []
    for i in range(n):
        p = tmp_path / f"img{i:04d}.ppm"
        _random_ppm(p, seed + i)
        samples.append(Sample(str(p), Label(i % 2)))
    return Manifest(samples, "fixture")


class TestScan:
    def test_flat(self, tree):
        m = scan_class_folders(tree)
        assert len(m) == 3
        assert [s.label for s in m] == [0, 0, 1]
        assert [Path(s.path).name for s in m] == ["a.ppm", "b.ppm", "c.ppm"]

    def test_nested_matches_flat(self, tree, tmp_path):
        nested = tmp_path / "nested"
        for sub, cls, name in [("sunny/2012-09-11", "Empty", "a.ppm"), ("sunny/2012-09-11", "Empty", "b.ppm"),
                               ("sunny/2012-09-11", "occupied", "c.ppm")]:
            dst = nested / sub / cls / name
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_bytes((tree / ("Occupied" if name == "c.ppm" else "Empty") / name).read_bytes())
        flat, deep = scan_class_folders(tree), scan_class_folders(nested)
        assert [(Path(s.path).name, s.label) for s in flat] == [(Path(s.path).name, s.label) for s in deep]

    def test_mixed_depths(self, tree, tmp_path):
        root = tmp_path / "mixed"
        for rel, src in [("rainy/Empty/a.ppm", "Empty/a.ppm"), ("sunny/d1/Empty/b.ppm", "Empty/b.ppm"),
                         ("Occupied/c.ppm", "Occupied/c.ppm")]:
            (root / rel).parent.mkdir(parents=True, exist_ok=True)
            (root / rel).write_bytes((tree / src).read_bytes())
        m = scan_class_folders(root)
        assert sorted((Path(s.path).name, int(s.label)) for s in m) == [("a.ppm", 0), ("b.ppm", 0), ("c.ppm", 1)]
        assert [s.path for s in m] == sorted(s.path for s in m)

    def test_free_busy_folders(self, tmp_path):
        _random_ppm(tmp_path / "A" / "free" / "x.ppm", 1)
        _random_ppm(tmp_path / "A" / "busy" / "y.ppm", 2)
        m = scan_class_folders(tmp_path)
        assert [(Path(s.path).name, s.label) for s in m] == [("y.ppm", Label.OCCUPIED), ("x.ppm", Label.EMPTY)]

    def test_ignores_non_images_and_unlabelled(self, tree):
        (tree / "Empty" / "notes.txt").write_text("x")
        _random_ppm(tree / "Other" / "d.ppm", 4)
        assert len(scan_class_folders(tree)) == 3

    def test_no_class_folders(self, tmp_path):
        _random_ppm(tmp_path / "misc" / "x.ppm", 0)
        with pytest.raises(EmptyManifestError):
            scan_class_folders(tmp_path)

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError, match="nope"):
            scan_class_folders(tmp_path / "nope")


class TestLabelFile:
    def test_two_lines(self, tmp_path):
        f = tmp_path / "LABELS.txt"
        f.write_text("b.jpg 1\na.jpg 0\n")
        m = load_label_file(f, tmp_path / "imgs")
        assert len(m) == 2
        assert [(Path(s.path).name, int(s.label)) for s in m] == [("a.jpg", 0), ("b.jpg", 1)]
        assert m[0].path == str(tmp_path / "imgs" / "a.jpg")

    def test_bad_label(self, tmp_path):
        f = tmp_path / "LABELS.txt"
        f.write_text("a.jpg 2\n")
        with pytest.raises(LabelFileError, match="line 1") as err:
            load_label_file(f)
        assert err.value.line == 1

    def test_missing_field(self, tmp_path):
        f = tmp_path / "LABELS.txt"
        f.write_text("a.jpg 0\nb.jpg\n")
        with pytest.raises(LabelFileError, match="line 2"):
            load_label_file(f)

    def test_trailing_blank_line(self, tmp_path):
        f = tmp_path / "LABELS.txt"
        f.write_text("a.jpg 0\nb.jpg 1\n\n   \n")
        assert len(load_label_file(f)) == 2

    def test_unreadable(self, tmp_path):
        with pytest.raises(DataError):
            load_label_file(tmp_path / "missing.txt")


class TestCsvManifest:
    @pytest.mark.parametrize("header", [True, False])
    def test_read(self, tmp_path, header):
        f = tmp_path / "m.csv"
        f.write_text(("path,label\n" if header else "") + "x/a.png,1\nb.png,0\n")
        m = load_csv_manifest(f)
        assert [(Path(s.path).name, int(s.label)) for s in m] == [("b.png", 0), ("a.png", 1)]

    def test_round_trip(self, tree, tmp_path):
        m = scan_class_folders(tree)
        write_csv_manifest(m, tmp_path / "out.csv")
        back = load_csv_manifest(tmp_path / "out.csv")
        assert back.samples == m.samples

    def test_load_manifest_dispatch(self, tree, tmp_path):
        write_csv_manifest(scan_class_folders(tree), tmp_path / "m.csv")
        (tmp_path / "labels.txt").write_text("Empty/a.ppm 0\n")
        assert len(load_manifest(tree)) == 3
        assert len(load_manifest(tmp_path / "m.csv")) == 3
        assert len(load_manifest(tmp_path / "labels.txt", tree)) == 1
        with pytest.raises(DataError):
            load_manifest(tmp_path / "absent")


class TestSplit:
    def _m(self, n):
        return Manifest([Sample(f"s{i:03d}.ppm", Label(i % 2)) for i in range(n)], "m")

    def test_all_train(self):
        m = self._m(10)
        train, test = split_manifest(m, 0, 10, 0)
        assert len(test) == 0
        assert sorted(s.path for s in train) == [s.path for s in m]

    def test_deterministic_and_disjoint(self):
        m = self._m(30)
        a = split_manifest(m, 7, 12, 10)
        b = split_manifest(m, 7, 12, 10)
        assert a == b
        assert not {s.path for s in a[0]} & {s.path for s in a[1]}
        assert (len(a[0]), len(a[1])) == (12, 10)

    def test_seed_matters(self):
        m = self._m(10)
        assert split_manifest(m, 1, 6, 4)[0].samples != split_manifest(m, 2, 6, 4)[0].samples

    def test_insufficient(self):
        with pytest.raises(DataError):
            split_manifest(self._m(5), 0, 4, 2)


class _ForcedRng:
    def __init__(self, value):
        self.value = value

    def random(self):
        return self.value


class TestPreprocess:
    def test_eval_ignores_rng(self, tree):
        s = scan_class_folders(tree)[0]
        a = preprocess_sample(s, 7, False, np.random.default_rng(0))
        b = preprocess_sample(s, 7, False, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (3, 50, 50) and a.dtype == np.float32
        assert 0 <= a.min() and a.max() <= 1

    def test_symmetric_image(self, tmp_path):
        # at k=50 on a 50x50 source degrade is the identity, so symmetry survives it
        half = np.random.default_rng(0).integers(0, 256, size=(50, 25, 3)) / 255
        _write(tmp_path / "sym.ppm", np.concatenate([half, half[:, ::-1]], axis=1).astype(np.float32))
        s = Sample(str(tmp_path / "sym.ppm"), Label.EMPTY)
        flipped = preprocess_sample(s, 50, True, _ForcedRng(0.0))
        kept = preprocess_sample(s, 50, True, _ForcedRng(0.99))
        np.testing.assert_array_equal(flipped, kept)

    def test_forced_flip(self, tree):
        from bcfpl.imaging import read_image

        s = scan_class_folders(tree)[2]
        out = preprocess_sample(s, 9, True, _ForcedRng(0.0))
        expected = degrade(read_image(s.path), 9).data[:, ::-1, :].transpose(2, 0, 1)
        np.testing.assert_array_equal(out, expected)
        np.testing.assert_array_equal(out[:, :, ::-1], preprocess_sample(s, 9, False))

    def test_grayscale_replicated(self, tmp_path):
        _write(tmp_path / "g.pgm", np.full((8, 8, 1), 0.4, np.float32))
        out = preprocess_sample(Sample(str(tmp_path / "g.pgm"), Label.EMPTY), 5, False)
        assert out.shape == (3, 50, 50)
        np.testing.assert_array_equal(out[0], out[2])

    def test_decode_error_names_path(self, tmp_path):
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P6\n9 9\n255\n")
        with pytest.raises(ImageError, match="bad.ppm"):
            preprocess_sample(Sample(str(bad), Label.EMPTY), 7, False)


class TestBatches:
    def test_sizes(self, tmp_path):
        m = _manifest(300, tmp_path)
        sizes = [len(b) for b in make_batches(m, 128, 50)]
        assert sizes == [128, 128, 44]
        assert sum(sizes) == len(m)

    def test_eval_deterministic(self, tmp_path):
        m = _manifest(10, tmp_path)
        a = list(make_batches(m, 4, 7))
        b = list(make_batches(m, 4, 7))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.inputs, y.inputs)
            np.testing.assert_array_equal(x.indices, np.arange(len(m))[x.indices[0]:x.indices[0] + len(x)])

    def test_train_deterministic(self, tmp_path):
        m = _manifest(20, tmp_path)
        a = list(make_batches(m, 8, 9, train_mode=True, seed=3, epoch=2))
        b = list(make_batches(m, 8, 9, train_mode=True, seed=3, epoch=2))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.inputs, y.inputs)
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_train_flips_some(self, tmp_path):
        m = _manifest(20, tmp_path)
        train = np.concatenate([b.inputs for b in make_batches(m, 20, 50, train_mode=True, seed=1)])
        order = next(iter(make_batches(m, 20, 50, train_mode=True, seed=1))).indices
        plain = np.concatenate([b.inputs for b in make_batches(m, 20, 50)])[order]
        flipped = [not np.array_equal(t, p) for t, p in zip(train, plain)]
        assert 0 < sum(flipped) < len(flipped)
        for t, p, f in zip(train, plain, flipped):
            if f:
                np.testing.assert_array_equal(t, p[:, :, ::-1])

    def test_epochs_reshuffle(self, tmp_path):
        m = _manifest(20, tmp_path)
        e0 = next(iter(make_batches(m, 20, 50, train_mode=True, seed=1, epoch=0))).indices
        e1 = next(iter(make_batches(m, 20, 50, train_mode=True, seed=1, epoch=1))).indices
        assert sorted(e0) == sorted(e1) == list(range(20))
        assert list(e0) != list(e1)

    def test_parallel_matches_serial(self, tmp_path):
        m = _manifest(24, tmp_path)
        serial = list(make_batches(m, 10, 7, train_mode=True, seed=5, epoch=1))
        parallel = list(make_batches(m, 10, 7, train_mode=True, seed=5, epoch=1, workers=4))
        for x, y in zip(serial, parallel):
            np.testing.assert_array_equal(x.inputs, y.inputs)

    def test_cache_is_transparent(self, tmp_path):
        m = _manifest(12, tmp_path)
        cache = {}
        first = list(make_batches(m, 5, 9, train_mode=True, seed=2, cache=cache))
        again = list(make_batches(m, 5, 9, train_mode=True, seed=2, cache=cache))
        fresh = list(make_batches(m, 5, 9, train_mode=True, seed=2))
        for a, b, c in zip(first, again, fresh):
            np.testing.assert_array_equal(a.inputs, b.inputs)
            np.testing.assert_array_equal(a.inputs, c.inputs)

    def test_empty(self):
        with pytest.raises(EmptyManifestError):
            list(make_batches(Manifest([], "none")))
