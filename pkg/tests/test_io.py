import re
import struct
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from pacmargin.config import SWEEP_SCHEMA, TRAIN_SCHEMA, load_config, parse_config
from pacmargin.data import (
    LabeledDataset,
    ParseError,
    load_mnist,
    read_csv_dataset,
    read_idx,
    synth_blobs,
    write_csv_dataset,
    write_idx,
)
from pacmargin.numcore import DomainError
from pacmargin.svg import Panel, Series, render_panels

FIXTURES = Path(__file__).parent / "fixtures"


class TestIdx:
    def test_hand_fixture(self):
        # header 0x803, 2 images of 2x2, pixels 0 255 51 102 | 255 0 0 204
        X = read_idx(FIXTURES / "two_images.idx")
        np.testing.assert_array_equal(X, np.array([[0.0, 1.0, 0.2, 0.4], [1.0, 0.0, 0.0, 0.8]]))
        np.testing.assert_array_equal(read_idx(FIXTURES / "two_labels.idx"), [3, 7])

    def test_fixture_bytes(self):
        raw = (FIXTURES / "two_images.idx").read_bytes()
        assert raw[:16] == bytes.fromhex("00000803 00000002 00000002 00000002".replace(" ", ""))
        assert len(raw) == 24

    def test_load_pair(self):
        data = load_mnist(FIXTURES / "two_images.idx", FIXTURES / "two_labels.idx")
        assert (data.m, data.dim, data.split) == (2, 4, "train")

    def test_empty(self, tmp_path):
        path = tmp_path / "empty.idx"
        path.write_bytes(b"")
        with pytest.raises(ParseError) as err:
            read_idx(path)
        assert err.value.offset == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">II", 0x802, 0))
        with pytest.raises(ParseError) as err:
            read_idx(path)
        assert err.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes((FIXTURES / "two_images.idx").read_bytes()[:-1])
        with pytest.raises(ParseError) as err:
            read_idx(path)
        assert err.value.offset == 23

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "long.idx"
        path.write_bytes((FIXTURES / "two_labels.idx").read_bytes() + b"\x00")
        with pytest.raises(ParseError) as err:
            read_idx(path)
        assert err.value.offset == 10

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "labels.idx"
        write_idx(path, np.array([1, 10, 2]))
        with pytest.raises(ParseError) as err:
            read_idx(path, classes=10)
        assert err.value.offset == 9

    def test_write_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, (3, 4, 5))
        write_idx(tmp_path / "i.idx", imgs)
        np.testing.assert_array_equal(read_idx(tmp_path / "i.idx") * 255, imgs.reshape(3, 20))

    def test_count_mismatch(self, tmp_path):
        write_idx(tmp_path / "l.idx", np.array([1, 2, 3]))
        with pytest.raises(DomainError):
            load_mnist(FIXTURES / "two_images.idx", tmp_path / "l.idx")


class TestCsv:
    def test_round_trip(self, tmp_path):
        data = synth_blobs(3, 4, 3, 2.0, seed=0)
        write_csv_dataset(tmp_path / "d.csv", data)
        back = read_csv_dataset(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.features, data.features)
        np.testing.assert_array_equal(back.labels, data.labels)

    def test_label_column_anywhere(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text('label,"a,b"\n1,0.5\n-1,-0.25\n')
        data = read_csv_dataset(path)
        assert data.binary and data.classes == 1
        np.testing.assert_array_equal(data.features[:, 0], [0.5, -0.25])

    @pytest.mark.parametrize("text,line", [
        ("", 0),
        ("x0,x1\n1,2\n", 1),
        ("x0,label\n1.0,0\n2.0\n", 3),
        ("x0,label\n1.0,0\nabc,1\n", 3),
        ("x0,label\n", 2),
    ])
    def test_errors_name_the_line(self, tmp_path, text, line):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(ParseError) as err:
            read_csv_dataset(path)
        assert err.value.offset == line


class TestDataset:
    def test_validation(self):
        with pytest.raises(DomainError):
            LabeledDataset(np.array([[np.nan]]), np.array([0]))
        with pytest.raises(DomainError):
            LabeledDataset(np.ones((2, 2)), np.array([0]))
        with pytest.raises(DomainError):
            LabeledDataset(np.ones((2, 2)), np.array([0, -2]))
        with pytest.raises(DomainError):
            LabeledDataset(np.ones((1, 2)), np.array([0]), split="val")

    def test_head(self):
        data = synth_blobs(2, 5, 2, 1.0, seed=1)
        np.testing.assert_array_equal(data.head(3).features, data.features[:3])
        with pytest.raises(DomainError):
            data.head(11)


class TestSynthBlobs:
    def test_deterministic(self):
        a, b = synth_blobs(3, 10, 4, 2.0, seed=5), synth_blobs(3, 10, 4, 2.0, seed=5)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert not np.array_equal(a.features, synth_blobs(3, 10, 4, 2.0, seed=6).features)

    def test_mean_separation(self):
        data = synth_blobs(3, 20_000, 5, 3.0, seed=0)
        means = np.array([data.features[data.labels == k].mean(axis=0) for k in range(3)])
        dists = [np.linalg.norm(means[i] - means[j]) for i, j in [(0, 1), (0, 2), (1, 2)]]
        np.testing.assert_allclose(dists, 3.0, atol=0.05)

    def test_many_classes_on_a_circle(self):
        data = synth_blobs(6, 20_000, 2, 2.0, seed=1)
        means = np.array([data.features[data.labels == k].mean(axis=0) for k in range(6)])
        assert np.linalg.norm(means[0] - means[1]) == pytest.approx(2.0, abs=0.05)

    def test_zero_separation_identical(self):
        data = synth_blobs(2, 2000, 3, 0.0, seed=2)
        a, b = data.features[data.labels == 0], data.features[data.labels == 1]
        assert stats.ttest_ind(a, b).pvalue.min() > 0.001

    def test_separated_data_is_linearly_separable(self):
        data = synth_blobs(2, 500, 2, 10.0, seed=3, binary=True)
        w, *_ = np.linalg.lstsq(data.features, data.labels.astype(float), rcond=None)
        assert np.mean(np.sign(data.features @ w) != data.labels) <= 0.01

    def test_binary_labels(self):
        data = synth_blobs(2, 5, 2, 1.0, seed=0, binary=True)
        assert set(data.labels) == {-1, 1}
        with pytest.raises(DomainError):
            synth_blobs(3, 5, 2, 1.0, seed=0, binary=True)


class TestConfig:
    def test_parse(self):
        text = "# comment\nlearning_rates = 0.003, 0.01\nwidths=50,100  # inline\nmodel_kind = shel\n\n"
        cfg = parse_config(text, SWEEP_SCHEMA)
        assert cfg == {"learning_rates": [0.003, 0.01], "widths": [50, 100], "model_kind": "shel"}

    @pytest.mark.parametrize("text,line", [
        ("width = 5\nbogus = 1\n", 2),
        ("width = 5\nwidth = 6\n", 2),
        ("\n\nwidth = five\n", 3),
        ("width\n", 1),
    ])
    def test_errors_name_the_line(self, text, line):
        with pytest.raises(ParseError) as err:
            parse_config(text, TRAIN_SCHEMA)
        assert err.value.offset == line

    def test_paths_validated(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"train_data = {tmp_path / 'missing.csv'}\n")
        with pytest.raises(DomainError):
            load_config(cfg, TRAIN_SCHEMA)
        cfg.write_text(f"out = {tmp_path / 'no' / 'dir.csv'}\n")
        with pytest.raises(DomainError):
            load_config(cfg, TRAIN_SCHEMA)
        cfg.write_text(f"out = {tmp_path / 'ok.csv'}\n")
        assert load_config(cfg, TRAIN_SCHEMA)["out"].endswith("ok.csv")


class TestSvg:
    def test_markers_and_legend(self):
        a = Series("C", [(1.0, 2.0), (2.0, 3.0), (4.0, 1.0)], [[0, 1, 2]])
        b = Series("G", [(1.0, 0.1), (2.0, float("nan"))], [[0, 1]])
        svg = render_panels([Panel("t & t", "x", "y", [a, b], log_x=True)])
        assert svg.startswith('<?xml version="1.0"')
        assert 'version="1.1"' in svg and svg.rstrip().endswith("</svg>")
        assert len(re.findall(r'class="marker" data-series="C"', svg)) == 3
        assert len(re.findall(r'class="marker" data-series="G"', svg)) == 1
        assert "t &amp; t" in svg

    def test_empty_panel(self):
        svg = render_panels([Panel("empty", "x", "y", [])])
        assert "no data" in svg
