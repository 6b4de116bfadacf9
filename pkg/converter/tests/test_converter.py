import numpy as np
import pytest
import scipy.io

from czsf_converter import cli, convert, load_source_bundle, read_czsf
from czsf_converter.convert import ConvertError


def write_fixture(src_dir, n_classes=3, d=4, z=2, per_class=4, feature_order="dn", seed=0):
    """Synthetic res101/att_splits MAT pair in source conventions."""
    rng = np.random.default_rng(seed)
    n = n_classes * per_class
    features = rng.standard_normal((n, d)).astype(np.float32)
    labels = np.repeat(np.arange(1, n_classes + 1), per_class).reshape(-1, 1)
    att = rng.standard_normal((z, n_classes)).astype(np.float32)  # z x C, source layout
    idx = np.arange(1, n + 1)
    trainval = idx[idx % 4 != 0]
    rest = idx[idx % 4 == 0]
    test_seen = rest[: len(rest) // 2]
    test_unseen = rest[len(rest) // 2 :]
    scipy.io.savemat(
        src_dir / "res101.mat",
        {"features": features.T if feature_order == "dn" else features, "labels": labels},
    )
    scipy.io.savemat(
        src_dir / "att_splits.mat",
        {
            "att": att,
            "trainval_loc": trainval.reshape(-1, 1),
            "test_seen_loc": test_seen.reshape(-1, 1),
            "test_unseen_loc": test_unseen.reshape(-1, 1),
        },
    )
    return features, labels.ravel(), att.T, trainval, test_seen, test_unseen


class TestLoading:
    def test_bundle_arrays_and_orientation(self, tmp_path):
        feats, labels, att_cz, trainval, ts, tu = write_fixture(tmp_path)
        bundle = load_source_bundle(tmp_path)
        assert bundle.features.shape == (12, 4)
        assert np.array_equal(bundle.features, feats)
        assert bundle.attributes.shape == (3, 2)
        assert np.array_equal(bundle.attributes, att_cz)
        assert np.array_equal(bundle.trainval_loc, trainval)

    def test_features_already_n_by_d(self, tmp_path):
        feats, *_ = write_fixture(tmp_path, feature_order="nd")
        bundle = load_source_bundle(tmp_path)
        assert np.array_equal(bundle.features, feats)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConvertError):
            load_source_bundle(tmp_path)

    def test_square_attribute_matrix_rejected(self, tmp_path):
        write_fixture(tmp_path, n_classes=3, z=3)
        with pytest.raises(ConvertError):
            load_source_bundle(tmp_path)


class TestConvert:
    def test_zero_based_shift(self, tmp_path):
        feats, labels, att, trainval, ts, tu = write_fixture(tmp_path)
        out = tmp_path / "toy.czsf"
        convert(tmp_path, "toy", out)
        parsed = read_czsf(out)
        assert np.array_equal(parsed["labels"], labels - 1)
        assert np.array_equal(parsed["train_idx"], trainval - 1)
        assert np.array_equal(parsed["test_seen_idx"], ts - 1)
        assert np.array_equal(parsed["test_unseen_idx"], tu - 1)

    def test_float32_values_pass_through_bit_exact(self, tmp_path):
        feats, _, att, *_ = write_fixture(tmp_path)
        out = tmp_path / "toy.czsf"
        convert(tmp_path, "toy", out)
        parsed = read_czsf(out)
        assert parsed["features"].tobytes() == feats.astype("<f4").tobytes()
        assert parsed["attributes"].tobytes() == att.astype("<f4").tobytes()

    def test_registry_dimension_enforcement(self, tmp_path):
        write_fixture(tmp_path)  # 3 classes, d=4, z=2: not AWA2's (2048, 85, 50)
        with pytest.raises(ConvertError):
            convert(tmp_path, "awa2", tmp_path / "bad.czsf")

    def test_deterministic_output(self, tmp_path):
        write_fixture(tmp_path)
        a, b = tmp_path / "a.czsf", tmp_path / "b.czsf"
        convert(tmp_path, "toy", a)
        convert(tmp_path, "toy", b)
        assert a.read_bytes() == b.read_bytes()

    def test_primary_loader_reads_identical_arrays(self, tmp_path):
        czsl_data = pytest.importorskip("czsl.data")
        feats, labels, att, trainval, ts, tu = write_fixture(tmp_path)
        out = tmp_path / "toy.czsf"
        convert(tmp_path, "toy", out)
        container = czsl_data.read_container(out)
        assert np.array_equal(container.features, feats)
        assert np.array_equal(container.labels, labels - 1)
        assert np.array_equal(container.attributes, att)
        assert np.array_equal(container.train_idx, trainval - 1)
        assert np.array_equal(container.test_seen_idx, ts - 1)
        assert np.array_equal(container.test_unseen_idx, tu - 1)


class TestCli:
    def test_convert_then_verify(self, tmp_path, capsys):
        write_fixture(tmp_path)
        out = tmp_path / "toy.czsf"
        assert cli.main(["convert", str(tmp_path), "toy", str(out)]) == 0
        assert cli.main(["verify", str(out)]) == 0
        text = capsys.readouterr().out
        assert "checksum matches sidecar" in text
        assert "train=9" in text

    def test_split_counts_match_source(self, tmp_path, capsys):
        _, _, _, trainval, ts, tu = write_fixture(tmp_path)
        out = tmp_path / "toy.czsf"
        cli.main(["convert", str(tmp_path), "toy", str(out)])
        capsys.readouterr()
        cli.main(["verify", str(out)])
        text = capsys.readouterr().out
        assert f"train={len(trainval)}" in text
        assert f"test_seen={len(ts)}" in text
        assert f"test_unseen={len(tu)}" in text

    def test_flipped_payload_byte_fails_verify(self, tmp_path):
        write_fixture(tmp_path)
        out = tmp_path / "toy.czsf"
        cli.main(["convert", str(tmp_path), "toy", str(out)])
        blob = bytearray(out.read_bytes())
        blob[-3] ^= 0x40  # flip a bit inside the payload
        out.write_bytes(bytes(blob))
        assert cli.main(["verify", str(out)]) != 0

    def test_registry_mismatch_exits_nonzero(self, tmp_path):
        write_fixture(tmp_path)
        assert cli.main(["convert", str(tmp_path), "awa2", str(tmp_path / "x.czsf")]) != 0

    def test_missing_source_exits_nonzero(self, tmp_path):
        assert cli.main(["convert", str(tmp_path), "toy", str(tmp_path / "x.czsf")]) != 0
