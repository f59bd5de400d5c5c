import struct

import numpy as np
import pytest

from streamseg.tck import (
    TckError,
    read_labeled,
    read_tck,
    write_labeled,
    write_tck,
)
from streamseg.tractogram import Tractogram


def golden_bytes():
    """Hand-constructed single-streamline TCK file."""
    header = b"mrtrix tracks\ndatatype: Float32LE\ncount: 1\nfile: . 58\nEND\n"
    assert len(header) == 58
    body = struct.pack("<6f", 0, 0, 0, 1, 2, 3)
    body += struct.pack("<3f", float("nan"), float("nan"), float("nan"))
    body += struct.pack("<3f", float("inf"), float("inf"), float("inf"))
    return header + body


def test_read_golden_fixture():
    t = read_tck(golden_bytes())
    assert len(t) == 1
    np.testing.assert_array_equal(t.streamlines[0],
                                  [[0, 0, 0], [1, 2, 3]])


def test_write_matches_golden_fixture():
    t = Tractogram(streamlines=[np.array([[0.0, 0, 0], [1, 2, 3]])])
    assert write_tck(t, "Float32LE") == golden_bytes()


def test_round_trip_identity():
    rng = np.random.default_rng(0)
    for trial in range(50):
        lines = [
            rng.normal(scale=50.0, size=(rng.integers(2, 20), 3))
            .astype(np.float32).astype(np.float64)
            for _ in range(rng.integers(1, 6))
        ]
        t = Tractogram(streamlines=lines)
        out = read_tck(write_tck(t, "Float32LE"))
        assert len(out) == len(t)
        for a, b in zip(t.streamlines, out.streamlines):
            np.testing.assert_array_equal(a, b)


def test_round_trip_float64():
    rng = np.random.default_rng(1)
    lines = [rng.normal(size=(5, 3)) for _ in range(3)]
    t = Tractogram(streamlines=lines)
    out = read_tck(write_tck(t, "Float64LE"))
    for a, b in zip(t.streamlines, out.streamlines):
        np.testing.assert_array_equal(a, b)


def test_count_mismatch_warns_not_fails():
    t = Tractogram(streamlines=[np.array([[0.0, 0, 0], [1.0, 0, 0]])] * 3)
    data = write_tck(t).replace(b"count: 3", b"count: 2")
    with pytest.warns(UserWarning, match="count"):
        out = read_tck(data)
    assert len(out) == 3


def test_bad_magic():
    with pytest.raises(TckError, match="not a TCK"):
        read_tck(b"mrtrix image\nEND\n")


def test_unknown_datatype():
    data = golden_bytes().replace(b"Float32LE", b"Float16LE")
    with pytest.raises(TckError, match="datatype"):
        read_tck(data)


def test_truncated_binary():
    with pytest.raises(TckError, match="EOF"):
        read_tck(golden_bytes()[:-12])  # chop the Inf terminator


def test_short_streamline_names_index():
    header = b"mrtrix tracks\ndatatype: Float32LE\ncount: 1\nfile: . 58\nEND\n"
    body = struct.pack("<3f", 5, 5, 5)
    body += struct.pack("<3f", float("nan"), float("nan"), float("nan"))
    body += struct.pack("<3f", float("inf"), float("inf"), float("inf"))
    with pytest.raises(TckError, match="streamline 0"):
        read_tck(header + body)


def test_parser_ignores_data_after_terminator():
    data = golden_bytes() + struct.pack("<3f", 9, 9, 9)
    t = read_tck(data)
    assert len(t) == 1


def test_float32_range_check():
    t = Tractogram(streamlines=[np.array([[0.0, 0, 0], [1e40, 0, 0]])])
    with pytest.raises(TckError, match="not representable"):
        write_tck(t, "Float32LE")
    write_tck(t, "Float64LE")  # fine in 64-bit


def test_empty_tractogram_error():
    with pytest.raises(TckError):
        write_tck(Tractogram())


def test_labeled_round_trip():
    lines = [np.array([[0.0, 0, 0], [1.0, 0, 0]])] * 3
    t = Tractogram(streamlines=lines, labels=["AF_L", "AF_L", "CST_R"],
                   class_names=["AF_L", "CST_R"])
    text = write_labeled(t)
    labels, class_names = read_labeled(text, n_streamlines=3)
    assert labels == ["AF_L", "AF_L", "CST_R"]
    assert class_names == ["AF_L", "CST_R"]
    assert text == write_labeled(Tractogram(streamlines=lines, labels=labels,
                                            class_names=class_names))


def test_labeled_count_mismatch():
    t = Tractogram(streamlines=[np.array([[0.0, 0, 0], [1.0, 0, 0]])] * 2,
                   labels=["a", "a"], class_names=["a"])
    with pytest.raises(TckError):
        read_labeled(write_labeled(t), n_streamlines=3)


def test_labeled_empty_for_nonempty():
    text = "streamline labels\nclasses: 1\na\nlabels: 0\n"
    with pytest.raises(TckError, match="0 labels for 2 streamlines"):
        read_labeled(text, n_streamlines=2)


def test_labeled_unknown_label_names_line():
    text = "streamline labels\nclasses: 1\na\nlabels: 2\na\nb\n"
    with pytest.raises(TckError, match="line 6"):
        read_labeled(text)
