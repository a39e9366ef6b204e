import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfaug.data import FormatError, HEADER, decode_image, encode_image, ingest_dataset, synthetic_dataset, write_dataset


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]))))
def test_image_round_trip(img):
    np.testing.assert_array_equal(decode_image(encode_image(img)), img)


def test_dataset_round_trip(tmp_path):
    ds = synthetic_dataset(12, 3, 8, seed=1)
    write_dataset(ds, tmp_path)
    back = ingest_dataset(tmp_path)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.resolution == 8


def test_synthetic_is_seeded():
    a, b = synthetic_dataset(20, 4, 8, seed=7), synthetic_dataset(20, 4, 8, seed=7)
    np.testing.assert_array_equal(a.images, b.images)
    assert not np.array_equal(a.images, synthetic_dataset(20, 4, 8, seed=8).images)
    x, y = a.arrays()
    assert x.shape == (20, 3, 8, 8) and x.dtype == np.float32 and y.max() < 4


def test_truncated_image_reports_offset(tmp_path):
    buf = encode_image(np.zeros((4, 4, 3), np.uint8))[:-5]
    with pytest.raises(FormatError) as e:
        decode_image(buf, tmp_path / "x.mfi")
    assert e.value.offset == len(buf)
    with pytest.raises(FormatError) as e:
        decode_image(b"NOPE" + buf[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError):
        decode_image(buf[: HEADER.size - 1])


def test_index_count_mismatch(tmp_path):
    write_dataset(synthetic_dataset(4, 2, 8), tmp_path)
    idx = tmp_path / "index.txt"
    idx.write_text(idx.read_text().replace("mfaug-dataset 1 4", "mfaug-dataset 1 5"))
    with pytest.raises(FormatError, match="declares 5"):
        ingest_dataset(tmp_path)


def test_empty_and_missing(tmp_path):
    (tmp_path / "index.txt").write_text("mfaug-dataset 1 0\n")
    with pytest.raises(FormatError, match="empty"):
        ingest_dataset(tmp_path)
    with pytest.raises(FileNotFoundError):
        ingest_dataset(tmp_path / "nowhere")
