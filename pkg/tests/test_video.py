from fractions import Fraction

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from vdp.video import (
    Frame,
    InsufficientFramesError,
    MaskStack,
    OpacityMap,
    ResolutionMismatchError,
    VideoSequence,
    load_frame_sequence,
    load_masks,
    save_frame_sequence,
    to_uint8,
)


def _write_png(path, h, w, value=0.5):
    Image.fromarray(np.full((h, w, 3), int(round(value * 255)), np.uint8)).save(path)


def test_load_three_frames(tmp_path):
    for i in range(3):
        _write_png(tmp_path / f"{i:03d}.png", 64, 64)
    seq = load_frame_sequence(tmp_path)
    assert (len(seq), seq.height, seq.width) == (3, 64, 64)


def test_load_single_frame_is_insufficient(tmp_path):
    _write_png(tmp_path / "a.png", 64, 64)
    with pytest.raises(InsufficientFramesError, match="insufficient frames"):
        load_frame_sequence(tmp_path)


def test_load_mixed_resolution(tmp_path):
    _write_png(tmp_path / "a.png", 64, 64)
    _write_png(tmp_path / "b.png", 32, 32)
    with pytest.raises(ResolutionMismatchError, match="resolution mismatch"):
        load_frame_sequence(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_frame_sequence(tmp_path / "nope")


def test_constant_half_saves_as_128(tmp_path):
    seq = VideoSequence(np.full((2, 8, 8, 3), 0.5))
    paths = save_frame_sequence(seq, tmp_path)
    assert [p.name for p in paths] == ["00000.png", "00001.png"]
    assert np.all(np.asarray(Image.open(paths[0])) == 128)


def test_empty_sequence_rejected():
    with pytest.raises(InsufficientFramesError):
        VideoSequence(np.zeros((0, 8, 8, 3)))
    with pytest.raises(InsufficientFramesError):
        VideoSequence.from_frames([])


def test_random_roundtrip(tmp_path, rng):
    seq = VideoSequence(rng.random((2, 16, 12, 3)))
    save_frame_sequence(seq, tmp_path)
    back = load_frame_sequence(tmp_path)
    assert np.abs(back.pixels - seq.pixels).max() <= 1 / 255 + 1e-12


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        Frame(np.full((8, 8, 3), 1.2))
    with pytest.raises(ValueError):
        VideoSequence(np.full((2, 8, 8, 3), -0.1))
    with pytest.raises(ValueError):
        OpacityMap(np.full((8, 8), 2.0))


def test_frame_shape_rules():
    with pytest.raises(ValueError):
        Frame(np.zeros((4, 4, 3)))
    with pytest.raises(ValueError):
        Frame(np.zeros((8, 8)))


def test_arrays_are_immutable(rng):
    f = Frame(rng.random((8, 8, 3)))
    with pytest.raises(ValueError):
        f.pixels[0, 0, 0] = 0.0


def test_mask_stack_partition():
    m = np.full((8, 8), 0.3)
    stack = MaskStack.from_foreground(m)
    assert stack.L == 2
    np.testing.assert_allclose(stack.maps.sum(0), 1.0)
    with pytest.raises(ValueError):
        MaskStack(np.full((2, 8, 8), 0.6))
    with pytest.raises(ValueError):
        MaskStack(np.ones((1, 8, 8)))


def test_load_masks_threshold(tmp_path):
    for i, v in enumerate((0.2, 0.8)):
        Image.fromarray(np.full((8, 8), int(v * 255), np.uint8)).save(tmp_path / f"{i}.png")
    m = load_masks(tmp_path)
    assert m.shape == (2, 8, 8)
    assert not m[0].any() and m[1].all()


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 8, 9, 3), elements=st.floats(0, 1)))
def test_roundtrip_property(tmp_path_factory, pixels):
    d = tmp_path_factory.mktemp("rt")
    seq = VideoSequence(pixels)
    save_frame_sequence(seq, d)
    assert np.abs(load_frame_sequence(d).pixels - pixels).max() <= 1 / 255 + 1e-12


@given(st.floats(0, 1))
@example(0.7)
def test_to_uint8_rounds(v):
    # nearest level to the exact product; floor(v * 255 + 0.5) in floats misrounds e.g. v = 0.7
    out = int(to_uint8(np.array([v]))[0])
    assert abs(out - Fraction(v) * 255) <= Fraction(1, 2)
