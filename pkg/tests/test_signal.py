"""Preprocessing: segmentation, band-pass filter, Hann window, spectrograms."""

import numpy as np
import pytest
from scipy import signal as sps

from semgcal import (
    EmptyInputError,
    ParameterError,
    RawRecording,
    Segment,
    ShapeError,
    bandpass_filter,
    build_spectrogram_example,
    hann_window,
    segment_stream,
    spectrogram_channel,
)
from semgcal.signal import design_bandpass


def make_recording(t, labels=None, seed=0):
    rng = np.random.default_rng(seed)
    samples = rng.integers(-2000, 2000, size=(10, t)).astype(np.int16)
    return RawRecording(samples=samples, rate_hz=1000, labels=labels)


def sliding_window_count(t, w, s):
    """Independent counting oracle: enumerate window starts."""
    count = 0
    start = 0
    while start + w <= t:
        count += 1
        start += s
    return count


class TestSegmentStream:
    def test_5000_samples_gives_98_segments(self):
        rec = make_recording(5000)
        segments = segment_stream(rec, window_ms=150, overlap_ms=100)
        assert len(segments) == sliding_window_count(5000, 150, 50) == 98

    def test_single_window(self):
        rec = make_recording(150)
        segments = segment_stream(rec)
        assert len(segments) == 1
        assert segments[0].start_index == 0

    def test_paper_defaults_window_and_stride(self):
        rec = make_recording(400)
        segments = segment_stream(rec, window_ms=150, overlap_ms=100)
        assert segments[0].data.shape == (10, 150)
        assert segments[1].start_index - segments[0].start_index == 50

    def test_count_formula_against_oracle_randomized(self):
        rng = np.random.default_rng(42)
        rec_cache = {}
        for _ in range(1000):
            w = int(rng.integers(2, 60)) * 10  # multiple of stride granularity
            s_ms = int(rng.integers(1, w // 10)) * 10
            t = int(rng.integers(w, w * 8))
            if t not in rec_cache:
                rec_cache[t] = make_recording(t)
            segments = segment_stream(rec_cache[t], window_ms=w, overlap_ms=w - s_ms)
            assert len(segments) == sliding_window_count(t, w, s_ms)

    def test_segments_ordered_by_start(self):
        segments = segment_stream(make_recording(1234))
        starts = [s.start_index for s in segments]
        assert starts == sorted(starts)

    def test_majority_label(self):
        labels = np.array([0] * 100 + [3] * 50)
        rec = make_recording(150, labels=labels)
        (seg,) = segment_stream(rec)
        assert seg.label == 0

    def test_majority_tie_goes_to_later_label(self):
        labels = np.array([2] * 75 + [5] * 75)
        rec = make_recording(150, labels=labels)
        (seg,) = segment_stream(rec)
        assert seg.label == 5

    def test_too_short_stream(self):
        with pytest.raises(EmptyInputError):
            segment_stream(make_recording(100))

    def test_wrong_channel_count(self):
        with pytest.raises(ShapeError):
            RawRecording(samples=np.zeros((9, 500), dtype=np.int16), rate_hz=1000)

    def test_bad_window_params(self):
        with pytest.raises(ParameterError):
            segment_stream(make_recording(500), window_ms=100, overlap_ms=100)


class TestBandpass:
    def seg(self, x):
        return Segment(data=np.tile(x, (10, 1)), start_index=0)

    def test_dc_input_decays(self):
        out = bandpass_filter(self.seg(np.full(150, 500.0)))
        assert abs(out.data[0, -50:].mean()) < 0.01 * 500.0

    def test_100hz_within_1db(self):
        # frequency-response oracle for the designed filter
        sos = design_bandpass(20.0, 495.0, 4, 1000)
        w, h = sps.sosfreqz(sos, worN=[100.0], fs=1000)
        oracle_db = 20 * np.log10(np.abs(h[0]))
        assert abs(oracle_db) <= 1.0

        t = np.arange(3000)
        x = np.sin(2 * np.pi * 100.0 * t / 1000.0)
        out = bandpass_filter(self.seg(x))
        amp = np.sqrt(2.0) * np.sqrt(np.mean(out.data[0, -1000:] ** 2))
        assert abs(20 * np.log10(amp)) <= 1.0

    def test_5hz_attenuated_20db(self):
        sos = design_bandpass(20.0, 495.0, 4, 1000)
        w, h = sps.sosfreqz(sos, worN=[5.0], fs=1000)
        assert 20 * np.log10(np.abs(h[0])) <= -20.0

        t = np.arange(5000)
        x = np.sin(2 * np.pi * 5.0 * t / 1000.0)
        out = bandpass_filter(self.seg(x))
        amp = np.sqrt(2.0) * np.sqrt(np.mean(out.data[0, -1000:] ** 2))
        assert 20 * np.log10(amp) <= -20.0

    def test_linearity(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((10, 150))
        y = rng.standard_normal((10, 150))
        a, b = 2.5, -1.25
        lhs = bandpass_filter(Segment(data=a * x + b * y, start_index=0)).data
        rhs = a * bandpass_filter(Segment(data=x, start_index=0)).data \
            + b * bandpass_filter(Segment(data=y, start_index=0)).data
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    def test_shape_and_metadata_preserved(self):
        seg = Segment(data=np.random.default_rng(1).standard_normal((10, 150)),
                      start_index=250, label=4)
        out = bandpass_filter(seg)
        assert out.data.shape == (10, 150)
        assert out.start_index == 250 and out.label == 4

    def test_high_cutoff_at_nyquist_rejected(self):
        with pytest.raises(ParameterError):
            design_bandpass(20.0, 500.0, 4, 1000)

    def test_odd_order_rejected(self):
        with pytest.raises(ParameterError):
            design_bandpass(20.0, 495.0, 3, 1000)

    def test_filter_is_order_four(self):
        # two second-order sections == fourth order
        assert design_bandpass().shape[0] == 2


class TestHannWindow:
    def test_endpoint_zero(self):
        assert hann_window(48)[0] == 0.0

    def test_midpoint_one(self):
        assert hann_window(48)[24] == pytest.approx(1.0, abs=1e-15)

    def test_n4_values(self):
        np.testing.assert_allclose(hann_window(4), [0.0, 0.5, 1.0, 0.5], atol=1e-15)

    def test_range(self):
        w = hann_window(48)
        assert np.all(w >= 0.0) and np.all(w <= 1.0)

    def test_too_short(self):
        with pytest.raises(ParameterError):
            hann_window(1)


def direct_dft_magnitudes(x, win, hop):
    """O(n^2) DFT oracle for the windowed frames."""
    n_frames = (len(x) - win) // hop + 1
    w = 0.5 * (1 - np.cos(2 * np.pi * np.arange(win) / win))
    out = np.zeros((n_frames, win // 2 + 1))
    for f in range(n_frames):
        frame = x[f * hop : f * hop + win] * w
        for k in range(win // 2 + 1):
            re = np.sum(frame * np.cos(-2 * np.pi * k * np.arange(win) / win))
            im = np.sum(frame * np.sin(-2 * np.pi * k * np.arange(win) / win))
            out[f, k] = np.hypot(re, im)
    return out


class TestSpectrogram:
    def test_150_samples_four_frames_25_bins(self):
        x = np.random.default_rng(3).standard_normal(150)
        s = spectrogram_channel(x, win=48, hop=34)
        assert s.shape == (4, 25)

    def test_frame_offsets_from_overlap_14(self):
        # hop = 48 - 14 = 34; frames land at 0, 34, 68, 102, so energy placed
        # past sample 116 is visible to the last frame only
        x = np.zeros(150)
        x[120:150] = np.random.default_rng(5).standard_normal(30)
        s = spectrogram_channel(x)
        assert np.allclose(s[:3], 0)
        assert s[3].sum() > 0

    def test_all_zero_input(self):
        assert np.all(spectrogram_channel(np.zeros(150)) == 0)

    def test_bin5_cosine_dominates_and_matches_dft_oracle(self):
        t = np.arange(150)
        x = np.cos(2 * np.pi * 5.0 * t / 48.0)
        s = spectrogram_channel(x)
        assert np.all(np.argmax(s, axis=1) == 5)
        np.testing.assert_allclose(s, direct_dft_magnitudes(x, 48, 34), atol=1e-9)

    def test_non_negative(self):
        x = np.random.default_rng(11).standard_normal(150)
        assert np.all(spectrogram_channel(x) >= 0)

    def test_too_short_signal(self):
        with pytest.raises(ShapeError):
            spectrogram_channel(np.zeros(40))


class TestSpectrogramExample:
    def rand_segment(self, seed=0):
        return Segment(data=np.random.default_rng(seed).standard_normal((10, 150)), start_index=0, label=2)

    def test_shape(self):
        ex = build_spectrogram_example(self.rand_segment())
        assert ex.tensor.shape == (4, 10, 24)
        assert ex.label == 2

    def test_all_zero_segment(self):
        ex = build_spectrogram_example(Segment(data=np.zeros((10, 150)), start_index=0))
        assert np.all(ex.tensor == 0)

    def test_channel_independence(self):
        data = np.zeros((10, 150))
        data[3] = np.random.default_rng(9).standard_normal(150)
        ex = build_spectrogram_example(Segment(data=data, start_index=0))
        mask = np.zeros(10, dtype=bool)
        mask[3] = True
        assert np.all(ex.tensor[:, mask, :] != 0) or np.any(ex.tensor[:, mask, :] != 0)
        assert np.all(ex.tensor[:, ~mask, :] == 0)

    def test_matches_per_channel_spectrograms(self):
        seg = self.rand_segment(4)
        ex = build_spectrogram_example(seg)
        for c in range(10):
            np.testing.assert_allclose(
                ex.tensor[:, c, :], spectrogram_channel(seg.data[c])[:, 1:], rtol=1e-6, atol=1e-6
            )

    def test_non_negative(self):
        assert np.all(build_spectrogram_example(self.rand_segment(8)).tensor >= 0)

    def test_dc_offset_confined_to_dropped_and_adjacent_bin(self):
        # The Hann window's spectrum has support on bins {0, 1}, so a constant
        # offset moves only those two bins of the pre-drop 4x25 spectrogram;
        # bins >= 2 are unchanged and bin 0 absorbs the larger share.
        seg = bandpass_filter(self.rand_segment(6))
        base = np.stack([spectrogram_channel(ch) for ch in seg.data])
        shifted = np.stack([spectrogram_channel(ch + 10.0) for ch in seg.data])
        np.testing.assert_allclose(shifted[:, :, 2:], base[:, :, 2:], rtol=1e-9, atol=1e-9)
        delta0 = np.abs(shifted[:, :, 0] - base[:, :, 0]).mean()
        delta1 = np.abs(shifted[:, :, 1] - base[:, :, 1]).mean()
        assert delta0 > delta1

    def test_pipeline_deterministic(self):
        rec = make_recording(2000, seed=21)
        def run():
            out = []
            for seg in segment_stream(rec):
                out.append(build_spectrogram_example(bandpass_filter(seg)).tensor)
            return np.stack(out)
        a, b = run(), run()
        assert a.tobytes() == b.tobytes()
