import pytest

from vlmlab.errors import ConfigError
from vlmlab.seeding import Rng
from vlmlab.sequence import (FrameGroup, MultimodalSequence, TextSpan,
                             sequence_from_manifest, sequence_to_manifest)
from vlmlab.timeline import (SamplingPolicy, detokenize, format_timestamp,
                             interleave_timestamps, parse_timestamp,
                             position_id_range_report, sample_frames, tokenize)


def ample_policy(fps=2.0):
    return SamplingPolicy(fps=fps, max_frames=100000, tokens_per_frame=1,
                          token_budget=10 ** 9)


class TestSampleFrames:
    def test_dense_grid(self):
        frames = sample_frames(10.0, 30.0, ample_policy(fps=2.0))
        assert frames == [k * 0.5 for k in range(20)]

    def test_cap_2048_uniform(self):
        policy = SamplingPolicy(fps=2.0, max_frames=2048, tokens_per_frame=1,
                                token_budget=10 ** 9)
        frames = sample_frames(3600.0, 30.0, policy)
        assert len(frames) == 2048
        spacing = 3600.0 / 2048
        assert frames[:3] == [0.0, spacing, 2 * spacing]
        assert frames[-1] == 2047 * spacing < 3600.0

    def test_zero_duration(self):
        assert sample_frames(0.0, 30.0, ample_policy()) == [0.0]

    def test_token_budget_caps_before_max_frames(self):
        policy = SamplingPolicy(fps=1.0, max_frames=1000, tokens_per_frame=10,
                                token_budget=100)
        frames = sample_frames(500.0, 30.0, policy)
        assert len(frames) == 10

    def test_native_fps_bounds_rate(self):
        frames = sample_frames(10.0, 0.5, ample_policy(fps=2.0))
        assert frames == [0.0, 2.0, 4.0, 6.0, 8.0]

    def test_policy_validation(self):
        with pytest.raises(ConfigError, match="positive"):
            SamplingPolicy(fps=0.0)

    def test_randomized_cap_sweep(self):
        rng = Rng(99)
        for trial in range(1000):
            r = rng.split(trial)
            policy = SamplingPolicy(
                fps=float(r.split("fps").uniform((), 0.1, 8.0)),
                max_frames=int(r.split("mf").integers(1, 4000)),
                tokens_per_frame=int(r.split("tpf").integers(1, 64)),
                token_budget=int(r.split("tb").integers(1, 100000)))
            duration = float(r.split("dur").uniform((), 0.0, 5000.0))
            frames = sample_frames(duration, 30.0, policy)
            assert len(frames) <= max(1, policy.frame_cap())
            if duration > 0:
                assert all(0 <= t < duration for t in frames)
                assert all(a < b for a, b in zip(frames, frames[1:]))
            else:
                assert frames == [0.0]


class TestTimestamps:
    def test_seconds_format(self):
        assert format_timestamp(3.0) == "<3.0 seconds>"

    def test_zero(self):
        assert format_timestamp(0) == "<0.0 seconds>"

    def test_hms(self):
        assert format_timestamp(3661.0, "hms") == "<01:01:01>"

    def test_round_half_up(self):
        assert format_timestamp(2.25) == "<2.3 seconds>"
        assert format_timestamp(2.24) == "<2.2 seconds>"

    def test_hms_truncates_and_pads(self):
        assert format_timestamp(59.9, "hms") == "<00:00:59>"
        assert format_timestamp(450000.0, "hms") == "<125:00:00>"

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            format_timestamp(-1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            format_timestamp(float("inf"))

    def test_unknown_style(self):
        with pytest.raises(ConfigError, match="style"):
            format_timestamp(1.0, "minutes")

    def test_hms_round_trip_truncated_value(self):
        rng = Rng(3)
        for trial in range(500):
            t = float(rng.split(trial).uniform((), 0, 500000))
            assert parse_timestamp(format_timestamp(t, "hms")) == float(int(t))

    def test_seconds_parse(self):
        assert parse_timestamp("<3.0 seconds>") == 3.0


class TestTokenizer:
    def test_empty(self):
        assert tokenize("") == []
        assert detokenize([]) == ""

    def test_timestamp_round_trip(self):
        s = "<3.0 seconds>"
        assert detokenize(tokenize(s)) == s

    def test_invalid_id(self):
        with pytest.raises(ValueError, match="byte value"):
            detokenize([65, 300])

    def test_injective_on_random_corpus(self):
        rng = Rng(17)
        seen = {}
        for trial in range(10000):
            r = rng.split(trial)
            n = int(r.split("len").integers(0, 24))
            s = "".join(chr(int(c)) for c in r.split("chars").integers(32, 0x2FF, n))
            key = tuple(tokenize(s))
            assert detokenize(key) == s
            if key in seen:
                assert seen[key] == s
            seen[key] = s


class TestInterleave:
    def test_four_frames_two_groups(self):
        seq = interleave_timestamps([0.0, 0.5, 1.0, 1.5], group_size=2)
        kinds = [type(e).__name__ for e in seq.elements]
        assert kinds == ["TextSpan", "FrameGroup", "TextSpan", "FrameGroup"]
        first_text = seq.elements[0]
        assert detokenize(first_text.token_ids) == "<0.0 seconds>"
        groups = seq.frame_groups()
        assert (groups[0].start_time, groups[0].end_time) == (0.0, 0.5)
        assert (groups[1].start_time, groups[1].end_time) == (1.0, 1.5)

    def test_singleton(self):
        seq = interleave_timestamps([2.0])
        assert [type(e).__name__ for e in seq.elements] == ["TextSpan", "FrameGroup"]

    def test_remainder_group(self):
        seq = interleave_timestamps([0.0, 0.5, 1.0], group_size=2)
        groups = seq.frame_groups()
        assert len(groups) == 2
        assert (groups[1].start_time, groups[1].end_time) == (1.0, 1.0)

    def test_empty_frames_rejected(self):
        with pytest.raises(ConfigError, match="at least one frame"):
            interleave_timestamps([])

    def test_hms_style_stamps(self):
        seq = interleave_timestamps([3661.0], style="hms")
        assert detokenize(seq.elements[0].token_ids) == "<01:01:01>"


class TestSparsityReport:
    def test_textual_scheme_consecutive(self):
        frames = [2.0 * k for k in range(100)]
        seq = interleave_timestamps(frames, group_size=1)
        report = position_id_range_report(seq, "textual_timestamp")
        assert report["count_t_distinct"] == 100
        assert report["sparsity"] == 1.0
        assert report["max_t"] - report["min_t"] + 1 == 100

    def test_absolute_two_hour_scenario(self):
        frames = [2.0 * k for k in range(3600)]
        seq = interleave_timestamps(frames, group_size=1)
        report = position_id_range_report(seq, "absolute_time", granularity=0.1)
        assert report["max_t"] == 71980
        assert report["count_t_distinct"] == 3600
        assert report["sparsity"] == pytest.approx(20.0, abs=0.01)

    def test_single_group(self):
        seq = interleave_timestamps([5.0])
        report = position_id_range_report(seq, "textual_timestamp")
        assert report["count_t_distinct"] == 1
        assert report["sparsity"] == 1.0

    def test_absolute_sparsity_exceeds_one_when_spacing_exceeds_granularity(self):
        frames = [0.7 * k for k in range(50)]
        seq = interleave_timestamps(frames, group_size=1)
        report = position_id_range_report(seq, "absolute_time", granularity=0.1)
        assert report["sparsity"] > 1.0

    def test_granularity_validated(self):
        seq = interleave_timestamps([0.0])
        with pytest.raises(ConfigError, match="granularity"):
            position_id_range_report(seq, "absolute_time", granularity=0.0)

    def test_needs_frame_groups(self):
        with pytest.raises(ConfigError, match="frame groups"):
            position_id_range_report(MultimodalSequence((TextSpan((1,)),)))


class TestSequenceTypes:
    def test_frame_group_time_order(self):
        with pytest.raises(ConfigError, match="start <= end"):
            FrameGroup(2.0, 1.0, 1, 1)

    def test_frame_group_negative_time(self):
        with pytest.raises(ConfigError, match="start <= end"):
            FrameGroup(-1.0, 0.0, 1, 1)

    def test_frame_group_grid_bounds(self):
        with pytest.raises(ConfigError, match="1x1"):
            FrameGroup(0.0, 0.0, 0, 1)

    def test_manifest_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown kind"):
            sequence_from_manifest({"elements": [{"kind": "audio"}]})


def test_manifest_round_trip():
    seq = MultimodalSequence((
        TextSpan((60, 51, 62)),
        FrameGroup(0.0, 1.0, 1, 2, "hms", signature=(0.5, -0.25)),
        TextSpan(()),
    ))
    again = sequence_from_manifest(sequence_to_manifest(seq))
    assert again == seq
    assert again.frame_groups()[0].signature == (0.5, -0.25)
