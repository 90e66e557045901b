"""
Tests for the decode pipeline throughput simulator
"""

import io
import os
import tempfile
from collections import defaultdict

import pytest

from pframe_codec.errors import CyclicDependencyError, PipelineSpecError
from pframe_codec.pipeline_sim import (
    REPORT_FIELDS, Dependency, PipelineSpec, StageSpec, default_spec, fps_report,
    load_pipeline_spec, load_variants, parse_pipeline_spec, parse_variants, simulate,
    write_schedule
)

SPLIT_NETWORK = """
PEC GPU 11
NNa NPU 9
NNb NPU2 9
Warp WarpCore 5
ADD CPU 1
PEC -> NNa
NNa -> NNb
NNb -> Warp
Warp -> ADD
NNa[t-1] -> NNa
NNb[t-1] -> NNb
ADD[t-1] -> Warp
NNb[t-2] -> PEC
frames 64
"""


def assert_schedule_valid(spec, result):
    by_resource = defaultdict(list)
    ends = {}
    for item in result.schedule:
        by_resource[item.resource].append((item.start, item.end))
        ends[(item.frame, item.stage)] = item.end
    for intervals in by_resource.values():
        intervals.sort()
        for (_, end), (start, _) in zip(intervals, intervals[1:]):
            assert start >= end
    starts = {(item.frame, item.stage): item.start for item in result.schedule}
    for (frame, stage), start in starts.items():
        for dep in spec.dependencies:
            if dep.dst == stage and frame - dep.lag >= 0:
                assert start >= ends[(frame - dep.lag, dep.src)]


class TestPipelineSpec:
    """Test spec validation and derived figures."""

    def test_default_spec(self):
        """Test the bundled receiver pipeline."""
        spec = default_spec()
        assert spec.stage_names == ['PEC', 'NN', 'Warp', 'ADD']
        assert spec.resources == ['GPU', 'NPU', 'WarpCore', 'CPU']
        assert spec.frames == 64
        assert spec.bottleneck() == 'NPU'
        assert spec.bound_fps() == pytest.approx(1000 / 18)
        assert Dependency('NN', 'PEC', 2) in spec.dependencies

    def test_resource_load(self):
        """Test per-resource busy time sums stage durations."""
        spec = PipelineSpec((StageSpec('a', 'X', 2.0), StageSpec('b', 'X', 3.0), StageSpec('c', 'Y', 4.0)))
        assert spec.resource_load() == {'X': 5.0, 'Y': 4.0}
        assert spec.bottleneck() == 'X'

    def test_cycle_rejected(self):
        """Test same-frame cycles are reported with their path."""
        with pytest.raises(CyclicDependencyError, match='->'):
            PipelineSpec((StageSpec('a', 'X', 1), StageSpec('b', 'X', 1)),
                         (Dependency('a', 'b'), Dependency('b', 'a')))

    def test_lagged_self_edge_allowed(self):
        """Test a stage may wait on itself in an earlier frame."""
        spec = PipelineSpec((StageSpec('a', 'X', 1),), (Dependency('a', 'a', 1),))
        assert spec.frame_graph().number_of_edges() == 0

    @pytest.mark.parametrize('stages, dependencies, frames', [
        ((), (), 4),
        ((StageSpec('a', 'X', 1), StageSpec('a', 'Y', 1)), (), 4),
        ((StageSpec('a', 'X', 0),), (), 4),
        ((StageSpec('a', 'X', 1),), (Dependency('a', 'z'),), 4),
        ((StageSpec('a', 'X', 1),), (Dependency('a', 'a', -1),), 4),
        ((StageSpec('a', 'X', 1),), (), 0),
    ])
    def test_invalid_specs(self, stages, dependencies, frames):
        """Test malformed specs are rejected."""
        with pytest.raises(PipelineSpecError):
            PipelineSpec(stages, dependencies, frames)

    def test_without_stage_bridges(self):
        """Test removing a stage links its predecessors to its successors."""
        spec = default_spec().without_stage('Warp')
        assert 'Warp' not in spec.stage_names
        assert Dependency('NN', 'ADD', 0) in spec.dependencies
        assert Dependency('ADD', 'ADD', 1) in spec.dependencies

    def test_without_stage_errors(self):
        """Test removing unknown or last stages."""
        with pytest.raises(PipelineSpecError):
            default_spec().without_stage('Missing')
        with pytest.raises(PipelineSpecError):
            PipelineSpec((StageSpec('a', 'X', 1),)).without_stage('a')

    def test_with_duration(self):
        """Test replacing one stage's duration."""
        spec = default_spec().with_duration('PEC', 6)
        assert spec.stages[0] == StageSpec('PEC', 'GPU', 6)
        with pytest.raises(PipelineSpecError):
            default_spec().with_duration('Missing', 1)


class TestSimulate:
    """Test list scheduling."""

    def test_default_throughput(self):
        """Test the network stage sets the steady-state rate."""
        spec = default_spec()
        result = simulate(spec)
        assert result.period_ms == pytest.approx(18.0)
        assert result.fps == pytest.approx(55.556, abs=1e-3)
        assert result.makespan_ms == pytest.approx(35 + 18 * 63)
        assert len(result.schedule) == 4 * 64
        assert_schedule_valid(spec, result)

    def test_utilization(self):
        """Test the bottleneck resource is the busiest."""
        result = simulate(default_spec())
        assert result.utilization['NPU'] == pytest.approx(18 * 64 / result.makespan_ms)
        assert max(result.utilization, key=result.utilization.get) == 'NPU'

    def test_without_warp_unchanged(self):
        """Test dropping the warp stage does not change throughput."""
        assert simulate(default_spec().without_stage('Warp')).fps == pytest.approx(1000 / 18)

    def test_faster_parser_unchanged(self):
        """Test a faster entropy decoder does not help a network-bound pipeline."""
        assert simulate(default_spec().with_duration('PEC', 6)).fps == pytest.approx(1000 / 18)

    def test_single_resource_serializes(self):
        """Test one shared resource gives 1000 / sum of durations."""
        base = default_spec()
        stages = tuple(StageSpec(s.name, 'CPU', s.duration) for s in base.stages)
        spec = PipelineSpec(stages, base.dependencies, 32)
        result = simulate(spec)
        assert result.fps == pytest.approx(1000 / 35)
        assert_schedule_valid(spec, result)

    def test_split_network_speeds_up(self):
        """Test splitting the network over two units raises throughput."""
        spec = parse_pipeline_spec(SPLIT_NETWORK)
        result = simulate(spec)
        assert result.fps > 60.0
        assert result.fps <= spec.bound_fps() + 1e-9
        assert_schedule_valid(spec, result)

    def test_split_network_same_unit(self):
        """Test splitting the network on one unit changes nothing."""
        spec = parse_pipeline_spec(SPLIT_NETWORK.replace('NPU2', 'NPU'))
        assert simulate(spec).fps == pytest.approx(1000 / 18)

    def test_single_frame(self):
        """Test one frame reports its own completion time."""
        result = simulate(default_spec().with_frames(1))
        assert result.period_ms == pytest.approx(35.0)
        assert result.fps == pytest.approx(1000 / 35)

    def test_earlier_frame_wins_ties(self):
        """Test competing instances run in frame order."""
        spec = PipelineSpec((StageSpec('a', 'X', 1),), (), 3)
        result = simulate(spec)
        assert [item.frame for item in result.schedule] == [0, 1, 2]
        assert result.completions == [1.0, 2.0, 3.0]


class TestSpecText:
    """Test the text formats."""

    def test_parse_with_comments(self):
        """Test stages, edges, frames and comments."""
        spec = parse_pipeline_spec("# header\nA CPU 2.5  # inline\nB GPU 1\nA -> B\nB[t-1] -> A\nframes 8\n")
        assert spec.stages == (StageSpec('A', 'CPU', 2.5), StageSpec('B', 'GPU', 1.0))
        assert spec.dependencies == (Dependency('A', 'B', 0), Dependency('B', 'A', 1))
        assert spec.frames == 8

    def test_default_frames(self):
        """Test the frame count falls back to the default."""
        assert parse_pipeline_spec("A CPU 1", default_frames=5).frames == 5

    @pytest.mark.parametrize('text', [
        "A CPU fast",
        "A CPU 1\nA ~> B",
        "A CPU 1\nA[t-0] -> A",
        "A CPU 1\nframes 2.5",
        "A CPU 1\nA -> Z",
        "",
    ])
    def test_parse_errors(self, text):
        """Test malformed text is rejected."""
        with pytest.raises(PipelineSpecError):
            parse_pipeline_spec(text)

    def test_error_names_line(self):
        """Test parse errors carry the line number."""
        with pytest.raises(PipelineSpecError, match='line 3'):
            parse_pipeline_spec("A CPU 1\n\nwhat is this\n")

    def test_load_from_file(self):
        """Test loading a spec file."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'pipe.txt')
            with open(path, 'w') as f:
                f.write(SPLIT_NETWORK)
            assert load_pipeline_spec(path) == parse_pipeline_spec(SPLIT_NETWORK)

    def test_variants(self):
        """Test labelled sections."""
        text = "[fast]\nA CPU 1\n[slow]\nA CPU 4\nframes 3\n"
        variants = parse_variants(text)
        assert [label for label, _ in variants] == ['fast', 'slow']
        assert variants[1][1].frames == 3
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'variants.txt')
            with open(path, 'w') as f:
                f.write(text)
            assert load_variants(path) == variants

    def test_variants_need_header(self):
        """Test content before the first section is rejected."""
        with pytest.raises(PipelineSpecError):
            parse_variants("A CPU 1\n[x]\nA CPU 1\n")


class TestReports:
    """Test report output."""

    def test_fps_report(self):
        """Test rows and CSV for several variants."""
        stream = io.StringIO()
        rows = fps_report([('default', default_spec()), ('no-warp', default_spec().without_stage('Warp'))], stream)
        assert [row['label'] for row in rows] == ['default', 'no-warp']
        assert rows[0]['bottleneck'] == 'NPU'
        lines = stream.getvalue().splitlines()
        assert lines[0] == ','.join(REPORT_FIELDS)
        assert lines[1].startswith('default,64,55.556,18.000,55.556,NPU,')

    def test_empty_report(self):
        """Test no variants gives only the header."""
        stream = io.StringIO()
        assert fps_report([], stream) == []
        assert stream.getvalue() == ','.join(REPORT_FIELDS) + '\n'

    def test_write_schedule(self):
        """Test one CSV row per stage instance."""
        stream = io.StringIO()
        write_schedule(simulate(default_spec().with_frames(2)), stream)
        lines = stream.getvalue().splitlines()
        assert lines[0] == 'frame,stage,resource,start_ms,end_ms'
        assert len(lines) == 1 + 8
        assert lines[1] == '0,PEC,GPU,0.000,11.000'
