"""
Decode pipeline throughput simulator

Discrete-event list scheduling of a receiver pipeline whose stages are bound
to exclusive resources (NPU, GPU, warp unit, CPU). Stages of one frame form a
DAG; edges may also reach back to earlier frames, which is how overlap
between consecutive frames is bounded.
"""

import csv
import heapq
import logging
import math
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx

from .errors import CyclicDependencyError, PipelineSpecError

logger = logging.getLogger(__name__)

DEFAULT_SPEC_RESOURCE = 'receiver_pipeline.txt'
REPORT_FIELDS = ['label', 'frames', 'fps', 'period_ms', 'bound_fps', 'bottleneck', 'makespan_ms']
SCHEDULE_FIELDS = ['frame', 'stage', 'resource', 'start_ms', 'end_ms']

_STAGE_LINE = re.compile(r'^(?P<name>[A-Za-z_][\w.-]*)\s+(?P<resource>\S+)\s+(?P<duration>\S+)$')
_EDGE_LINE = re.compile(
    r'^(?P<src>[A-Za-z_][\w.-]*)(?:\[t-(?P<lag>\d+)\])?\s*->\s*(?P<dst>[A-Za-z_][\w.-]*)$')
_FRAMES_LINE = re.compile(r'^frames\s+(?P<count>\S+)$')
_SECTION_LINE = re.compile(r'^\[(?P<label>[^\]]+)\]$')


@dataclass(frozen=True)
class StageSpec:
    name: str
    resource: str
    duration: float


@dataclass(frozen=True)
class Dependency:
    """``dst`` of frame t waits for ``src`` of frame t - lag."""

    src: str
    dst: str
    lag: int = 0


@dataclass(frozen=True)
class PipelineSpec:
    """
    Stages, their resources and dependencies, and the number of frames to run.

    Raises:
        PipelineSpecError: Unknown stage names, bad durations or frame count
        CyclicDependencyError: The within-frame dependency graph has a cycle
    """

    stages: Tuple[StageSpec, ...]
    dependencies: Tuple[Dependency, ...] = ()
    frames: int = 32

    def __post_init__(self):
        object.__setattr__(self, 'stages', tuple(self.stages))
        object.__setattr__(self, 'dependencies', tuple(self.dependencies))
        if not self.stages:
            raise PipelineSpecError("Pipeline has no stages")
        names = [s.name for s in self.stages]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise PipelineSpecError(f"Duplicate stage names: {duplicates}")
        for stage in self.stages:
            if not stage.duration > 0 or not math.isfinite(stage.duration):
                raise PipelineSpecError(f"Stage '{stage.name}' needs a positive duration, got {stage.duration}")
        if self.frames < 1:
            raise PipelineSpecError(f"Frame count must be >= 1, got {self.frames}")
        known = set(names)
        for dep in self.dependencies:
            for name in (dep.src, dep.dst):
                if name not in known:
                    raise PipelineSpecError(f"Dependency {dep.src} -> {dep.dst} names unknown stage '{name}'")
            if dep.lag < 0:
                raise PipelineSpecError(f"Dependency {dep.src} -> {dep.dst} has negative lag {dep.lag}")
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        graph = self.frame_graph()
        if not nx.is_directed_acyclic_graph(graph):
            cycle = nx.find_cycle(graph)
            path = ' -> '.join([u for u, _ in cycle] + [cycle[-1][1]])
            error_msg = f"Cyclic stage dependencies: {path}"
            logger.error(error_msg)
            raise CyclicDependencyError(error_msg)

    def frame_graph(self) -> nx.DiGraph:
        """Dependency graph within a single frame."""
        graph = nx.DiGraph()
        graph.add_nodes_from(s.name for s in self.stages)
        graph.add_edges_from((d.src, d.dst) for d in self.dependencies if d.lag == 0)
        return graph

    @property
    def stage_names(self) -> List[str]:
        return [s.name for s in self.stages]

    @property
    def resources(self) -> List[str]:
        seen: Dict[str, None] = {}
        for stage in self.stages:
            seen.setdefault(stage.resource, None)
        return list(seen)

    def resource_load(self) -> Dict[str, float]:
        """Busy time per frame on each resource."""
        load: Dict[str, float] = defaultdict(float)
        for stage in self.stages:
            load[stage.resource] += stage.duration
        return dict(load)

    def bound_fps(self) -> float:
        """Throughput ceiling set by the most loaded resource."""
        return 1000.0 / max(self.resource_load().values())

    def bottleneck(self) -> str:
        load = self.resource_load()
        return max(self.resources, key=lambda r: load[r])

    def with_duration(self, name: str, duration: float) -> 'PipelineSpec':
        stages = [StageSpec(s.name, s.resource, duration) if s.name == name else s for s in self.stages]
        if name not in self.stage_names:
            raise PipelineSpecError(f"No stage named '{name}'")
        return PipelineSpec(tuple(stages), self.dependencies, self.frames)

    def with_frames(self, frames: int) -> 'PipelineSpec':
        return PipelineSpec(self.stages, self.dependencies, frames)

    def without_stage(self, name: str) -> 'PipelineSpec':
        """
        Drop a stage, connecting each of its predecessors to each of its
        successors. Lags add up along the bridged path.
        """
        if name not in self.stage_names:
            raise PipelineSpecError(f"No stage named '{name}'")
        if len(self.stages) == 1:
            raise PipelineSpecError("Cannot remove the only stage")
        incoming = [d for d in self.dependencies if d.dst == name and d.src != name]
        outgoing = [d for d in self.dependencies if d.src == name and d.dst != name]
        kept = [d for d in self.dependencies if name not in (d.src, d.dst)]
        for before in incoming:
            for after in outgoing:
                bridged = Dependency(before.src, after.dst, before.lag + after.lag)
                if bridged not in kept:
                    kept.append(bridged)
        stages = tuple(s for s in self.stages if s.name != name)
        return PipelineSpec(stages, tuple(kept), self.frames)


@dataclass(frozen=True)
class ScheduledStage:
    frame: int
    stage: str
    resource: str
    start: float
    end: float


@dataclass
class SimulationResult:
    """Schedule and throughput figures of one simulation run."""

    schedule: List[ScheduledStage]
    completions: List[float]
    fps: float
    period_ms: float
    makespan_ms: float
    utilization: Dict[str, float] = field(default_factory=dict)


def _steady_period(completions: Sequence[float]) -> float:
    ordered = sorted(completions)
    tail = math.ceil(len(ordered) / 2)
    window = ordered[-(tail + 1):]
    if len(window) < 2:
        return window[-1]
    return (window[-1] - window[0]) / (len(window) - 1)


def simulate(spec: PipelineSpec) -> SimulationResult:
    """
    Run list scheduling over ``spec.frames`` frames.

    A stage instance starts as soon as all its dependencies have finished
    and its resource is free. When several instances compete for a resource
    the earlier frame wins, then the earlier declared stage.

    Returns:
        SimulationResult with the schedule, steady-state FPS (from the mean
        completion gap over the last half of the frames) and utilization
    """
    order = {stage.name: index for index, stage in enumerate(spec.stages)}
    frames = spec.frames

    waiting: Dict[Tuple[int, str], int] = {}
    dependents: Dict[Tuple[int, str], List[Tuple[int, str]]] = defaultdict(list)
    for t in range(frames):
        for stage in spec.stages:
            waiting[(t, stage.name)] = 0
    for t in range(frames):
        for dep in spec.dependencies:
            source_frame = t - dep.lag
            if source_frame < 0:
                continue
            waiting[(t, dep.dst)] += 1
            dependents[(source_frame, dep.src)].append((t, dep.dst))

    ready: List[Tuple[int, int]] = [(t, order[name]) for (t, name), n in waiting.items() if n == 0]
    heapq.heapify(ready)
    running: List[Tuple[float, int, int, int]] = []
    resource_free = {resource: True for resource in spec.resources}
    busy = defaultdict(float)
    schedule: List[ScheduledStage] = []
    frame_done = [0.0] * frames
    remaining = [len(spec.stages)] * frames
    now = 0.0
    sequence = 0

    while ready or running:
        blocked = []
        while ready:
            t, index = heapq.heappop(ready)
            stage = spec.stages[index]
            if resource_free[stage.resource]:
                resource_free[stage.resource] = False
                heapq.heappush(running, (now + stage.duration, sequence, t, index))
                sequence += 1
                schedule.append(ScheduledStage(t, stage.name, stage.resource, now, now + stage.duration))
            else:
                blocked.append((t, index))
        for item in blocked:
            heapq.heappush(ready, item)
        if not running:
            break

        now = running[0][0]
        while running and running[0][0] == now:
            _, _, t, index = heapq.heappop(running)
            stage = spec.stages[index]
            resource_free[stage.resource] = True
            busy[stage.resource] += stage.duration
            remaining[t] -= 1
            if remaining[t] == 0:
                frame_done[t] = now
            for successor in dependents[(t, stage.name)]:
                waiting[successor] -= 1
                if waiting[successor] == 0:
                    heapq.heappush(ready, (successor[0], order[successor[1]]))

    makespan = max(frame_done)
    period = _steady_period(frame_done)
    utilization = {r: busy[r] / makespan for r in spec.resources}
    schedule.sort(key=lambda s: (s.start, s.frame, order[s.stage]))
    logger.debug(f"Simulated {frames} frames: period {period:.3f} ms, makespan {makespan:.3f} ms")
    return SimulationResult(schedule, frame_done, 1000.0 / period, period, makespan, utilization)


def _parse_number(text: str, what: str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise PipelineSpecError(f"line {line_no}: bad {what} '{text}'")


def _parse_lines(lines: Sequence[Tuple[int, str]], default_frames: int) -> PipelineSpec:
    stages: List[StageSpec] = []
    dependencies: List[Dependency] = []
    frames = default_frames
    for line_no, line in lines:
        match = _EDGE_LINE.match(line)
        if match:
            lag = int(match.group('lag')) if match.group('lag') else 0
            if match.group('lag') is not None and lag == 0:
                raise PipelineSpecError(f"line {line_no}: use 'a -> b' for same-frame edges")
            dependencies.append(Dependency(match.group('src'), match.group('dst'), lag))
            continue
        match = _FRAMES_LINE.match(line)
        if match:
            count = _parse_number(match.group('count'), 'frame count', line_no)
            if count != int(count):
                raise PipelineSpecError(f"line {line_no}: frame count must be an integer")
            frames = int(count)
            continue
        match = _STAGE_LINE.match(line)
        if match:
            duration = _parse_number(match.group('duration'), 'duration', line_no)
            stages.append(StageSpec(match.group('name'), match.group('resource'), duration))
            continue
        error_msg = f"line {line_no}: cannot parse '{line}'"
        logger.error(error_msg)
        raise PipelineSpecError(error_msg)
    return PipelineSpec(tuple(stages), tuple(dependencies), frames)


def _content_lines(text: str) -> List[Tuple[int, str]]:
    lines = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if line:
            lines.append((line_no, line))
    return lines


def parse_pipeline_spec(text: str, default_frames: int = 32) -> PipelineSpec:
    """
    Parse the plain-text pipeline format.

    Lines are ``<name> <resource> <duration_ms>`` stages, ``<a> -> <b>``
    same-frame edges, ``<a>[t-k] -> <b>`` edges from frame t-k, and
    ``frames <n>``. ``#`` starts a comment.

    Raises:
        PipelineSpecError: Malformed line or invalid pipeline
    """
    return _parse_lines(_content_lines(text), default_frames)


def load_pipeline_spec(path: Union[str, os.PathLike]) -> PipelineSpec:
    with open(path) as f:
        return parse_pipeline_spec(f.read())


def parse_variants(text: str, default_frames: int = 32) -> List[Tuple[str, PipelineSpec]]:
    """
    Parse a variants file: ``[label]`` headers each followed by a full spec.
    """
    variants: List[Tuple[str, PipelineSpec]] = []
    label: Optional[str] = None
    body: List[Tuple[int, str]] = []
    for line_no, line in _content_lines(text):
        match = _SECTION_LINE.match(line)
        if match:
            if label is not None:
                variants.append((label, _parse_lines(body, default_frames)))
            label, body = match.group('label').strip(), []
        elif label is None:
            raise PipelineSpecError(f"line {line_no}: expected a [label] section header")
        else:
            body.append((line_no, line))
    if label is not None:
        variants.append((label, _parse_lines(body, default_frames)))
    return variants


def load_variants(path: Union[str, os.PathLike]) -> List[Tuple[str, PipelineSpec]]:
    with open(path) as f:
        return parse_variants(f.read())


def default_spec() -> PipelineSpec:
    """The bundled four-stage receiver pipeline."""
    text = resources.files('pframe_codec').joinpath('data', DEFAULT_SPEC_RESOURCE).read_text()
    return parse_pipeline_spec(text)


def fps_report(variants: Sequence[Tuple[str, PipelineSpec]], stream=None) -> List[Dict[str, object]]:
    """
    Simulate each labelled spec and tabulate throughput.

    Args:
        variants: (label, spec) pairs
        stream: Optional text stream receiving the table as CSV

    Returns:
        One dict per variant keyed by REPORT_FIELDS
    """
    rows = []
    for label, spec in variants:
        result = simulate(spec)
        rows.append({
            'label': label,
            'frames': spec.frames,
            'fps': result.fps,
            'period_ms': result.period_ms,
            'bound_fps': spec.bound_fps(),
            'bottleneck': spec.bottleneck(),
            'makespan_ms': result.makespan_ms,
        })
    if stream is not None:
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(REPORT_FIELDS)
        for row in rows:
            writer.writerow([row['label'], row['frames'], f"{row['fps']:.3f}", f"{row['period_ms']:.3f}",
                             f"{row['bound_fps']:.3f}", row['bottleneck'], f"{row['makespan_ms']:.3f}"])
    return rows


def write_schedule(result: SimulationResult, stream) -> None:
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(SCHEDULE_FIELDS)
    for item in result.schedule:
        writer.writerow([item.frame, item.stage, item.resource, f'{item.start:.3f}', f'{item.end:.3f}'])
