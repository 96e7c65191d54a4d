"""
Simulated multi-device runtime: workers, collectives and two-lane scheduling.

A DeviceGroup stands in for a multi-GPU node. Each of its P workers is an OS
thread with its own buffers; data moves between workers only through the
collectives implemented here (broadcast, all-reduce, reduce), which makes the
communication volume of an algorithm observable through byte counters.

Every worker also owns a LaneScheduler with two single-threaded lanes, lane 0
for computation and lane 1 for communication. Tasks run in submission order
within a lane and only after their declared dependencies, which reproduces
the semantics of two GPU streams synchronised by events. Every task and every
traced region is recorded as a TimelineEvent for the profiler.

Typical usage example:
    group = DeviceGroup(4)

    def worker(comm):
        buf = DenseMatrix.zeros(1, 3)
        if comm.rank == 2:
            buf.array[:] = [1, 2, 3]
        comm.broadcast(2, buf)
        return buf.array.copy()

    results = group.launch(worker)
    group.export_timeline('timeline.json')
"""

import itertools
import json
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .dense_core import DenseMatrix


COMPUTE_LANE = 0
COMM_LANE = 1

EVENT_KINDS = ('broadcast', 'spmm', 'gemm', 'reduce', 'all_reduce',
               'activation', 'loss', 'adam', 'other')
COMM_KINDS = frozenset({'broadcast', 'reduce', 'all_reduce'})


class ProtocolError(RuntimeError):
    """Workers issued mismatched collective calls."""


class CollectiveTimeoutError(ProtocolError):
    """A collective did not gather every worker before the group timeout."""


class GroupAbortedError(RuntimeError):
    """The device group was shut down while a collective was pending."""


class UnknownTaskError(KeyError):
    """A task dependency refers to an id that was never submitted."""


@dataclass
class TimelineEvent:
    """
    One executed task or traced region.

    Times are microseconds since the group was created (monotonic clock).
    """
    worker: int
    lane: int
    stage: int
    kind: str
    t_start: float
    t_end: float
    task_id: Optional[int] = None
    deps: List[int] = field(default_factory=list)
    label: str = ''

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Completion:
    """Result record of a finished collective."""
    kind: str
    root: int
    nbytes: int
    t_start: float
    t_end: float

    @property
    def duration_us(self) -> float:
        return self.t_end - self.t_start


class Timeline:
    """Thread-safe event sink shared by all workers of a group."""

    def __init__(self):
        self._events: List[TimelineEvent] = []
        self._lock = threading.Lock()

    def record(self, event: TimelineEvent) -> None:
        with self._lock:
            self._events.append(event)

    def events(self) -> List[TimelineEvent]:
        with self._lock:
            return sorted(self._events, key=lambda e: (e.worker, e.lane, e.t_start))

    def clear(self) -> None:
        with self._lock:
            self._events.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)


class _Slot:
    """Rendezvous state of the k-th collective issued by every worker."""

    def __init__(self):
        self.entries: Dict[int, Tuple[str, int, np.ndarray]] = {}
        self.ready = False
        self.error: Optional[str] = None
        self.result: Optional[np.ndarray] = None
        self.t_ready = 0.0
        self.departed = 0


def _as_array(buf: Union[DenseMatrix, np.ndarray]) -> np.ndarray:
    return buf.data if isinstance(buf, DenseMatrix) else buf


class DeviceGroup:
    """
    P simulated workers connected by a full mailbox fabric.

    Collectives are blocking rendezvous points: the k-th collective call of
    every worker is matched with the k-th call of every other worker, and the
    calls must agree on kind, root and byte length.

    Attributes:
        P (int): Number of workers
        link_delay_ns_per_byte (float): Injected transfer cost (0 disables it)
        timeout_s (float): Upper bound on any rendezvous wait
        timeline (Timeline): Events of every worker
        bytes_broadcast (int): Payload bytes of all broadcasts, each counted once
        bytes_received (List[int]): Remote bytes delivered to each worker by
            broadcasts (a root keeps its own tile, so it receives nothing)
        bytes_reduced (int): Payload bytes contributed to reductions by non-owners
    """

    def __init__(self, P: int, link_delay_ns_per_byte: Optional[float] = None,
                 timeout_s: float = 120.0):
        if P < 1:
            raise ValueError("A device group needs at least one worker")
        self.P = int(P)
        self.link_delay_ns_per_byte = float(link_delay_ns_per_byte or 0.0)
        self.timeout_s = timeout_s
        self.timeline = Timeline()
        self._cond = threading.Condition()
        self._slots: Dict[int, _Slot] = {}
        self._seq = [0] * self.P
        self._aborted: Optional[str] = None
        self._task_ids = itertools.count()
        self._t0 = time.perf_counter_ns()
        self.reset_counters()

    # -- bookkeeping -----------------------------------------------------

    def now_us(self) -> float:
        return (time.perf_counter_ns() - self._t0) / 1000.0

    def next_task_id(self) -> int:
        with self._cond:
            return next(self._task_ids)

    def reset_counters(self) -> None:
        self.bytes_broadcast = 0
        self.bytes_received = [0] * self.P
        self.bytes_reduced = 0

    def communicator(self, rank: int) -> 'Communicator':
        if not 0 <= rank < self.P:
            raise ValueError(f"Rank {rank} outside group of {self.P}")
        return Communicator(self, rank)

    def abort(self, reason: str = 'aborted') -> None:
        """Fail every pending and future collective with GroupAbortedError."""
        with self._cond:
            if self._aborted is None:
                self._aborted = reason
            self._cond.notify_all()

    @property
    def aborted(self) -> bool:
        return self._aborted is not None

    def launch(self, fn: Callable[..., Any], *args, **kwargs) -> List[Any]:
        """
        Run fn(communicator, *args, **kwargs) on P worker threads and join them.

        If any worker raises, the group is aborted so its peers stop waiting,
        and the first exception (by rank) is re-raised here.

        Returns:
            Per-rank return values
        """
        results: List[Any] = [None] * self.P
        errors: List[Optional[BaseException]] = [None] * self.P

        def body(rank: int) -> None:
            comm = self.communicator(rank)
            try:
                results[rank] = fn(comm, *args, **kwargs)
            except BaseException as exc:  # noqa: B902 - re-raised by the driver
                errors[rank] = exc
                self.abort(f"worker {rank} failed: {exc!r}")
            finally:
                comm.close()

        threads = [threading.Thread(target=body, args=(r,), name=f'worker-{r}', daemon=True)
                   for r in range(self.P)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        root_causes = [e for e in errors if e is not None and not isinstance(e, GroupAbortedError)]
        if root_causes:
            raise root_causes[0]
        for e in errors:
            if e is not None:
                raise e
        return results

    # -- collectives -----------------------------------------------------

    def _check_alive(self) -> None:
        if self._aborted is not None:
            raise GroupAbortedError(f"Device group shut down: {self._aborted}")

    def _wait(self, predicate: Callable[[], bool], deadline: float, what: str) -> None:
        while not predicate():
            self._check_alive()
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._aborted = f"timeout in {what}"
                self._cond.notify_all()
                raise CollectiveTimeoutError(
                    f"{what} did not gather all {self.P} workers within {self.timeout_s}s"
                )
            self._cond.wait(timeout=remaining)

    def _collective(self, rank: int, kind: str, root: int, array: np.ndarray) -> Completion:
        t_start = self.now_us()
        if self.P == 1:
            return Completion(kind, root, array.nbytes, t_start, self.now_us())

        deadline = time.monotonic() + self.timeout_s
        with self._cond:
            self._check_alive()
            seq = self._seq[rank]
            self._seq[rank] += 1
            slot = self._slots.setdefault(seq, _Slot())
            slot.entries[rank] = (kind, root, array)
            if len(slot.entries) == self.P:
                slot.error = self._match(seq, slot)
                if slot.error is None:
                    self._combine(slot, kind, root)
                slot.t_ready = time.monotonic()
                slot.ready = True
                self._cond.notify_all()
            else:
                self._wait(lambda: slot.ready, deadline, f"{kind} #{seq}")
            if slot.error is not None:
                raise ProtocolError(slot.error)

        self._deliver(rank, slot, kind, root, array)

        if self.link_delay_ns_per_byte > 0:
            transfer_s = array.nbytes * self.link_delay_ns_per_byte * 1e-9
            remaining = slot.t_ready + transfer_s - time.monotonic()
            if remaining > 0:
                time.sleep(remaining)

        # nobody leaves before every copy is done: the root's buffer stays valid
        with self._cond:
            slot.departed += 1
            if slot.departed == self.P:
                self._slots.pop(seq, None)
                self._cond.notify_all()
            else:
                self._wait(lambda: slot.departed == self.P, deadline, f"{kind} #{seq} completion")
        return Completion(kind, root, array.nbytes, t_start, self.now_us())

    def _match(self, seq: int, slot: _Slot) -> Optional[str]:
        kinds = {r: e[0] for r, e in slot.entries.items()}
        roots = {r: e[1] for r, e in slot.entries.items()}
        sizes = {r: e[2].nbytes for r, e in slot.entries.items()}
        if len(set(kinds.values())) > 1:
            return f"Collective #{seq}: workers issued different operations {kinds}"
        if len(set(roots.values())) > 1:
            return f"Collective #{seq}: workers disagree on the root {roots}"
        if len(set(sizes.values())) > 1:
            return f"Collective #{seq}: mismatched byte lengths {sizes}"
        return None

    def _combine(self, slot: _Slot, kind: str, root: int) -> None:
        payload = slot.entries[root if kind == 'broadcast' else 0][2].nbytes
        if kind == 'broadcast':
            self.bytes_broadcast += payload
            for r in range(self.P):
                if r != root:
                    self.bytes_received[r] += payload
            return
        # fixed rank order 0..P-1 so the sum is bitwise reproducible
        total = slot.entries[0][2].copy()
        for r in range(1, self.P):
            total += slot.entries[r][2]
        slot.result = total
        self.bytes_reduced += payload * (self.P - 1)

    def _deliver(self, rank: int, slot: _Slot, kind: str, root: int, array: np.ndarray) -> None:
        if kind == 'broadcast':
            if rank != root:
                np.copyto(array, slot.entries[root][2])
        elif kind == 'all_reduce' or rank == root:
            np.copyto(array, slot.result)

    def broadcast(self, rank: int, root: int, buf) -> Completion:
        return self._collective(rank, 'broadcast', root, _as_array(buf))

    def all_reduce_sum(self, rank: int, buf) -> Completion:
        return self._collective(rank, 'all_reduce', 0, _as_array(buf))

    def reduce_sum(self, rank: int, root: int, buf) -> Completion:
        return self._collective(rank, 'reduce', root, _as_array(buf))

    # -- timeline export -------------------------------------------------

    def export_timeline(self, path: Union[str, Path]) -> Path:
        return export_timeline(self, path)

    def export_chrome_trace(self, path: Union[str, Path]) -> Path:
        """
        Write the timeline in Chrome Trace Format (chrome://tracing, Perfetto).

        Workers map to processes and lanes to threads.
        """
        trace: Dict[str, Any] = {'traceEvents': [], 'displayTimeUnit': 'ms'}
        for w in range(self.P):
            trace['traceEvents'].append({'name': 'process_name', 'ph': 'M', 'pid': w,
                                         'args': {'name': f'worker {w}'}})
            for lane, lane_name in ((COMPUTE_LANE, 'compute'), (COMM_LANE, 'comm')):
                trace['traceEvents'].append({'name': 'thread_name', 'ph': 'M', 'pid': w,
                                             'tid': lane, 'args': {'name': lane_name}})
        for e in self.timeline.events():
            trace['traceEvents'].append({
                'name': e.label or e.kind, 'cat': e.kind, 'ph': 'X',
                'ts': e.t_start, 'dur': e.t_end - e.t_start,
                'pid': e.worker, 'tid': e.lane,
                'args': {'stage': e.stage, 'task_id': e.task_id, 'deps': e.deps},
            })
        path = Path(path)
        path.write_text(json.dumps(trace))
        return path


class LaneScheduler:
    """
    Two in-order lanes of one worker with explicit cross-lane dependencies.

    Lane 0 runs computation, lane 1 runs communication. A task starts only
    after every dependency has finished; tasks of one lane run in submission
    order. Dependencies must already be submitted, so cycles cannot form.

    Example:
        >>> b = lanes.submit(COMM_LANE, [], lambda: comm.broadcast(0, buf), kind='broadcast')
        >>> s = lanes.submit(COMPUTE_LANE, [b], lambda: spmm(tile, buf, out), kind='spmm')
        >>> lanes.wait([s])
    """

    def __init__(self, group: DeviceGroup, worker: int):
        self.group = group
        self.worker = worker
        self._lanes = [ThreadPoolExecutor(max_workers=1, thread_name_prefix=f'w{worker}-lane{lane}')
                       for lane in (COMPUTE_LANE, COMM_LANE)]
        self._tasks: Dict[int, Future] = {}
        self._lock = threading.Lock()

    def submit(self, lane: int, deps: Sequence[int], work: Callable[[], Any],
               kind: str = 'other', stage: int = -1, label: str = '') -> int:
        """
        Queue `work` on a lane behind its dependencies.

        Returns:
            Task id usable as a dependency of later tasks

        Raises:
            UnknownTaskError: If a dependency id was never submitted
        """
        if lane not in (COMPUTE_LANE, COMM_LANE):
            raise ValueError(f"Unknown lane {lane}")
        deps = list(deps)
        with self._lock:
            missing = [d for d in deps if d not in self._tasks]
            if missing:
                raise UnknownTaskError(f"Unknown dependency ids {missing}")
            dep_futures = [self._tasks[d] for d in deps]
        task_id = self.group.next_task_id()
        group, worker = self.group, self.worker

        def run():
            for f in dep_futures:
                f.result()
            t_start = group.now_us()
            result = work()
            group.timeline.record(TimelineEvent(worker, lane, stage, kind, t_start,
                                                group.now_us(), task_id, deps, label))
            return result

        future = self._lanes[lane].submit(run)
        with self._lock:
            self._tasks[task_id] = future
        return task_id

    def result(self, task_id: int) -> Any:
        return self._tasks[task_id].result()

    def wait(self, task_ids: Iterable[int]) -> List[Any]:
        """Block until the given tasks finish; re-raises the first failure."""
        return [self._tasks[t].result() for t in task_ids]

    def forget(self) -> None:
        """Drop finished task handles (ids stay unique)."""
        with self._lock:
            self._tasks = {t: f for t, f in self._tasks.items() if not f.done()}

    def shutdown(self) -> None:
        for lane in self._lanes:
            lane.shutdown(wait=True)


class Communicator:
    """
    Per-worker handle on a DeviceGroup: rank-bound collectives plus lanes.

    Attributes:
        group (DeviceGroup): The shared runtime
        rank (int): This worker's id
    """

    def __init__(self, group: DeviceGroup, rank: int):
        self.group = group
        self.rank = rank
        self._lanes: Optional[LaneScheduler] = None

    @property
    def P(self) -> int:
        return self.group.P

    @property
    def lanes(self) -> LaneScheduler:
        if self._lanes is None:
            self._lanes = LaneScheduler(self.group, self.rank)
        return self._lanes

    def broadcast(self, root: int, buf) -> Completion:
        """Copy root's buffer into every worker's buffer (blocking)."""
        return self.group.broadcast(self.rank, root, buf)

    def all_reduce_sum(self, buf) -> Completion:
        """Elementwise sum over workers in rank order, result on every worker."""
        return self.group.all_reduce_sum(self.rank, buf)

    def reduce_sum(self, root: int, buf) -> Completion:
        """Elementwise sum over workers in rank order, result on root only."""
        return self.group.reduce_sum(self.rank, root, buf)

    @contextmanager
    def trace(self, kind: str, lane: int = COMPUTE_LANE, stage: int = -1, label: str = ''):
        """Record the enclosed region as a TimelineEvent of this worker."""
        t_start = self.group.now_us()
        try:
            yield
        finally:
            self.group.timeline.record(TimelineEvent(self.rank, lane, stage, kind, t_start,
                                                     self.group.now_us(), label=label))

    def close(self) -> None:
        if self._lanes is not None:
            self._lanes.shutdown()
            self._lanes = None


def export_timeline(group: DeviceGroup, path: Union[str, Path]) -> Path:
    """
    Write every TimelineEvent as a JSON array sorted by (worker, lane, t_start).

    Raises:
        OSError: If the file cannot be written
    """
    path = Path(path)
    path.write_text(json.dumps([e.to_dict() for e in group.timeline.events()], indent=1))
    return path


def load_timeline(path: Union[str, Path]) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Timeline file not found: {path}")
    return json.loads(path.read_text())


_SCHEMA = {'worker': int, 'lane': int, 'stage': int, 'kind': str,
           't_start': (int, float), 't_end': (int, float)}


def audit_timeline(events: Sequence[Union[TimelineEvent, Dict[str, Any]]]) -> List[str]:
    """
    Check a timeline for schema errors, lane overlaps and dependency violations.

    Works on exported JSON alone: every event with deps must start at or after
    the end of each dependency (matched by task_id), and events on one lane of
    one worker must not overlap.

    Returns:
        List of violation messages (empty when the timeline is legal)
    """
    records = [e.to_dict() if isinstance(e, TimelineEvent) else dict(e) for e in events]
    problems: List[str] = []
    for k, rec in enumerate(records):
        for key, typ in _SCHEMA.items():
            if key not in rec or not isinstance(rec[key], typ):
                problems.append(f"event {k}: field '{key}' missing or not {typ}")
        if rec.get('kind') not in EVENT_KINDS:
            problems.append(f"event {k}: unknown kind {rec.get('kind')!r}")
        if rec.get('t_start', 0) > rec.get('t_end', 0):
            problems.append(f"event {k}: t_start after t_end")
    if problems or not records:
        return problems

    df = pd.DataFrame(records).sort_values(['worker', 'lane', 't_start'])
    for (worker, lane), lane_df in df.groupby(['worker', 'lane']):
        prev_end = lane_df['t_end'].shift(1)
        overlap = lane_df[lane_df['t_start'] < prev_end]
        for _, row in overlap.iterrows():
            problems.append(f"worker {worker} lane {lane}: {row['kind']} at "
                            f"{row['t_start']:.1f}us overlaps the previous event")

    if 'task_id' in df.columns:
        ends = df.dropna(subset=['task_id']).set_index('task_id')['t_end'].to_dict()
        for _, row in df.iterrows():
            for dep in row.get('deps') or []:
                if dep not in ends:
                    problems.append(f"task {row['task_id']}: dependency {dep} not in timeline")
                elif row['t_start'] < ends[dep]:
                    problems.append(f"task {row['task_id']} ({row['kind']}, stage {row['stage']}) "
                                    f"started before dependency {dep} finished")
    return problems
