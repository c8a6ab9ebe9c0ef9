"""Multi-camera capture synchronization simulator.

One worker thread per camera meets the others at a shared reusable barrier
every cycle. After release, workers race an atomic fetch-increment for the
cycle's global frame index; the winner publishes it and the rest adopt the
published value. Each worker stamps its capture, enqueues the frame for its
own writer thread and, once every camera has enqueued a frame, a flush event
for that index is emitted.

Threads and the barrier are real; time is virtual. All latencies are drawn
up front from the seed, so logs are identical from run to run regardless of
how the OS schedules the threads.
"""

import json
import queue
import threading
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BarrierTimeout, QueueOverflow

SCHEMA = "wearmocap-capture-log"
_REAL_TIMEOUT_S = 60.0


@dataclass(frozen=True)
class CaptureConfig:
    num_cameras: int = 3
    num_cycles: int = 100
    period_ms: float = 1000.0 / 30.0
    jitter_ms: tuple = (0.0, 5.0)  # uniform capture-latency bounds after release
    writer_latency_ms: tuple = (5.0, 15.0)
    queue_capacity: int | None = 64  # None means unbounded
    barrier_timeout_ms: float = 1000.0
    seed: int = 0
    stalls: tuple = ()  # ((camera, cycle, extra_ms), ...) delays before reaching the barrier

    def __post_init__(self):
        if self.num_cameras < 1:
            raise ValueError("num_cameras must be >= 1")
        if self.num_cycles < 1:
            raise ValueError("num_cycles must be >= 1")
        if self.queue_capacity is not None and self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        for lo, hi in (self.jitter_ms, self.writer_latency_ms):
            if not 0 <= lo <= hi:
                raise ValueError("latency bounds must satisfy 0 <= lo <= hi")
        if self.period_ms <= 0 or self.barrier_timeout_ms <= 0:
            raise ValueError("period and timeout must be positive")


@dataclass(frozen=True)
class FrameRecord:
    index: int
    capture_ms: float
    write_ms: float


@dataclass
class CaptureLog:
    records: list  # per camera, list of FrameRecord in capture order
    flushes: list  # (index, flush_ms), ascending by index

    def indices(self, camera):
        return [r.index for r in self.records[camera]]

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "version": 1,
            "records": [[[r.index, r.capture_ms, r.write_ms] for r in cam] for cam in self.records],
            "flushes": [[k, t] for k, t in self.flushes],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA:
            raise ValueError("not a capture log")
        records = [[FrameRecord(int(i), float(c), float(w)) for i, c, w in cam] for cam in d["records"]]
        return cls(records, [(int(k), float(t)) for k, t in d["flushes"]])


@dataclass
class SyncReport:
    gapless: bool
    index_sets_equal: bool
    missing: dict = field(default_factory=dict)  # camera -> indices absent from it but present elsewhere
    max_spread_ms: float = 0.0
    flush_violations: int = 0
    max_queue_depth: int = 0
    mean_write_delay_ms: float = 0.0
    max_write_delay_ms: float = 0.0

    @property
    def ok(self):
        return self.gapless and self.index_sets_equal and self.flush_violations == 0

    def to_dict(self):
        d = asdict(self)
        d["missing"] = {str(k): v for k, v in self.missing.items()}
        d["ok"] = self.ok
        return d


class _Shared:
    """State the camera workers coordinate through."""

    def __init__(self, cfg, jitter, stalls):
        n = cfg.num_cameras
        self.cfg = cfg
        self.jitter = jitter
        self.stalls = stalls
        self.lock = threading.Lock()
        self.counter = 0
        self.published = {}
        self.arrival = np.zeros(n)
        self.release = [0.0]  # release time of the current cycle
        self.cycle = 0
        self.stop = False
        self.error = None
        self.enqueued = {}  # index -> list of enqueue times
        self.flushes = []
        self.barrier = None

    def _on_release(self):
        # Runs once per cycle, in one thread, after every worker has arrived.
        k = self.cycle
        r = max(k * self.cfg.period_ms, float(self.arrival.max()))
        waits = r - self.arrival
        worst = int(np.argmax(waits))
        if waits[worst] > self.cfg.barrier_timeout_ms:
            self.error = BarrierTimeout(
                f"camera {worst} waited {waits[worst]:.3f} ms at the barrier in cycle {k} "
                f"(timeout {self.cfg.barrier_timeout_ms} ms)")
            self.stop = True
        self.release[0] = r

    def claim_index(self, cycle):
        # Atomic fetch-increment; the first worker through publishes, the others adopt.
        with self.lock:
            if cycle not in self.published:
                self.published[cycle] = self.counter
                self.counter += 1
            return self.published[cycle]

    def mark_enqueued(self, index, t):
        with self.lock:
            times = self.enqueued.setdefault(index, [])
            times.append(t)
            if len(times) == self.cfg.num_cameras:
                self.flushes.append((index, max(times)))
                del self.enqueued[index]


def _camera_worker(cam, shared, out_queue):
    cfg = shared.cfg
    prev_done = 0.0
    try:
        for k in range(cfg.num_cycles):
            shared.arrival[cam] = prev_done + shared.stalls.get((cam, k), 0.0)
            shared.barrier.wait()
            if shared.stop:
                break
            index = shared.claim_index(k)
            capture = shared.release[0] + shared.jitter[k, cam]
            out_queue.put((index, capture))
            shared.mark_enqueued(index, capture)
            prev_done = capture
            # nobody may start the next cycle before all have read this release
            shared.barrier.wait()
    except threading.BrokenBarrierError:
        shared.stop = True
    finally:
        out_queue.put(None)


def _cycle_gate(shared):
    # Each cycle has two rendezvous: the capture release, then an exit gate
    # that advances the cycle counter.
    phase = [0]

    def action():
        if phase[0] == 0:
            shared._on_release()
        else:
            shared.cycle += 1
        phase[0] ^= 1

    shared.barrier = threading.Barrier(shared.cfg.num_cameras, action=action, timeout=_REAL_TIMEOUT_S)


def _writer_worker(cam, cfg, latencies, in_queue, records, overflow):
    starts = []
    finish = 0.0
    i = 0
    while True:
        item = in_queue.get()
        if item is None:
            break
        index, enq = item
        # frames enqueued earlier that the writer has not yet started are still queued
        depth = sum(1 for s in starts if s > enq)
        if cfg.queue_capacity is not None and depth >= cfg.queue_capacity and overflow[cam] is None:
            overflow[cam] = (i, depth)
        start = max(enq, finish)
        finish = start + latencies[i]
        starts.append(start)
        records[cam].append(FrameRecord(index, enq, finish))
        i += 1


def run_capture_sim(cfg):
    """Run the synchronized capture of ``cfg.num_cycles`` frames on every camera."""
    rng = np.random.default_rng(cfg.seed)
    jitter = rng.uniform(*cfg.jitter_ms, size=(cfg.num_cycles, cfg.num_cameras))
    latencies = rng.uniform(*cfg.writer_latency_ms, size=(cfg.num_cameras, cfg.num_cycles))
    stalls = {(int(c), int(k)): float(ms) for c, k, ms in cfg.stalls}
    shared = _Shared(cfg, jitter, stalls)
    _cycle_gate(shared)

    queues = [queue.Queue() for _ in range(cfg.num_cameras)]
    records = [[] for _ in range(cfg.num_cameras)]
    overflow = [None] * cfg.num_cameras
    threads = [threading.Thread(target=_camera_worker, args=(c, shared, queues[c]), name=f"camera-{c}")
               for c in range(cfg.num_cameras)]
    threads += [threading.Thread(target=_writer_worker, args=(c, cfg, latencies[c], queues[c], records, overflow),
                                 name=f"writer-{c}") for c in range(cfg.num_cameras)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if shared.error is not None:
        raise shared.error
    hits = [(o[0], c, o[1]) for c, o in enumerate(overflow) if o is not None]
    if hits:
        cycle, cam, depth = min(hits)
        raise QueueOverflow(f"camera {cam} queue held {depth} frames (capacity {cfg.queue_capacity}) "
                            f"when cycle {cycle} was enqueued", camera=cam, cycle=cycle)
    return CaptureLog(records, sorted(shared.flushes))


def overflow_cycle(num_cycles, period_ms, writer_ms, capacity):
    """First cycle whose enqueue finds ``capacity`` frames already waiting,
    for zero jitter and a constant writer latency; None if it never happens."""
    waiting = []  # start times of frames not yet picked up by the writer
    free_at = 0.0
    for k in range(num_cycles):
        t = k * period_ms
        waiting = [s for s in waiting if s > t]
        if len(waiting) >= capacity:
            return k
        start = max(t, free_at)
        free_at = start + writer_ms
        waiting.append(start)
    return None


def verify_log(log):
    """Check a capture log for index consistency, timing spread, flush order and backpressure."""
    n_cams = len(log.records)
    sets = [set(log.indices(c)) for c in range(n_cams)]
    union = set().union(*sets) if sets else set()
    common = set.intersection(*sets) if sets else set()
    gapless = all(log.indices(c) == list(range(len(log.records[c]))) for c in range(n_cams))
    missing = {c: sorted(union - s) for c, s in enumerate(sets) if union - s}

    capture = {}
    for cam in log.records:
        for r in cam:
            capture.setdefault(r.index, []).append(r.capture_ms)
    spread = max((max(capture[k]) - min(capture[k]) for k in common), default=0.0)

    violations = 0
    for k, t in log.flushes:
        if k not in common or t < max(capture[k]):
            violations += 1

    depth = 0
    delays = []
    for cam in log.records:
        cap = np.array([r.capture_ms for r in cam])
        wr = np.array([r.write_ms for r in cam])
        delays.extend(wr - cap)
        # earlier frames whose write had not finished when this one was captured
        for i in range(1, len(cam)):
            depth = max(depth, int(np.sum(wr[:i] > cap[i])))
    return SyncReport(
        gapless=gapless,
        index_sets_equal=not missing,
        missing=missing,
        max_spread_ms=float(spread),
        flush_violations=violations,
        max_queue_depth=depth,
        mean_write_delay_ms=float(np.mean(delays)) if delays else 0.0,
        max_write_delay_ms=float(np.max(delays)) if delays else 0.0,
    )
