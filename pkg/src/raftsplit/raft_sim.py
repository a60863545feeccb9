"""Discrete-event simulation of Raft heartbeating over a lossy network.

Only the part of Raft that drives the split model is simulated: an immortal
leader broadcasts a heartbeat every ``h`` ms, each (heartbeat, follower)
message is independently lost with probability ``p``, and a follower whose
election timer runs out becomes a candidate for the rest of the trial.

Two fidelities are provided. ``lockstep`` has integer heartbeat steps, no
latency and a counter reset to a timeout drawn uniformly from the step set on
every receipt; it realizes the analytical chain exactly. ``timed`` runs an
event queue with real-valued timers and a uniform per-message latency.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

SENTINEL = -1  # candidacy step of a follower that never became candidate

# per-trial random draws are generated in blocks of this many heartbeat steps
_BLOCK = 256


class Fidelity(str, Enum):
    LOCKSTEP = "lockstep"
    TIMED = "timed"


class Role(str, Enum):
    LEADER = "leader"
    FOLLOWER = "follower"
    CANDIDATE = "candidate"


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int
    loss_rate: float
    timeout_range_ms: Tuple[float, float]
    heartbeat_interval_ms: float = 50.0
    latency_range_ms: Tuple[float, float] = (0.5, 10.0)
    fidelity: Fidelity = Fidelity.LOCKSTEP
    trials: int = 10_000
    master_seed: int = 0
    max_steps: int = 1_000_000
    # explicit lockstep timeout set; derived from timeout_range_ms when None
    timeout_steps: Optional[Tuple[int, ...]] = None
    # keep running after the split so every follower's candidacy is observed
    stop_at_split: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))
        a, b = (float(x) for x in self.timeout_range_ms)
        object.__setattr__(self, "timeout_range_ms", (a, b))
        lo, hi = (float(x) for x in self.latency_range_ms)
        object.__setattr__(self, "latency_range_ms", (lo, hi))
        h = self.heartbeat_interval_ms
        if self.n_nodes < 3:
            raise ValueError("n_nodes must be >= 3")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        if not h > 0:
            raise ValueError("heartbeat interval must be positive")
        if a > b:
            raise ValueError("timeout range must satisfy a <= b")
        if math.floor(a / h) < 1:
            raise ValueError("timeout range lower end must cover at least one heartbeat (a >= h)")
        if not 0.0 <= lo <= hi:
            raise ValueError("latency range must satisfy 0 <= lo <= hi")
        if hi >= h:
            raise ValueError("latency upper bound must be below the heartbeat interval")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.timeout_steps is not None:
            ks = tuple(sorted(int(k) for k in self.timeout_steps))
            if not ks or ks[0] < 1 or len(set(ks)) != len(ks):
                raise ValueError("timeout_steps must be a nonempty set of counts >= 1")
            object.__setattr__(self, "timeout_steps", ks)

    @classmethod
    def for_timeout_steps(cls, n_nodes, loss_rate, timeout_steps, heartbeat_interval_ms=50.0, **kw):
        """Config whose ms timeout range maps onto the given step set.

        The range is [K_1 h, K_r h + h/2], so floor(E/h) spans exactly K_1..K_r.
        """
        ks = tuple(sorted(timeout_steps))
        h = heartbeat_interval_ms
        return cls(n_nodes, loss_rate, (ks[0] * h, ks[-1] * h + h / 2),
                   heartbeat_interval_ms=h, timeout_steps=ks, **kw)

    @property
    def n_followers(self) -> int:
        return self.n_nodes - 1

    @property
    def split_threshold(self) -> int:
        return self.n_nodes // 2 + 1

    @property
    def lockstep_timeouts(self) -> Tuple[int, ...]:
        if self.timeout_steps is not None:
            return self.timeout_steps
        h = self.heartbeat_interval_ms
        a, b = self.timeout_range_ms
        return tuple(range(math.floor(a / h), math.floor(b / h) + 1))


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    split_step: int
    split_time_ms: float
    censored: bool
    candidacy_steps: Tuple[int, ...]
    heartbeats_received: Tuple[int, ...]
    seed: int


@dataclass
class NodeState:
    role: Role = Role.FOLLOWER
    election_deadline_ms: float = 0.0
    timeout_draw_ms: float = 0.0
    counter: int = 0
    received: int = 1  # the heartbeat that started the term
    candidacy_step: int = SENTINEL
    generation: int = field(default=0, repr=False)


def trial_seed(master_seed: int, trial_index: int) -> int:
    """64-bit seed for one trial, a hash of (master_seed, trial_index)."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(trial_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _outcome(config, index, seed, split_step, split_time, censored, nodes) -> TrialOutcome:
    return TrialOutcome(
        trial=index,
        split_step=split_step,
        split_time_ms=split_time,
        censored=censored,
        candidacy_steps=tuple(n.candidacy_step for n in nodes),
        heartbeats_received=tuple(n.received for n in nodes),
        seed=seed,
    )


def _run_lockstep(config: SimConfig, index: int, seed: int) -> TrialOutcome:
    rng = _rng(seed)
    f = config.n_followers
    ks = np.array(config.lockstep_timeouts)
    multi = len(ks) > 1
    p = config.loss_rate
    h = config.heartbeat_interval_ms

    def draw_timeouts(size):
        return ks[rng.integers(0, len(ks), size=size)] if multi else np.full(size, ks[0])

    nodes = [NodeState() for _ in range(f)]
    for node, k in zip(nodes, draw_timeouts(f)):
        node.counter = int(k)
    candidates = 0
    split_step = None
    step = 0
    while step < config.max_steps:
        # one row per heartbeat step, followers in index order
        losses = rng.random((_BLOCK, f)) < p
        resets = draw_timeouts((_BLOCK, f))
        for row in range(_BLOCK):
            step += 1
            lost = losses[row]
            for i, node in enumerate(nodes):
                if node.role is Role.CANDIDATE:
                    continue
                if lost[i]:
                    node.counter -= 1
                    if node.counter == 0:
                        node.role = Role.CANDIDATE
                        node.candidacy_step = step
                        candidates += 1
                else:
                    node.received += 1
                    node.counter = int(resets[row, i])
            if split_step is None and candidates >= config.split_threshold:
                split_step = step
                if config.stop_at_split:
                    return _outcome(config, index, seed, step, step * h, False, nodes)
            if candidates == f or step >= config.max_steps:
                break
        if candidates == f:
            break
    if split_step is None:
        return _outcome(config, index, seed, config.max_steps, config.max_steps * h, True, nodes)
    return _outcome(config, index, seed, split_step, split_step * h, False, nodes)


# event kinds, ordered so that simultaneous events resolve deterministically
_BROADCAST, _DELIVER, _DEADLINE = 0, 1, 2


def _run_timed(config: SimConfig, index: int, seed: int) -> TrialOutcome:
    rng = _rng(seed)
    f = config.n_followers
    p = config.loss_rate
    h = config.heartbeat_interval_ms
    a, b = config.timeout_range_ms
    lat_lo, lat_hi = config.latency_range_ms
    horizon = config.max_steps * h

    nodes = [NodeState() for _ in range(f)]
    queue: list = []
    # term starts at t = 0 with every follower holding a fresh heartbeat
    for i, node in enumerate(nodes):
        node.timeout_draw_ms = float(rng.uniform(a, b))
        node.election_deadline_ms = node.timeout_draw_ms
        heapq.heappush(queue, (node.election_deadline_ms, _DEADLINE, i, node.generation))
    heapq.heappush(queue, (h, _BROADCAST, 0, 1))

    candidates = 0
    split_time = None
    while queue:
        now, kind, who, tag = heapq.heappop(queue)
        if now > horizon:
            break
        if kind == _BROADCAST:
            lost = rng.random(f) < p
            lat = rng.uniform(lat_lo, lat_hi, size=f)
            for i in range(f):
                if not lost[i] and nodes[i].role is Role.FOLLOWER:
                    heapq.heappush(queue, (now + float(lat[i]), _DELIVER, i, 0))
            heapq.heappush(queue, ((tag + 1) * h, _BROADCAST, 0, tag + 1))
        elif kind == _DELIVER:
            node = nodes[who]
            if node.role is not Role.FOLLOWER:
                continue
            node.received += 1
            node.generation += 1
            node.timeout_draw_ms = float(rng.uniform(a, b))
            node.election_deadline_ms = now + node.timeout_draw_ms
            heapq.heappush(queue, (node.election_deadline_ms, _DEADLINE, who, node.generation))
        else:
            node = nodes[who]
            if node.role is not Role.FOLLOWER or tag != node.generation:
                continue
            node.role = Role.CANDIDATE
            node.candidacy_step = int(math.floor(now / h))
            candidates += 1
            if split_time is None and candidates >= config.split_threshold:
                split_time = now
                if config.stop_at_split:
                    break
            if candidates == f:
                break
    if split_time is None:
        return _outcome(config, index, seed, config.max_steps, horizon, True, nodes)
    return _outcome(config, index, seed, int(math.floor(split_time / h)), split_time, False, nodes)


def run_trial(config: SimConfig, trial_index: int) -> TrialOutcome:
    """One trial, fully determined by ``(config.master_seed, trial_index)``.

    ``split_step`` counts the heartbeat broadcasts emitted when the
    floor(N/2)+1-th follower becomes candidate. A trial that reaches
    ``max_steps`` without splitting is returned with ``censored=True`` and
    ``split_step == max_steps``.
    """
    seed = trial_seed(config.master_seed, trial_index)
    if config.fidelity is Fidelity.LOCKSTEP:
        return _run_lockstep(config, trial_index, seed)
    return _run_timed(config, trial_index, seed)


def _run_range(args) -> List[TrialOutcome]:
    config, start, stop = args
    return [run_trial(config, i) for i in range(start, stop)]


def run_batch(config: SimConfig, workers: int = 1) -> List[TrialOutcome]:
    """Outcomes for trials ``0 .. trials-1``, identical for any ``workers``."""
    n = config.trials
    if workers <= 1 or n < 2:
        return [run_trial(config, i) for i in range(n)]
    chunk = max(1, math.ceil(n / (workers * 4)))
    jobs = [(config, s, min(s + chunk, n)) for s in range(0, n, chunk)]
    out: List[TrialOutcome] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_run_range, jobs):
            out.extend(part)
    return out


@dataclass(frozen=True)
class HeartbeatStats:
    mean_heartbeats_before_candidacy: float
    mean_receipt_interval_steps: float
    mean_of_interval_ratios: float
    candidacies: int
    zero_receipt_candidacies: int


def empirical_heartbeat_stats(outcomes: Sequence[TrialOutcome]) -> HeartbeatStats:
    """Receipt statistics over the followers that became candidate.

    Receipts include the heartbeat that opened the term. The receipt interval
    is total candidacy steps over total receipts, which estimates t_c / n_11
    without the small-sample bias of averaging per-follower ratios; that
    average is reported as well. Followers with zero receipts are left out of
    the per-follower ratio and counted separately.
    """
    steps = []
    received = []
    ratios = []
    zero = 0
    for o in outcomes:
        for step, count in zip(o.candidacy_steps, o.heartbeats_received):
            if step == SENTINEL:
                continue
            steps.append(step)
            received.append(count)
            if count == 0:
                zero += 1
            else:
                ratios.append(step / count)
    if not received:
        raise ValueError("no follower reached candidacy in the given outcomes")
    total = sum(received)
    return HeartbeatStats(
        mean_heartbeats_before_candidacy=float(np.mean(received)),
        mean_receipt_interval_steps=sum(steps) / total if total else math.nan,
        mean_of_interval_ratios=float(np.mean(ratios)) if ratios else math.nan,
        candidacies=len(received),
        zero_receipt_candidacies=zero,
    )
