"""Quantification: searching for the largest validatable invariant region.

Four strategies, from naive to complete:

* ``quantify_vanilla`` — guess a random sub-box, validate it, repeat.  Kept
  as the baseline it is: success hinges on the guess, not the budget.
* ``quantify_delta_pruning`` — cover the whole domain and prune any start
  center whose rollout leaves the live cover.  Over-prunes: a cell dies for a
  single bad point even if most of it belongs to the answer.
* ``quantify_adaptive`` — grow a point cloud from one seed, restart from
  scratch on any unsafe exit, shrink the radius once the cloud is sampling-
  stable.  Complete for finding *an* invariant region, but it captures one
  basin only.
* ``quantify_spe`` — the full machine: a shrinking cell cover with a reach
  graph for ancestor pruning, discovery of escaping-but-safe states, optional
  prioritized sampling near the pruned frontier, and optional experience
  replay of every stored trajectory after each resolution decay.

All fresh randomness derives from one integer seed: sample ``i`` uses the
spawn-key-``(i,)`` child stream, selection draws use a reserved stream, so a
run is exactly reproducible and any recorded trajectory can be regenerated
from its ordinal alone.
"""

from __future__ import annotations

import os
import pickle
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoxRegion,
    DeltaCover,
    build_cover,
    refine_cover,
    volume_estimate,
)
from .reporting import RunReport
from .scenario import EXIT_UNSAFE, ScenarioSystem, UniformPolicy, run_scenario
from .validation import sample_size_probabilistic, validate_eps_delta

__all__ = [
    "HyperParams",
    "QuantifyResult",
    "ReachGraph",
    "reachable_closure",
    "prioritized_weights",
    "TrajectoryBuffer",
    "cost",
    "quantify_vanilla",
    "quantify_delta_pruning",
    "quantify_adaptive",
    "quantify_spe",
]


@dataclass(frozen=True)
class HyperParams:
    """Shared knobs: confidence (epsilon, beta), resolution schedule, budgets."""

    epsilon: float = 0.01
    beta: float = 0.1
    delta0: float = 1.0
    gamma: float = 0.5
    delta_min: float = 0.25
    horizon: int = 8        # states per rollout (K)
    budget: int = 50_000    # fresh-sample cap (N)

    def stability_window(self) -> int:
        return sample_size_probabilistic(self.epsilon, self.beta)


def hyper_dict(hyper: HyperParams, sys: ScenarioSystem) -> dict:
    return {
        "epsilon": hyper.epsilon,
        "beta": hyper.beta,
        "delta0": hyper.delta0,
        "gamma": hyper.gamma,
        "delta_min": hyper.delta_min,
        "K": hyper.horizon,
        "N": hyper.budget,
        "omega_bar": sys.omega_bar,
        "dt": sys.dt,
    }


def cost(volume: float, actions) -> float:
    """Negated volume scaled by the action-set size; lower is better.

    A box action set contributes its volume, a finite set its cardinality
    (a point set has measure zero — counting is the meaningful size there).
    """
    return -float(volume) * actions.measure()


@dataclass
class QuantifyResult:
    cover: DeltaCover | None
    actions: object
    report: RunReport
    converged: bool
    region: BoxRegion | None = None
    verdict: object = None
    graph: "ReachGraph | None" = None
    pruned: list = field(default_factory=list)
    restarts: int = 0


class ReachGraph:
    """Directed edges start-center -> discovered-center, stored as parent sets."""

    def __init__(self):
        self.parents: dict[int, set[int]] = {}
        self.n_edges = 0

    def add_edge(self, src: int, dst: int) -> None:
        peers = self.parents.setdefault(dst, set())
        if src not in peers:
            peers.add(src)
            self.n_edges += 1

    def __len__(self) -> int:
        return self.n_edges


def reachable_closure(graph: ReachGraph, vertex: int) -> set[int]:
    """The vertex plus every vertex with a directed path *to* it.

    Pruning uses this: anything that can reach a doomed start is doomed too,
    because the discovered edge certifies a sampled path between them.
    """
    out = {vertex}
    stack = [vertex]
    while stack:
        u = stack.pop()
        for p in graph.parents.get(u, ()):
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def prioritized_weights(dists: np.ndarray, power: float = 1.0) -> np.ndarray:
    """Selection weights favoring centers close to the pruned frontier.

    w_i = (d_max - d_i)^power, normalized; falls back to uniform when the
    distances carry no signal (all equal, or no pruned point yet so every
    distance is infinite).
    """
    if power < 1.0:
        raise ValueError("power must be >= 1")
    d = np.asarray(dists, dtype=float)
    if d.size == 0:
        return d
    if not np.all(np.isfinite(d)):
        return np.full(d.size, 1.0 / d.size)
    w = (d.max() - d) ** power
    s = w.sum()
    if s <= 0.0:
        return np.full(d.size, 1.0 / d.size)
    return w / s


class TrajectoryBuffer:
    """Append-only store of (start ordinal, states, exit kind) records.

    Keeps up to ``mem_cap`` records in memory and spills the rest to a
    pickle-framed temporary file, so replay over very long runs cannot
    exhaust memory.  Iteration yields memory records first, then the spill.
    """

    def __init__(self, mem_cap: int = 200_000):
        self.mem: list = []
        self.mem_cap = int(mem_cap)
        self._spill_path: str | None = None
        self._spill_fh = None
        self.count = 0

    def append(self, record) -> None:
        if len(self.mem) < self.mem_cap:
            self.mem.append(record)
        else:
            if self._spill_fh is None:
                fd, self._spill_path = tempfile.mkstemp(prefix="setquant-replay-", suffix=".pkl")
                self._spill_fh = os.fdopen(fd, "wb")
            pickle.dump(record, self._spill_fh, protocol=pickle.HIGHEST_PROTOCOL)
        self.count += 1

    def __len__(self) -> int:
        return self.count

    def __iter__(self):
        yield from self.mem
        if self._spill_path is not None:
            self._spill_fh.flush()
            with open(self._spill_path, "rb") as fh:
                while True:
                    try:
                        yield pickle.load(fh)
                    except EOFError:
                        break

    def close(self) -> None:
        if self._spill_fh is not None:
            self._spill_fh.close()
            os.unlink(self._spill_path)
            self._spill_fh = None
            self._spill_path = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def _child_stream(seed: int, ordinal: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(ordinal),))
    return np.random.Generator(np.random.PCG64(ss))


def _select_stream(seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(2**31,))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# baseline: guess-a-box
# ---------------------------------------------------------------------------


def quantify_vanilla(sys: ScenarioSystem, actions, hyper: HyperParams, seed: int,
                     n_attempts: int = 10, domain: BoxRegion | None = None,
                     record=None) -> QuantifyResult:
    """Sample random sub-boxes of the domain until one validates.

    Each attempt draws two uniform corner points, covers the spanned box at
    ``hyper.delta0`` and runs the probabilistic cover validation on it.  The
    first validated box wins; ``n_attempts`` misses end the run empty-handed.
    """
    dom = domain if domain is not None else sys.state_box
    stream = _select_stream(seed)
    fresh = 0
    for attempt in range(int(n_attempts)):
        while True:
            a, b = dom.sample(stream), dom.sample(stream)
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            if np.all(hi - lo > 1e-6):
                break
        box = BoxRegion(lo, hi)
        cover_v = build_cover(box, hyper.delta0)
        verdict = validate_eps_delta(sys, cover_v, hyper.horizon, hyper.epsilon,
                                     hyper.beta, actions, rng=int(stream.integers(2**62)),
                                     record=record)
        fresh += verdict.n_samples
        if verdict.result:
            vol = volume_estimate(cover_v)
            rep = RunReport(algorithm="qnt-vs", seed=seed, hyper=hyper_dict(hyper, sys),
                            n_fresh_samples=fresh, n_replayed=0, n_decays=0,
                            final_delta=hyper.delta0, cell_count=cover_v.n_active(),
                            volume=vol, cost=cost(vol, actions), converged=True)
            return QuantifyResult(cover=cover_v, actions=actions, report=rep,
                                  converged=True, region=box, verdict=verdict)
    empty = DeltaCover(np.empty((0, dom.dim)), hyper.delta0, dom)
    rep = RunReport(algorithm="qnt-vs", seed=seed, hyper=hyper_dict(hyper, sys),
                    n_fresh_samples=fresh, n_replayed=0, n_decays=0,
                    final_delta=hyper.delta0, cell_count=0, volume=0.0,
                    cost=0.0, converged=False)
    return QuantifyResult(cover=empty, actions=actions, report=rep, converged=False)


# ---------------------------------------------------------------------------
# whole-domain cover with start-center pruning
# ---------------------------------------------------------------------------


def quantify_delta_pruning(sys: ScenarioSystem, actions, delta: float, n_samples: int,
                           horizon: int, seed: int, domain: BoxRegion | None = None,
                           hyper: HyperParams | None = None, record=None) -> QuantifyResult:
    """Cover the domain once and prune start centers that misbehave.

    A start center dies when its rollout exits unsafely or any visited state
    falls farther than delta from the remaining live cover.  Deliberately
    blunt: one bad point condemns the whole cell, so the result can lose
    volume that a finer method would keep.
    """
    dom = domain if domain is not None else sys.state_box
    cover = build_cover(dom, delta)
    sel = _select_stream(seed)
    n = 0
    for i in range(int(n_samples)):
        act = cover.active_indices()
        if act.size == 0:
            break
        idx = int(act[int(sel.integers(act.size))])
        traj = run_scenario(sys, cover.centers[idx], horizon, UniformPolicy(actions),
                            _child_stream(seed, i))
        n += 1
        if record is not None:
            record(i, traj)
        bad = traj.exit_kind == EXIT_UNSAFE
        if not bad and len(traj) > 1:
            d = cover.batch_distances(traj.states[1:])
            bad = bool(np.any(d > delta + 1e-12))
        if bad:
            cover.deactivate([idx])
    vol = volume_estimate(cover)
    hy = hyper if hyper is not None else HyperParams(delta0=delta, delta_min=delta,
                                                    horizon=horizon, budget=int(n_samples))
    nonempty = cover.n_active() > 0
    rep = RunReport(algorithm="qnt-dp", seed=seed, hyper=hyper_dict(hy, sys),
                    n_fresh_samples=n, n_replayed=0, n_decays=0, final_delta=delta,
                    cell_count=cover.n_active(), volume=vol, cost=cost(vol, actions),
                    converged=nonempty)
    return QuantifyResult(cover=cover, actions=actions, report=rep, converged=nonempty)


# ---------------------------------------------------------------------------
# adaptive single-seed growth
# ---------------------------------------------------------------------------


def quantify_adaptive(sys: ScenarioSystem, actions, hyper: HyperParams, seed: int,
                      initial_state=None, domain: BoxRegion | None = None,
                      record=None) -> QuantifyResult:
    """Grow a ball cloud from one seed point; restart fresh on any unsafe exit.

    Discovered out-of-cover states join the cloud; after a full stability
    window without growth or restart, the ball radius decays by gamma until
    it would undershoot ``delta_min``.  If the budget runs out while restarts
    are still happening, there is no evidence any invariant subset exists and
    the run reports an empty cover, not converged.
    """
    dom = domain if domain is not None else sys.state_box
    n_eps = hyper.stability_window()
    sel = _select_stream(seed)
    seed_pt = np.asarray(initial_state, dtype=float) if initial_state is not None else dom.sample(sel)
    cover = DeltaCover(np.asarray([seed_pt]), hyper.delta0, dom)
    n = 0
    streak = 0
    decays = 0
    restarts = 0
    last_restart_n = -(10 * n_eps)
    converged = False
    while n < hyper.budget:
        act = cover.active_indices()
        idx = int(act[int(sel.integers(act.size))])
        traj = run_scenario(sys, cover.centers[idx], hyper.horizon, UniformPolicy(actions),
                            _child_stream(seed, n))
        n += 1
        if record is not None:
            record(n - 1, traj)
        event = False
        states = traj.states
        for t in range(1, states.shape[0]):
            if traj.exit_kind == EXIT_UNSAFE and t == states.shape[0] - 1:
                cover = DeltaCover(np.asarray([dom.sample(sel)]), cover.radius, dom)
                restarts += 1
                last_restart_n = n
                event = True
                break
            d = cover.batch_distances(states[t])
            if float(d[0]) > cover.radius + 1e-12:
                cover.append(states[t])
                event = True
        streak = 0 if event else streak + 1
        if streak >= n_eps:
            if hyper.gamma * cover.radius < hyper.delta_min - 1e-12:
                converged = True
                break
            cover.radius = hyper.gamma * cover.radius
            decays += 1
            streak = 0
    if not converged and restarts > 0 and (n - last_restart_n) <= n_eps:
        # still being knocked back to square one when the budget ran out
        cover = DeltaCover(np.empty((0, dom.dim)), cover.radius, dom)
    vol = volume_estimate(cover)
    rep = RunReport(algorithm="qnt-ae", seed=seed, hyper=hyper_dict(hyper, sys),
                    n_fresh_samples=n, n_replayed=0, n_decays=decays,
                    final_delta=cover.radius, cell_count=cover.n_active(),
                    volume=vol, cost=cost(vol, actions), converged=converged)
    return QuantifyResult(cover=cover, actions=actions, report=rep, converged=converged,
                          restarts=restarts)


# ---------------------------------------------------------------------------
# the full cover/graph machine
# ---------------------------------------------------------------------------


def quantify_spe(sys: ScenarioSystem, actions, hyper: HyperParams, seed: int, *,
                 prioritized: bool = False, replay: bool = False, weight_power: float = 1.0,
                 min_feature_scale: float | None = None, domain: BoxRegion | None = None,
                 replay_mem_cap: int = 200_000, trace=None, record=None) -> QuantifyResult:
    """Shrinking-cover quantification with ancestor pruning and discovery.

    Starts from a full-domain cover at ``delta0``.  Every sample rolls out
    from a live center under iid uniform actions.  An unsafe exit prunes the
    start together with every center that has a discovered path to it, and
    records the start in the pruned frontier.  A visited state farther than
    the current radius from the live cover — sampled from a start that is not
    within the radius of the frontier — joins the cover as a discovery, edged
    from its start.  After a stability window with no event the cover refines
    by ``gamma`` (skipping children near the frontier), until the next decay
    would undershoot ``delta_min`` (converged) or the fresh-sample budget is
    spent (not converged).  An emptied cover is also convergence: nothing is
    left to sample and no budget can change the answer.

    ``prioritized`` biases start selection toward centers near the pruned
    frontier; ``replay`` re-applies every stored trajectory after each decay,
    counting re-examined transitions separately from fresh samples.
    ``trace``, if given, is called as ``trace(n, cover, event)`` after every
    fresh sample — handy for convergence studies.
    """
    if min_feature_scale is None:
        warnings.warn("no minimum feature scale declared: whether the initial resolution "
                      "can see every part of the target set is unverifiable")
    elif (hyper.delta0 / 2.0) ** sys.state_box.dim > min_feature_scale + 1e-12:
        warnings.warn(f"initial cell scale ({hyper.delta0}/2)^{sys.state_box.dim} exceeds "
                      f"the declared minimum feature scale {min_feature_scale}")
    dom = domain if domain is not None else sys.state_box
    n_eps = hyper.stability_window()
    cover = build_cover(dom, hyper.delta0)
    graph = ReachGraph()
    pruned_pts: list = []
    dist_to_pruned = np.full(len(cover), np.inf)
    sel = _select_stream(seed)
    buffer = TrajectoryBuffer(replay_mem_cap) if replay else None
    n = 0
    streak = 0
    decays = 0
    replayed = 0
    converged = False
    weights_cum = None

    def extend_dists():
        nonlocal dist_to_pruned
        m = len(cover)
        if dist_to_pruned.shape[0] < m:
            new = cover.centers[dist_to_pruned.shape[0]:]
            if pruned_pts:
                pts = np.asarray(pruned_pts)
                d = np.abs(new[:, None, :] - pts[None, :, :]).max(axis=2).min(axis=1)
            else:
                d = np.full(new.shape[0], np.inf)
            dist_to_pruned = np.concatenate([dist_to_pruned, d])

    def note_pruned(pt):
        nonlocal dist_to_pruned
        p = np.asarray(pt, dtype=float)
        pruned_pts.append(p)
        dist_to_pruned = np.minimum(dist_to_pruned, np.abs(cover.centers - p).max(axis=1))

    def apply_trajectory(start_ord: int, states: np.ndarray, exit_kind: str) -> bool:
        nonlocal weights_cum
        if not cover.active[start_ord]:
            return False
        event = False
        length = states.shape[0]
        if length < 2:
            return False
        base_d = cover.batch_distances(states[1:])
        new_centers: list = []
        for t in range(1, length):
            if exit_kind == EXIT_UNSAFE and t == length - 1:
                closure = reachable_closure(graph, start_ord)
                live = [v for v in closure if cover.active[v]]
                cover.deactivate(live)
                note_pruned(cover.centers[start_ord])
                event = True
                weights_cum = None
                break
            d = float(base_d[t - 1])
            for c in new_centers:
                d = min(d, float(np.abs(c - states[t]).max()))
            if d > cover.radius + 1e-12 and dist_to_pruned[start_ord] > cover.radius + 1e-12:
                o = cover.append(states[t])
                extend_dists()
                graph.add_edge(start_ord, int(o))
                new_centers.append(np.asarray(states[t], dtype=float))
                event = True
                weights_cum = None
        return event

    def draw_start() -> int:
        nonlocal weights_cum
        act = cover.active_indices()
        if prioritized and pruned_pts:
            if weights_cum is None or weights_cum.shape[0] != act.size:
                w = prioritized_weights(dist_to_pruned[act], weight_power)
                weights_cum = np.cumsum(w)
            r = sel.random() * weights_cum[-1]
            k = min(int(np.searchsorted(weights_cum, r, side="right")), act.size - 1)
            return int(act[k])
        return int(act[int(sel.integers(act.size))])

    while True:
        if cover.n_active() == 0:
            converged = True
            break
        if n >= hyper.budget:
            break
        idx = draw_start()
        traj = run_scenario(sys, cover.centers[idx], hyper.horizon, UniformPolicy(actions),
                            _child_stream(seed, n))
        n += 1
        if record is not None:
            record(n - 1, traj)
        if buffer is not None:
            buffer.append((idx, traj.states, traj.exit_kind))
        event = apply_trajectory(idx, traj.states, traj.exit_kind)
        if trace is not None:
            trace(n, cover, event)
        streak = 0 if event else streak + 1
        if streak >= n_eps:
            if hyper.gamma * cover.radius < hyper.delta_min - 1e-12:
                converged = True
                break
            margin = hyper.gamma * cover.radius
            cover = refine_cover(cover, hyper.gamma,
                                 excluded=pruned_pts if pruned_pts else None, margin=margin)
            extend_dists()
            decays += 1
            streak = 0
            weights_cum = None
            if buffer is not None:
                for start_ord, states, exit_kind in buffer:
                    replayed += max(0, states.shape[0] - 1)
                    apply_trajectory(start_ord, states, exit_kind)
    if buffer is not None:
        buffer.close()
    vol = volume_estimate(cover)
    rep = RunReport(algorithm="qnt-spe", seed=seed, hyper=hyper_dict(hyper, sys),
                    n_fresh_samples=n, n_replayed=replayed, n_decays=decays,
                    final_delta=cover.radius, cell_count=cover.n_active(),
                    volume=vol, cost=cost(vol, actions), converged=converged)
    return QuantifyResult(cover=cover, actions=actions, report=rep, converged=converged,
                          graph=graph, pruned=pruned_pts)
