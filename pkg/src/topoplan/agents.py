"""Per-timestamp topology suggestion agents.

Three suggestion mechanisms share one discrete action vocabulary and one
feature encoding:

* a beam-search baseline scored directly by the terminal reward,
* a stochastic policy trained with clipped-surrogate policy gradients
  on single-timestamp episodes (SSA),
* a tree-search agent that walks the whole day, choosing each timestamp's
  topology with a prior/value-guided Monte-Carlo tree search (AZA).

The function approximator is a small two-layer perceptron with a policy
head and a value head, implemented directly in numpy so gradients are
explicit and checkable by finite differences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .environment import (
    ACTION_BUDGET,
    AZA_WEIGHTS,
    SSA_WEIGHTS,
    TERMINATE,
    EnvState,
    RewardWeights,
    ScreeningCache,
    aza_step_reward,
    optimize_injection_topology,
    reset,
    restart_from,
    shaping,
    ssa_terminal_reward,
    stable_window,
    step,
)
from .grid import (
    Grid,
    GridError,
    InfeasibleActionError,
    TargetTopologySet,
    TopologyConfig,
    UnitaryAction,
    apply_unitary_action,
    decompose_target,
    generate_target_topologies,
    is_electrically_connected,
    reconfigure_action,
    reference_topology,
    topological_depth,
    topology_distance,
)
from .powerflow import RHO_ISLAND, IslandedGridError, PowerFlowError
from .scenario import N_HOURS, DayScenario

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

DEFAULT_K_NEAREST = 64
DEFAULT_TOP_M_LOADINGS = 32


class TrainingDivergedError(RuntimeError):
    """Raised when evaluation reward collapses below the no-action baseline
    for several consecutive evaluations."""

    def __init__(self, message: str, curve):
        super().__init__(message)
        self.curve = list(curve)


# --- action vocabulary ------------------------------------------------------

def _action_to_doc(action) -> dict:
    if action == TERMINATE:
        return {"kind": TERMINATE}
    if action.kind == "reconfigure":
        return {
            "kind": "reconfigure",
            "substation": action.substation,
            "end_buses": [[list(end), bus] for end, bus in action.end_buses],
            "injection_buses": [[inj, bus] for inj, bus in action.injection_buses],
        }
    return {"kind": "line_status", "line": action.line,
            "online": bool(action.online)}


def _action_from_doc(doc: dict):
    kind = doc["kind"]
    if kind == TERMINATE:
        return TERMINATE
    if kind == "reconfigure":
        return UnitaryAction(
            kind="reconfigure",
            substation=int(doc["substation"]),
            end_buses=tuple((tuple(end), bus) for end, bus in doc["end_buses"]),
            injection_buses=tuple((int(i), b) for i, b in doc["injection_buses"]),
        )
    return UnitaryAction(kind="line_status", line=int(doc["line"]),
                         online=bool(doc["online"]))


class ActionSpace:
    """Fixed global action vocabulary with per-state candidate masks.

    Index 0 is always `terminate`. The remaining actions are the distinct
    substation reconfigurations occurring in the target-topology library,
    plus one revert-to-reference action per substation. A state's mask
    keeps the actions that appear in the decompositions toward the
    `k_nearest` closest library targets (plus reverts and terminate) and
    that are legal to apply.
    """

    def __init__(self, grid: Grid, targets: TargetTopologySet | None = None,
                 k_nearest: int = DEFAULT_K_NEAREST):
        self.grid = grid
        self.targets = targets or generate_target_topologies(grid)
        self.k_nearest = int(k_nearest)
        if self.k_nearest < 1:
            raise ValueError("k_nearest must be positive")

        ref = reference_topology(grid)
        seen: dict = {}
        for topo in self.targets.topologies:
            for action in decompose_target(grid, ref, topo):
                seen[action] = None
        self._revert_actions = {
            sub: reconfigure_action(grid, ref, sub)
            for sub in range(grid.n_substations)
        }
        for action in self._revert_actions.values():
            seen[action] = None
        self.actions: list = [TERMINATE] + sorted(seen, key=lambda a: a.sort_key())
        self._index = {a: i for i, a in enumerate(self.actions)}
        # per-target action-index sets, precomputed from the reference state
        self._target_action_idx = [
            frozenset(self._index[a] for a in decompose_target(grid, ref, t))
            for t in self.targets.topologies
        ]
        # integer codes per (substation local config, line status) for a
        # vectorised distance to the whole target library at once
        self._local_codes: dict[int, dict[tuple, int]] = {
            s: {} for s in range(grid.n_substations)
        }
        self._target_codes = np.array(
            [self._encode_topology(t) for t in self.targets.topologies],
            dtype=np.int32,
        )

    def _local_key(self, topo: TopologyConfig, sub: int) -> tuple:
        ends = tuple(topo.end_bus(l, s)
                     for l, s in sorted(self.grid.line_ends_at(sub)))
        injs = tuple(topo.injection_bus[i]
                     for i in sorted(self.grid.injections_at(sub)))
        return ends + injs

    def _encode_topology(self, topo: TopologyConfig) -> np.ndarray:
        code = np.empty(self.grid.n_substations + self.grid.n_lines,
                        dtype=np.int32)
        for s in range(self.grid.n_substations):
            table = self._local_codes[s]
            key = self._local_key(topo, s)
            code[s] = table.setdefault(key, len(table))
        code[self.grid.n_substations:] = topo.line_online
        return code

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def index_of(self, action) -> int:
        return self._index[action]

    def _nearest_target_ids(self, topo: TopologyConfig) -> list[int]:
        code = self._encode_topology(topo)
        dists = (self._target_codes != code[None, :]).sum(axis=1)
        order = np.lexsort((np.arange(len(dists)), dists))
        return [int(i) for i in order[: self.k_nearest]]

    def candidate_mask(self, state: EnvState) -> np.ndarray:
        """Boolean mask over the vocabulary; `terminate` is always legal."""
        mask = np.zeros(self.n_actions, dtype=bool)
        mask[0] = True
        if state.terminal or state.actions_taken >= ACTION_BUDGET:
            return mask

        candidates: set[int] = set()
        ref = reference_topology(self.grid)
        for tid in self._nearest_target_ids(state.topo):
            target = self.targets.topologies[tid]
            if state.topo == ref:
                candidates.update(self._target_action_idx[tid])
            else:
                for action in decompose_target(self.grid, state.topo, target):
                    idx = self._index.get(action)
                    if idx is not None:
                        candidates.add(idx)
        for sub, action in self._revert_actions.items():
            if self._index[action] in candidates:
                continue
            candidates.add(self._index[action])

        for idx in candidates:
            action = self.actions[idx]
            try:
                topo = apply_unitary_action(self.grid, state.topo, action)
            except (GridError, InfeasibleActionError):
                continue
            if topo == state.topo:
                continue  # no-op reconfiguration
            if topological_depth(self.grid, topo) > ACTION_BUDGET:
                continue
            if not is_electrically_connected(self.grid, topo):
                continue
            mask[idx] = True
        return mask

    def to_doc(self) -> dict:
        return {
            "k_nearest": self.k_nearest,
            "actions": [_action_to_doc(a) for a in self.actions],
        }


# --- feature encoding -------------------------------------------------------

@dataclass(frozen=True)
class FeatureConfig:
    top_m_loadings: int = DEFAULT_TOP_M_LOADINGS
    loading_clip: float = 2.0

    def dimension(self, grid: Grid) -> int:
        n_loadings = min(self.top_m_loadings, grid.n_lines)
        return 2 * grid.n_lines + grid.n_injections + grid.n_lines + 1 + n_loadings


def encode_state(state: EnvState, cfg: FeatureConfig) -> np.ndarray:
    """Fixed-length observation: bus-B indicator per line end and per
    injection, offline indicator per line, actions-used fraction, and the
    top loadings (all lines when the grid is small), clipped and scaled."""
    grid = state.grid
    topo = state.topo
    parts = [
        np.array([1.0 if topo.end_bus(l, s) != "A" else 0.0
                  for l in range(grid.n_lines) for s in (0, 1)]),
        np.array([1.0 if b != "A" else 0.0 for b in topo.injection_bus]),
        np.array([0.0 if online else 1.0 for online in topo.line_online]),
        np.array([state.actions_taken / ACTION_BUDGET]),
    ]
    n_loadings = min(cfg.top_m_loadings, grid.n_lines)
    loadings = np.clip(state.loadings, 0.0, cfg.loading_clip) / cfg.loading_clip
    if n_loadings < grid.n_lines:
        loadings = np.sort(loadings)[::-1][:n_loadings]
    parts.append(loadings)
    return np.concatenate(parts)


# --- policy / value network --------------------------------------------------

def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PolicyParams:
    w1: np.ndarray
    b1: np.ndarray
    wp: np.ndarray
    bp: np.ndarray
    wv: np.ndarray
    bv: np.ndarray

    def names(self):
        return ("w1", "b1", "wp", "bp", "wv", "bv")

    def arrays(self):
        return [getattr(self, n) for n in self.names()]


class Policy:
    """Two-layer perceptron with a masked-softmax policy head and a scalar
    value head over the shared hidden layer."""

    def __init__(self, grid: Grid, action_space: ActionSpace,
                 feature_cfg: FeatureConfig | None = None,
                 hidden: int = 64, seed: int = 0, kind: str = "ssa",
                 meta: dict | None = None):
        self.grid = grid
        self.action_space = action_space
        self.feature_cfg = feature_cfg or FeatureConfig()
        self.hidden = int(hidden)
        self.kind = kind
        self.meta = dict(meta or {})
        d = self.feature_cfg.dimension(grid)
        a = action_space.n_actions
        rng = np.random.default_rng(seed)
        self.params = PolicyParams(
            w1=rng.normal(0.0, 1.0 / math.sqrt(d), size=(self.hidden, d)),
            b1=np.zeros(self.hidden),
            wp=rng.normal(0.0, 0.01, size=(a, self.hidden)),
            bp=np.zeros(a),
            wv=rng.normal(0.0, 0.01, size=(1, self.hidden)),
            bv=np.zeros(1),
        )

    def forward(self, x: np.ndarray, mask: np.ndarray):
        """Returns (action probabilities, value, hidden activations)."""
        h = np.tanh(self.params.w1 @ x + self.params.b1)
        logits = self.params.wp @ h + self.params.bp
        probs = _masked_softmax(logits, mask)
        value = float((self.params.wv @ h + self.params.bv)[0])
        return probs, value, h

    def act_greedy(self, x: np.ndarray, mask: np.ndarray) -> int:
        probs, _, _ = self.forward(x, mask)
        return int(np.argmax(probs))  # ties break to the lowest index

    def sample(self, x: np.ndarray, mask: np.ndarray, rng) -> tuple[int, float]:
        probs, _, _ = self.forward(x, mask)
        idx = int(rng.choice(len(probs), p=probs))
        return idx, float(np.log(probs[idx]))

    def value(self, x: np.ndarray) -> float:
        h = np.tanh(self.params.w1 @ x + self.params.b1)
        return float((self.params.wv @ h + self.params.bv)[0])

    # -- checkpointing --------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": self.kind,
            "grid_fingerprint": self.grid.fingerprint,
            "hidden": self.hidden,
            "feature_config": {
                "top_m_loadings": self.feature_cfg.top_m_loadings,
                "loading_clip": self.feature_cfg.loading_clip,
            },
            "action_space": self.action_space.to_doc(),
            "weights": {n: getattr(self.params, n).tolist()
                        for n in self.params.names()},
            "meta": self.meta,
        }

    @classmethod
    def from_doc(cls, doc: dict, grid: Grid,
                 targets: TargetTopologySet | None = None) -> "Policy":
        if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format_version "
                f"{doc.get('format_version')!r}"
            )
        if doc["grid_fingerprint"] != grid.fingerprint:
            raise GridError("checkpoint belongs to a different grid")
        space = ActionSpace(grid, targets=targets,
                            k_nearest=int(doc["action_space"]["k_nearest"]))
        stored = [_action_from_doc(d) for d in doc["action_space"]["actions"]]
        if stored != space.actions:
            raise ValueError("checkpoint action vocabulary does not match "
                             "the grid's target library")
        fc = FeatureConfig(
            top_m_loadings=int(doc["feature_config"]["top_m_loadings"]),
            loading_clip=float(doc["feature_config"]["loading_clip"]),
        )
        policy = cls(grid, space, feature_cfg=fc, hidden=int(doc["hidden"]),
                     kind=doc["kind"], meta=doc.get("meta", {}))
        for n in policy.params.names():
            arr = np.array(doc["weights"][n], dtype=float)
            setattr(policy.params, n, arr.reshape(getattr(policy.params, n).shape))
        return policy

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_doc(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, grid: Grid,
             targets: TargetTopologySet | None = None) -> "Policy":
        with open(path) as fh:
            return cls.from_doc(json.load(fh), grid, targets=targets)


# --- suggestion rollouts ------------------------------------------------------

@dataclass(frozen=True)
class PolicySuggestion:
    timestamp: int
    topology: TopologyConfig
    trace: tuple = ()


def _refine_injections(grid: Grid, topo: TopologyConfig, injections,
                       cache: ScreeningCache) -> TopologyConfig:
    try:
        return optimize_injection_topology(grid, topo, injections, cache)
    except (InfeasibleActionError, IslandedGridError):
        return topo


def refined_terminal_reward(grid: Grid, topo: TopologyConfig,
                            day: DayScenario, i: int, cache: ScreeningCache,
                            w: RewardWeights = SSA_WEIGHTS
                            ) -> tuple[float, TopologyConfig]:
    """Terminal utility of a suggested branch layout after the injection
    placement is optimised, mirroring how suggestions are deployed."""
    topo = _refine_injections(grid, topo, day.hour(i), cache)
    try:
        rho = cache.rho_day(topo, day, i)
    except (IslandedGridError, PowerFlowError):
        rho = RHO_ISLAND
    window = stable_window(grid, topo, day, i, cache)
    reward = (w.w1 * shaping(rho) + w.w2 * len(window)
              + w.w3 * shaping(window.aggregate))
    return reward, topo


def _rollout_greedy(policy: Policy, state: EnvState,
                    cache: ScreeningCache) -> tuple[EnvState, tuple]:
    trace = []
    while not state.terminal:
        mask = policy.action_space.candidate_mask(state)
        x = encode_state(state, policy.feature_cfg)
        idx = policy.act_greedy(x, mask)
        action = policy.action_space.actions[idx]
        state = step(state, action, cache)
        trace.append(action)
        if action == TERMINATE:
            break
    if not state.terminal:
        state = step(state, TERMINATE, cache)
        trace.append(TERMINATE)
    return state, tuple(trace)


def policy_suggest(policy: Policy, grid: Grid, day: DayScenario, i: int,
                   cache: ScreeningCache | None = None) -> PolicySuggestion:
    """Greedy rollout from the reference state, followed by injection-bus
    refinement at the manipulated substations."""
    cache = cache or ScreeningCache(grid)
    state, trace = _rollout_greedy(policy, reset(grid, day, i, cache), cache)
    topo = state.topo
    try:
        topo = optimize_injection_topology(grid, topo, day.hour(i), cache)
    except InfeasibleActionError:
        pass
    return PolicySuggestion(timestamp=i, topology=topo, trace=trace)


def greedy_suggest(grid: Grid, day: DayScenario, i: int, beam: int = 4,
                   action_space: ActionSpace | None = None,
                   cache: ScreeningCache | None = None,
                   weights: RewardWeights = SSA_WEIGHTS) -> PolicySuggestion:
    """Beam search over unitary-action sequences, scored by the terminal
    reward of stopping at each visited state.

    Deterministic: candidate expansions are ordered by action index, and
    score ties keep the earlier (lexicographically smaller) trace.
    """
    if beam < 1:
        raise ValueError("beam width must be at least 1")
    cache = cache or ScreeningCache(grid)
    space = action_space or ActionSpace(grid)

    def score(state: EnvState) -> float:
        return refined_terminal_reward(grid, state.topo, day, i, cache,
                                       weights)[0]

    root = reset(grid, day, i, cache)
    best_score, best_state, best_trace = score(root), root, ()
    frontier = [(root, ())]
    for _depth in range(ACTION_BUDGET):
        expansions: dict[TopologyConfig, tuple] = {}
        for state, trace in frontier:
            mask = space.candidate_mask(state)
            for idx in np.flatnonzero(mask):
                action = space.actions[idx]
                if action == TERMINATE:
                    continue
                try:
                    nxt = step(state, action, cache)
                except (GridError, InfeasibleActionError, IslandedGridError,
                        PowerFlowError):
                    continue
                new_trace = trace + (int(idx),)
                # permuted action orders reach the same topology; keep the
                # lexicographically smaller trace
                prev = expansions.get(nxt.topo)
                if prev is None or new_trace < prev[1]:
                    expansions[nxt.topo] = (score(nxt), new_trace, nxt)
        if not expansions:
            break
        # highest score first; ties resolved by the smaller action trace
        ordered = sorted(expansions.values(), key=lambda e: (-e[0], e[1]))
        frontier = [(st, tr) for _, tr, st in ordered[:beam]]
        top_score, top_trace, top_state = ordered[0]
        if top_score > best_score:
            best_score, best_state, best_trace = top_score, top_state, top_trace

    final = best_state if best_state.terminal else step(best_state, TERMINATE, cache)
    actions = tuple(space.actions[i] for i in best_trace) + (TERMINATE,)
    return PolicySuggestion(timestamp=i, topology=final.topo, trace=actions)


# --- PPO training -------------------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    gamma: float = 1.0
    learning_rate: float = 5e-3
    clip_epsilon: float = 0.2
    batch_episodes: int = 24
    iterations: int = 100
    epochs_per_batch: int = 4
    entropy_coef: float = 0.02
    value_coef: float = 0.5
    hidden: int = 64
    seed: int = 0
    k_nearest: int = DEFAULT_K_NEAREST
    eval_interval: int = 5
    eval_episodes: int = 8
    divergence_patience: int = 5
    mcts_simulations: int = 24
    puct_c: float = 1.5

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        for name in ("learning_rate", "clip_epsilon", "batch_episodes",
                     "iterations", "epochs_per_batch", "hidden",
                     "eval_interval", "eval_episodes", "divergence_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mcts_simulations < 0:
            raise ValueError("mcts_simulations must be non-negative")


class _Adam:
    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def update(self, arrays, grads):
        self.t += 1
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1 ** self.t)
            vhat = self.v[i] / (1 - self.beta2 ** self.t)
            a -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class _Sample:
    x: np.ndarray
    mask: np.ndarray
    action: int
    logp_old: float
    ret: float
    advantage: float = 0.0


def ppo_loss_and_grads(policy: Policy, batch: list[_Sample],
                       cfg: TrainingConfig):
    """Clipped-surrogate PPO loss (policy + value + entropy terms) and its
    gradients with respect to every parameter array. Written out by hand;
    cross-checked against finite differences in the test suite."""
    p = policy.params
    grads = [np.zeros_like(a) for a in p.arrays()]
    total = 0.0
    n = len(batch)
    eps = cfg.clip_epsilon

    for s in batch:
        h = np.tanh(p.w1 @ s.x + p.b1)
        logits = p.wp @ h + p.bp
        probs = _masked_softmax(logits, s.mask)
        value = float((p.wv @ h + p.bv)[0])

        logp = float(np.log(probs[s.action]))
        ratio = math.exp(logp - s.logp_old)
        adv = s.advantage
        unclipped = ratio * adv
        clipped = float(np.clip(ratio, 1 - eps, 1 + eps)) * adv
        surrogate = min(unclipped, clipped)

        safe = np.where(s.mask & (probs > 0), probs, 1.0)
        entropy = float(-(probs * np.log(safe)).sum())
        verr = value - s.ret

        total += (-surrogate - cfg.entropy_coef * entropy
                  + cfg.value_coef * verr * verr) / n

        # d(-surrogate)/dlogits: active only when the unclipped branch is
        # the tight one (the standard PPO pass-through rule)
        dlogits = np.zeros_like(probs)
        if unclipped <= clipped:
            onehot = np.zeros_like(probs)
            onehot[s.action] = 1.0
            dlogp = np.where(s.mask, onehot - probs, 0.0)
            dlogits += -(ratio * adv) * dlogp
        # d(-entropy_coef * H)/dlogits
        logp_vec = np.where(s.mask & (probs > 0), np.log(safe), 0.0)
        dlogits += cfg.entropy_coef * np.where(
            s.mask, probs * (logp_vec + entropy), 0.0
        )
        dlogits /= n
        dvalue = cfg.value_coef * 2.0 * verr / n

        grads[2] += np.outer(dlogits, h)          # wp
        grads[3] += dlogits                       # bp
        grads[4] += dvalue * h[None, :]           # wv
        grads[5] += np.array([dvalue])            # bv
        dh = p.wp.T @ dlogits + p.wv[0] * dvalue
        dz1 = (1.0 - h * h) * dh
        grads[0] += np.outer(dz1, s.x)            # w1
        grads[1] += dz1                           # b1

    return total, grads


def _collect_episode(policy: Policy, grid: Grid, day: DayScenario, i: int,
                     cache: ScreeningCache, rng, gamma: float) -> list[_Sample]:
    state = reset(grid, day, i, cache)
    steps = []
    while not state.terminal:
        x = encode_state(state, policy.feature_cfg)
        mask = policy.action_space.candidate_mask(state)
        idx, logp = policy.sample(x, mask, rng)
        steps.append((x, mask, idx, logp))
        state = step(state, policy.action_space.actions[idx], cache)
    reward, _ = refined_terminal_reward(grid, state.topo, day, i, cache)
    samples = []
    for t, (x, mask, idx, logp) in enumerate(steps):
        ret = gamma ** (len(steps) - 1 - t) * reward
        samples.append(_Sample(x=x, mask=mask, action=idx, logp_old=logp,
                               ret=ret))
    return samples


def _reference_reward(grid: Grid, day: DayScenario, i: int,
                      cache: ScreeningCache) -> float:
    """Terminal reward of doing nothing (terminate immediately)."""
    return refined_terminal_reward(grid, reference_topology(grid), day, i,
                                   cache)[0]


def _evaluate_policy(policy: Policy, grid: Grid, probes,
                     cache: ScreeningCache) -> float:
    rewards = []
    for day, i in probes:
        state, _ = _rollout_greedy(policy, reset(grid, day, i, cache), cache)
        rewards.append(refined_terminal_reward(grid, state.topo, day, i,
                                               cache)[0])
    return float(np.mean(rewards))


def _probe_points(train_days, count, rng):
    pairs = [(day, i) for day in train_days for i in range(1, N_HOURS + 1)]
    chosen = rng.choice(len(pairs), size=min(count, len(pairs)), replace=False)
    return [pairs[int(c)] for c in sorted(chosen)]


def train_ssa_policy(grid: Grid, train_days, cfg: TrainingConfig,
                     action_space: ActionSpace | None = None,
                     cache: ScreeningCache | None = None) -> Policy:
    """Clipped-surrogate policy-gradient training on single-timestamp
    episodes drawn uniformly from the training days."""
    train_days = list(train_days)
    if not train_days:
        raise ValueError("training set is empty")
    cache = cache or ScreeningCache(grid)
    space = action_space or ActionSpace(grid, k_nearest=cfg.k_nearest)
    policy = Policy(grid, space, hidden=cfg.hidden, seed=cfg.seed, kind="ssa")
    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(policy.params.arrays(), cfg.learning_rate)

    probes = _probe_points(train_days, cfg.eval_episodes, rng)
    baseline = float(np.mean([_reference_reward(grid, d, i, cache)
                              for d, i in probes]))
    curve = []
    bad_evals = 0

    for it in range(cfg.iterations):
        batch: list[_Sample] = []
        rewards = []
        for _ in range(cfg.batch_episodes):
            day = train_days[int(rng.integers(len(train_days)))]
            hour = int(rng.integers(1, N_HOURS + 1))
            samples = _collect_episode(policy, grid, day, hour, cache, rng,
                                       cfg.gamma)
            batch.extend(samples)
            rewards.append(samples[-1].ret)
        values = np.array([policy.value(s.x) for s in batch])
        advs = np.array([s.ret for s in batch]) - values
        if len(advs) > 1 and advs.std() > 1e-8:
            advs = (advs - advs.mean()) / advs.std()
        for s, a in zip(batch, advs):
            s.advantage = float(a)

        for _ in range(cfg.epochs_per_batch):
            loss, grads = ppo_loss_and_grads(policy, batch, cfg)
            opt.update(policy.params.arrays(), grads)

        mean_reward = float(np.mean(rewards))
        curve.append({"iteration": it, "mean_reward": mean_reward,
                      "loss": loss})
        log.info("ssa iter %d: mean reward %.4f loss %.4f",
                 it, mean_reward, loss)

        if (it + 1) % cfg.eval_interval == 0:
            eval_reward = _evaluate_policy(policy, grid, probes, cache)
            curve[-1]["eval_reward"] = eval_reward
            bad_evals = bad_evals + 1 if eval_reward < baseline else 0
            if bad_evals >= cfg.divergence_patience:
                raise TrainingDivergedError(
                    f"evaluation reward stayed below the no-action baseline "
                    f"({baseline:.4f}) for {bad_evals} consecutive "
                    f"evaluations; last value {eval_reward:.4f}",
                    curve,
                )

    policy.meta["training_curve"] = curve
    policy.meta["baseline_reward"] = baseline
    policy.meta["config"] = {"iterations": cfg.iterations, "seed": cfg.seed,
                             "gamma": cfg.gamma, "lr": cfg.learning_rate}
    return policy


# --- AZA: tree-search sequence agent -----------------------------------------

class _TreeNode:
    __slots__ = ("state", "mask", "probs", "value", "children",
                 "visit", "total", "expanded")

    def __init__(self, state: EnvState):
        self.state = state
        self.mask = None
        self.probs = None
        self.value = 0.0
        self.children: dict[int, "_TreeNode"] = {}
        self.visit: dict[int, int] = {}
        self.total: dict[int, float] = {}
        self.expanded = False


def _expand(node: _TreeNode, policy: Policy) -> float:
    node.mask = policy.action_space.candidate_mask(node.state)
    x = encode_state(node.state, policy.feature_cfg)
    probs, value, _ = policy.forward(x, node.mask)
    node.probs = probs
    node.value = value
    node.expanded = True
    for idx in np.flatnonzero(node.mask):
        node.visit[int(idx)] = 0
        node.total[int(idx)] = 0.0
    return value


def _terminal_value(state: EnvState, prev_topo: TopologyConfig,
                    policy: Policy, grid: Grid, day: DayScenario,
                    cache: ScreeningCache, gamma: float) -> float:
    i = state.timestamp
    topo = _refine_injections(grid, state.topo, day.hour(i), cache)
    report = cache.report(topo, day.hour(i))
    reward = aza_step_reward(prev_topo, topo, report, AZA_WEIGHTS)
    if i < N_HOURS:
        nxt = restart_from(grid, day, i + 1, topo, cache)
        reward += gamma * policy.value(encode_state(nxt, policy.feature_cfg))
    return reward


def _mcts_search(root_state: EnvState, prev_topo: TopologyConfig,
                 policy: Policy, grid: Grid, day: DayScenario,
                 cache: ScreeningCache, cfg: TrainingConfig) -> dict[int, int]:
    """PUCT tree search inside one timestamp; returns root visit counts."""
    root = _TreeNode(root_state)
    _expand(root, policy)
    if cfg.mcts_simulations == 0:
        best = max(np.flatnonzero(root.mask),
                   key=lambda i: (root.probs[i], -i))
        return {int(best): 1}

    for _ in range(cfg.mcts_simulations):
        node = root
        path = []
        while True:
            n_total = sum(node.visit.values())
            best_idx, best_ucb = None, -math.inf
            for idx in node.visit:
                q = (node.total[idx] / node.visit[idx]
                     if node.visit[idx] > 0 else node.value)
                u = (cfg.puct_c * node.probs[idx]
                     * math.sqrt(n_total + 1) / (1 + node.visit[idx]))
                if q + u > best_ucb:
                    best_idx, best_ucb = idx, q + u
            path.append((node, best_idx))
            child = node.children.get(best_idx)
            if child is None:
                action = policy.action_space.actions[best_idx]
                try:
                    nxt = step(node.state, action, cache)
                except (GridError, InfeasibleActionError, IslandedGridError,
                        PowerFlowError):
                    nxt = replace(node.state, terminal=True)
                child = _TreeNode(nxt)
                node.children[best_idx] = child
                if nxt.terminal:
                    child.value = _terminal_value(
                        nxt, prev_topo, policy, grid, day, cache, cfg.gamma)
                    child.expanded = True
                    leaf_value = child.value
                else:
                    leaf_value = _expand(child, policy)
                break
            if child.state.terminal:
                leaf_value = child.value
                break
            node = child
        for n, idx in path:
            n.visit[idx] += 1
            n.total[idx] += leaf_value
    return dict(root.visit)


def _visit_policy(visits: dict[int, int], n_actions: int) -> np.ndarray:
    pi = np.zeros(n_actions)
    total = sum(visits.values())
    for idx, c in visits.items():
        pi[idx] = c / total if total else 0.0
    return pi


def aza_loss_and_grads(policy: Policy, batch, cfg: TrainingConfig):
    """Cross-entropy of the policy head against search visit distributions
    plus squared error of the value head against observed returns."""
    p = policy.params
    grads = [np.zeros_like(a) for a in p.arrays()]
    total = 0.0
    n = len(batch)
    for x, mask, pi, ret in batch:
        h = np.tanh(p.w1 @ x + p.b1)
        logits = p.wp @ h + p.bp
        probs = _masked_softmax(logits, mask)
        value = float((p.wv @ h + p.bv)[0])

        safe = np.where(mask & (probs > 0), probs, 1.0)
        ce = float(-(pi * np.log(safe)).sum())
        verr = value - ret
        total += (ce + cfg.value_coef * verr * verr) / n

        dlogits = np.where(mask, probs * pi.sum() - pi, 0.0) / n
        dvalue = cfg.value_coef * 2.0 * verr / n
        grads[2] += np.outer(dlogits, h)
        grads[3] += dlogits
        grads[4] += dvalue * h[None, :]
        grads[5] += np.array([dvalue])
        dh = p.wp.T @ dlogits + p.wv[0] * dvalue
        dz1 = (1.0 - h * h) * dh
        grads[0] += np.outer(dz1, x)
        grads[1] += dz1
    return total, grads


def _aza_episode(policy: Policy, grid: Grid, day: DayScenario,
                 cache: ScreeningCache, cfg: TrainingConfig, rng):
    """Walk a full day; at each timestamp run tree search step by step
    until terminate, recording (features, mask, visit policy) and the
    per-timestamp rewards."""
    records = []  # (x, mask, pi, timestamp index)
    rewards = []
    topo = reference_topology(grid)
    for i in range(1, N_HOURS + 1):
        prev_topo = topo
        state = restart_from(grid, day, i, topo, cache)
        while not state.terminal:
            visits = _mcts_search(state, prev_topo, policy, grid, day,
                                  cache, cfg)
            pi = _visit_policy(visits, policy.action_space.n_actions)
            x = encode_state(state, policy.feature_cfg)
            records.append([x, policy.action_space.candidate_mask(state),
                            pi, i])
            keys = sorted(visits)
            counts = np.array([visits[k] for k in keys], dtype=float)
            if rng is None or counts.sum() == 0:
                idx = keys[int(np.argmax(counts))]
            else:
                idx = keys[int(rng.choice(len(keys), p=counts / counts.sum()))]
            action = policy.action_space.actions[idx]
            try:
                state = step(state, action, cache)
            except (GridError, InfeasibleActionError, IslandedGridError,
                    PowerFlowError):
                state = replace(state, terminal=True)
        topo = _refine_injections(grid, state.topo, day.hour(i), cache)
        report = cache.report(topo, day.hour(i))
        rewards.append(aza_step_reward(prev_topo, topo, report, AZA_WEIGHTS))
    # discounted return from each timestamp
    returns = np.zeros(N_HOURS)
    acc = 0.0
    for i in range(N_HOURS, 0, -1):
        acc = rewards[i - 1] + cfg.gamma * acc
        returns[i - 1] = acc
    batch = [(x, mask, pi, float(returns[i - 1]))
             for x, mask, pi, i in records]
    return batch, float(np.sum(rewards))


def train_aza_mcts(grid: Grid, train_days, cfg: TrainingConfig,
                   action_space: ActionSpace | None = None,
                   cache: ScreeningCache | None = None) -> Policy:
    """Desk-scale tree-search training loop over whole-day sequences."""
    train_days = list(train_days)
    if not train_days:
        raise ValueError("training set is empty")
    cache = cache or ScreeningCache(grid)
    space = action_space or ActionSpace(grid, k_nearest=cfg.k_nearest)
    policy = Policy(grid, space, hidden=cfg.hidden, seed=cfg.seed, kind="aza")
    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(policy.params.arrays(), cfg.learning_rate)

    # no-action daily utility as the divergence baseline
    ref = reference_topology(grid)
    def ref_daily(day):
        total = 0.0
        for i in range(1, N_HOURS + 1):
            report = cache.report(ref, day.hour(i))
            total += aza_step_reward(ref, ref, report, AZA_WEIGHTS)
        return total
    probe_days = train_days[: min(len(train_days), 3)]
    baseline = float(np.mean([ref_daily(d) for d in probe_days]))

    curve = []
    bad_evals = 0
    for it in range(cfg.iterations):
        day = train_days[int(rng.integers(len(train_days)))]
        batch, daily_reward = _aza_episode(policy, grid, day, cache, cfg, rng)
        for _ in range(cfg.epochs_per_batch):
            loss, grads = aza_loss_and_grads(policy, batch, cfg)
            opt.update(policy.params.arrays(), grads)
        curve.append({"iteration": it, "daily_reward": daily_reward,
                      "loss": loss})
        log.info("aza iter %d: daily reward %.4f loss %.4f",
                 it, daily_reward, loss)

        if (it + 1) % cfg.eval_interval == 0:
            evals = []
            for d in probe_days:
                eval_batch, r = _aza_episode(policy, grid, d, cache, cfg,
                                             rng=None)
                evals.append(r)
            eval_reward = float(np.mean(evals))
            curve[-1]["eval_reward"] = eval_reward
            bad_evals = bad_evals + 1 if eval_reward < baseline else 0
            if bad_evals >= cfg.divergence_patience:
                raise TrainingDivergedError(
                    f"daily utility stayed below the no-action baseline "
                    f"({baseline:.4f}) for {bad_evals} consecutive "
                    f"evaluations; last value {eval_reward:.4f}",
                    curve,
                )

    policy.meta["training_curve"] = curve
    policy.meta["baseline_reward"] = baseline
    policy.meta["config"] = {"iterations": cfg.iterations, "seed": cfg.seed,
                             "gamma": cfg.gamma,
                             "mcts_simulations": cfg.mcts_simulations}
    return policy


def suggest_all_hours(policy_or_beam, grid: Grid, day: DayScenario,
                      cache: ScreeningCache | None = None,
                      action_space: ActionSpace | None = None
                      ) -> dict[int, TopologyConfig]:
    """Suggestions for all 24 timestamps, for the planner.

    Accepts a trained Policy or an integer beam width (search baseline).
    """
    cache = cache or ScreeningCache(grid)
    out = {}
    if isinstance(policy_or_beam, Policy):
        for i in range(1, N_HOURS + 1):
            out[i] = policy_suggest(policy_or_beam, grid, day, i, cache).topology
    else:
        space = action_space or ActionSpace(grid)
        for i in range(1, N_HOURS + 1):
            topo = greedy_suggest(grid, day, i, beam=int(policy_or_beam),
                                  action_space=space, cache=cache).topology
            try:
                topo = optimize_injection_topology(grid, topo, day.hour(i),
                                                   cache)
            except InfeasibleActionError:
                pass
            out[i] = topo
    return out
