"""Workflow-generation MDP over (role, model) actions.

One episode resolves one root query. Planners decompose the current query and
requeue it behind its children (depth-first), executors resolve and advance,
the summarizer may fuse resolved children at the root into a synthesis query,
and only executor actions can terminate the episode. Rewards follow
r_t = -alpha * C_t with the task utility added on the terminal step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import memory
from .backend import Benchmark, cost_of, final_utility
from .memory import (EncoderInput, HeteroGraph, HubSet, QueryNode, ResponseNode,
                     STATUS_PENDING, STATUS_RESOLVED, STATUS_SUMMARY_PENDING)

PHASE1 = "phase1"
PHASE2 = "phase2"


@dataclass(frozen=True)
class Action:
    role: int
    model: int


@dataclass
class EnvConfig:
    n_models: int
    n_roles: int = 3              # active roles; extras appended for protocols
    p_max: int = 1
    width: int = 2
    max_steps: int = 16
    alpha: float = 0.0
    gamma: float = 0.99
    phase: str = PHASE2
    phase_depth: int = 1
    phase_width: int = 2
    utility_mode: str = "continuous"
    cost_scale: float = 1000.0

    def __post_init__(self):
        if self.n_models < 1:
            raise ValueError("need at least one model")
        if self.n_roles < 3:
            raise ValueError("the three base roles are always active")
        if self.p_max < 0:
            raise ValueError("p_max must be nonnegative")
        if self.width < 1:
            raise ValueError("width must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.phase not in (PHASE1, PHASE2):
            raise ValueError(f"unknown phase: {self.phase!r}")
        if self.phase == PHASE1 and (self.phase_depth < 0 or self.phase_width < 1):
            raise ValueError("phase1 needs depth >= 0 and width >= 1")
        if self.utility_mode not in ("continuous", "binary"):
            raise ValueError(f"unknown utility mode: {self.utility_mode!r}")
        if self.cost_scale <= 0:
            raise ValueError("cost_scale must be positive")

    @property
    def n_actions(self) -> int:
        return self.n_roles * self.n_models

    def action_index(self, a: Action) -> int:
        return a.role * self.n_models + a.model

    def action_of(self, index: int) -> Action:
        return Action(index // self.n_models, index % self.n_models)


@dataclass
class StepRecord:
    """What the policy saw and did at one step, enough to replay its logprob."""
    wf_input: EncoderInput
    query_embedding: np.ndarray
    mask: np.ndarray
    action_index: int
    logp: float
    value: float
    entropy: float
    reward: float
    done: bool
    # bookkeeping for traces, reports, and hub updates
    step: int
    role: int
    model: int
    quality: float | None
    dollars: float
    scaled_cost: float
    tokens_in: int
    tokens_out: int
    node_id: str


@dataclass
class Episode:
    records: list[StepRecord]
    utility: float
    dollars: float
    scaled_cost: float
    truncated: bool
    family: int
    root_id: str
    workflow: HeteroGraph
    actions: list[tuple[int, int]] = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return sum(r.reward for r in self.records)

    @property
    def length(self) -> int:
        return len(self.records)


class RoutingEnv:
    """Single-episode environment around one root query."""

    def __init__(self, cfg: EnvConfig, benchmark: Benchmark, hubs: HubSet):
        if hubs.n_models != cfg.n_models or hubs.n_roles != cfg.n_roles:
            raise ValueError("hub set does not match the env config")
        if cfg.n_models != benchmark.n_models:
            raise ValueError("benchmark pool does not match the env config")
        self.cfg = cfg
        self.benchmark = benchmark
        self.hubs = hubs
        self.workflow: HeteroGraph | None = None
        self.root_id: str = ""
        self.current_id: str = ""
        self.pending: list[str] = []
        self.planner_count = 0
        self.step_count = 0
        self.finished = False
        self.truncated = False
        self.summary_used = False
        self.utility = 0.0
        self._resp_counter = 0
        self._last_answer_quality: float | None = None

    # -- lifecycle -------------------------------------------------------------

    def reset(self, root: QueryNode) -> None:
        if root.depth != 0 or root.parent is not None:
            raise ValueError("episodes start from a depth-0 root query")
        # copy so caller-held root objects survive episode mutation untouched
        root = replace(root, status=STATUS_PENDING, answer_id=None)
        self.workflow = memory.new_workflow(root, self.hubs)
        self.root_id = root.id
        self.current_id = root.id
        self.pending = []
        self.planner_count = 0
        self.step_count = 0
        self.finished = False
        self.truncated = False
        self.summary_used = False
        self.utility = 0.0
        self._resp_counter = 0
        self._last_answer_quality = None

    def clone(self) -> "RoutingEnv":
        out = RoutingEnv(self.cfg, self.benchmark, self.hubs)
        out.workflow = memory.clone_workflow(self.workflow)
        out.root_id = self.root_id
        out.current_id = self.current_id
        out.pending = list(self.pending)
        out.planner_count = self.planner_count
        out.step_count = self.step_count
        out.finished = self.finished
        out.truncated = self.truncated
        out.summary_used = self.summary_used
        out.utility = self.utility
        out._resp_counter = self._resp_counter
        out._last_answer_quality = self._last_answer_quality
        return out

    # -- state helpers -----------------------------------------------------------

    @property
    def current(self) -> QueryNode:
        return self.workflow.queries[self.current_id]

    def _resolved_child_answers(self, query_id: str) -> list[ResponseNode]:
        out = []
        for child in self.workflow.children_of(query_id):
            if child.is_summary:
                continue
            if child.status == STATUS_RESOLVED and child.answer_id is not None:
                out.append(self.workflow.responses[child.answer_id])
        return out

    def _attached_context(self, query_id: str) -> list[ResponseNode]:
        q = self.workflow.queries[query_id]
        return [r for r in self.workflow.responses_of(query_id) if r.id != q.answer_id]

    def _context_for(self, query_id: str) -> list[ResponseNode]:
        q = self.workflow.queries[query_id]
        context = self._attached_context(query_id) + self._resolved_child_answers(query_id)
        if q.is_summary and q.parent is not None:
            # the synthesis produced by the summarizer grounds the final step
            parent = self.workflow.queries[q.parent]
            if parent.answer_id is not None:
                context = [self.workflow.responses[parent.answer_id]] + context
        return context

    def _descendant_answer_qualities(self, query_id: str) -> list[float]:
        out: list[float] = []
        for child in self.workflow.children_of(query_id):
            if child.is_summary:
                continue
            if child.status == STATUS_RESOLVED and child.answer_id is not None:
                out.append(self.workflow.responses[child.answer_id].quality)
            out.extend(self._descendant_answer_qualities(child.id))
        return out

    def _summarizer_legal(self) -> bool:
        if self.summary_used or self.current_id != self.root_id:
            return False
        root = self.workflow.queries[self.root_id]
        if root.status != STATUS_PENDING or self.pending:
            return False
        return len(self._resolved_child_answers(self.root_id)) >= 2

    def _template_role(self) -> int:
        """Phase-1 role for the current slot, derived from the live state."""
        cur = self.current
        if (self.planner_count < self.cfg.phase_depth and not cur.is_summary
                and not self.workflow.children_of(cur.id)
                and cur.depth == self.planner_count):
            return 0  # planner
        if self._summarizer_legal():
            return 2  # summarizer
        return 1      # executor

    def legal_mask(self) -> np.ndarray:
        """Boolean mask over the flat (role, model) action space."""
        if self.finished:
            raise RuntimeError("episode already finished")
        cfg = self.cfg
        mask = np.zeros(cfg.n_actions, dtype=bool)
        k = cfg.n_models

        if cfg.phase == PHASE1:
            role = self._template_role()
            mask[role * k:(role + 1) * k] = True
            return mask

        cur = self.current
        mask[1 * k:2 * k] = True  # executor is always available
        if cur.is_summary:
            return mask           # synthesis resolution is executor-only
        if (self.planner_count < cfg.p_max and not cur.is_summary
                and not self.workflow.children_of(cur.id)):
            mask[0 * k:1 * k] = True
        if self._summarizer_legal():
            mask[2 * k:3 * k] = True
        if cfg.n_roles > 3:
            context = self._context_for(cur.id)
            attached = self._attached_context(cur.id)
            roles_by_name = {self.benchmark.roles[i].name: i
                             for i in range(cfg.n_roles)}
            t = roles_by_name.get("thinker")
            v = roles_by_name.get("verifier")
            if t is not None and not any(r.produced_by[0] == t for r in attached):
                mask[t * k:(t + 1) * k] = True
            if v is not None and context and \
                    not any(r.produced_by[0] == v for r in attached):
                mask[v * k:(v + 1) * k] = True
        return mask

    # -- transition ---------------------------------------------------------------

    def _new_response_id(self) -> str:
        rid = f"r{self._resp_counter}"
        self._resp_counter += 1
        return rid

    def _make_response(self, query: QueryNode, action: Action, outcome) -> ResponseNode:
        return ResponseNode(
            id=self._new_response_id(),
            embedding=outcome.response_embedding,
            produced_by=(action.role, action.model),
            tokens_in=outcome.tokens_in,
            tokens_out=outcome.tokens_out,
            quality=outcome.quality,
        )

    def step(self, action: Action) -> tuple[float, bool, dict]:
        """Apply one (role, model) action; returns (reward, done, info)."""
        if self.finished:
            raise RuntimeError("episode already finished")
        mask = self.legal_mask()
        idx = self.cfg.action_index(action)
        if not (0 <= idx < self.cfg.n_actions) or not mask[idx]:
            raise ValueError(f"action {action} is not allowed by the mask")

        bench = self.benchmark
        cfg = self.cfg
        cur = self.current
        role_name = bench.roles[action.role].name
        profile = bench.profiles[action.model]
        done = False
        quality: float | None = None

        if role_name == "planner":
            if cfg.phase == PHASE1:
                width = cfg.phase_width
            else:
                width = max(1, min(cfg.width, cur.width_hint))
            children = bench.decompose(cur, width)
            memory.attach_subqueries(self.workflow, cur.id, children,
                                     width_limit=max(cfg.width, width))
            outcome = bench.invoke(action.model, action.role, cur, [])
            self.pending = [c.id for c in children[1:]] + [cur.id] + self.pending
            self.current_id = children[0].id
            self.planner_count += 1
        elif role_name == "executor":
            context = self._context_for(cur.id)
            outcome = bench.invoke(action.model, action.role, cur, context)
            resp = self._make_response(cur, action, outcome)
            memory.attach_response(self.workflow, cur.id, resp, answers=True)
            quality = outcome.quality
            self._last_answer_quality = outcome.quality
            if cur.is_summary:
                root = self.workflow.queries[self.root_id]
                root.status = STATUS_RESOLVED
                done = True
            elif cur.id == self.root_id:
                done = True
            else:
                self.current_id = self.pending.pop(0)
        elif role_name == "summarizer":
            root = self.workflow.queries[self.root_id]
            child_answers = self._resolved_child_answers(self.root_id)
            outcome = bench.invoke(action.model, action.role, root, child_answers)
            resp = self._make_response(root, action, outcome)
            memory.attach_response(self.workflow, self.root_id, resp, answers=False)
            root.status = STATUS_SUMMARY_PENDING
            root.answer_id = resp.id
            quality = outcome.quality
            sq = bench.summary_query(root, child_answers)
            memory.add_summary_query(self.workflow, self.root_id, sq)
            self.current_id = sq.id
            self.summary_used = True
        else:  # thinker / verifier style mid-episode roles
            context = self._context_for(cur.id)
            outcome = bench.invoke(action.model, action.role, cur, context)
            resp = self._make_response(cur, action, outcome)
            memory.attach_response(self.workflow, cur.id, resp, answers=False)
            quality = outcome.quality

        dollars = cost_of(outcome, profile)
        scaled = dollars * cfg.cost_scale
        reward = -cfg.alpha * scaled
        self.step_count += 1

        if not done and self.step_count >= cfg.max_steps:
            self.finished = True
            self.truncated = True
            partial = self._last_answer_quality if self._last_answer_quality is not None else 0.0
            self.utility = final_utility(partial, [], False, cfg.utility_mode)
            reward += self.utility
        elif done:
            self.finished = True
            answer_quality = outcome.quality
            subs = self._descendant_answer_qualities(self.root_id)
            self.utility = final_utility(answer_quality, subs, self.summary_used,
                                         cfg.utility_mode)
            reward += self.utility

        info = {
            "role": action.role,
            "model": action.model,
            "quality": quality,
            "dollars": dollars,
            "scaled_cost": scaled,
            "tokens_in": outcome.tokens_in,
            "tokens_out": outcome.tokens_out,
            "node_id": cur.id,
        }
        return reward, self.finished, info

    # -- rollout -------------------------------------------------------------------

    def snapshot(self) -> tuple[EncoderInput, np.ndarray]:
        """Frozen encoder view of the live workflow plus the current query."""
        return self.workflow.freeze(), self.current.embedding.copy()

    def run_episode(self, root: QueryNode, policy, mode: str = "sample",
                    rng: np.random.Generator | None = None) -> Episode:
        """Roll one episode under `policy`; returns the full trajectory.

        policy.act(wf_input, query_embedding, mask, mode, rng) must return
        (action_index, logp, value, entropy).
        """
        if mode not in ("sample", "greedy"):
            raise ValueError(f"unknown decoding mode: {mode!r}")
        self.reset(root)
        records: list[StepRecord] = []
        while not self.finished:
            wf_input, q_emb = self.snapshot()
            mask = self.legal_mask()
            action_index, logp, value, entropy = policy.act(
                wf_input, q_emb, mask, mode, rng)
            action = self.cfg.action_of(int(action_index))
            reward, done, info = self.step(action)
            records.append(StepRecord(
                wf_input=wf_input, query_embedding=q_emb, mask=mask,
                action_index=int(action_index), logp=float(logp),
                value=float(value), entropy=float(entropy), reward=reward,
                done=done or self.truncated, step=len(records),
                role=info["role"], model=info["model"], quality=info["quality"],
                dollars=info["dollars"], scaled_cost=info["scaled_cost"],
                tokens_in=info["tokens_in"], tokens_out=info["tokens_out"],
                node_id=info["node_id"]))
        return Episode(
            records=records,
            utility=self.utility,
            dollars=sum(r.dollars for r in records),
            scaled_cost=sum(r.scaled_cost for r in records),
            truncated=self.truncated,
            family=root.family,
            root_id=self.root_id,
            workflow=self.workflow,
            actions=[(r.role, r.model) for r in records],
        )


def absorb_episode(history: HeteroGraph, episode: Episode, decay: float = 0.9) -> str:
    """Consolidate a finished episode into history and refresh hub statistics.

    Response-producing actions report their response quality; planner actions
    report the episode utility (their payoff is only visible at the end).
    Costs are recorded in scaled units.
    """
    tag = memory.consolidate(episode.workflow, history)
    for rec in episode.records:
        hub = history.hubs.get(rec.role, rec.model)
        observed = rec.quality if rec.quality is not None else episode.utility
        memory.update_hub_stats(hub, float(np.clip(observed, 0.0, 1.0)),
                                rec.scaled_cost, decay=decay)
    return tag


def trace_lines(episode: Episode) -> list[str]:
    """Line-delimited structured trace, one record per step."""
    import json
    out = []
    for rec in episode.records:
        out.append(json.dumps({
            "step": rec.step,
            "role": rec.role,
            "model": rec.model,
            "reward": rec.reward,
            "dollars": rec.dollars,
            "scaled_cost": rec.scaled_cost,
            "tokens_in": rec.tokens_in,
            "tokens_out": rec.tokens_out,
            "node_id": rec.node_id,
        }, sort_keys=True))
    return out
