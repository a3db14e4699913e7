"""MDP tests: masks, templates, rewards, truncation, cloning, absorption."""

import json

import numpy as np
import pytest

from agentroute.backend import BenchmarkSpec, make_benchmark
from agentroute.env import (
    PHASE1,
    Action,
    EnvConfig,
    RoutingEnv,
    absorb_episode,
    trace_lines,
)
from agentroute.memory import HeteroGraph, STATUS_PENDING

K = 2  # pool size used throughout


def make_bench(families=2, seed=3, width=(2,)):
    return make_benchmark(
        BenchmarkSpec(kind="uniform",
                      families=tuple(f"fam{i}" for i in range(families)),
                      queries_per_family=10, width_profile=width, seed=seed),
        k_models=K)


def make_env(bench=None, n_roles=3, **cfg_kw):
    bench = bench if bench is not None else make_bench()
    cfg = EnvConfig(n_models=K, n_roles=n_roles, **cfg_kw)
    return RoutingEnv(cfg, bench, bench.build_hubs(n_roles)), bench


class FirstLegal:
    """Deterministic scripted policy: lowest allowed action index."""

    def act(self, wf_input, q_emb, mask, mode, rng):
        return int(np.argmax(mask)), 0.0, 0.0, 0.0


class PreferRole:
    def __init__(self, *roles):
        self.roles = roles

    def act(self, wf_input, q_emb, mask, mode, rng):
        for r in self.roles:
            if mask[r * K]:
                return r * K, 0.0, 0.0, 0.0
        return int(np.argmax(mask)), 0.0, 0.0, 0.0


# -- config -------------------------------------------------------------------------


def test_config_validation():
    bad = [dict(n_models=0), dict(n_models=K, n_roles=2),
           dict(n_models=K, p_max=-1), dict(n_models=K, width=0),
           dict(n_models=K, max_steps=0), dict(n_models=K, alpha=-0.1),
           dict(n_models=K, gamma=0.0), dict(n_models=K, gamma=1.5),
           dict(n_models=K, phase="phase3"),
           dict(n_models=K, phase=PHASE1, phase_width=0),
           dict(n_models=K, utility_mode="graded"),
           dict(n_models=K, cost_scale=0.0)]
    for kw in bad:
        with pytest.raises(ValueError):
            EnvConfig(**kw)


def test_action_index_roundtrip():
    cfg = EnvConfig(n_models=3, n_roles=5)
    assert cfg.n_actions == 15
    for i in range(cfg.n_actions):
        a = cfg.action_of(i)
        assert cfg.action_index(a) == i
    assert cfg.action_index(Action(role=2, model=1)) == 7


def test_env_rejects_mismatched_parts():
    bench = make_bench()
    cfg = EnvConfig(n_models=K, n_roles=3)
    with pytest.raises(ValueError):
        RoutingEnv(cfg, bench, bench.build_hubs(5))
    with pytest.raises(ValueError):
        RoutingEnv(EnvConfig(n_models=K + 1), bench, bench.build_hubs(3))


# -- masks --------------------------------------------------------------------------


def test_mask_at_step_zero():
    env, bench = make_env(p_max=1)
    env.reset(bench.generate_query(0, 0))
    mask = env.legal_mask()
    assert mask[1 * K:2 * K].all()        # executor always
    assert mask[0 * K:1 * K].all()        # planner budget available
    assert not mask[2 * K:3 * K].any()    # summarizer never on a fresh root


def test_mask_planner_budget_zero():
    env, bench = make_env(p_max=0)
    env.reset(bench.generate_query(0, 0))
    assert not env.legal_mask()[0 * K:1 * K].any()


def test_mask_planner_spent_after_decompose():
    env, bench = make_env(p_max=1, width=2)
    env.reset(bench.generate_query(0, 0))
    env.step(Action(0, 0))
    # budget exhausted for the rest of the episode
    assert not env.legal_mask()[0 * K:1 * K].any()


def test_summarizer_unlocks_and_summary_is_executor_only():
    env, bench = make_env(p_max=1, width=2)
    env.reset(bench.generate_query(0, 0))  # width_hint 2
    env.step(Action(0, 0))                 # plan into two children
    assert not env.legal_mask()[2 * K:3 * K].any()
    env.step(Action(1, 0))                 # resolve child 0
    env.step(Action(1, 0))                 # resolve child 1, back at root
    mask = env.legal_mask()
    assert mask[2 * K:3 * K].all()         # two resolved children unlock it
    env.step(Action(2, 1))                 # summarize
    mask = env.legal_mask()
    assert mask[1 * K:2 * K].all()
    assert not mask[0 * K:1 * K].any() and not mask[2 * K:3 * K].any()
    _, done, _ = env.step(Action(1, 0))    # resolve the synthesis query
    assert done and env.finished
    assert env.summary_used


def test_illegal_action_rejected():
    env, bench = make_env(p_max=0)
    env.reset(bench.generate_query(0, 0))
    with pytest.raises(ValueError):
        env.step(Action(0, 0))  # planner masked out
    with pytest.raises(ValueError):
        env.step(Action(2, 0))  # summarizer masked out


def test_finished_episode_refuses_everything():
    env, bench = make_env()
    env.reset(bench.generate_query(0, 0))
    _, done, _ = env.step(Action(1, 0))
    assert done
    with pytest.raises(RuntimeError):
        env.step(Action(1, 0))
    with pytest.raises(RuntimeError):
        env.legal_mask()


def test_extra_role_masks():
    bench = make_bench()
    env, _ = make_env(bench=bench, n_roles=5, p_max=0)
    env.reset(bench.generate_query(0, 0))
    t, v = 3 * K, 4 * K
    mask = env.legal_mask()
    assert mask[t:t + K].all()         # thinker available on a fresh query
    assert not mask[v:v + K].any()     # verifier needs context
    env.step(Action(3, 0))
    mask = env.legal_mask()
    assert not mask[t:t + K].any()     # one thinker pass per query
    assert mask[v:v + K].all()         # the draft gives it something to check
    env.step(Action(4, 1))
    mask = env.legal_mask()
    assert not mask[v:v + K].any()     # one verify pass per query
    assert mask[1 * K:2 * K].all()


# -- phase-1 templates ------------------------------------------------------------------


def roles_under_template(depth, width, max_steps=16):
    env, bench = make_env(phase=PHASE1, phase_depth=depth, phase_width=width,
                          max_steps=max_steps)
    ep = env.run_episode(bench.generate_query(0, 0), FirstLegal(), mode="greedy")
    assert not ep.truncated
    return [r.role for r in ep.records]


def test_template_depth1_width3():
    assert roles_under_template(1, 3) == [0, 1, 1, 1, 2, 1]


def test_template_depth2_width2():
    assert roles_under_template(2, 2) == [0, 0, 1, 1, 1, 1, 2, 1]


def test_template_depth0_is_direct_answer():
    assert roles_under_template(0, 2) == [1]


def test_template_mask_is_single_role():
    env, bench = make_env(phase=PHASE1, phase_depth=1, phase_width=2)
    env.reset(bench.generate_query(0, 0))
    mask = env.legal_mask()
    assert mask[0:K].all() and not mask[K:].any()


# -- rewards ------------------------------------------------------------------------


def test_reward_decomposition_single_step():
    env, bench = make_env(alpha=0.1)
    env.reset(bench.generate_query(0, 0))
    reward, done, info = env.step(Action(1, 1))
    assert done
    assert reward == pytest.approx(env.utility - 0.1 * info["scaled_cost"],
                                   abs=1e-12)
    assert info["scaled_cost"] == pytest.approx(info["dollars"] * 1000.0)


def test_episode_reward_identity():
    env, bench = make_env(alpha=0.3, p_max=1, width=2)
    ep = env.run_episode(bench.generate_query(0, 1), PreferRole(0, 2, 1))
    assert ep.total_reward == pytest.approx(
        ep.utility - 0.3 * ep.scaled_cost, abs=1e-9)
    assert ep.scaled_cost == pytest.approx(1000.0 * ep.dollars, rel=1e-12)


def test_intermediate_rewards_are_pure_cost():
    env, bench = make_env(alpha=0.2, p_max=1)
    ep = env.run_episode(bench.generate_query(0, 0), PreferRole(0, 1))
    for rec in ep.records[:-1]:
        assert rec.reward == pytest.approx(-0.2 * rec.scaled_cost, abs=1e-12)
    assert ep.records[-1].done


def test_zero_alpha_reward_is_terminal_utility():
    env, bench = make_env(alpha=0.0, p_max=1)
    ep = env.run_episode(bench.generate_query(1, 0), PreferRole(0, 1))
    assert ep.total_reward == pytest.approx(ep.utility, abs=1e-12)


# -- truncation ----------------------------------------------------------------------


def test_truncation_with_no_answer_scores_zero():
    env, bench = make_env(p_max=4, width=2, max_steps=2)
    env.reset(bench.generate_query(0, 0))
    env.step(Action(0, 0))
    _, done, _ = env.step(Action(0, 0))
    assert done and env.truncated
    assert env.utility == 0.0


def test_truncation_keeps_last_answer():
    env, bench = make_env(p_max=4, width=2, max_steps=3)
    env.reset(bench.generate_query(0, 0))
    env.step(Action(0, 0))   # plan: children c0 c1
    env.step(Action(1, 0))   # resolve c0
    _, done, _ = env.step(Action(0, 1))  # plan c1, hits the step cap
    assert done and env.truncated
    assert env.utility > 0.0


# -- cloning and reset hygiene ----------------------------------------------------------


def test_clone_runs_independently():
    env, bench = make_env(p_max=1, width=2)
    env.reset(bench.generate_query(0, 0))
    env.step(Action(0, 0))
    fork = env.clone()
    fork.step(Action(1, 0))
    assert fork.step_count == 2 and env.step_count == 1
    assert len(fork.workflow.responses) == 1
    assert len(env.workflow.responses) == 0
    assert fork.hubs is env.hubs


def test_reset_leaves_caller_root_untouched():
    env, bench = make_env()
    root = bench.generate_query(0, 0)
    env.run_episode(root, FirstLegal())
    assert root.status == STATUS_PENDING
    assert root.answer_id is None


def test_run_episode_mode_validation():
    env, bench = make_env()
    with pytest.raises(ValueError):
        env.run_episode(bench.generate_query(0, 0), FirstLegal(), mode="beam")


def test_episode_record_consistency():
    env, bench = make_env(p_max=1, width=2)
    ep = env.run_episode(bench.generate_query(0, 0), PreferRole(0, 2, 1))
    assert ep.length == len(ep.records)
    assert ep.actions == [(r.role, r.model) for r in ep.records]
    assert ep.dollars == pytest.approx(sum(r.dollars for r in ep.records))
    assert [r.step for r in ep.records] == list(range(ep.length))
    assert sum(r.done for r in ep.records) == 1 and ep.records[-1].done
    # each record's frozen view predates its action: node counts never shrink
    sizes = [r.wf_input.n_queries + r.wf_input.n_responses for r in ep.records]
    assert sizes == sorted(sizes)


# -- absorption and traces ---------------------------------------------------------------


def test_absorb_episode_updates_hubs():
    env, bench = make_env(p_max=1, width=2)
    ep = env.run_episode(bench.generate_query(0, 0), PreferRole(0, 1))
    history = HeteroGraph("history", env.hubs, capacity=256)
    tag = absorb_episode(history, ep, decay=0.9)
    assert tag == "ep0"
    assert history.interaction_count == \
        len(ep.workflow.queries) + len(ep.workflow.responses)
    # the planner hub saw the episode utility, not a response quality
    planner_hub = env.hubs.get(0, 0)
    assert planner_hub.utility_ema == pytest.approx(0.1 * ep.utility, abs=1e-12)
    touched = {(r.role, r.model) for r in ep.records}
    for (r, m) in touched:
        assert env.hubs.get(r, m).cost_ema > 0.0


def test_trace_lines_roundtrip():
    env, bench = make_env(p_max=1)
    ep = env.run_episode(bench.generate_query(0, 0), FirstLegal())
    lines = trace_lines(ep)
    assert len(lines) == ep.length
    for line, rec in zip(lines, ep.records):
        blob = json.loads(line)
        assert blob["role"] == rec.role and blob["step"] == rec.step
        assert blob["node_id"] == rec.node_id
