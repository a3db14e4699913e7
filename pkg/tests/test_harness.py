"""Harness tests: protocols, probes, injection, aggregation, CSV emission."""

import csv

import numpy as np
import pytest

from agentroute.backend import BenchmarkSpec, EXECUTOR, make_benchmark
from agentroute.baselines import RandomRouter
from agentroute.encoder import EncoderDims, RoutingPolicy, init_params
from agentroute.env import EnvConfig, RoutingEnv, absorb_episode
from agentroute.harness import (
    REPORT_COLUMNS,
    SWEEP_COLUMNS,
    EvalReport,
    emit_report,
    evaluate,
    inject_role_interactions,
    new_role_eval,
    pareto_sweep,
    report_rows,
    run_ablation,
    unseen_llm_eval,
    write_csv,
)
from agentroute.memory import HeteroGraph, serialize
from agentroute.ppo import TrainConfig


def make_bench(kind="uniform", families=2, seed=8, k_models=2):
    return make_benchmark(
        BenchmarkSpec(kind=kind, families=tuple(f"fam{i}" for i in range(families)),
                      queries_per_family=30, width_profile=(1, 2), seed=seed),
        k_models=k_models)


def trained_like_history(bench, env_cfg, episodes=3):
    """History grown by absorbing a few scripted episodes."""
    hubs = bench.build_hubs(env_cfg.n_roles)
    history = HeteroGraph("history", hubs, capacity=256)
    for i in range(episodes):
        env = RoutingEnv(env_cfg, bench, hubs)
        ep = env.run_episode(bench.train_query(i), RandomRouter(), mode="greedy")
        absorb_episode(history, ep)
    return history


def tiny_policy(variant="full", seed=0):
    return init_params(EncoderDims(64, 64, 64, 8), variant, seed=seed)


CFG = EnvConfig(n_models=2, p_max=1)


# -- evaluate ------------------------------------------------------------------------


def test_evaluate_validates_protocol():
    bench = make_bench()
    with pytest.raises(ValueError):
        evaluate(RandomRouter(), bench, CFG, 1, protocol="abductive")
    with pytest.raises(ValueError):
        evaluate(RandomRouter(), bench, CFG, 1, protocol="transductive")


def test_inductive_ignores_persisted_history(tmp_path):
    # a corrupt file at history_path would explode any attempt to read it
    bad = tmp_path / "history.json"
    bad.write_bytes(b"\x00 not a graph")
    bench = make_bench()
    report = evaluate(RandomRouter(), bench, CFG, 2, protocol="inductive",
                      history_path=bad)
    assert len(report.rows) == 2
    missing = tmp_path / "nowhere" / "history.json"
    report = evaluate(RandomRouter(), bench, CFG, 2, protocol="inductive",
                      history_path=missing)
    assert len(report.rows) == 2


def test_transductive_resumes_from_graph_or_file(tmp_path):
    bench = make_bench()
    history = trained_like_history(bench, CFG)
    before = history.interaction_count
    r1 = evaluate(RandomRouter(), bench, CFG, 2, protocol="transductive",
                  history=history, absorb=False)
    assert history.interaction_count == before
    path = tmp_path / "history.json"
    path.write_bytes(serialize(trained_like_history(bench, CFG)))
    r2 = evaluate(RandomRouter(), bench, CFG, 2, protocol="transductive",
                  history_path=path)
    assert [r["actions"] for r in r1.rows] == [r["actions"] for r in r2.rows]


def test_evaluate_hub_mismatch_rejected():
    bench = make_bench()
    history = trained_like_history(bench, CFG)
    with pytest.raises(ValueError):
        evaluate(RandomRouter(), bench, EnvConfig(n_models=2, n_roles=5), 1,
                 protocol="transductive", history=history)


def test_evaluate_rows_and_determinism():
    bench = make_bench()
    a = evaluate(RandomRouter(), bench, CFG, 4, protocol="inductive")
    b = evaluate(RandomRouter(), bench, CFG, 4, protocol="inductive")
    assert a.rows == b.rows
    for i, row in enumerate(a.rows):
        assert row["episode"] == i
        assert row["family"] == i % bench.n_families  # held-out index order
        assert 0.0 <= row["utility"] <= 1.0
        assert row["llm_calls"] == len(row["actions"])
    assert a.mean_utility == pytest.approx(
        np.mean([r["utility"] for r in a.rows]))


def test_evaluate_absorb_grows_memory():
    bench = make_bench()
    history = trained_like_history(bench, CFG)
    before = history.interaction_count
    evaluate(RandomRouter(), bench, CFG, 2, protocol="transductive",
             history=history, absorb=True)
    assert history.interaction_count > before


def test_evaluate_with_learned_policy_smoke():
    bench = make_bench()
    policy = RoutingPolicy(tiny_policy(), "full")
    report = evaluate(policy, bench, CFG, 3, protocol="inductive")
    assert len(report.rows) == 3
    assert report.mean_calls >= 1.0


# -- aggregation and emission -----------------------------------------------------------


def fabricated_report():
    rows = [
        {"episode": 0, "family": 0, "utility": 0.8, "dollars": 0.001,
         "scaled_cost": 1.0, "llm_calls": 2, "truncated": False,
         "actions": [(1, 0)], "roles": [1]},
        {"episode": 1, "family": 1, "utility": 0.4, "dollars": 0.003,
         "scaled_cost": 3.0, "llm_calls": 4, "truncated": False,
         "actions": [(1, 1)], "roles": [1]},
    ]
    return EvalReport(protocol="inductive", rows=rows)


def test_report_rows_aggregate_math():
    rows = report_rows(fabricated_report(), variant="full", phase="phase2",
                       alpha=0.1, seed=3)
    assert [r["family"] for r in rows] == ["all", 0, 1]
    top = rows[0]
    assert top["acc"] == pytest.approx(0.6)
    assert top["cost"] == pytest.approx(0.002)
    assert top["avg_llm_calls"] == pytest.approx(3.0)
    assert top["episodes"] == 2
    assert rows[1]["acc"] == pytest.approx(0.8)
    for r in rows:
        assert set(r) == set(REPORT_COLUMNS)


def test_emit_report_and_float_roundtrip(tmp_path):
    rows = report_rows(fabricated_report(), variant="full", phase="phase2",
                       alpha=0.1, seed=3)
    path = tmp_path / "report.csv"
    emit_report(path, rows)
    with open(path) as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == list(REPORT_COLUMNS)
    # repr-encoded floats parse back to the exact binary value
    assert float(parsed[1][6 + 1]) == rows[0]["acc"]


def test_write_csv_is_atomic_overwrite(tmp_path):
    path = tmp_path / "out.csv"
    write_csv(path, ("a", "b"), [{"a": 1, "b": 0.1}])
    write_csv(path, ("a", "b"), [{"a": 2, "b": 0.2}])
    with open(path) as fh:
        parsed = list(csv.reader(fh))
    assert parsed == [["a", "b"], ["2", repr(0.2)]]
    assert not path.with_suffix(".csv.tmp").exists()


# -- sweeps and ablations ----------------------------------------------------------------


def sweep_train_cfg():
    return TrainConfig(hidden=8, episodes_per_update=4, max_episodes=8,
                       epochs=2)


def test_pareto_sweep_rows_and_csv(tmp_path):
    bench = make_bench()
    out = tmp_path / "sweep.csv"
    rows = pareto_sweep(bench, CFG, sweep_train_cfg(), alphas=[0.0, 0.5],
                        seeds=(0,), eval_episodes=3, out_csv=out)
    assert [r["alpha"] for r in rows] == [0.0, 0.5]
    assert all(set(r) == set(SWEEP_COLUMNS) for r in rows)
    with open(out) as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == list(SWEEP_COLUMNS)
    assert len(parsed) == 3


def test_pareto_sweep_warns_on_duplicate_alpha():
    bench = make_bench()
    with pytest.warns(UserWarning):
        rows = pareto_sweep(bench, CFG, sweep_train_cfg(), alphas=[0.0, 0.0],
                            seeds=(0,), eval_episodes=2)
    assert len(rows) == 1


def test_run_ablation_covers_requested_variants():
    bench = make_bench()
    rows = run_ablation(bench, CFG, sweep_train_cfg(),
                        variants=("full", "no_history"), seeds=(0,),
                        eval_episodes=3)
    assert [r["variant"] for r in rows] == ["full", "no_history"]
    for r in rows:
        assert r["episodes"] == 8
        assert 0.0 <= r["acc"] <= 1.0


# -- transfer probes -----------------------------------------------------------------------


def test_inject_role_interactions_counts_and_structure():
    bench = make_bench(families=2, k_models=2)
    history = HeteroGraph("history", bench.build_hubs(5), capacity=1024)
    injected = inject_role_interactions(bench, history, n_queries=4)
    assert injected == 20  # five roles touched per scripted query
    assert len(history.queries) == 4
    assert len(history.responses) == 20
    roles_seen = {r.produced_by[0] for r in history.responses.values()}
    assert roles_seen == {0, 1, 2, 3, 4}
    # every role hub that appeared has live statistics
    for r in range(5):
        assert any(history.hubs.get(r, m).cost_ema > 0.0 for m in range(2))
    # models rotate with the query index, so both models appear
    models_seen = {r.produced_by[1] for r in history.responses.values()}
    assert models_seen == {0, 1}
    # the executor response resolves each scripted query
    for q in history.queries.values():
        assert q.answer_id is not None
        assert history.responses[q.answer_id].produced_by[0] == EXECUTOR


def test_inject_role_interactions_respects_capacity():
    bench = make_bench()
    history = HeteroGraph("history", bench.build_hubs(5), capacity=12)
    inject_role_interactions(bench, history, n_queries=5)
    assert history.interaction_count <= 12


def test_new_role_eval_requires_base_roles():
    bench = make_bench()
    history = trained_like_history(bench, CFG)
    with pytest.raises(ValueError):
        new_role_eval(tiny_policy(), "full", 1.0, bench,
                      EnvConfig(n_models=2, n_roles=5), history)


def test_new_role_eval_phases():
    bench = make_bench()
    history = trained_like_history(bench, CFG)
    out = new_role_eval(tiny_policy(), "full", 1.0, bench, CFG, history,
                        inject_queries=2, eval_episodes=3)
    assert set(out) == {"base", "zero_shot", "few_shot", "injected"}
    assert out["injected"] == 10
    assert len(out["base"].rows) == 3
    # the wider action space can only add new roles to the base three
    base_roles = {r for row in out["base"].rows for r in row["roles"]}
    assert base_roles <= {0, 1, 2}
    # the original memory is untouched by either probe phase
    assert all(not k.startswith("ep9") for k in history.queries)


def test_unseen_llm_eval_memory_free_mode():
    bench = make_bench(kind="separable", families=2)
    out = unseen_llm_eval(tiny_policy(), "full", 1.0, bench, CFG, None,
                          level=0.9, eval_episodes=3, seed=1)
    assert set(out) == {"base", "extended", "changed_fraction",
                        "utility_lift", "probe_name"}
    assert 0.0 <= out["changed_fraction"] <= 1.0
    assert len(out["extended"].rows) == 3
    # the probe joins as the last model index
    ext_models = {m for row in out["extended"].rows
                  for _, m in row["actions"]}
    assert ext_models <= {0, 1, 2}


def test_unseen_llm_eval_transductive_mode():
    bench = make_bench(kind="separable", families=2)
    history = trained_like_history(bench, CFG)
    out = unseen_llm_eval(tiny_policy(), "full", 1.0, bench, CFG, history,
                          level=0.9, eval_episodes=2, seed=1)
    assert len(out["base"].rows) == 2
    # growing the pool must not mutate the original history hub set
    assert history.hubs.n_models == 2
