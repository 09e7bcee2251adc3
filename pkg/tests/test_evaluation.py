import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskmbrl.actor_critic import AgentConfig, SACAgent
from riskmbrl.envs import CurrencyExchange
from riskmbrl.evaluation import (CURRENCY_ANCHORS, REPORT_SCHEMA, EvalReport, NormalizationAnchors,
                                 aggregate_reports, emit_report, evaluate_policy, load_report, normalize_score)


class ConstantPolicy:
    def __init__(self, a):
        self.a = a

    def select_action(self, states, deterministic=True):
        return np.full((len(states), 1), self.a)


def test_normalize_anchors():
    assert normalize_score(0.0, CURRENCY_ANCHORS) == 0.0
    assert normalize_score(135.0, CURRENCY_ANCHORS) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        NormalizationAnchors(1.0, 1.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_normalize_order_preserving(a, b):
    if a < b:
        assert normalize_score(a, CURRENCY_ANCHORS) <= normalize_score(b, CURRENCY_ANCHORS)


def test_report_metrics():
    rep = EvalReport(list(range(20)), alpha=0.1)
    assert rep.mean == 9.5
    assert rep.cvar == 0.5  # worst two of twenty
    counts, edges = rep.histogram()
    assert counts.sum() == 20 and len(edges) == 41
    with pytest.raises(ValueError):
        EvalReport([])


def test_convert_all_scores_behave():
    env = CurrencyExchange()
    rep = evaluate_policy(env, ConstantPolicy(1.0), n_episodes=300, seed=0)
    # converting everything at t = 0 returns 100 * p0 with p0 ~ N(1, 0.05^2)
    assert rep.mean == pytest.approx(100.0, abs=1.0)
    assert rep.normalized_mean == pytest.approx(100 / 1.35, abs=1.0)
    assert evaluate_policy(env, ConstantPolicy(-1.0), 50, seed=0).mean == 0.0


def test_fresh_agent_scores_zero():
    rep = evaluate_policy(CurrencyExchange(), SACAgent(3, 1), n_episodes=50, seed=1)
    assert abs(rep.normalized_mean) <= 10


def test_evaluation_does_not_mutate_agent():
    agent = SACAgent(3, 1, AgentConfig(seed=2))
    before = agent.weights_checksum()
    evaluate_policy(CurrencyExchange(), agent, n_episodes=20, seed=0)
    assert agent.weights_checksum() == before


def test_evaluation_seeded():
    env = CurrencyExchange()
    a = evaluate_policy(env, ConstantPolicy(0.1), 40, seed=5)
    b = evaluate_policy(env, ConstantPolicy(0.1), 40, seed=5)
    assert a.returns == b.returns
    with pytest.raises(ValueError):
        evaluate_policy(env, ConstantPolicy(0.1), 0)


def test_emit_round_trip_and_schema(tmp_path):
    rep = EvalReport(np.random.default_rng(0).normal(100, 10, size=60).tolist(), seed=4, config_digest="abc")
    path = emit_report(rep, tmp_path / "rep.json")
    data = json.loads(path.read_text())
    jsonschema.validate(data, REPORT_SCHEMA)
    assert list(data)[:5] == ["env_id", "seed", "config_digest", "n_episodes", "alpha"]
    back = load_report(path)
    assert back.returns == rep.returns and back.mean == rep.mean and back.cvar == rep.cvar
    rows = (tmp_path / "rep_returns.csv").read_text().splitlines()
    assert rows[0] == "episode,return" and len(rows) == 61
    assert float(rows[1].split(",")[1]) == rep.returns[0]


def test_aggregate_per_report_then_average():
    a = EvalReport([0.0] * 9 + [100.0], alpha=0.1)
    b = EvalReport([50.0] * 10, alpha=0.1)
    agg = aggregate_reports([a, b])
    assert agg["cvar"] == pytest.approx(25.0)
    assert agg["pooled_cvar"] == pytest.approx(0.0)
    assert agg["mean"] == pytest.approx(30.0)
    with pytest.raises(ValueError):
        aggregate_reports([])
