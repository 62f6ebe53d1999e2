import json
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agent_pyramid import report as rp
from agent_pyramid.errors import ConfigurationError
from agent_pyramid.experiment import ProtocolConfig, run_protocol
from agent_pyramid.topology import build_pyramid

TOPO = build_pyramid((8, 8), (2, 2), 4)
SHORT = ProtocolConfig(total_episodes=30, warmup=4, inject_at=10, seed=2)


@st.composite
def configs(draw):
    total = draw(st.integers(1, 1000))
    inject = draw(st.integers(0, total))
    warmup = draw(st.integers(0, inject))
    layers = draw(st.integers(2, 5))
    side = 2 ** (layers - 1)
    return ProtocolConfig(
        total_episodes=total, warmup=warmup, inject_at=inject,
        seed=draw(st.integers(0, 2**32 - 1)),
        feedback_enabled=draw(st.booleans()),
        adversarial_agents=tuple(draw(st.sets(st.integers(0, side * side - 1), max_size=3))),
        theta=tuple(draw(st.lists(st.floats(0.05, 1.0), min_size=layers, max_size=layers))),
        hint_margin=draw(st.floats(0, 1)),
        noise_p=draw(st.floats(0, 0.49)),
        grid=(max(8, side), max(8, side)) if side <= 8 else (side, side),
        layers=layers,
        duration=draw(st.integers(16, 40)),
        mapping_window=draw(st.integers(1, 100)),
        score_after_record=draw(st.booleans()),
        merge_rule=draw(st.sampled_from(["latest", "backbone"])),
    )


@settings(max_examples=60, deadline=None)
@given(configs())
def test_config_round_trip(config):
    assert rp.config_from_toml(rp.config_to_toml(config)) == config


def test_default_config_file(tmp_path):
    path = rp.save_config(ProtocolConfig(), tmp_path / "default.toml")
    text = path.read_text()
    assert "[protocol]" in text and "[model]" in text
    assert rp.load_config(path) == ProtocolConfig()


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[model]\nseed = 1\n",
    "[model\n",
    "[protocol]\ncolour = 1\n",
])
def test_bad_config_text(text):
    with pytest.raises(ConfigurationError):
        rp.config_from_toml(text)


def test_partial_config_keeps_defaults():
    cfg = rp.config_from_toml("[model]\ntheta = 0.7\n[protocol]\nseed = 4\n")
    assert cfg.theta == (0.7,) * 4 and cfg.seed == 4 and cfg.total_episodes == 500


def test_csv_layout(tmp_path):
    report = run_protocol(SHORT)
    path = rp.emit_csv(report, tmp_path / "run.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "episode,phase,label,layer1_rate,layer2_rate,layer3_rate,layer4_rate,top_correct"
    assert len(lines) == 31
    rows = rp.read_csv(path)
    assert all(len(r["layer1_rate"].split(".")[1]) == 6 for r in rows)
    assert all(0 <= float(r[f"layer{i}_rate"]) <= 1 for r in rows for i in range(1, 5))
    assert rp.emit_csv(run_protocol(SHORT), tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_manifest_echoes_config(tmp_path):
    report = run_protocol(SHORT)
    outputs = {"csv": tmp_path / "run.csv", "manifest": tmp_path / "run.json"}
    rp.emit_csv(report, outputs["csv"])
    rp.emit_manifest(rp.manifest(report, outputs, 0.5), outputs["manifest"])
    data = json.loads(outputs["manifest"].read_text())
    assert data["seed"] == 2 and set(data["outputs"]) == {"csv", "manifest"}
    assert rp.config_from_manifest(outputs["manifest"]) == SHORT
    assert 0 <= data["summary"]["top_rate_last100"] <= 1


def test_atomic_write_leaves_nothing_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "run.csv"

    def boom(*_):
        raise KeyboardInterrupt

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(KeyboardInterrupt):
        rp.atomic_write(target, "partial")
    assert list(tmp_path.iterdir()) == []


def test_agent_filter():
    assert rp.parse_agent_filter("layer1:1-4,layer2:0", TOPO) == [1, 2, 3, 4, 64]
    assert rp.parse_agent_filter("84, 0-1", TOPO) == [0, 1, 84]
    for bad in ["", " ", "layer2:16", "layer5:0", "85", "layer1:x"]:
        with pytest.raises(ConfigurationError):
            rp.parse_agent_filter(bad, TOPO)


def test_unknown_agent_error_lists_valid_ids():
    with pytest.raises(ConfigurationError, match="0-15"):
        rp.parse_agent_filter("layer2:40", TOPO)


def test_trace_replay(tmp_path):
    agents = rp.parse_agent_filter("layer1:1-4,layer2:0", TOPO)
    cfg = ProtocolConfig(total_episodes=110, warmup=32, inject_at=100)
    report = run_protocol(cfg, trace_agents=agents, trace_episodes=[109, 110])
    path = rp.emit_tick_trace(report.frames, agents, tmp_path / "trace.csv", TOPO)
    trace = rp.read_tick_trace(path)
    assert {(e, a) for e, _, a in trace} == {(e, a) for e in (109, 110) for a in agents}
    again = run_protocol(cfg, trace_agents=agents, trace_episodes=[109, 110])
    for f in again.frames:
        for a in agents:
            assert trace[(f.episode, f.tick, a)][0] == f.upward_codes[a]
    assert rp.code_switches(trace, 64, 110) >= 0


def test_trace_rejects_bad_agents(tmp_path):
    with pytest.raises(ConfigurationError):
        rp.emit_tick_trace([], [], tmp_path / "t.csv", TOPO)
    with pytest.raises(ConfigurationError, match="0-84"):
        rp.emit_tick_trace([], [99], tmp_path / "t.csv", TOPO)
