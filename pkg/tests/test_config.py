"""Scenario parsing: defaults, overrides, and anchored diagnostics."""

from __future__ import annotations

import pytest

from ranorch.config import (
    Band,
    ConfigError,
    KpiKind,
    QosDirection,
    SimConfig,
    TrafficKind,
    load_scenario,
    parse_scenario,
)


def test_empty_document_is_all_defaults():
    cfg = parse_scenario("")
    assert cfg.sim == SimConfig()
    assert cfg.validation.high_bps == 50e6
    assert cfg.validation.low_bps == 8e6
    assert cfg.orchestrator.goal_buckets == (5.0, 10.0, 15.0, 20.0, 30.0)
    assert cfg.source_text == ""


def test_default_offered_load_matches_closed_form():
    sim = SimConfig()
    expected = sum(t.n_ues * t.packet_bits / t.mean_interarrival_s for t in sim.traffic)
    assert sim.offered_bps() == pytest.approx(expected)
    # 60 UEs across the four classes, ~83 Mbps offered
    assert sim.n_ues == 60
    assert 80e6 < expected < 90e6


def test_overrides_land_in_the_right_places(tiny_toml):
    cfg = parse_scenario(tiny_toml)
    assert cfg.sim.seed == 11
    assert cfg.sim.slots_per_tick == 20
    assert cfg.sim.n_small == 2
    assert cfg.sim.n_ues == 8
    assert cfg.source_text == tiny_toml


def test_rat_override_and_lookup():
    cfg = parse_scenario("[rat.lte]\nbandwidth_hz = 10e6\n")
    assert cfg.sim.rat(Band.LTE_LOW).bandwidth_hz == 10e6
    # untouched bands keep defaults
    assert cfg.sim.rat(Band.NR_MID).carrier_hz == 3.5e9


def test_malformed_toml_names_the_problem():
    with pytest.raises(ConfigError, match="malformed scenario"):
        parse_scenario("[sim\nseed = 1")


def test_unknown_key_is_anchored_to_its_section():
    with pytest.raises(ConfigError, match=r"section \[sim\].*'slotss'"):
        parse_scenario("[sim]\nslotss = 3")


def test_unknown_top_level_section_rejected():
    with pytest.raises(ConfigError, match="top level"):
        parse_scenario("[simulation]\n")


def test_malformed_traffic_diagnostic_names_the_section():
    with pytest.raises(ConfigError, match=r"section \[traffic\]"):
        parse_scenario("traffic = 5\n")


def test_scenario_without_ues_rejected_at_traffic_section():
    doc = "\n".join(f"[traffic.{k.value}]\nues = 0" for k in TrafficKind)
    with pytest.raises(ConfigError, match=r"section \[traffic\]: scenario has no UEs"):
        parse_scenario(doc)


def test_negative_ues_rejected():
    with pytest.raises(ConfigError, match=r"traffic\.video"):
        parse_scenario("[traffic.video]\nues = -1")


def test_nonpositive_interarrival_rejected():
    with pytest.raises(ConfigError, match="mean_interarrival_s"):
        parse_scenario("[traffic.voice]\nmean_interarrival_s = 0.0")


def test_pareto_shape_must_give_finite_mean():
    with pytest.raises(ConfigError, match="pareto_shape"):
        parse_scenario("[traffic.video]\npareto_shape = 1.0")


def test_unknown_process_rejected():
    with pytest.raises(ConfigError, match="pareto|uniform|poisson"):
        parse_scenario('[traffic.video]\nprocess = "weibull"')


def test_threshold_ordering_enforced():
    with pytest.raises(ConfigError, match="low_bps must be < high_bps"):
        parse_scenario("[validation]\nhigh_bps = 1e6\nlow_bps = 2e6")


def test_percentile_ordering_enforced():
    with pytest.raises(ConfigError, match="percentiles"):
        parse_scenario("[validation]\npercentile_high = 20.0\npercentile_low = 80.0")


def test_targeted_classes_parse_and_reject_unknown():
    cfg = parse_scenario('[validation]\ntargeted_classes = ["video", "voice"]')
    assert cfg.validation.targeted_classes == (TrafficKind.VIDEO, TrafficKind.VOICE)
    with pytest.raises(ConfigError, match="targeted_classes"):
        parse_scenario('[validation]\ntargeted_classes = ["cat-videos"]')


def test_power_default_index_range_checked():
    with pytest.raises(ConfigError, match="default_index"):
        parse_scenario("[power]\ncandidates_dbm = [30.0, 36.0]\ndefault_index = 2")


def test_power_candidates_must_be_numbers():
    with pytest.raises(ConfigError, match="candidates_dbm"):
        parse_scenario('[power]\ncandidates_dbm = ["a"]')


def test_orchestrator_rejects_unknown_baseline_app():
    with pytest.raises(ConfigError, match="unknown app"):
        parse_scenario('[orchestrator]\nbaseline_apps = ["traffic_policer"]')


def test_orchestrator_accepts_known_baseline_apps():
    cfg = parse_scenario('[orchestrator]\nbaseline_apps = ["cell_sleeping"]')
    assert cfg.orchestrator.baseline_apps == ("cell_sleeping",)


def test_attention_weights_length_checked():
    with pytest.raises(ConfigError, match="weights"):
        parse_scenario("[orchestrator.attention]\nweights = [1.0, 2.0]")


def test_deadline_must_be_positive():
    with pytest.raises(ConfigError, match="deadline_ticks"):
        parse_scenario("[orchestrator]\ndeadline_ticks = 0")


def test_qos_override_replaces_profile():
    cfg = parse_scenario("[qos.voice]\ndelay_max_s = 0.02")
    reqs = cfg.sim.qos[TrafficKind.VOICE].requirements
    assert len(reqs) == 1
    assert reqs[0].metric is KpiKind.DELAY
    assert reqs[0].direction is QosDirection.AT_MOST
    assert reqs[0].value == 0.02


def test_qos_values_must_be_positive():
    with pytest.raises(ConfigError, match="delay_max_s"):
        parse_scenario("[qos.voice]\ndelay_max_s = 0.0")


def test_wrong_value_type_reports_expectation():
    with pytest.raises(ConfigError, match="expects int"):
        parse_scenario('[sim]\nslots_per_tick = "many"')


def test_load_scenario_round_trips(tmp_path, tiny_toml):
    p = tmp_path / "scenario.toml"
    p.write_text(tiny_toml, encoding="utf-8")
    cfg = load_scenario(p)
    assert cfg.sim.seed == 11
    assert cfg.source_text == tiny_toml


def test_load_scenario_missing_file():
    with pytest.raises(ConfigError, match="cannot read scenario"):
        load_scenario("/nonexistent/nowhere.toml")
