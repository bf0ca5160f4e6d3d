import pytest

from topoplan.config import (
    ConfigError,
    ExpertDefinition,
    config_from_doc,
    default_config,
    default_experts,
    expert_topologies,
    load_config,
)
from topoplan.grid import BUS_B, reference_topology
from topoplan.pareto import SOLVED_THRESHOLD


class TestDefaults:
    def test_default_config_is_consistent(self):
        cfg = default_config()
        assert cfg.scenario.days == (cfg.splits.train + cfg.splits.in_dist
                                     + cfg.splits.out_dist)
        assert cfg.agent.name in ("greedy", "ssa", "aza")
        assert len(cfg.experts) == 3

    def test_default_experts_build(self, bench_grid):
        cfg = default_config()
        topos = expert_topologies(cfg, bench_grid)
        assert set(topos) == {e.name for e in default_experts()}
        ref = reference_topology(bench_grid)
        for topo in topos.values():
            assert topo != ref
            assert topo.grid_fingerprint == bench_grid.fingerprint

    def test_with_seed_overrides_every_stage(self):
        cfg = default_config().with_seed(13)
        assert cfg.scenario.seed == 13
        assert cfg.splits.seed == 13
        assert cfg.agent.training.seed == 13


class TestExpertDefinitions:
    def test_split_expert_moves_ends(self, bench_grid):
        e = ExpertDefinition(name="x", ends_on_b=((6, 0),))
        topo = e.build(bench_grid)
        assert topo.branch_bus[6][0] == BUS_B

    def test_line_disable_expert(self, bench_grid):
        e = ExpertDefinition(name="x", lines_offline=(15,))
        topo = e.build(bench_grid)
        assert topo.line_online[15] is False

    def test_bad_line_end_rejected(self, bench_grid):
        with pytest.raises(ConfigError):
            ExpertDefinition(name="x", ends_on_b=((999, 0),)).build(bench_grid)
        with pytest.raises(ConfigError):
            ExpertDefinition(name="x", ends_on_b=((0, 2),)).build(bench_grid)

    def test_bad_injection_rejected(self, bench_grid):
        with pytest.raises(ConfigError):
            ExpertDefinition(name="x",
                             injections_on_b=(999,)).build(bench_grid)

    def test_stranded_injection_rejected(self, bench_grid):
        # an injection alone on bus B with every line end left on A
        e = ExpertDefinition(name="x", injections_on_b=(0,))
        with pytest.raises(ConfigError, match="stranded"):
            e.build(bench_grid)


class TestDocParsing:
    def test_empty_doc_gives_defaults(self):
        cfg = config_from_doc({})
        assert cfg == default_config()

    def test_split_sum_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="sum"):
            config_from_doc({"scenario": {"days": 10},
                             "splits": {"train": 5, "in_dist": 2,
                                        "out_dist": 2}})

    def test_unknown_agent_rejected(self):
        with pytest.raises(ConfigError, match="agent.name"):
            config_from_doc({"agent": {"name": "dqn"}})

    def test_bad_training_key_rejected(self):
        with pytest.raises(ConfigError, match="training"):
            config_from_doc({"agent": {"training": {"learnin_rate": 0.1}}})

    def test_bad_training_value_rejected(self):
        with pytest.raises(ConfigError, match="training"):
            config_from_doc({"agent": {"training": {"gamma": 2.0}}})

    def test_non_mapping_rejected(self):
        with pytest.raises(ConfigError):
            config_from_doc(["not", "a", "mapping"])

    def test_beam_validated(self):
        with pytest.raises(ConfigError, match="beam"):
            config_from_doc({"agent": {"beam": 0}})

    def test_training_overrides_applied(self):
        cfg = config_from_doc({
            "scenario": {"days": 6, "seed": 4},
            "splits": {"train": 2, "in_dist": 2, "out_dist": 2},
            "agent": {"name": "greedy", "beam": 2,
                      "training": {"iterations": 7, "hidden": 16}},
            "out_dir": "runs/tiny",
        })
        assert cfg.scenario.days == 6
        assert cfg.agent.training.iterations == 7
        assert cfg.agent.training.hidden == 16
        assert cfg.out_dir == "runs/tiny"

    def test_hv_reference_shape(self):
        with pytest.raises(ConfigError):
            config_from_doc({"hv_reference": [1.0]})
        cfg = config_from_doc({"hv_reference": [2.5, 20]})
        assert cfg.hv_reference == (2.5, 20.0)
        assert cfg.hv_reference[0] > SOLVED_THRESHOLD

    def test_yaml_round_trip(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            "scenario:\n  days: 6\n  seed: 2\n"
            "splits:\n  train: 2\n  in_dist: 2\n  out_dist: 2\n"
            "agent:\n  name: ssa\n  training:\n    iterations: 5\n"
        )
        cfg = load_config(path)
        assert cfg.scenario.days == 6
        assert cfg.splits.train == 2
        assert cfg.agent.training.iterations == 5
