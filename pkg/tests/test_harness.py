import hashlib
import json

import pytest

import covercs.harness as harness
from covercs.cli import main as cli_main
from covercs.config import ExperimentConfig, load_config

MINI_CONFIG = """
[dictionary]
n_excitations = 32
t1_count = 16
t2_count = 16

[phantom]
height = 8
width = 8

[sampling]
ratios = [8]

[solver]
epsilons = [0.0, 0.4]
max_iters = 12

[output]
seed = 3
"""


@pytest.fixture()
def mini_config_path(tmp_path):
    path = tmp_path / "mini.toml"
    path.write_text(MINI_CONFIG)
    return path


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestConfig:
    def test_load_mini(self, mini_config_path):
        cfg = load_config(mini_config_path)
        assert cfg.n_excitations == 32
        assert cfg.ratios == [8]
        assert cfg.epsilons == [0.0, 0.4]
        assert cfg.seed == 3

    def test_defaults_match_desk_scale(self):
        cfg = ExperimentConfig()
        assert cfg.n_excitations == 64
        assert (cfg.height, cfg.width) == (32, 32)
        assert cfg.ratios == [8, 16]
        assert cfg.epsilons == [0.0, 0.2, 0.4, 0.6, 0.8]

    def test_bad_ratio_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[phantom]\nheight = 10\nwidth = 10\n[sampling]\nratios = [3]\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_negative_epsilon_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[solver]\nepsilons = [-0.1]\n")
        with pytest.raises(ValueError):
            load_config(path)


class TestSweep:
    def test_grid_cells(self):
        cfg = ExperimentConfig(epsilons=[0.0, 0.2, 0.4, 0.6, 0.8])
        cells = harness.sweep_grid(cfg)
        assert cells[0] == ("brute", 0.0)
        assert [c for c in cells if c[0] == "tree"] == \
            [("tree", e) for e in (0.0, 0.2, 0.4, 0.6, 0.8)]

    def test_sweep_outputs(self, mini_config_path, tmp_path):
        cfg = load_config(mini_config_path)
        out = tmp_path / "sweep"
        summaries = harness.run_sweep(cfg, out)
        assert len(summaries) == 3  # brute + tree at eps 0 and 0.4
        assert (out / "table.csv").exists()
        assert (out / "dictionary.bin").exists()
        assert (out / "tree.json").exists()
        assert (out / "phantom.txt").exists()
        labels = {s["method"] for s in summaries}
        assert labels == {"brute-exact", "tree-exact", "tree-ann"}

    def test_distance_accounting_completeness(self, mini_config_path, tmp_path):
        import covercs.solver as solver
        cfg = load_config(mini_config_path)
        out = tmp_path / "s"
        harness.run_sweep(cfg, out)
        for csv_path in out.glob("**/telemetry.csv"):
            rows = solver.read_telemetry_csv(csv_path)
            assert sum(r["distances_iter"] for r in rows) == rows[-1]["distances_cum"]

    def test_report_table_sorted_by_distances(self, mini_config_path, tmp_path):
        cfg = load_config(mini_config_path)
        summaries = harness.run_sweep(cfg, tmp_path / "s")
        rows = harness.report_table(summaries)
        dists = [r["cum_distances"] for r in rows]
        assert dists == sorted(dists)

    def test_report_table_single_run(self, mini_config_path, tmp_path):
        cfg = load_config(mini_config_path)
        dictionary = harness.build_experiment_dictionary(cfg)
        phantom = harness.build_experiment_phantom(cfg, dictionary)
        summary = harness.run_single(dictionary, None, phantom, cfg, 8, "brute", 0.0)
        rows = harness.report_table([summary])
        assert len(rows) == 1
        assert rows[0]["method"] == "brute-exact"

    def test_report_table_empty_rejected(self):
        with pytest.raises(ValueError):
            harness.report_table([])

    def test_brute_and_tree_exact_agree(self, mini_config_path, tmp_path):
        cfg = load_config(mini_config_path)
        summaries = harness.run_sweep(cfg, tmp_path / "s")
        by_label = {s["method"]: s for s in summaries}
        assert by_label["brute-exact"]["final_rel_solution_mse"] == \
            by_label["tree-exact"]["final_rel_solution_mse"]
        assert by_label["tree-exact"]["cum_distances"] < \
            by_label["brute-exact"]["cum_distances"]


class TestCli:
    def test_full_pipeline(self, mini_config_path, tmp_path):
        d = tmp_path / "dict.bin"
        t = tmp_path / "tree.json"
        ph = tmp_path / "phantom.txt"
        assert cli_main(["gen-dict", "--config", str(mini_config_path), "--out", str(d)]) == 0
        assert cli_main(["build-tree", "--dict", str(d), "--out", str(t)]) == 0
        assert cli_main(["gen-phantom", "--config", str(mini_config_path),
                         "--dict", str(d), "--out", str(ph)]) == 0
        assert cli_main(["validate-tree", "--dict", str(d), "--tree", str(t)]) == 0
        run_dir = tmp_path / "run"
        assert cli_main(["solve", "--config", str(mini_config_path), "--dict", str(d),
                         "--tree", str(t), "--phantom", str(ph), "--ratio", "8",
                         "--method", "tree", "--epsilon", "0.4",
                         "--out", str(run_dir)]) == 0
        assert (run_dir / "telemetry.csv").exists()
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["schema_version"] == 1
        assert summary["method"] == "tree-ann"

    def test_solve_deterministic_bytes(self, mini_config_path, tmp_path):
        d = tmp_path / "dict.bin"
        cli_main(["gen-dict", "--config", str(mini_config_path), "--out", str(d)])
        runs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert cli_main(["solve", "--config", str(mini_config_path),
                             "--dict", str(d), "--ratio", "8", "--method", "brute",
                             "--out", str(out)]) == 0
            runs.append(sha256(out / "telemetry.csv"))
        assert runs[0] == runs[1]

    def test_sweep_and_report(self, mini_config_path, tmp_path):
        out = tmp_path / "sweep"
        assert cli_main(["sweep", "--config", str(mini_config_path),
                         "--out", str(out)]) == 0
        report = tmp_path / "report"
        assert cli_main(["report", "--runs", str(out), "--out", str(report)]) == 0
        assert (report / "table.csv").exists()
        figures = list(report.glob("report_ratio*.png"))
        assert len(figures) == 1
        header = (report / "table.csv").read_text().splitlines()[0]
        assert header == "method,epsilon,ratio,final_mse,t1_mae,t2_mae,cum_distances"

    def test_missing_artifact_nonzero_exit(self, tmp_path):
        assert cli_main(["build-tree", "--dict", str(tmp_path / "nope.bin"),
                         "--out", str(tmp_path / "t.json")]) == 1

    def test_invalid_tree_nonzero_exit(self, mini_config_path, tmp_path):
        d = tmp_path / "dict.bin"
        t = tmp_path / "tree.json"
        cli_main(["gen-dict", "--config", str(mini_config_path), "--out", str(d)])
        cli_main(["build-tree", "--dict", str(d), "--out", str(t)])
        payload = json.loads(t.read_text())
        payload["nodes"][1][2] = 0.0  # understate a maxdist field
        t.write_text(json.dumps(payload))
        assert cli_main(["validate-tree", "--dict", str(d), "--tree", str(t)]) == 1

    def test_report_without_figures_flag(self, mini_config_path, tmp_path):
        out = tmp_path / "sweep"
        cli_main(["sweep", "--config", str(mini_config_path), "--out", str(out)])
        report = tmp_path / "report"
        assert cli_main(["report", "--runs", str(out), "--out", str(report),
                         "--no-figures"]) == 0
        assert not list(report.glob("*.png"))

    def test_report_empty_dir_fails(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert cli_main(["report", "--runs", str(empty),
                         "--out", str(tmp_path / "r")]) == 1
