import json

import numpy as np
import pytest

from gradsep import cli, data, experiment
from gradsep.experiment import ExperimentConfig, ExperimentResult

SMALL_SYNTH = dict(num_known_classes=4, num_unknown_classes=2,
                   samples_per_class=10, feature_dim=24)


def small_config(method="zeroshot", seed=0, **kwargs):
    return ExperimentConfig(
        method=method, synth=data.SynthConfig(seed=seed, **SMALL_SYNTH),
        seed=seed, task="synthetic", **kwargs)


class TestExperimentConfig:
    def test_requires_exactly_one_input(self):
        with pytest.raises(experiment.ConfigError):
            ExperimentConfig(method="zeroshot")
        with pytest.raises(experiment.ConfigError):
            ExperimentConfig(method="zeroshot", source_path="a",
                             target_path="b", synth=data.SynthConfig())

    def test_unknown_method(self):
        with pytest.raises(experiment.ConfigError):
            ExperimentConfig(method="magic", synth=data.SynthConfig())

    def test_fingerprint_stable(self):
        assert small_config().fingerprint() == small_config().fingerprint()
        assert small_config(seed=1).fingerprint() \
            != small_config(seed=2).fingerprint()


class TestRunExperiment:
    def test_zeroshot_synthetic_separates(self):
        result = experiment.run_experiment(
            ExperimentConfig(method="zeroshot", synth=data.SynthConfig(),
                             seed=0))
        assert result.auroc >= 95.0

    def test_deterministic_records(self):
        cfg = small_config(method="proposed",
                           hyperparams=_fast_hp())
        r1 = experiment.run_experiment(cfg)
        r2 = experiment.run_experiment(cfg)
        assert r1.to_json() == r2.to_json()

    def test_file_based_run(self, tmp_path):
        src, tgt = data.synth_generate(data.SynthConfig(seed=3,
                                                        **SMALL_SYNTH))
        sp, tp = tmp_path / "s.osde", tmp_path / "t.osde"
        data.write_embeddings(sp, src, 24)
        data.write_embeddings(tp, tgt, 24)
        result = experiment.run_experiment(ExperimentConfig(
            method="zeroshot", source_path=str(sp), target_path=str(tp),
            task="S->T", seed=3))
        assert 0 <= result.auroc <= 100

    def test_text_embedding_anchors(self, tmp_path):
        src, tgt = data.synth_generate(data.SynthConfig(seed=4,
                                                        **SMALL_SYNTH))
        sp, tp, xp = (tmp_path / n for n in ("s.osde", "t.osde", "x.osde"))
        data.write_embeddings(sp, src, 24)
        data.write_embeddings(tp, tgt, 24)
        anchors = data.class_means(src, range(4))
        text = [data.EmbeddingRecord(f"c{i}", i, "text", anchors[i])
                for i in range(4)]
        data.write_embeddings(xp, text, 24)
        result = experiment.run_experiment(ExperimentConfig(
            method="zeroshot", source_path=str(sp), target_path=str(tp),
            text_path=str(xp), seed=4))
        assert result.auroc >= 80.0

    def test_missing_file_is_data_error(self):
        with pytest.raises(experiment.DataError):
            experiment.run_experiment(ExperimentConfig(
                method="zeroshot", source_path="/nonexistent/a.osde",
                target_path="/nonexistent/b.osde"))


def _fast_hp():
    from gradsep.training import Hyperparams
    return Hyperparams(epochs=2, batch_size=16, seed=0)


class TestTables:
    def make_result(self, method, task, ccr, fpr, auroc):
        return ExperimentResult(method=method, task=task, seed=0,
                                ccr_at_fpr10=ccr, fpr95=fpr, auroc=auroc,
                                fingerprint="f")

    def test_single_result_verbatim(self):
        text, machine = experiment.format_tables(
            [self.make_result("zeroshot", "Pr->Rw", 76.97, 31.05, 92.14)])
        assert "76.97" in text and "31.05" in text and "92.14" in text
        assert machine["rows"][0]["auroc"] == 92.14

    def test_best_of_column_marking(self):
        results = [
            self.make_result("zeroshot", "A->B", 50.0, 40.0, 80.0),
            self.make_result("proposed", "A->B", 60.0, 30.0, 90.0),
            self.make_result("zeroshot", "A->C", 70.0, 20.0, 95.0),
            self.make_result("proposed", "A->C", 65.0, 25.0, 93.0),
        ]
        text, _ = experiment.format_tables(results)
        lines = text.splitlines()
        proposed = next(l for l in lines if l.startswith("proposed"))
        zeroshot = next(l for l in lines if l.startswith("zeroshot"))
        # proposed wins all three on A->B; zeroshot wins all three on A->C
        assert proposed.count("*") == 3
        assert zeroshot.count("*") == 3

    def test_average_over_tasks(self):
        rng = np.random.default_rng(0)
        results = []
        vals = []
        for i in range(12):
            c, f, a = rng.uniform(40, 90, 3)
            vals.append((c, f, a))
            results.append(self.make_result("proposed", f"T{i:02d}->X",
                                            c, f, a))
        _, machine = experiment.format_tables(results, average=True)
        row = machine["rows"][0]
        expect = np.mean(vals, axis=0)
        assert abs(row["ccr_at_fpr10"] - expect[0]) < 1e-9
        assert abs(row["fpr95"] - expect[1]) < 1e-9
        assert abs(row["auroc"] - expect[2]) < 1e-9

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            experiment.format_tables([])


class TestCli:
    def write_config(self, tmp_path, extra=""):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(
            "method = zeroshot\n"
            "task = synthetic\n"
            "synth.num_known_classes = 4\n"
            "synth.num_unknown_classes = 2\n"
            "synth.samples_per_class = 10\n"
            "synth.feature_dim = 24\n"
            "seed = 0\n" + extra)
        return cfg

    def test_run_appends_ledger(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        ledger = tmp_path / "results.jsonl"
        code = cli.main(["run", "--config", str(cfg),
                         "--ledger", str(ledger)])
        assert code == cli.EXIT_OK
        lines = ledger.read_text().splitlines()
        assert len(lines) == 1
        rec = json.loads(lines[0])
        assert rec["method"] == "zeroshot"

    def test_run_determinism_identical_ledger_lines(self, tmp_path):
        cfg = self.write_config(tmp_path, "method = proposed\nepochs = 2\n")
        ledger = tmp_path / "results.jsonl"
        assert cli.main(["run", "--config", str(cfg),
                         "--ledger", str(ledger)]) == cli.EXIT_OK
        assert cli.main(["run", "--config", str(cfg),
                         "--ledger", str(ledger)]) == cli.EXIT_OK
        first, second = ledger.read_text().splitlines()
        assert first == second

    def test_bad_config_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("method = nonsense\nsynth = true\n")
        assert cli.main(["run", "--config", str(cfg),
                         "--ledger", str(tmp_path / "l.jsonl")]) \
            == cli.EXIT_CONFIG

    def test_missing_data_exit_code(self, tmp_path):
        cfg = tmp_path / "missing.cfg"
        cfg.write_text("method = zeroshot\n"
                       "source = /nope/s.osde\ntarget = /nope/t.osde\n")
        assert cli.main(["run", "--config", str(cfg),
                         "--ledger", str(tmp_path / "l.jsonl")]) \
            == cli.EXIT_DATA

    def test_synth_round_trip(self, tmp_path, capsys):
        sp, tp = tmp_path / "s.osde", tmp_path / "t.osde"
        code = cli.main(["synth", "--out-source", str(sp),
                         "--out-target", str(tp),
                         "--manifest", str(tmp_path / "m.txt"),
                         "--set", "synth.num_known_classes=4",
                         "--set", "synth.num_unknown_classes=2",
                         "--set", "synth.samples_per_class=5",
                         "--set", "synth.feature_dim=16"])
        assert code == cli.EXIT_OK
        assert len(data.read_embeddings(sp)) == 20
        assert len(data.read_embeddings(tp)) == 30
        manifest = data.read_manifest(tmp_path / "m.txt")
        assert manifest["known_classes"] == 4

    def test_synth_seed_changes_bytes(self, tmp_path):
        paths = []
        for seed in (1, 2):
            sp = tmp_path / f"s{seed}.osde"
            tp = tmp_path / f"t{seed}.osde"
            cli.main(["synth", "--out-source", str(sp), "--out-target",
                      str(tp), "--set", "synth.num_known_classes=4",
                      "--set", "synth.num_unknown_classes=2",
                      "--set", "synth.samples_per_class=5",
                      "--set", "synth.feature_dim=16",
                      "--set", f"synth.seed={seed}"])
            paths.append(sp.read_bytes())
        assert paths[0] != paths[1]

    def test_table_command(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        ledger = tmp_path / "results.jsonl"
        cli.main(["run", "--config", str(cfg), "--ledger", str(ledger)])
        out_json = tmp_path / "table.json"
        code = cli.main(["table", "--ledger", str(ledger),
                         "--json", str(out_json)])
        assert code == cli.EXIT_OK
        assert "Acc10" in capsys.readouterr().out
        assert json.loads(out_json.read_text())["rows"]

    def test_check_command_passes(self, capsys):
        assert cli.main(["check"]) == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "FAIL" not in out
