import csv
import json
import os

import pytest

import fedgen
from lib_data.tensorFile import readTensor
from lib_runner.commands import cmdCompare, cmdEvaluate, cmdGenerateData, cmdRun, loadHospitalSplits
from lib_runner.config import (
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_OK,
    MANIFEST_NAME,
    ConfigError,
    DataError,
    loadRunConfig,
    parseWidths,
)
from lib_runner.manageJSON import appendToJson

TINY_CONFIG = """
[data]
hospitals = 2
largest = 40
smallest = 30
steps = 4
features = 32
sparsity = 0.2
prevalence = 0.4

[stage1]
rounds = 2
first_round_epochs = 3
later_round_epochs = 2
frozen_epochs = 1
joint_epochs = 1
batch_size = 32
hidden_widths = 8
latent_width = 4

[stage2]
rounds = 2
latent_width = 2
head_width = 4
state_width = 4

[eval]
umap_cap = 5

[run]
progress = false
"""


@pytest.fixture
def tinyConfigPath(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return str(path)


@pytest.fixture
def tinyData(tmp_path, tinyConfigPath):
    config = loadRunConfig(tinyConfigPath)
    dataDir = str(tmp_path / "data")
    cmdGenerateData(config, dataDir)
    return config, dataDir


class TestConfig:

    def test_defaults(self):
        config = loadRunConfig()
        assert config["data"]["hospitals"] == 5
        assert config.federationConfig().baeRounds == 5
        assert config.federationConfig().hiddenWidths == (128,)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[stage1]\nrounds = 2\nwarp = 9\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="warp"):
            loadRunConfig(str(path))

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[stage3]\nrounds = 2\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="stage3"):
            loadRunConfig(str(path))

    def test_bad_value(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[stage2]\ntau = hot\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="tau"):
            loadRunConfig(str(path))

    def test_bad_mode(self):
        with pytest.raises(ConfigError, match="mode"):
            loadRunConfig(overrides={("run", "mode"): "fedprox"})

    def test_ratios_must_sum_to_one(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[data]\ntest_ratio = 0.5\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="ratios"):
            loadRunConfig(str(path))

    def test_widths(self):
        assert parseWidths("128, 64") == (128, 64)
        with pytest.raises(ConfigError):
            parseWidths("128,x")


class TestGenerateData:

    def test_default_layout_has_fifteen_files(self, tmp_path):
        config = loadRunConfig(overrides={("data", "largest"): 40, ("data", "smallest"): 20,
                                          ("data", "features"): 16, ("data", "steps"): 3})
        dataDir = tmp_path / "data"
        cmdGenerateData(config, str(dataDir))
        assert len(list(dataDir.glob("*.fgt"))) == 15
        assert (dataDir / MANIFEST_NAME).exists()

    def test_deterministic(self, tmp_path, tinyConfigPath):
        config = loadRunConfig(tinyConfigPath)
        first, second = tmp_path / "a", tmp_path / "b"
        cmdGenerateData(config, str(first))
        cmdGenerateData(config, str(second))
        for path in sorted(first.iterdir()):
            assert path.read_bytes() == (second / path.name).read_bytes(), path.name

    def test_manifest_matches_files(self, tinyData):
        _, dataDir = tinyData
        with open(os.path.join(dataDir, MANIFEST_NAME), encoding="utf-8") as f:
            manifest = json.load(f)
        for entry in manifest["hospitals"]:
            for split, name in entry["files"].items():
                assert readTensor(os.path.join(dataDir, name)).numSamples == entry["sizes"][split]
        assert len(loadHospitalSplits(dataDir)) == 2
        assert loadHospitalSplits(dataDir, role="holdout") == []

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="generate-data"):
            loadHospitalSplits(str(tmp_path))

    def test_too_many_hospitals_requested(self, tinyData):
        _, dataDir = tinyData
        with pytest.raises(DataError):
            loadHospitalSplits(dataDir, limit=3)


class TestEvaluate:

    def test_self_comparison(self, tinyData, tmp_path):
        _, dataDir = tinyData
        real = os.path.join(dataDir, "hospital_00_train.fgt")
        rows = cmdEvaluate(real, real, str(tmp_path / "eval.csv"))
        values = {metric: value for metric, _, value in rows}
        assert values["r2"] == 1.0
        assert values["mmd"] == pytest.approx(0.0, abs=1e-12)
        assert values["nnaa"] == 1.0
        assert (tmp_path / "eval.csv").exists()

    def test_shuffled_synthetic_keeps_fidelity(self, tinyData, tmp_path):
        import numpy as np
        from lib_data.tensorFile import writeTensor

        _, dataDir = tinyData
        realPath = os.path.join(dataDir, "hospital_00_train.fgt")
        synPath = os.path.join(dataDir, "hospital_01_train.fgt")
        syn = readTensor(synPath)
        shuffledPath = str(tmp_path / "shuffled.fgt")
        writeTensor(shuffledPath, syn.subset(np.random.default_rng(0).permutation(syn.numSamples)))
        original = {m: v for m, _, v in cmdEvaluate(realPath, synPath, str(tmp_path / "a.csv"))}
        shuffled = {m: v for m, _, v in cmdEvaluate(realPath, shuffledPath, str(tmp_path / "b.csv"))}
        for metric in ("r2", "mmd", "prevalence_mae"):
            assert shuffled[metric] == pytest.approx(original[metric], abs=1e-12)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            cmdEvaluate(str(tmp_path / "nope.fgt"), str(tmp_path / "nope.fgt"), str(tmp_path / "out.csv"))


class TestRun:

    def test_run_writes_artifacts_and_is_deterministic(self, tinyData, tmp_path):
        config, dataDir = tinyData
        first = cmdRun(config, mode="fedehr_gen", outDir=str(tmp_path / "runs_a"), dataDir=dataDir)
        second = cmdRun(config, mode="fedehr_gen", outDir=str(tmp_path / "runs_b"), dataDir=dataDir)
        for name in ("config.ini", "effective_config.json", "round_log.csv", "metrics.csv", "umap_samples.csv"):
            assert os.path.exists(os.path.join(first.runDir, name)), name
        assert os.path.exists(os.path.join(first.runDir, "stage1", "round_2.ckpt"))
        assert os.path.exists(os.path.join(first.runDir, "synthetic", "hospital_01_syn.fgt"))
        with open(os.path.join(first.runDir, "metrics.csv"), encoding="utf-8") as a, \
                open(os.path.join(second.runDir, "metrics.csv"), encoding="utf-8") as b:
            assert a.read() == b.read()
        with open(os.path.join(first.runDir, "round_log.csv"), newline="", encoding="utf-8") as f:
            stages = [row["stage"] for row in csv.DictReader(f)]
        assert stages == ["stage1", "stage1", "stage2", "stage2"]
        regimes = {regime for _, regime, _ in first.rows}
        assert {"fedehr_gen", "fedehr_gen/real", "fedehr_gen/synth", "fedehr_gen/hybrid"} <= regimes

        table = cmdCompare([first.runDir, second.runDir], str(tmp_path / "summary.csv"))
        assert "fedehr_gen" in table

    def test_centralized_run(self, tinyData, tmp_path):
        config, dataDir = tinyData
        result = cmdRun(config, mode="centralized", outDir=str(tmp_path / "runs"), dataDir=dataDir)
        assert os.path.exists(os.path.join(result.runDir, "synthetic", "hospital_00_syn.fgt"))
        assert not os.path.exists(os.path.join(result.runDir, "synthetic", "hospital_01_syn.fgt"))
        with open(tmp_path / "runs" / "runs.json", encoding="utf-8") as f:
            assert json.load(f)[0]["mode"] == "centralized"


class TestRunsIndex:

    def test_unreadable_index_is_restarted(self, tmp_path):
        path = tmp_path / "runs.json"
        path.write_text("{not json", encoding="utf-8")
        appendToJson(path, {"seed": 0})
        appendToJson(path, {"seed": 1})
        with open(path, encoding="utf-8") as f:
            assert json.load(f) == [{"seed": 0}, {"seed": 1}]


class TestEntryPoint:

    def test_config_error_exit_code(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[stage1]\nwarp = 9\n", encoding="utf-8")
        assert fedgen.main(["--config", str(path), "generate-data", "--out", str(tmp_path / "d")]) == EXIT_CONFIG_ERROR

    def test_data_error_exit_code(self, tmp_path):
        missing = str(tmp_path / "missing.fgt")
        assert fedgen.main(["evaluate", missing, missing, "--out", str(tmp_path / "m.csv")]) == EXIT_DATA_ERROR

    def test_generate_data_exit_ok(self, tmp_path, tinyConfigPath):
        assert fedgen.main(["--config", tinyConfigPath, "generate-data", "--out", str(tmp_path / "d")]) == EXIT_OK
        assert (tmp_path / "d" / MANIFEST_NAME).exists()
