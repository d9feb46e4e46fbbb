import configparser
import copy
from dataclasses import dataclass

from lib_federation.federationConfig import FederationConfig

# -------------------------
# Config
# -------------------------
DEFAULT_CONFIG_PATH = "default_config.ini"
DATA_FOLDER = "data"
RUNS_FOLDER = "runs"
MANIFEST_NAME = "manifest.json"
RUNS_INDEX_NAME = "runs.json"
TENSOR_SUFFIX = ".fgt"
SPLITS = ("train", "val", "test")

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_RUNTIME_ERROR = 4

DEFAULTS = {
    "data": {
        "hospitals": 5,
        "largest": 1500,
        "smallest": 300,
        "steps": 16,
        "features": 256,
        "factor_dim": 8,
        "sparsity": 0.05,
        "prevalence": 0.2,
        "covariate_shift": 0.5,
        "temporal_shift": 1.0,
        "outlier_hospital": -1,
        "outlier_shift": 0.0,
        "holdout_hospitals": 0,
        "train_ratio": 0.70,
        "val_ratio": 0.15,
        "test_ratio": 0.15,
    },
    "stage1": {
        "rounds": 5,
        "first_round_epochs": 200,
        "later_round_epochs": 50,
        "frozen_epochs": 20,
        "joint_epochs": 5,
        "batch_size": 512,
        "learning_rate": 1e-3,
        "hidden_widths": "128",
        "latent_width": 32,
        "reference_mode": "fedavg_init",
        "cost": "euclidean",
        "shared_init": False,
    },
    "stage2": {
        "rounds": 30,
        "epochs": 1,
        "learning_rate": 1e-3,
        "latent_width": 16,
        "head_width": 64,
        "state_width": 64,
        "tau": 5.0,
        "kl_weight": 0.1,
        "kl_warmup_rounds": 10,
        "divergence": "moment",
        "emission": "sample",
        "sample_emission": False,
    },
    "eval": {
        "mir_attacker": "threshold",
        "umap_cap": 200,
    },
    "run": {
        "mode": "fedehr_gen",
        "seed": 0,
        "data_dir": DATA_FOLDER,
        "out_dir": RUNS_FOLDER,
        "progress": True,
    },
}


class ConfigError(ValueError):
    """Invalid run configuration (unknown key, bad value, bad flag)."""


class DataError(ValueError):
    """Missing, unreadable or degenerate cohort data."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; `stage` names it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class RunConfig:
    """Merged configuration values plus the verbatim text they were loaded from."""
    values: dict
    text: str = ""

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    @property
    def mode(self):
        return self.values["run"]["mode"]

    def federationConfig(self, **overrides):
        """FederationConfig for the stages; invalid values raise ConfigError."""
        stage1 = self.values["stage1"]
        stage2 = self.values["stage2"]
        try:
            fields = dict(
                mode=self.mode,
                seed=self.seed,
                baeRounds=stage1["rounds"],
                tcvaeRounds=stage2["rounds"],
                firstRoundEpochs=stage1["first_round_epochs"],
                laterRoundEpochs=stage1["later_round_epochs"],
                frozenEpochs=stage1["frozen_epochs"],
                jointEpochs=stage1["joint_epochs"],
                tcvaeEpochs=stage2["epochs"],
                batchSize=stage1["batch_size"],
                learningRate=stage1["learning_rate"],
                tcvaeLearningRate=stage2["learning_rate"],
                hiddenWidths=parseWidths(stage1["hidden_widths"]),
                latentWidth=stage1["latent_width"],
                tcvaeLatentWidth=stage2["latent_width"],
                headWidth=stage2["head_width"],
                stateWidth=stage2["state_width"],
                referenceMode=stage1["reference_mode"],
                costMetric=stage1["cost"],
                sharedInit=stage1["shared_init"],
                tau=stage2["tau"],
                klWeight=stage2["kl_weight"],
                klWarmupRounds=stage2["kl_warmup_rounds"],
                divergenceEstimator=stage2["divergence"],
                emission=stage2["emission"],
                sampleEmission=stage2["sample_emission"],
                showProgress=self.values["run"]["progress"],
            )
            fields.update(overrides)
            return FederationConfig(**fields)
        except ValueError as e:
            raise ConfigError(str(e)) from e


def parseWidths(text):
    try:
        widths = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"hidden_widths must be a comma-separated list of integers, got '{text}'")
    if not widths or any(width < 1 for width in widths):
        raise ConfigError(f"hidden_widths must list positive integers, got '{text}'")
    return widths


def _coerce(parser, section, key, default):
    try:
        if isinstance(default, bool):
            return parser.getboolean(section, key)
        if isinstance(default, int):
            return parser.getint(section, key)
        if isinstance(default, float):
            return parser.getfloat(section, key)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read '{parser.get(section, key)}' as {type(default).__name__}")
    return parser.get(section, key)


def _validateData(data):
    if data["hospitals"] < 1:
        raise ConfigError(f"[data] hospitals must be >= 1, got {data['hospitals']}")
    if data["holdout_hospitals"] < 0:
        raise ConfigError(f"[data] holdout_hospitals must be >= 0, got {data['holdout_hospitals']}")
    if data["steps"] < 1 or data["features"] < 1 or data["factor_dim"] < 1:
        raise ConfigError("[data] steps, features and factor_dim must be >= 1")
    if not 0.0 < data["sparsity"] <= 0.5:
        raise ConfigError(f"[data] sparsity must be in (0, 0.5], got {data['sparsity']}")
    if not 0.0 < data["prevalence"] < 1.0:
        raise ConfigError(f"[data] prevalence must be in (0, 1), got {data['prevalence']}")
    if not data["largest"] >= data["smallest"] >= 10:
        raise ConfigError(f"[data] sizes need largest >= smallest >= 10, got {data['largest']}, {data['smallest']}")
    ratios = (data["train_ratio"], data["val_ratio"], data["test_ratio"])
    if any(ratio <= 0 for ratio in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"[data] split ratios must be positive and sum to 1, got {ratios}")


def loadRunConfig(path=None, overrides=None):
    """
    Read an INI run configuration over DEFAULTS.

    Args:
        path: INI file; None means defaults only
        overrides: {(section, key): value} applied after the file (CLI flags)

    Unknown sections or keys raise ConfigError.
    """
    text = ""
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config '{path}': {e}") from e
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config '{path}': {e}") from e

    values = copy.deepcopy(DEFAULTS)
    if parser.defaults():
        raise ConfigError(f"unknown keys in [DEFAULT]: {sorted(parser.defaults())}")
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}], expected one of {list(DEFAULTS)}")
        for key in parser[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            values[section][key] = _coerce(parser, section, key, DEFAULTS[section][key])
    for (section, key), value in (overrides or {}).items():
        if value is None:
            continue
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown override {section}.{key}")
        values[section][key] = value

    _validateData(values["data"])
    config = RunConfig(values, text)
    config.federationConfig()
    return config
