from dataclasses import dataclass, field

from lib_stage1.binaryAutoencoder import DEFAULT_BATCH_SIZE, FROZEN_EPOCHS, JOINT_EPOCHS, MAX_EPOCHS
from lib_stage1.matchAggregation import REFERENCE_MODES
from lib_stage1.permutation import COST_METRICS
from lib_stage2.distributionAggregation import DEFAULT_TEMPERATURE, DIVERGENCE_ESTIMATORS
from lib_stage2.temporalCvae import DEFAULT_KL_WEIGHT

MODES = ("fedehr_gen", "fedavg", "fedehr_no_ma", "fedehr_no_da", "centralized")
EMISSIONS = ("sample", "threshold")
LATER_ROUND_EPOCHS = 50
KL_WARMUP_ROUNDS = 10

# Random stream tags: default_rng([seed, hospitalId, tag])
STREAM_BAE_INIT = 1
STREAM_BAE_TRAIN = 2
STREAM_TCVAE_TRAIN = 3
STREAM_VALIDATION = 4
STREAM_SYNTHESIS = 5
SERVER_STREAM = 9999


@dataclass
class FederationConfig:
    """
    Everything the two federated stages need: rounds, local budgets, model
    widths and the aggregation mode.

    Modes:
        fedehr_gen     matching aggregation + distribution-aware weights
        fedavg         plain averaging in both stages
        fedehr_no_ma   plain averaging of encoders + distribution-aware weights
        fedehr_no_da   matching aggregation + sample-size weights
        centralized    one pooled client, no aggregation
    """
    mode: str = "fedehr_gen"
    seed: int = 0
    baeRounds: int = 5
    tcvaeRounds: int = 30
    firstRoundEpochs: int = MAX_EPOCHS
    laterRoundEpochs: int = LATER_ROUND_EPOCHS
    frozenEpochs: int = FROZEN_EPOCHS
    jointEpochs: int = JOINT_EPOCHS
    tcvaeEpochs: int = 1
    batchSize: int = DEFAULT_BATCH_SIZE
    learningRate: float = 1e-3
    tcvaeLearningRate: float = 1e-3
    hiddenWidths: tuple = (128,)
    latentWidth: int = 32
    tcvaeLatentWidth: int = 16
    headWidth: int = 64
    stateWidth: int = 64
    referenceMode: str = "fedavg_init"
    costMetric: str = "euclidean"
    sharedInit: bool = False
    tau: float = DEFAULT_TEMPERATURE
    klWeight: float = DEFAULT_KL_WEIGHT
    klWarmupRounds: int = KL_WARMUP_ROUNDS
    divergenceEstimator: str = "moment"
    emission: str = "sample"
    sampleEmission: bool = False
    threads: int = None
    showProgress: bool = True

    def __post_init__(self):
        self.hiddenWidths = tuple(int(width) for width in self.hiddenWidths)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}', expected one of {MODES}")
        if self.baeRounds < 1:
            raise ValueError(f"baeRounds must be >= 1, got {self.baeRounds}")
        if self.tcvaeRounds < 0:
            raise ValueError(f"tcvaeRounds must be >= 0, got {self.tcvaeRounds}")
        for name in ("firstRoundEpochs", "laterRoundEpochs", "frozenEpochs", "jointEpochs", "tcvaeEpochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.batchSize < 1:
            raise ValueError(f"batchSize must be >= 1, got {self.batchSize}")
        if self.referenceMode not in REFERENCE_MODES:
            raise ValueError(f"unknown reference mode '{self.referenceMode}', expected one of {REFERENCE_MODES}")
        if self.costMetric not in COST_METRICS:
            raise ValueError(f"unknown neuron cost '{self.costMetric}', expected one of {sorted(COST_METRICS)}")
        if self.divergenceEstimator not in DIVERGENCE_ESTIMATORS:
            raise ValueError(
                f"unknown divergence estimator '{self.divergenceEstimator}', expected one of {DIVERGENCE_ESTIMATORS}"
            )
        if self.emission not in EMISSIONS:
            raise ValueError(f"unknown emission '{self.emission}', expected one of {EMISSIONS}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.klWeight < 0:
            raise ValueError(f"klWeight must be >= 0, got {self.klWeight}")
        if self.threads is not None and self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    @property
    def isCentralized(self):
        return self.mode == "centralized"

    @property
    def useMatching(self):
        return self.mode in ("fedehr_gen", "fedehr_no_da")

    @property
    def useDistributionWeights(self):
        return self.mode in ("fedehr_gen", "fedehr_no_ma")

    def klWeightAt(self, roundIndex):
        """Linear warm-up of lambda over the first klWarmupRounds rounds (1-based)."""
        if self.klWarmupRounds <= 0:
            return self.klWeight
        return self.klWeight * min(1.0, roundIndex / self.klWarmupRounds)


@dataclass
class RoundRecord:
    stage: str
    roundIndex: int
    trainLosses: list
    validationLoss: float
    seconds: float
    weights: list = field(default_factory=list)
    divergences: list = field(default_factory=list)

    def asRow(self):
        row = {
            "stage": self.stage,
            "round": self.roundIndex,
            "validation_loss": f"{self.validationLoss:.6f}",
            "mean_train_loss": f"{sum(self.trainLosses) / len(self.trainLosses):.6f}" if self.trainLosses else "",
            "seconds": f"{self.seconds:.3f}",
        }
        for k, loss in enumerate(self.trainLosses):
            row[f"train_loss_h{k}"] = f"{loss:.6f}"
        for k, weight in enumerate(self.weights):
            row[f"weight_h{k}"] = f"{weight:.6f}"
        for k, divergence in enumerate(self.divergences):
            row[f"divergence_h{k}"] = f"{divergence:.6f}"
        return row
