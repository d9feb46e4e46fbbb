import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .fidelity import flattenSamples, mmd, perTimestepPrevalence, prevalence, prevalenceR2PerTimestep, r2Fidelity
from .privacy import LEAKAGE_THRESHOLD, mir, nnaa

logger = logging.getLogger(__name__)

METRICS_HEADER = ("metric", "regime", "value", "seed")
SUMMARY_HEADER = ("metric", "regime", "mean", "std", "runs")
UMAP_CAP = 200


@dataclass
class FidelityReport:
    r2: float
    mmd: float
    prevalenceReal: np.ndarray
    prevalenceSyn: np.ndarray
    timestepPrevalenceReal: np.ndarray
    timestepPrevalenceSyn: np.ndarray
    prevalenceR2PerTimestep: float

    def rows(self, regime):
        return [
            ("r2", regime, self.r2),
            ("mmd", regime, self.mmd),
            ("prevalence_r2_per_timestep", regime, self.prevalenceR2PerTimestep),
            ("prevalence_mae", regime, float(np.mean(np.abs(self.prevalenceReal - self.prevalenceSyn)))),
        ]


@dataclass
class UtilityReport:
    """(auroc, auprc) per training regime, keyed by '<mode>/<regime>'."""
    scores: dict = field(default_factory=dict)

    def add(self, mode, results):
        for regime, (aurocValue, auprcValue) in results.items():
            self.scores[f"{mode}/{regime}"] = (aurocValue, auprcValue)

    def rows(self):
        rows = []
        for regime, (aurocValue, auprcValue) in self.scores.items():
            rows.append(("auroc", regime, aurocValue))
            rows.append(("auprc", regime, auprcValue))
        return rows


@dataclass
class PrivacyReport:
    mir: float
    nnaa: float

    def rows(self, regime):
        return [("mir", regime, self.mir), ("nnaa", regime, self.nnaa)]


def computeFidelity(real, syn, seed=0):
    return FidelityReport(
        r2=r2Fidelity(real, syn),
        mmd=mmd(flattenSamples(real), flattenSamples(syn), seed=seed),
        prevalenceReal=prevalence(real),
        prevalenceSyn=prevalence(syn),
        timestepPrevalenceReal=perTimestepPrevalence(real),
        timestepPrevalenceSyn=perTimestepPrevalence(syn),
        prevalenceR2PerTimestep=prevalenceR2PerTimestep(real, syn),
    )


def computePrivacy(members, holdout, syn, seed=0, attacker="threshold", synName="synthetic cohort", real=None):
    """
    MIR of (members, holdout) and NNAA against `real` (default: the members).
    NNAA at or above LEAKAGE_THRESHOLD is logged as a leak.
    """
    real = members if real is None else real
    report = PrivacyReport(mir=mir(members, holdout, syn, seed=seed, attacker=attacker), nnaa=nnaa(real, syn, seed=seed))
    if report.nnaa >= LEAKAGE_THRESHOLD:
        logger.warning("Possible leakage: NNAA %.3f for %s (synthetic records sit on real ones)", report.nnaa, synName)
    return report


def writeMetrics(path, rows, seed):
    """metrics.csv: one row per (metric, regime)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for metric, regime, value in rows:
            writer.writerow((metric, regime, repr(float(value)), seed))


def readMetrics(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: expected header {METRICS_HEADER}, got {reader.fieldnames}")
        return [(row["metric"], row["regime"], float(row["value"]), row["seed"]) for row in reader]


def summarizeRuns(metricTables):
    """
    Mean and population std of every (metric, regime) across runs.

    Returns rows (metric, regime, mean, std, runs) in first-seen order.
    """
    collected = {}
    for table in metricTables:
        for metric, regime, value, _ in table:
            collected.setdefault((metric, regime), []).append(value)
    return [
        (metric, regime, float(np.mean(values)), float(np.std(values)), len(values))
        for (metric, regime), values in collected.items()
    ]


def writeSummary(path, summaryRows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_HEADER)
        for metric, regime, mean, std, runs in summaryRows:
            writer.writerow((metric, regime, f"{mean:.6f}", f"{std:.6f}", runs))


def formatSummaryTable(summaryRows):
    """Regimes as rows, metrics as columns, 'mean +/- std' cells."""
    metrics = list(dict.fromkeys(row[0] for row in summaryRows))
    regimes = list(dict.fromkeys(row[1] for row in summaryRows))
    cells = {(row[0], row[1]): f"{row[2]:.4f} +/- {row[3]:.4f}" for row in summaryRows}
    width = max([len("regime")] + [len(regime) for regime in regimes])
    lines = ["regime".ljust(width) + "".join(f"  {metric:>20}" for metric in metrics)]
    for regime in regimes:
        lines.append(regime.ljust(width) + "".join(f"  {cells.get((metric, regime), '-'):>20}" for metric in metrics))
    return "\n".join(lines)


def writeUmapSamples(path, groups, cap=UMAP_CAP):
    """
    Flattened records for an external UMAP embedding.

    Args:
        groups: iterable of (source, hospital, BinarySequenceTensor)
        cap: at most this many records per (source, hospital)
    """
    header = None
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        for source, hospital, tensor in groups:
            flat = tensor.data.reshape(tensor.numSamples, -1)
            if header is None:
                header = ["source", "hospital", "label"] + [f"f{i}" for i in range(flat.shape[1])]
                writer.writerow(header)
            for index in range(min(cap, tensor.numSamples)):
                writer.writerow([source, hospital, int(tensor.labels[index])] + flat[index].tolist())
