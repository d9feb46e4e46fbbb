import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from lib_data.cohortGenerator import buildFactorBank, buildHospitalSpecs, generateCohort, hospitalSizes
from lib_data.sequenceTensors import concatenateTensors
from lib_data.splitter import splitCohort
from lib_data.tensorFile import FormatError, readTensor, writeTensor
from lib_eval.reports import (
    UtilityReport,
    computeFidelity,
    computePrivacy,
    formatSummaryTable,
    readMetrics,
    summarizeRuns,
    writeMetrics,
    writeSummary,
    writeUmapSamples,
)
from lib_eval.utility import evaluateUtility
from lib_federation.federationOrchestrator import (
    prepareClients,
    runFedBae,
    runFedTcvae,
    synthesizeCohorts,
    writeRoundLog,
)

from .config import MANIFEST_NAME, RUNS_INDEX_NAME, SPLITS, ConfigError, DataError, PipelineError
from .manageJSON import appendToJson, loadManifest, writeJson
from .utils import createRunFolder, createTensorFilepath, ensureFolderExists

logger = logging.getLogger(__name__)

SCALE_HEADER = ("hospitals", "metric", "regime", "value", "seed")


@dataclass
class RunResult:
    runDir: str
    mode: str
    rows: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def headline(self, metric):
        for name, regime, value in self.rows:
            if name == metric and regime == self.mode:
                return value
        return float("nan")


def _stage(name, task, *args, **kwargs):
    """Run one pipeline stage; unexpected failures are re-raised tagged with the stage."""
    try:
        return task(*args, **kwargs)
    except (ConfigError, DataError, FormatError, PipelineError):
        raise
    except Exception as e:
        raise PipelineError(name, f"{type(e).__name__}: {e}") from e


# ----------------------------------------------------------------------
# generate-data
# ----------------------------------------------------------------------
def cmdGenerateData(config, outDir=None):
    """
    Generate every hospital cohort, split it 70/15/15 and write one tensor file
    per hospital and split, plus a manifest.

    Returns the manifest path.
    """
    data = config["data"]
    seed = config.seed
    outDir = ensureFolderExists(outDir or config["run"]["data_dir"])
    numTraining = data["hospitals"]
    numTotal = numTraining + data["holdout_hospitals"]

    bank = buildFactorBank(data["features"], data["steps"], data["factor_dim"], seed=seed)
    sizes = hospitalSizes(numTraining, data["largest"], data["smallest"]) + [data["smallest"]] * data["holdout_hospitals"]
    outlier = data["outlier_hospital"] if data["outlier_hospital"] >= 0 else None
    if outlier is not None and outlier >= numTraining:
        raise ConfigError(f"[data] outlier_hospital {outlier} is not one of the {numTraining} training hospitals")
    try:
        specs = buildHospitalSpecs(numTotal, data["features"], sizes, data["sparsity"], data["prevalence"], seed,
                                   covariateShift=data["covariate_shift"], temporalShift=data["temporal_shift"],
                                   outlierHospital=outlier, outlierShift=data["outlier_shift"])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    ratios = (data["train_ratio"], data["val_ratio"], data["test_ratio"])

    hospitals = []
    for spec in specs:
        cohort = generateCohort(spec, bank)
        try:
            splits = dict(zip(SPLITS, splitCohort(cohort, ratios, seed=seed + spec.hospitalId)))
        except ValueError as e:
            raise DataError(f"hospital {spec.hospitalId}: {e}") from e
        entry = {
            "id": spec.hospitalId,
            "role": "train" if spec.hospitalId < numTraining else "holdout",
            "files": {},
            "sizes": {},
            "density": round(cohort.density, 6),
            "prevalence": round(float(cohort.labels.mean()), 6),
        }
        for split, tensor in splits.items():
            path = createTensorFilepath(outDir, spec.hospitalId, split)
            writeTensor(path, tensor)
            entry["files"][split] = os.path.basename(path)
            entry["sizes"][split] = tensor.numSamples
        hospitals.append(entry)
        logger.info("Hospital %d (%s): N=%d, density %.4f, prevalence %.3f", spec.hospitalId, entry["role"],
                    cohort.numSamples, cohort.density, entry["prevalence"])

    manifestPath = os.path.join(outDir, MANIFEST_NAME)
    writeJson(manifestPath, {"seed": seed, "data": data, "hospitals": hospitals})
    return manifestPath


def loadHospitalSplits(dataDir, role="train", limit=None):
    """
    Read the split tensors of every hospital with the given role.

    Returns a list of {split: BinarySequenceTensor}, in hospital order.
    """
    manifest = loadManifest(os.path.join(dataDir, MANIFEST_NAME))
    entries = [entry for entry in manifest["hospitals"] if entry.get("role", "train") == role]
    if limit is not None:
        if limit > len(entries):
            raise DataError(f"{limit} hospitals requested, data has {len(entries)} {role} hospitals")
        entries = entries[:limit]
    cohorts = []
    for entry in entries:
        splits = {}
        for split in SPLITS:
            path = os.path.join(dataDir, entry["files"][split])
            if not os.path.exists(path):
                raise DataError(f"missing tensor file '{path}'")
            splits[split] = readTensor(path)
            if splits[split].numSamples != entry["sizes"][split]:
                raise DataError(f"'{path}' holds {splits[split].numSamples} samples, manifest says {entry['sizes'][split]}")
        cohorts.append(splits)
    return cohorts


# ----------------------------------------------------------------------
# run
# ----------------------------------------------------------------------
def evaluateRun(mode, realTrain, testSet, holdoutSet, synthetic, seed, attacker="threshold", synName=""):
    """
    The full metric battery for one run.

    Returns rows (metric, regime, value): pooled fidelity and privacy under
    regime '<mode>', per-hospital fidelity under '<mode>/h<k>' and downstream
    utility under '<mode>/<real|synth|hybrid>'.
    """
    centralized = mode == "centralized"
    pooledReal = concatenateTensors(realTrain)
    pooledSyn = concatenateTensors(synthetic)
    rows = list(computeFidelity(pooledReal, pooledSyn, seed).rows(mode))
    if not centralized:
        for k, (real, syn) in enumerate(zip(realTrain, synthetic)):
            rows.extend(computeFidelity(real, syn, seed).rows(f"{mode}/h{k}"))

    utility = UtilityReport()
    realSets = [pooledReal] if centralized else realTrain
    utility.add(mode, evaluateUtility(realSets, synthetic, testSet, federated=not centralized, seed=seed))
    rows.extend(utility.rows())

    privacy = computePrivacy(pooledReal, holdoutSet, pooledSyn, seed=seed, attacker=attacker, synName=synName)
    rows.extend(privacy.rows(mode))
    return rows


def cmdRun(config, mode=None, outDir=None, dataDir=None, hospitalLimit=None):
    """
    Stage 1, stage 2, generation and evaluation for one mode.

    Writes into the run directory: config.ini, effective_config.json,
    stage checkpoints, round_log.csv, synthetic tensors, metrics.csv and
    umap_samples.csv. Returns a RunResult.
    """
    mode = mode or config.mode
    seed = config.seed
    federation = config.federationConfig(mode=mode)
    dataDir = dataDir or config["run"]["data_dir"]
    outDir = outDir or config["run"]["out_dir"]

    cohorts = loadHospitalSplits(dataDir, "train", hospitalLimit)
    holdoutHospitals = loadHospitalSplits(dataDir, "holdout")
    runDir = createRunFolder(outDir, mode, seed)
    with open(os.path.join(runDir, "config.ini"), "w", encoding="utf-8") as f:
        f.write(config.text)
    writeJson(os.path.join(runDir, "effective_config.json"),
              {**config.values, "run": {**config["run"], "mode": mode}, "hospitals": len(cohorts)})
    logger.info("Run %s: mode %s, %d hospitals, seed %d", runDir, mode, len(cohorts), seed)

    clients = _stage("setup", prepareClients, federation, [(c["train"], c["val"]) for c in cohorts])
    stage1 = _stage("stage1", runFedBae, federation, clients, checkpointDir=runDir)
    stage2 = _stage("stage2", runFedTcvae, federation, clients, checkpointDir=runDir)
    synthetic = _stage("generation", synthesizeCohorts, federation, clients, stage2.params)
    for client, tensor in zip(clients, synthetic):
        writeTensor(os.path.join(runDir, "synthetic", f"hospital_{client.hospitalId:02d}_syn.fgt"), tensor)

    realTrain = [c["train"] for c in cohorts]
    if holdoutHospitals:
        testSet = concatenateTensors([tensor for h in holdoutHospitals for tensor in h.values()])
    else:
        testSet = concatenateTensors([c["test"] for c in cohorts])
    holdoutSet = concatenateTensors([c["test"] for c in cohorts])
    rows = _stage("evaluation", evaluateRun, mode, realTrain, testSet, holdoutSet, synthetic, seed,
                  attacker=config["eval"]["mir_attacker"], synName=os.path.join(runDir, "synthetic"))

    records = stage1.records + stage2.records
    writeRoundLog(os.path.join(runDir, "round_log.csv"), records)
    writeMetrics(os.path.join(runDir, "metrics.csv"), rows, seed)
    umapGroups = [("real", k, tensor) for k, tensor in enumerate(realTrain)]
    umapGroups += [("synthetic", client.hospitalId, tensor) for client, tensor in zip(clients, synthetic)]
    writeUmapSamples(os.path.join(runDir, "umap_samples.csv"), umapGroups, config["eval"]["umap_cap"])
    appendToJson(os.path.join(outDir, RUNS_INDEX_NAME),
                 {"run_dir": runDir, "mode": mode, "seed": seed, "hospitals": len(cohorts)})
    return RunResult(runDir, mode, rows, records)


# ----------------------------------------------------------------------
# evaluate / compare / scale
# ----------------------------------------------------------------------
def cmdEvaluate(realPath, synPath, outPath, seed=0, attacker="threshold"):
    """
    Fidelity and privacy of a synthetic tensor file against a real one.

    The real records are split 50/50 (seeded) into members and holdout for
    MIR; NNAA uses all real records.
    """
    for path in (realPath, synPath):
        if not os.path.exists(path):
            raise DataError(f"missing tensor file '{path}'")
    real = readTensor(realPath)
    syn = readTensor(synPath)
    if real.numSamples < 4 or syn.numSamples < 2:
        raise DataError(f"evaluate needs >= 4 real and >= 2 synthetic records, got {real.numSamples}, {syn.numSamples}")
    if real.data.shape[1:] != syn.data.shape[1:]:
        raise DataError(f"real (T, D) {real.data.shape[1:]} does not match synthetic {syn.data.shape[1:]}")
    order = np.random.default_rng(seed).permutation(real.numSamples)
    half = real.numSamples // 2
    members = real.subset(np.sort(order[:half]))
    holdout = real.subset(np.sort(order[half:]))

    regime = "evaluate"
    rows = list(computeFidelity(real, syn, seed).rows(regime))
    privacy = computePrivacy(members, holdout, syn, seed=seed, attacker=attacker, synName=synPath, real=real)
    rows.extend(privacy.rows(regime))
    writeMetrics(outPath, rows, seed)
    return rows


def cmdCompare(runDirs, outPath):
    """Mean/std of every metric over several run directories; returns the printable table."""
    tables = []
    for runDir in runDirs:
        path = os.path.join(runDir, "metrics.csv")
        if not os.path.exists(path):
            raise DataError(f"'{runDir}' has no metrics.csv")
        try:
            tables.append(readMetrics(path))
        except ValueError as e:
            raise DataError(str(e)) from e
    summary = summarizeRuns(tables)
    writeSummary(outPath, summary)
    return formatSummaryTable(summary)


def cmdScale(config, hospitalCounts, mode=None, outDir=None, dataDir=None):
    """
    Run the pipeline on the first K training hospitals for every K in
    hospitalCounts, scoring all runs on the same holdout-hospital test set.

    Writes scale.csv and returns its rows.
    """
    dataDir = dataDir or config["run"]["data_dir"]
    outDir = ensureFolderExists(outDir or config["run"]["out_dir"])
    if not loadHospitalSplits(dataDir, "holdout"):
        raise DataError("the scale sweep needs [data] holdout_hospitals >= 1 for its unified test set")
    rows = []
    for count in hospitalCounts:
        result = cmdRun(config, mode=mode, outDir=os.path.join(outDir, f"scale_k{count}"), dataDir=dataDir,
                        hospitalLimit=count)
        rows.extend((count, metric, regime, value, config.seed) for metric, regime, value in result.rows)
    with open(os.path.join(outDir, "scale.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SCALE_HEADER)
        for count, metric, regime, value, seed in rows:
            writer.writerow((count, metric, regime, repr(float(value)), seed))
    return rows
