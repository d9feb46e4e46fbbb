# ============================================================================
# federationOrchestrator.py
# Coordinates both federated stages: client pool, server barrier, round logs
# and checkpoints
# ============================================================================
import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from lib_data.sequenceTensors import concatenateTensors
from lib_data.tensorFile import writeCheckpoint
from lib_stage1.binaryAutoencoder import initBae
from lib_stage2.temporalCvae import initTcvae

from .federationConfig import SERVER_STREAM, STREAM_BAE_INIT, STREAM_SYNTHESIS, STREAM_TCVAE_TRAIN, RoundRecord
from .federationServer import FederationServer
from .hospitalClient import HospitalClient
from .synthesis import generateSyntheticCohort

logger = logging.getLogger(__name__)

THREADS_ENV = "FEDGEN_THREADS"


@dataclass
class FedBaeResult:
    globalEncoder: object
    decoders: list
    latents: list
    permutations: list
    records: list = field(default_factory=list)


@dataclass
class FedTcvaeResult:
    params: object
    records: list = field(default_factory=list)


def workerCount(config, numClients):
    """Worker pool size: config.threads, else FEDGEN_THREADS, else one worker per client."""
    limit = config.threads
    if limit is None and os.environ.get(THREADS_ENV):
        try:
            limit = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got '{os.environ[THREADS_ENV]}'")
        if limit < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {limit}")
    return max(1, min(limit or numClients, numClients))


def runOnClients(items, task, config):
    """
    Run `task` on every item on the worker pool; results come back in item order.
    Returning only after every task finished is the server barrier.
    """
    items = list(items)
    with ThreadPoolExecutor(max_workers=workerCount(config, len(items))) as pool:
        return list(pool.map(task, items))


def prepareClients(config, cohorts, streamIds=None):
    """
    Build the simulated hospitals from (train, validation) cohort pairs.

    In centralized mode all cohorts are pooled into one client.
    """
    if not cohorts:
        raise ValueError("no hospital cohorts given")
    if config.isCentralized:
        train = concatenateTensors([train for train, _ in cohorts])
        validation = concatenateTensors([validation for _, validation in cohorts])
        if train.numSamples == 0:
            raise ValueError("centralized run: pooled training set is empty")
        logger.info("Centralized pool: %d samples from %d hospitals", train.numSamples, len(cohorts))
        return [HospitalClient(0, train, validation, config)]
    streamIds = streamIds if streamIds is not None else list(range(len(cohorts)))
    return [
        HospitalClient(k, train, validation, config, streamId=streamIds[k])
        for k, (train, validation) in enumerate(cohorts)
    ]


def _initializeClients(config, clients):
    if config.sharedInit:
        rng = np.random.default_rng([config.seed, SERVER_STREAM, STREAM_BAE_INIT])
        initial = initBae(clients[0].numFeatures, rng, config.hiddenWidths, config.latentWidth)
        for client in clients:
            client.initializeBae(initial)
    else:
        for client in clients:
            client.initializeBae()


def _writeRoundCheckpoint(checkpointDir, stage, roundIndex, namedArrays, config):
    if checkpointDir is None:
        return
    path = Path(checkpointDir) / stage / f"round_{roundIndex}.ckpt"
    writeCheckpoint(path, namedArrays, {"stage": stage, "round": roundIndex, "mode": config.mode, "seed": config.seed})


def _progress(config, numRounds, description):
    return tqdm(range(1, numRounds + 1), desc=description, disable=not config.showProgress, leave=False)


def runFedBae(config, clients, server=None, checkpointDir=None):
    """
    Stage 1: federated binary autoencoders with matching aggregation.

    Round 1 trains every hospital until convergence and aggregates. Every later
    round first adapts each decoder to the broadcast encoder (with the latent
    permutation the server assigned that hospital), retrains locally with a
    reduced epoch cap, and aggregates again. After the last round each hospital
    fine-tunes its decoder against the final global encoder and encodes its
    data.

    Returns a FedBaeResult(globalEncoder, decoders, latents, permutations, records).
    """
    if not clients:
        raise ValueError("runFedBae: no clients")
    server = server if server is not None else FederationServer(config, [c.numSamples for c in clients])
    alpha = server.weights.alpha
    _initializeClients(config, clients)

    records = []
    globalEncoder = None
    permutations = None
    for roundIndex in _progress(config, config.baeRounds, "Stage 1 rounds"):
        started = time.perf_counter()
        if roundIndex == 1:
            uploads = runOnClients(clients, lambda client: client.trainBae(config.firstRoundEpochs), config)
        else:
            previousEncoder, previousPermutations = globalEncoder, permutations
            uploads = runOnClients(
                range(len(clients)),
                lambda k: clients[k].adaptAndTrainBae(previousEncoder, previousPermutations[k],
                                                      config.laterRoundEpochs),
                config,
            )
        for upload in uploads:
            server.receive(upload)
        globalEncoder, permutations = server.aggregateEncoders(roundIndex)

        validation = runOnClients(
            range(len(clients)),
            lambda k: clients[k].validationReconstruction(globalEncoder, permutations[k][-1]),
            config,
        )
        record = RoundRecord("stage1", roundIndex, [u.trainLoss for u in uploads],
                             float(np.dot(alpha, validation)), time.perf_counter() - started)
        records.append(record)
        logger.info("Stage 1 round %d/%d: mean local BCE %.5f, validation BCE %.5f",
                    roundIndex, config.baeRounds, np.mean(record.trainLosses), record.validationLoss)
        _writeRoundCheckpoint(checkpointDir, "stage1", roundIndex, globalEncoder.namedArrays("encoder"), config)

    latents = runOnClients(
        range(len(clients)),
        lambda k: clients[k].adoptGlobalEncoder(globalEncoder, permutations[k]),
        config,
    )
    return FedBaeResult(globalEncoder, [c.decoder for c in clients], latents, permutations, records)


def runFedTcvae(config, clients, server=None, checkpointDir=None, initial=None):
    """
    Stage 2: federated TCVAE with distribution-aware aggregation.

    Each round broadcasts the global parameters, runs the local epoch(s) on
    every hospital, collects parameter sets and latent summaries, and
    aggregates. Zero rounds return the initialization.

    Returns a FedTcvaeResult(params, records).
    """
    if not clients:
        raise ValueError("runFedTcvae: no clients")
    for client in clients:
        if client.latents.numSamples == 0:
            raise ValueError(f"runFedTcvae: hospital {client.hospitalId} has no latent sequences")
    server = server if server is not None else FederationServer(config, [c.numSamples for c in clients])
    alpha = server.weights.alpha
    if initial is not None:
        params = initial.copy()
    else:
        rng = np.random.default_rng([config.seed, SERVER_STREAM, STREAM_TCVAE_TRAIN])
        params = initTcvae(clients[0].latents.width, rng, config.tcvaeLatentWidth, config.headWidth,
                           config.stateWidth)

    records = []
    for roundIndex in _progress(config, config.tcvaeRounds, "Stage 2 rounds"):
        started = time.perf_counter()
        klWeight = config.klWeightAt(roundIndex)
        broadcast = params
        uploads = runOnClients(clients, lambda client: client.trainTcvae(broadcast, klWeight), config)
        for upload in uploads:
            server.receive(upload)
        params, weights, averages = server.aggregateTcvae(roundIndex)

        aggregated = params
        validation = runOnClients(clients, lambda client: client.validationElbo(aggregated, config.klWeight), config)
        record = RoundRecord("stage2", roundIndex, [u.trainLoss for u in uploads], float(np.dot(alpha, validation)),
                             time.perf_counter() - started, weights.tolist(), averages.tolist())
        records.append(record)
        logger.info("Stage 2 round %d/%d: mean local loss %.4f, validation loss %.4f, weights %s",
                    roundIndex, config.tcvaeRounds, np.mean(record.trainLosses), record.validationLoss,
                    np.round(weights, 4).tolist())
        _writeRoundCheckpoint(checkpointDir, "stage2", roundIndex, params.namedArrays(), config)
    return FedTcvaeResult(params, records)


def runCentralized(config, cohorts, checkpointDir=None):
    """
    Upper-bound baseline: both stages on the pooled cohorts with the same
    budgets and no aggregation.

    Returns (encoder, decoder, tcvaeParams).
    """
    pooledConfig = config if config.isCentralized else replace(config, mode="centralized")
    clients = prepareClients(pooledConfig, cohorts)
    stage1 = runFedBae(pooledConfig, clients, checkpointDir=checkpointDir)
    stage2 = runFedTcvae(pooledConfig, clients, checkpointDir=checkpointDir)
    return stage1.globalEncoder, stage1.decoders[0], stage2.params


def synthesizeCohorts(config, clients, tcvae):
    """One synthetic cohort per client, matching its training size and label mix."""
    cohorts = []
    for client in clients:
        seed = [config.seed, client.hospitalId, STREAM_SYNTHESIS]
        cohorts.append(generateSyntheticCohort(
            tcvae, client.decoder, client.numSamples, client.labelMix, client.numSteps, seed,
            emission=config.emission, sampleEmission=config.sampleEmission,
        ))
        logger.debug("Hospital %d: %d synthetic records, density %.4f (real %.4f)",
                     client.hospitalId, client.numSamples, cohorts[-1].density, client.density)
    return cohorts


def writeRoundLog(path, records):
    """Write RoundRecords as CSV; per-hospital columns are the union over rows."""
    rows = [record.asRow() for record in records]
    fieldnames = []
    for row in rows:
        fieldnames.extend(name for name in row if name not in fieldnames)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, restval="")
        writer.writeheader()
        writer.writerows(rows)
