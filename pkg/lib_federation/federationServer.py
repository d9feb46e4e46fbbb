import logging

import numpy as np

from lib_stage1.matchAggregation import (
    AggregationWeights,
    aggregateEncoders,
    fedavgAggregate,
    identityPermutations,
    selectReference,
)
from lib_stage2.distributionAggregation import (
    averageDivergence,
    distributionAwareAggregate,
    divergenceMatrix,
    weightsFromAverageDivergence,
)

from .hospitalClient import EncoderUpload, TcvaeUpload

logger = logging.getLogger(__name__)

ACCEPTED_UPLOADS = (EncoderUpload, TcvaeUpload)


class FederationServer:
    """
    Server side of both stages. Holds only what hospitals upload (encoders,
    TCVAE parameter sets, latent distribution summaries) and the sample-size
    weights alpha_k.
    """

    def __init__(self, config, sampleSizes):
        self.config = config
        self.weights = AggregationWeights.fromSampleSizes(sampleSizes)
        self.inbox = []
        self.receivedTypes = set()
        self.globalEncoder = None

    @property
    def numHospitals(self):
        return len(self.weights)

    def receive(self, upload):
        if not isinstance(upload, ACCEPTED_UPLOADS):
            raise TypeError(f"server cannot accept {type(upload).__name__}")
        self.receivedTypes.add(type(upload))
        for value in vars(upload).values():
            self.receivedTypes.add(type(value))
        self.inbox.append(upload)

    def _drain(self, uploadType):
        uploads = sorted((u for u in self.inbox if isinstance(u, uploadType)), key=lambda u: u.hospitalId)
        if len(uploads) != self.numHospitals:
            raise RuntimeError(f"server barrier: {len(uploads)} of {self.numHospitals} {uploadType.__name__}s received")
        self.inbox = [u for u in self.inbox if not isinstance(u, uploadType)]
        return uploads

    def aggregateEncoders(self, roundIndex):
        """
        Stage 1 server step for round `roundIndex` (1-based).

        Returns (globalEncoder, permutations per hospital). Without matching the
        permutations are identities, as they are for a single hospital.
        """
        encoders = [upload.encoder for upload in self._drain(EncoderUpload)]
        if self.config.isCentralized or len(encoders) == 1:
            globalEncoder, permutations = encoders[0].copy(), [identityPermutations(encoders[0])]
        elif self.config.useMatching:
            reference = selectReference(roundIndex - 1, self.globalEncoder, encoders, self.weights,
                                        self.config.referenceMode)
            globalEncoder, permutations = aggregateEncoders(encoders, self.weights, reference, self.config.costMetric)
        else:
            globalEncoder = fedavgAggregate(encoders, self.weights)
            permutations = [identityPermutations(encoder) for encoder in encoders]
        self.globalEncoder = globalEncoder
        return globalEncoder, permutations

    def aggregateTcvae(self, roundIndex):
        """
        Stage 2 server step. Returns (globalParams, weights used, d_bar per hospital).

        d_bar is computed in every federated mode for the round log; it only
        changes the weights when distribution-aware aggregation is on.
        """
        uploads = self._drain(TcvaeUpload)
        alpha = self.weights.alpha
        if self.config.isCentralized:
            return uploads[0].params.copy(), np.ones(1), np.zeros(1)
        matrix = divergenceMatrix([u.summary for u in uploads], self.config.divergenceEstimator,
                                  seed=[self.config.seed, roundIndex])
        averages = averageDivergence(matrix)
        paramSets = [u.params for u in uploads]
        if self.config.useDistributionWeights:
            weights = weightsFromAverageDivergence(averages, alpha, self.config.tau)
            params = distributionAwareAggregate(paramSets, weights)
        else:
            weights = alpha.copy()
            params = fedavgAggregate(paramSets, weights)
        logger.debug("Round %d divergences %s", roundIndex, np.round(averages, 4).tolist())
        return params, weights, averages
