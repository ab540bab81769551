"""Simulated gather-scatter allreduce with two-sided error compensation.

Worker ``i`` owns chunk ``i`` of the vector. One reduction runs three barrier
phases:

1. scatter   every worker compresses each of its chunks (worker-side error
             feedback) and sends chunk ``k`` to worker ``k``;
2. average   owner ``k`` averages the decompressed pieces it received and
             recompresses the average (server-side error feedback);
3. gather    owner ``k`` broadcasts the recompressed chunk to everyone.

Traffic is accounted with :func:`apmsqueeze.compression.wire_size_bits`.
A worker's own chunk never crosses the network and costs nothing, but it still
runs through the codec so every chunk sees identical numerics.
"""
from __future__ import annotations

import numpy as np

from . import rng as rngmod
from .compression import (
    CompressorSpec,
    ErrorState,
    compress_with_error_feedback,
    decompress,
)
from .exceptions import ConfigError, DimensionError, StateError
from .numerics import ChunkLayout, as_vector, l2_norm, make_chunk_layout


class CollectiveState:
    """Error residuals and traffic counters for ``n_workers`` simulated peers.

    Parameters
    ----------
    n_workers : int
    dim : int
        Length of the vectors being reduced.
    compressor : CompressorSpec
        Codec used on both the worker and the server side. Its ``seed`` keys
        the random streams of stochastic codecs.
    """

    def __init__(self, n_workers: int, dim: int, compressor: CompressorSpec):
        if n_workers < 1:
            raise ConfigError("n_workers must be at least 1")
        self.n_workers = int(n_workers)
        self.layout: ChunkLayout = make_chunk_layout(dim, n_workers)
        self.compressor = compressor
        lengths = self.layout.lengths
        self.worker_errors = [[ErrorState(lengths[k]) for k in range(n_workers)] for _ in range(n_workers)]
        self.server_errors = [ErrorState(lengths[k]) for k in range(n_workers)]
        self.bits_sent_total = 0
        self.steps = 0
        self._last_bits: int | None = None

    @property
    def dim(self) -> int:
        return self.layout.total_len

    def _codec_rng(self, *key):
        if not self.compressor.stochastic:
            return None
        return rngmod.stream(self.compressor.seed, *key, self.steps)

    def worker_residual(self, i: int) -> np.ndarray:
        """Worker ``i``'s residual as one dense vector over all chunks."""
        return self.layout.join([e.residual for e in self.worker_errors[i]])

    def server_residual(self) -> np.ndarray:
        """The owners' residuals concatenated in chunk order."""
        return self.layout.join([e.residual for e in self.server_errors])

    def global_error(self) -> np.ndarray:
        """Mean worker residual plus server residual."""
        n = self.n_workers
        return sum(self.worker_residual(i) for i in range(n)) / n + self.server_residual()

    def error_norms(self) -> tuple[float, float]:
        """``(max_i sum_k ||delta_ik||, sum_k ||server_k||)``."""
        worker = max(sum(l2_norm(e.residual) for e in row) for row in self.worker_errors)
        server = sum(l2_norm(e.residual) for e in self.server_errors)
        return worker, server

    def snapshot(self) -> dict:
        """Copies of every residual, for invariant checks."""
        return {
            "worker": [self.worker_residual(i) for i in range(self.n_workers)],
            "server": self.server_residual(),
        }


def compressed_allreduce(state: CollectiveState, inputs) -> np.ndarray:
    """Average ``inputs`` (one vector per worker) through the compressed pipeline.

    Returns the vector every worker ends up holding after the gather phase.
    """
    n = state.n_workers
    if len(inputs) != n:
        raise DimensionError(f"expected {n} worker inputs, got {len(inputs)}")
    layout, spec = state.layout, state.compressor
    split = []
    for i, v in enumerate(inputs):
        v = as_vector(v, f"input[{i}]")
        if v.shape[0] != layout.total_len:
            raise DimensionError(f"input[{i}] has length {v.shape[0]}, expected {layout.total_len}")
        split.append(layout.split(v))

    bits = 0
    # scatter: received[k][i] is worker i's compressed chunk k, held by owner k
    received = [[None] * n for _ in range(n)]
    for i in range(n):
        for k in range(n):
            chunk = compress_with_error_feedback(
                spec, split[i][k], state.worker_errors[i][k], state._codec_rng(rngmod.WORKER_CODEC, i, k)
            )
            received[k][i] = chunk
            if i != k:
                bits += chunk.wire_bits

    # average + recompress at each owner
    outgoing = []
    for k in range(n):
        avg = sum(decompress(c) for c in received[k]) / n
        outgoing.append(
            compress_with_error_feedback(spec, avg, state.server_errors[k], state._codec_rng(rngmod.SERVER_CODEC, k))
        )

    # gather: each owner broadcasts to the n - 1 others
    result = layout.join([decompress(c) for c in outgoing])
    bits += sum(c.wire_bits for c in outgoing) * (n - 1)

    state._last_bits = bits
    state.bits_sent_total += bits
    state.steps += 1
    return result


def compressed_gradient_allgather(state: CollectiveState, inputs) -> np.ndarray:
    """Error-compensated compression on the sender side only, then a plain average.

    Each worker compresses its whole vector chunk by chunk and broadcasts the
    compressed pieces to all peers, who average the decompressed values in full
    precision. There is no second compression and no server residual. This is
    the transport for the gradient-compression ablation.
    """
    n = state.n_workers
    if len(inputs) != n:
        raise DimensionError(f"expected {n} worker inputs, got {len(inputs)}")
    layout, spec = state.layout, state.compressor
    bits = 0
    decoded = []
    for i, v in enumerate(inputs):
        v = as_vector(v, f"input[{i}]")
        pieces = layout.split(v)
        out = []
        for k in range(n):
            chunk = compress_with_error_feedback(
                spec, pieces[k], state.worker_errors[i][k], state._codec_rng(rngmod.WORKER_CODEC, i, k)
            )
            bits += chunk.wire_bits * (n - 1)
            out.append(decompress(chunk))
        decoded.append(layout.join(out))
    state._last_bits = bits
    state.bits_sent_total += bits
    state.steps += 1
    return sum(decoded) / n


def bits_for_step(state: CollectiveState) -> int:
    """Wire bits spent by the most recent reduction."""
    if state._last_bits is None:
        raise StateError("no reduction has run yet")
    return state._last_bits


def identity_bits_per_step(dim: int, n_workers: int, bits_per_element: int = 64) -> int:
    """Traffic of one uncompressed gather-scatter reduction at the given precision."""
    return 2 * (n_workers - 1) * dim * bits_per_element
