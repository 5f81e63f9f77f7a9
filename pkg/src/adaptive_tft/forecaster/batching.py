"""Right-padding of variable-length subseries into masked batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_POSITION_SCALE = 2.0


@dataclass
class MaskedBatch:
    """``inputs [B, T, 1]`` plus known covariates ``[B, T, k]``.

    Covariate 0 is the relative position ``t / (length - 1)`` inside the
    observed sequence; covariate 1 is the elapsed step count divided by a
    fixed scale, which tells the model how deep into the segment it is.
    Padded cells hold exactly zero in both.
    """

    inputs: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    known_covariates: np.ndarray

    @property
    def max_len(self) -> int:
        return self.inputs.shape[1]

    def features(self) -> np.ndarray:
        return np.concatenate([self.inputs, self.known_covariates], axis=-1)


def relative_position(length: int) -> np.ndarray:
    if length <= 1:
        return np.zeros(max(length, 0))
    return np.arange(length) / (length - 1)


def pad_and_mask(sequences, position_scale: float = DEFAULT_POSITION_SCALE) -> MaskedBatch:
    seqs = [np.asarray(s, dtype=float).ravel() for s in sequences]
    if not seqs:
        raise ValueError("cannot batch zero sequences")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if np.any(lengths == 0):
        raise ValueError("empty sequence in batch")
    B, T = len(seqs), int(lengths.max())
    inputs = np.zeros((B, T, 1))
    cov = np.zeros((B, T, 2))
    for b, s in enumerate(seqs):
        n = len(s)
        inputs[b, :n, 0] = s
        cov[b, :n, 0] = relative_position(n)
        cov[b, :n, 1] = np.arange(n) / position_scale
    mask = np.arange(T)[None, :] < lengths[:, None]
    return MaskedBatch(inputs, mask, lengths, cov)
