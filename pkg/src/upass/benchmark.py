"""Bundled synthetic benchmark used by the pipeline defaults and the test suite.

Features are organized as "channels" of four dimensions each: two that carry
an independent copy of the class geometry at decreasing strength and two of
pure noise.  Configurations with more channels therefore genuinely contain
more class information, while the noise dimensions give the dynamics-logging
model room to absorb idiosyncratic (mislabeled) samples late in training.
Test recordings receive individual feature shifts, standing in for the
per-recording drift that personalization is meant to absorb.
"""

from __future__ import annotations

import numpy as np

from .refmodel import SyntheticDataset, SyntheticSpec, generate_synthetic

__all__ = [
    "ADAPT_PARAMS",
    "CHANNEL_CONFIGS",
    "EVAL_HYPERPARAMS",
    "FINETUNE_PARAMS",
    "LOGGING_HYPERPARAMS",
    "benchmark_cluster_means",
    "benchmark_test",
    "benchmark_train",
]

NUM_CLASSES = 3
CHANNELS = 3
CHANNEL_STRENGTH = (2.5, 1.8, 1.3)
DIMS_PER_CHANNEL = 4  # 2 signal + 2 noise
OVERLAP = 0.4

# Columns of the feature matrix each named configuration may see.
CHANNEL_CONFIGS = {
    "one_channel": list(range(4)),
    "two_channels": list(range(8)),
    "three_channels": list(range(12)),
}

# Wide saturated hidden layer with a slow constant rate: clean structure is
# learned in the first epochs while label noise is absorbed late, which is
# what makes the per-sample dynamics informative.
LOGGING_HYPERPARAMS = {
    "hidden_units": 256,
    "learning_rate": 0.15,
    "batch_size": 8,
    "init_scale": 0.7,
}

# Stable underfitting linear model: used wherever plain accuracy is evaluated
# and for the configuration comparison, where aggregate data uncertainty
# should reflect class confusability rather than memorization capacity.
EVAL_HYPERPARAMS = {
    "hidden_units": 0,
    "learning_rate": 0.1,
    "batch_size": 32,
}

# Per-recording supervised fine-tuning during active learning.
FINETUNE_PARAMS = {"learning_rate": 0.05, "steps_per_epoch": 5}

# Label-free self-training adaptation used to produce ranking dynamics.
ADAPT_PARAMS = {"learning_rate": 0.05, "steps_per_epoch": 3}

TRAIN_NOISE_RATE = 0.1
TEST_SHIFT = 13.0


def benchmark_cluster_means(
    num_classes: int = NUM_CLASSES, channels: int = CHANNELS
) -> np.ndarray:
    """Class means of shape (num_classes, 4*channels): a circle per channel."""
    means = np.zeros((num_classes, DIMS_PER_CHANNEL * channels))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    for c in range(channels):
        radius = CHANNEL_STRENGTH[c] * (1.0 - OVERLAP) * 2.0
        means[:, DIMS_PER_CHANNEL * c] = radius * np.cos(angles)
        means[:, DIMS_PER_CHANNEL * c + 1] = radius * np.sin(angles)
    return means


def benchmark_train(
    seed: int, recordings: int = 3, samples_per_recording: int = 100
) -> SyntheticDataset:
    """Labeled training set with injected label noise."""
    return generate_synthetic(
        SyntheticSpec(
            num_classes=NUM_CLASSES,
            dims=DIMS_PER_CHANNEL * CHANNELS,
            samples_per_recording=samples_per_recording,
            recordings=recordings,
            cluster_means=benchmark_cluster_means(),
            cluster_spread=1.0,
            noise_rate=TRAIN_NOISE_RATE,
            seed=seed,
        )
    )


def benchmark_test(
    seed: int, recordings: int = 5, samples_per_recording: int = 200
) -> SyntheticDataset:
    """Clean test set whose recordings carry individual feature shifts."""
    return generate_synthetic(
        SyntheticSpec(
            num_classes=NUM_CLASSES,
            dims=DIMS_PER_CHANNEL * CHANNELS,
            samples_per_recording=samples_per_recording,
            recordings=recordings,
            cluster_means=benchmark_cluster_means(),
            cluster_spread=1.0,
            noise_rate=0.0,
            recording_shift=TEST_SHIFT,
            seed=seed + 50_000,
        )
    )
