"""Shared dataset builders for the predictor and acceptance suites."""

import numpy as np

from fuzztwin.predictor import SequenceSample, Steps


def separable_toy(n=200, seed=0, length=10, n_sentinels=3, vocab=6, cutoff=None):
    """Failed sequences always contain the sentinel state, successes never.

    Linearly separable by construction: a perfect classifier only has to
    spot the sentinel inside the cutoff window.
    """
    rng = np.random.default_rng(seed)
    sentinel = vocab - 1
    cutoff = cutoff or Steps(10)
    samples = []
    for _ in range(n):
        label = int(rng.random() < 0.5)
        states = list(rng.integers(0, sentinel, size=length))
        if label:
            for pos in rng.choice(length, size=min(n_sentinels, length), replace=False):
                states[int(pos)] = sentinel
        ts = tuple(float(t) for t in np.cumsum(rng.uniform(0.008, 0.012, size=length)))
        samples.append(
            SequenceSample(
                states=tuple(int(s) for s in states),
                timestamps=ts,
                label=label,
                cutoff=cutoff,
                outcome_time=ts[-1] + 0.02,
            )
        )
    return samples
