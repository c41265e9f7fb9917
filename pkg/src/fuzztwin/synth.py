"""Synthetic trace datasets shaped like recorded fuzzing campaigns.

The structured generator plants a set of high-risk transitions: failed
connections walk through a few of them inside the early window, successful
connections avoid them (up to a configurable stray occurrence, mirroring the
lone benign counterexample a real campaign shows). The unstructured
generator produces arbitrary walks for oracle-equivalence testing.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .store import ConnectionTrace


@dataclass(frozen=True)
class SynthSpec:
    n_traces: int = 300
    n_states: int = 39
    failed_fraction: float = 0.63
    n_hr_transitions: int = 7
    hr_occurrences: tuple = (2, 4)  # per failed trace, inclusive range
    hr_window: int = 10  # plant hr transitions within this prefix
    min_len: int = 12
    max_len: int = 20
    step_seconds: float = 0.010
    stray_success_hr: float = 0.005  # chance a success trace shows one hr pair
    risky_state_avoidance: float = 0.9  # benign steps mostly skip risky sources


def _state_names(n: int) -> list[str]:
    return [f"s{i:02d}" for i in range(n)]


def _timestamps(rng: random.Random, length: int, step_seconds: float) -> list[int]:
    ts = []
    t = 0.0
    for _ in range(length):
        t += rng.uniform(0.8, 1.2) * step_seconds
        ts.append(int(t * 1e9))
    return ts


def generate_dataset(spec: SynthSpec = SynthSpec(), seed: int = 0):
    """Returns (traces, planted high-risk transition set)."""
    rng = random.Random(seed)
    states = _state_names(spec.n_states)
    risky_sources = rng.sample(states, spec.n_hr_transitions)
    hr_pairs = set()
    for src in risky_sources:
        dst = rng.choice([s for s in states if s != src])
        hr_pairs.add((src, dst))

    risky = set(risky_sources)
    quiet_states = [s for s in states if s not in risky]

    def benign_step(prev):
        while True:
            pool = quiet_states if rng.random() < spec.risky_state_avoidance else states
            nxt = rng.choice(pool)
            if prev is None or (prev, nxt) not in hr_pairs:
                return nxt

    traces = []
    n_failed = int(round(spec.n_traces * spec.failed_fraction))
    for k in range(spec.n_traces):
        failed = k < n_failed
        length = rng.randint(spec.min_len, spec.max_len)
        seq: list[str] = []
        if failed:
            n_hr = rng.randint(*spec.hr_occurrences)
            window = min(spec.hr_window, length)
            # slots where a planted pair starts; pairs occupy two positions
            starts = sorted(rng.sample(range(0, window - 1, 2), min(n_hr, (window - 1) // 2)))
            planted = {pos: rng.choice(sorted(hr_pairs)) for pos in starts}
            i = 0
            while len(seq) < length:
                if i in planted and len(seq) + 1 < length:
                    a, b = planted[i]
                    seq.extend([a, b])
                    i += 2
                else:
                    seq.append(benign_step(seq[-1] if seq else None))
                    i += 1
            seq = seq[:length]
        else:
            while len(seq) < length:
                seq.append(benign_step(seq[-1] if seq else None))
            if rng.random() < spec.stray_success_hr:
                a, b = rng.choice(sorted(hr_pairs))
                seq[0:2] = [a, b]
        ts = _timestamps(rng, length, spec.step_seconds)
        traces.append(
            ConnectionTrace(
                states=tuple(zip(seq, ts)),
                outcome="Failed" if failed else "Success",
                outcome_time=ts[-1] + int(2 * spec.step_seconds * 1e9),
            )
        )
    rng.shuffle(traces)
    return traces, hr_pairs


def generate_random_traces(seed: int, max_traces: int = 500, n_states: int = 12):
    """Unstructured walks with arbitrary outcomes, for recount oracles."""
    rng = random.Random(seed)
    states = _state_names(n_states)
    traces = []
    for k in range(rng.randint(1, max_traces)):
        length = rng.randint(1, 15)
        seq = [rng.choice(states) for _ in range(length)]
        ts = _timestamps(rng, length, 0.01)
        traces.append(
            ConnectionTrace(
                states=tuple(zip(seq, ts)),
                outcome=rng.choice(["Success", "Failed"]),
                outcome_time=ts[-1] + 10_000_000,
            )
        )
    return traces
