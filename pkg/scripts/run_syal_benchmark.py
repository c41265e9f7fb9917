#!/usr/bin/env python3
"""Probability-scheduled vs uniform-random command fuzzing, 20 seeds.

Runs both strategies until every planted vulnerability is found, plus the
prior-knowledge variant with two seeded pairs, and fits linear/exponential
models to the averaged discovery tracks. Writes a JSON result and a CSV of
the per-seed case counts.
"""

import argparse
import json
from pathlib import Path

from fuzztwin.analyzer import AnalyzerError, fit_curve
from fuzztwin.experiments import aligned_mean_curve, syal_vs_random_benchmark


def fit_or_none(points, model):
    pts = [(i, y) for i, y in points if y > 0]
    if len(pts) < 3:
        return None
    try:
        fit = fit_curve(pts, model)
    except AnalyzerError:
        return None
    return {"model": model, "params": list(fit.params), "r_squared": fit.r_squared}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--commands", type=int, default=30)
    parser.add_argument("--vulns", type=int, default=12)
    parser.add_argument("--clustering", default="row_clustered")
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument("--ratio", type=float, default=0.1)
    parser.add_argument("--p0", type=float, default=0.05)
    parser.add_argument("--profile-seed", type=int, default=0)
    parser.add_argument("--out-dir", default="benchmark-out")
    args = parser.parse_args()

    bench = syal_vs_random_benchmark(
        n_commands=args.commands,
        n_vulns=args.vulns,
        clustering=args.clustering,
        seeds=range(args.seeds),
        alpha=args.alpha,
        ratio=args.ratio,
        p0=args.p0,
        profile_seed=args.profile_seed,
    )
    medians = bench.medians()
    syal_aligned = aligned_mean_curve(bench.syal_curves)
    random_aligned = aligned_mean_curve(bench.random_curves)
    summary = {
        "config": vars(args),
        "medians": medians,
        "cases_ratio_syal_over_random": medians["syal_cases"] / medians["random_cases"],
        "first5_reduction_from_prior_knowledge": 1
        - medians["seeded_first5"] / medians["syal_first5"],
        "fits": {
            "random_full": {
                m: fit_or_none(random_aligned, m) for m in ("linear", "exponential")
            },
            "syal_first_half": {
                m: fit_or_none(syal_aligned[: len(syal_aligned) // 2], m)
                for m in ("linear", "exponential")
            },
        },
    }

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "benchmark.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    with open(out / "cases.csv", "w") as fh:
        fh.write("seed,random_cases,syal_cases,seeded_cases\n")
        for i, seed in enumerate(bench.seeds):
            fh.write(
                f"{seed},{bench.random_cases[i]},{bench.syal_cases[i]},{bench.seeded_cases[i]}\n"
            )

    print(f"median cases   random: {medians['random_cases']:.0f}")
    print(f"median cases     syal: {medians['syal_cases']:.0f}")
    print(f"median cases   seeded: {medians['seeded_cases']:.0f}")
    print(f"syal / random ratio:   {summary['cases_ratio_syal_over_random']:.3f}")
    print(f"first-5 reduction:     {summary['first5_reduction_from_prior_knowledge']:.1%}")
    print(f"results in {out}/")


if __name__ == "__main__":
    main()
