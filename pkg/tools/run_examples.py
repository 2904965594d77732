#!/usr/bin/env python3
"""
BUNDLED EXAMPLE RUNNER

Runs the three bundled scenarios and writes their outputs:

- Example 1: full fill/react/settle/draw/idle cycle at N = 100 with both schemes
- Example 2: one-hour reference schedule, scheme agreement at N = 200
- Example 3: 70-hour batch settling, moving-mesh stationarity for N = 100, 200, 400

Usage:
    python tools/run_examples.py [--out reports/examples] [--skip-stationarity]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import parse_scenario, write_run_outputs
from src.discretization import Scheme
from src.scenario import SECONDS_PER_HOUR
from src.simulator import Simulator
from src.validation import ValidationStudy, relative_error

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), '..', 'data', 'scenarios')


def run_cycle(out_dir):
    """Example 1 with both schemes; prints mass closure and outlet summary."""
    config = parse_scenario(os.path.join(SCENARIO_DIR, 'example1.cfg'))
    scenario = config.build()
    outputs = {}
    for scheme in (Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT):
        settings = config.settings().with_updates(scheme=scheme)
        output = Simulator(scenario, settings, verbose=True).run()
        write_run_outputs(output, out_dir, prefix=f"example1_{scheme.value}")
        outputs[scheme] = output

    print("\n" + "="*80)
    print(" EXAMPLE 1 SUMMARY")
    print("="*80)
    for scheme, output in outputs.items():
        d = output.diagnostics
        print(f"\n{scheme.value}:")
        print(f"  Steps:               {d['steps']}")
        print(f"  Wall clock:          {d['wall_clock_s']:.2f} s")
        print(f"  Max Omega slack:     {d['max_omega_slack']:.2e}")
        print(f"  Mass closure:        {d['mass_closure']:.2e}")
    summary = outputs[Scheme.SEMI_IMPLICIT].outlet_summary()
    if not summary.empty:
        print("\nOutlet summary (semi-implicit):")
        print(summary[['stage', 'outlet', 'solids_discharged_kg', 'XI', 'SNH']].to_string(index=False))
    return outputs


def run_agreement(out_dir, N=200):
    """Example 2: distance between the two schemes at T = 1 h."""
    config = parse_scenario(os.path.join(SCENARIO_DIR, 'example2.cfg'))
    scenario = config.build()
    T = SECONDS_PER_HOUR
    runs = {}
    for scheme in (Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT):
        settings = config.settings().with_updates(cells=N, scheme=scheme)
        runs[scheme] = Simulator(scenario, settings, verbose=True).run([T])
        write_run_outputs(runs[scheme], out_dir, prefix=f"example2_{scheme.value}_N{N}")
    distance = relative_error(runs[Scheme.SEMI_IMPLICIT], runs[Scheme.EXPLICIT], T)

    print("\n" + "="*80)
    print(f" EXAMPLE 2 SCHEME AGREEMENT (N = {N}, T = 1 h)")
    print("="*80)
    print(f"  Relative L1 distance: {distance:.4f}")
    print(f"  Mean Newton iterations: {runs[Scheme.SEMI_IMPLICIT].diagnostics['mean_newton_iterations']:.2f}")
    return distance


def run_stationarity(out_dir):
    config = parse_scenario(os.path.join(SCENARIO_DIR, 'example3.cfg'))
    study = ValidationStudy(config.build(), config.settings(), out_dir=out_dir, verbose=True)
    return study.stationarity()


def main():
    parser = argparse.ArgumentParser(description="Run the bundled SBR examples")
    parser.add_argument("--out", default=os.path.join('reports', 'examples'), help="Output directory")
    parser.add_argument("--skip-stationarity", action="store_true", help="Skip the 70-hour Example 3 runs")
    args = parser.parse_args()

    print("="*80)
    print(" SBR REACTIVE SETTLING: BUNDLED EXAMPLES")
    print("="*80)

    results = {'example1': run_cycle(args.out), 'example2': run_agreement(args.out)}
    if not args.skip_stationarity:
        results['example3'] = run_stationarity(args.out)

    print("\n" + "="*80)
    print(" EXAMPLES COMPLETE")
    print("="*80)
    print(f"\n Outputs written to {args.out}/")
    return results


if __name__ == "__main__":
    results = main()
