"""Track every library scenario and print per-sprite metrics.

    python scripts/run_scenarios.py [name ...] [--seed S]
"""

import argparse

from kinetrack import metrics
from kinetrack.pipeline import run_scenario
from kinetrack.synth import scenario_library


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    lib = scenario_library()
    for name in args.names or sorted(lib):
        pipe, rep, truth = run_scenario(lib[name], seed=args.seed)
        res = metrics.evaluate(metrics.tracks_as_rows(pipe.tracker.sorted_rows()), metrics.truth_as_rows(truth))
        print(f"{name}: {rep.clusters} clusters ({rep.clusters_total} total) in {rep.seconds:.1f}s, "
              f"regions/frame {rep.mean_regions_per_frame:.2f}, visits {rep.max_detector_visit_fraction:.3f}")
        for s in pipe.tracker.cluster_summaries():
            print(f"    cluster {s['cluster_id']}: created {s['created_at']}, {s['member_count']} tracks, "
                  f"parent {s['parent']}")
        for m in res.values():
            print(f"    {m.sprite_id}: coverage {m.coverage:.3f}, switches {m.identity_switches}, "
                  f"fragments {m.fragmentation}, clusters {m.clusters}")


if __name__ == "__main__":
    main()
