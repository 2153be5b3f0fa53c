"""Report how hard a generator configuration is.

Generates check-ins, clusters them, extracts the location records and prints
the per-feature separation between home and non-home records, plus the
accuracy of the one-feature argmax rule for every feature. Used once to pick
the generator defaults; rerun it after changing them.

    python scripts/calibrate_generator.py
    python scripts/calibrate_generator.py --set noise=0.5 --set n_users=200
"""

import argparse
import json
import time

from homecast.features import cluster_checkins, extract_dataset, group_by_user, label_homes
from homecast.synthetic import GeneratorConfig, bayes_gap_report, generate


def parse_overrides(pairs):
    out = {}
    for pair in pairs:
        key, _, value = pair.partition("=")
        out[key] = json.loads(value)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                    help="override one generator field")
    ap.add_argument("--json", action="store_true", help="print the raw report as JSON")
    args = ap.parse_args()

    cfg = GeneratorConfig.from_dict({**GeneratorConfig().to_dict(), **parse_overrides(args.set)})
    t0 = time.perf_counter()
    checkins, truth = generate(cfg)
    labels = cluster_checkins(checkins)
    homes = label_homes(group_by_user(checkins, labels), truth)
    ds = extract_dataset(checkins, labels, homes)
    report = bayes_gap_report(ds)
    if args.json:
        print(json.dumps(report, indent=2))
        return
    print(f"{len(checkins)} check-ins, {report['n_records']} records, "
          f"{report['records_per_user']:.1f} records/user ({time.perf_counter() - t0:.1f} s)")
    print(f"{'feature':<30}{'gap':>8}{'argmax acc':>12}")
    for name, row in report["features"].items():
        print(f"{name:<30}{row['standardized_gap']:>8.2f}{row['argmax_accuracy']:>12.3f}")


if __name__ == "__main__":
    main()
