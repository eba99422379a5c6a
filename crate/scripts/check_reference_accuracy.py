#!/usr/bin/env python3
"""Compare a real-data report against the reference block4_pool accuracies.

    python3 scripts/check_reference_accuracy.py ckplus runs/ckplus/report.json
    python3 scripts/check_reference_accuracy.py jaffe  runs/jaffe/report.json

The report comes from `vggfer pipeline` (or `vggfer evaluate`) run on a
prepared corpus with converted ImageNet weights. The check passes when the
block4_pool jackknife and hold-out accuracies at the reference n_pca are each
within --margin percentage points of the reference. Exit status is 0 on PASS
and 1 on FAIL.
"""

import argparse
import json
import sys

REFERENCE = {
    # dataset: (n_pca, A_JK %, A_T %)
    "ckplus": (100, 92.26, 92.86),
    "jaffe": (200, 92.77, 92.86),
}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("dataset", choices=sorted(REFERENCE))
    p.add_argument("report", help="report.json written by vggfer")
    p.add_argument("--margin", type=float, default=5.0, help="allowed deviation in points (default 5)")
    args = p.parse_args()

    n_pca, ref_jk, ref_t = REFERENCE[args.dataset]
    with open(args.report) as f:
        report = json.load(f)
    row = next(
        (r for r in report["results"] if r["layer"] == "block4_pool" and r["n_pca"] == n_pca),
        None,
    )
    if row is None:
        sys.exit(f"{args.report}: no block4_pool row at n_pca {n_pca}")

    ok = True
    for name, key, ref in (("A_JK", "a_jk", ref_jk), ("A_T", "a_test", ref_t)):
        value = row.get(key)
        if value is None:
            print(f"FAIL {name}: not evaluated")
            ok = False
            continue
        got = 100.0 * value
        passed = abs(got - ref) <= args.margin
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {got:.2f} vs {ref:.2f} (margin {args.margin:g})")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
