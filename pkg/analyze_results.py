#!/usr/bin/env python3
import json
import math
import sys

import click
import pandas as pd

RHO_S = [1e-3, 1.0, 1e3]
DELTA1 = [0.1, 1.0, 10.0]
MESHES = [10, 20, 40, 80]

# Published L2 velocity errors at T = 0.3, columns ordered (rho_s, delta1) as in RHO_S x DELTA1
REFERENCE_ROWS = {
    # (k, delta2): rows per 1/h
    (1, 1.0): [
        [3.492e-02, 3.420e-02, 5.624e-02, 3.489e-02, 3.408e-02, 5.350e-02, 3.460e-02, 3.496e-02, 4.566e-02],
        [8.409e-03, 8.362e-03, 1.145e-02, 8.400e-03, 8.345e-03, 1.085e-02, 8.312e-03, 8.531e-03, 1.454e-02],
        [2.052e-03, 2.074e-03, 3.021e-03, 2.051e-03, 2.068e-03, 2.777e-03, 2.033e-03, 2.102e-03, 3.247e-03],
        [5.063e-04, 5.125e-04, 9.015e-04, 5.059e-04, 5.113e-04, 8.126e-04, 4.974e-04, 5.260e-04, 9.448e-04],
    ],
    (2, 1.0): [
        [4.124e-03, 4.273e-03, 4.331e-03, 4.120e-03, 4.260e-03, 4.288e-03, 4.116e-03, 4.279e-03, 4.339e-03],
        [5.151e-04, 5.298e-04, 5.262e-04, 5.148e-04, 5.283e-04, 5.239e-04, 5.136e-04, 5.442e-04, 5.259e-04],
        [6.267e-05, 6.549e-05, 6.476e-05, 6.265e-05, 6.548e-05, 6.564e-05, 6.269e-05, 7.180e-05, 6.390e-05],
        [7.733e-06, 8.028e-06, 7.712e-06, 7.732e-06, 8.039e-06, 7.819e-06, 7.738e-06, 9.032e-06, 8.915e-06],
    ],
    (1, 1e4): [
        [3.388e-02, 3.304e-02, 5.068e-02, 3.388e-02, 3.351e-02, 4.935e-02, 3.382e-02, 3.478e-02, 4.694e-02],
        [8.211e-03, 8.094e-03, 1.006e-02, 8.201e-03, 8.227e-03, 9.373e-03, 8.088e-03, 8.400e-03, 1.248e-02],
        [2.004e-03, 1.998e-03, 2.136e-03, 2.002e-03, 2.022e-03, 2.053e-03, 1.980e-03, 2.072e-03, 3.486e-03],
        [4.949e-04, 4.942e-04, 8.038e-04, 4.943e-04, 4.999e-04, 7.259e-04, 4.861e-04, 5.180e-04, 9.316e-04],
    ],
    (2, 1e4): [
        [4.195e-03, 4.354e-03, 4.406e-03, 4.164e-03, 4.298e-03, 4.307e-03, 4.133e-03, 4.311e-03, 4.374e-03],
        [5.200e-04, 5.296e-04, 5.221e-04, 5.181e-04, 5.237e-04, 5.272e-04, 5.155e-04, 5.457e-04, 5.253e-04],
        [6.258e-05, 6.421e-05, 6.430e-05, 6.245e-05, 6.419e-05, 6.548e-05, 6.267e-05, 7.149e-05, 6.446e-05],
        [7.697e-06, 7.845e-06, 7.708e-06, 7.691e-06, 7.886e-06, 7.860e-06, 7.727e-06, 8.962e-06, 8.890e-06],
    ],
}

# A run passes when its error is within this factor of the reference and its last rate is close to k + 1
ERROR_FACTOR = 3.0
RATE_SLACK = 0.2


def reference_error(k, inv_h, rho_s, delta1, delta2):
    """Published error for one table cell, or None when not tabulated."""
    rows = REFERENCE_ROWS.get((int(k), float(delta2)))
    if rows is None or inv_h not in MESHES:
        return None
    try:
        col = 3 * RHO_S.index(float(rho_s)) + DELTA1.index(float(delta1))
    except ValueError:
        return None
    return rows[MESHES.index(int(inv_h))][col]


def compare_table(frame):
    """Attach reference errors and their ratio to every row of a convergence table."""
    frame = frame.copy()
    frame["reference"] = [reference_error(r.k, r.inv_h, r.rho_s, r.delta1, r.delta2) for r in frame.itertuples()]
    frame["ratio"] = frame["error"] / frame["reference"]
    return frame


def summarize(frame):
    """One entry per (k, parameter triple) with the final rate and worst error ratio."""
    summary = []
    for (k, rho_s, d1, d2), group in frame.groupby(["k", "rho_s", "delta1", "delta2"]):
        group = group.sort_values("inv_h")
        rate = group["eoc"].iloc[-1]
        ratios = group["ratio"].dropna()
        worst = float(ratios.max()) if len(ratios) else None
        rate_ok = bool(rate >= k + 1 - RATE_SLACK) if not math.isnan(rate) else False
        error_ok = worst is None or (1.0 / ERROR_FACTOR <= ratios.min() and worst <= ERROR_FACTOR)
        summary.append({
            "k": int(k), "rho_s": rho_s, "delta1": d1, "delta2": d2,
            "meshes": group["inv_h"].astype(int).tolist(),
            "rate": None if math.isnan(rate) else float(rate),
            "worst_ratio": worst,
            "avg_iters": float(group["avg_iters"].mean()),
            "passed": bool(rate_ok and error_ok),
        })
    summary.sort(key=lambda s: (not s["passed"], -(s["rate"] or 0.0)))
    return summary


@click.command()
@click.argument("tables", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False), default="report.json", help="JSON report path.")
def main(tables, report):
    """Compare convergence.csv files against the published error tables."""
    if not tables:
        print("No convergence tables given")
        sys.exit(1)

    frame = pd.concat([pd.read_csv(path) for path in tables], ignore_index=True)
    frame = compare_table(frame)
    summary = summarize(frame)

    print("\n=== CONVERGENCE SUMMARY ===")
    for i, s in enumerate(summary, 1):
        status = "PASS" if s["passed"] else "FAIL"
        ratio = f"{s['worst_ratio']:.2f}" if s["worst_ratio"] is not None else "n/a"
        rate = f"{s['rate']:.2f}" if s["rate"] is not None else "n/a"
        print(f"{i}. [{status}] k={s['k']} rho_s={s['rho_s']:g} delta1={s['delta1']:g} delta2={s['delta2']:g}: "
              f"rate={rate}, worst ratio to reference={ratio}, iterations={s['avg_iters']:.1f}")

    with open(report, 'w') as f:
        json.dump({"summary": summary, "rows": json.loads(frame.to_json(orient="records"))}, f, indent=2)
    print(f"\nReport written to {report}")
    sys.exit(0 if all(s["passed"] for s in summary) else 2)


if __name__ == "__main__":
    main()
