#!/usr/bin/env python3
"""Independent consistency check for eval outputs.

Recomputes the aggregate statistics (mean, 95% CI half-width, quartile means,
rolling series) from a per-task CSV and compares them against the report JSON
written by `semtask eval`. Exits nonzero on any mismatch beyond 1e-9.

Usage: recompute_report.py <per_task.csv> <report.json> [window]
"""

import json
import math
import sys


def main():
    if len(sys.argv) < 3:
        sys.exit(__doc__)
    csv_path, json_path = sys.argv[1], sys.argv[2]

    rows = []
    with open(csv_path, encoding="utf-8") as f:
        header = f.readline().strip()
        assert header.startswith("task_id,coarsity,top1"), header
        for line in f:
            cells = line.strip().split(",")
            rows.append((int(cells[0]), float(cells[1]), float(cells[2])))

    with open(json_path, encoding="utf-8") as f:
        report = json.load(f)

    n = len(rows)
    assert n == report["num_tasks"], (n, report["num_tasks"])

    failures = []

    def check(name, got, expected):
        if abs(got - expected) > 1e-9:
            failures.append(f"{name}: recomputed {got!r} vs reported {expected!r}")

    mean = sum(r[2] for r in rows) / n
    check("mean_top1", mean, report["mean_top1"])
    if n > 1:
        var = sum((r[2] - mean) ** 2 for r in rows) / (n - 1)
        ci = 1.96 * math.sqrt(var) / math.sqrt(n)
        check("ci95_half_width", ci, report["ci95_half_width"])

    # Quartiles: stable sort on (coarsity, task_id), sizes differing by <= 1,
    # the first bucket taking the smallest coarsities.
    rows.sort(key=lambda r: (r[1], r[0]))
    start = 0
    for q in range(4):
        size = n // 4 + (1 if q < n % 4 else 0)
        bucket = rows[start : start + size]
        start += size
        if not bucket:
            continue
        check(
            f"quartile {q + 1} mean_top1",
            sum(r[2] for r in bucket) / len(bucket),
            report["quartiles"][q]["mean_top1"],
        )
        check(
            f"quartile {q + 1} mean_coarsity",
            sum(r[1] for r in bucket) / len(bucket),
            report["quartiles"][q]["mean_coarsity"],
        )

    window = int(sys.argv[3]) if len(sys.argv) > 3 else report.get("rolling_window")
    if window and report.get("rolling"):
        points = report["rolling"]
        assert len(points) == n - window + 1, (len(points), n, window)
        for i, point in enumerate(points):
            sl = rows[i : i + window]
            check(
                f"rolling[{i}].coarsity",
                sum(r[1] for r in sl) / window,
                point["coarsity"],
            )
            check(
                f"rolling[{i}].accuracy",
                sum(r[2] for r in sl) / window,
                point["accuracy"],
            )

    if failures:
        print("\n".join(failures))
        sys.exit(1)
    print(f"report consistent with {csv_path} (n={n}) within 1e-9")


if __name__ == "__main__":
    main()
