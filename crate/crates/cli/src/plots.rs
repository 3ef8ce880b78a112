//! Plotting scripts written next to the data they read.

pub const BENCHMARK: &str = r#"#!/usr/bin/env python3
"""Test MSE against sample size, one panel per (dimension, noise)."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "summary.csv"
cells = defaultdict(lambda: defaultdict(list))
with open(path) as f:
    for row in csv.DictReader(f):
        key = (int(row["dim"]), float(row["noise"]))
        cells[key][row["method"]].append((int(row["n"]), float(row["mean_mse"]), float(row["std_mse"])))

keys = sorted(cells)
fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.5), squeeze=False)
labels = {"sos": "convex SoS", "krr": "kernel ridge", "pwl": "piecewise linear"}
for ax, key in zip(axes[0], keys):
    for method, points in sorted(cells[key].items()):
        points.sort()
        ns, means, stds = zip(*points)
        ax.errorbar(ns, means, yerr=stds, marker="o", capsize=3, label=labels.get(method, method))
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_title(f"p={key[0]}, noise={key[1]}")
axes[0][0].set_ylabel("test MSE")
axes[0][-1].legend()
fig.tight_layout()
fig.savefig("benchmark.pdf")
"#;

pub const BURES: &str = r#"#!/usr/bin/env python3
"""Fitted and true matrix entries along the geodesic."""
import csv
import sys

import matplotlib.pyplot as plt

curve = sys.argv[1] if len(sys.argv) > 1 else "curve.csv"
data = sys.argv[2] if len(sys.argv) > 2 else "data.csv"
rows = list(csv.DictReader(open(curve)))
entries = [k for k in rows[0] if k.startswith("m")]
samples = list(csv.DictReader(open(data)))

fig, axes = plt.subplots(1, len(entries) + 1, figsize=(3.2 * (len(entries) + 1), 3))
for ax, e in zip(axes, entries):
    for kind, style in (("truth", "k--"), ("fitted", "C0-")):
        pts = [(float(r["t"]), float(r[e])) for r in rows if r["kind"] == kind]
        ax.plot(*zip(*pts), style, label=kind)
    ax.plot([float(s["x1"]) for s in samples], [float(s[e]) for s in samples], "C3o", ms=4)
    ax.set_title(e)
fitted = [(float(r["t"]), float(r["min_eig"])) for r in rows if r["kind"] == "fitted"]
axes[-1].plot(*zip(*fitted))
axes[-1].axhline(0.0, color="k", lw=0.5)
axes[-1].set_title("smallest eigenvalue")
axes[0].legend()
fig.tight_layout()
fig.savefig("bures.pdf")
"#;
