"""Run outputs: delimited traces, summaries, a manifest, and a figure.

All delimited files use RFC-4180-style quoting with LF line endings and
shortest-roundtrip float formatting, so identical runs produce identical
bytes. The manifest is the fully resolved configuration (plus package
metadata), and is itself a valid configuration file: re-running the
simulator on it reproduces the same outputs.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import __version__
from .simulate import ExperimentResult

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.csv"
CURVES_FILE = "cost_to_come_curves.csv"
FIGURE_FILE = "cost_to_come.png"
MANIFEST_FILE = "manifest.json"


def _fmt(x) -> str:
    return repr(float(x))


def _open_csv(path):
    return open(path, "w", encoding="utf-8", newline="")


def write_trace_csv(result: ExperimentResult, path):
    with _open_csv(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["policy", "replication", "slot", "plant", "delta", "sinr",
             "stage_cost", "cost_to_come"]
        )
        for policy in result.policies:
            for trace in result.traces[policy]:
                T = trace.horizon
                K = trace.stage_costs.shape[1]
                for slot in range(T + 1):
                    for plant in range(K):
                        if slot < T:
                            delta = str(int(trace.delta[slot, plant]))
                            sinr = _fmt(trace.sinr[slot, plant])
                        else:
                            # terminal slot: state cost only, no transmission
                            delta = ""
                            sinr = ""
                        writer.writerow([
                            policy, trace.replication, slot, plant, delta, sinr,
                            _fmt(trace.stage_costs[slot, plant]),
                            _fmt(trace.cost_to_come[slot, plant]),
                        ])


def write_summary_csv(result: ExperimentResult, path):
    with _open_csv(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "slot", "mean_cost_to_come", "stderr"])
        for policy, slot, mean, stderr in result.summary_rows():
            writer.writerow([policy, slot, _fmt(mean), _fmt(stderr)])


def write_curves_csv(result: ExperimentResult, path):
    """Plot data mirroring the figure: slot on x, one column per policy."""
    with _open_csv(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slot"] + list(result.policies))
        means = {}
        slots = 0
        for policy in result.policies:
            if result.traces[policy]:
                curve = result.cost_to_come_matrix(policy).mean(axis=0)
                means[policy] = curve
                slots = len(curve)
        for slot in range(slots):
            writer.writerow(
                [slot] + [_fmt(means[p][slot]) if p in means else "" for p in result.policies]
            )


def write_manifest(result: ExperimentResult, path):
    manifest = json.loads(json.dumps(result.scenario.resolved_config))
    manifest["policies"] = list(result.policies)
    manifest["replications"] = result.replications
    meta = manifest.get("meta", {})
    meta.update({"package": "riscon", "version": __version__})
    manifest["meta"] = meta
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_figure(result: ExperimentResult, path):
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    plotted = False
    for policy in result.policies:
        if not result.traces[policy]:
            continue
        ctc = result.cost_to_come_matrix(policy)
        slots = range(ctc.shape[1])
        mean = ctc.mean(axis=0)
        ax.plot(slots, mean, marker="o", markersize=3, label=policy)
        if ctc.shape[0] > 1:
            stderr = ctc.std(axis=0, ddof=1) / (ctc.shape[0] ** 0.5)
            ax.fill_between(slots, mean - stderr, mean + stderr, alpha=0.25)
        plotted = True
    if not plotted:
        plt.close(fig)
        return False
    finite_max = max(
        result.cost_to_come_matrix(p).mean(axis=0).max()
        for p in result.policies if result.traces[p]
    )
    finite_min = min(
        result.cost_to_come_matrix(p).mean(axis=0).min()
        for p in result.policies if result.traces[p]
    )
    if finite_min > 0 and finite_max / finite_min > 1e3:
        ax.set_yscale("log")
    ax.set_xlabel("slot")
    ax.set_ylabel("mean cost-to-come")
    ax.grid(True, linestyle=":", linewidth=0.8)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)
    return True


def emit_outputs(result: ExperimentResult, out_dir, figure: bool = True) -> dict:
    """Write all run artifacts into ``out_dir`` and return their paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "trace": os.path.join(out_dir, TRACE_FILE),
            "summary": os.path.join(out_dir, SUMMARY_FILE),
            "curves": os.path.join(out_dir, CURVES_FILE),
            "manifest": os.path.join(out_dir, MANIFEST_FILE),
        }
        write_trace_csv(result, paths["trace"])
        write_summary_csv(result, paths["summary"])
        write_curves_csv(result, paths["curves"])
        write_manifest(result, paths["manifest"])
        if figure:
            fig_path = os.path.join(out_dir, FIGURE_FILE)
            if render_figure(result, fig_path):
                paths["figure"] = fig_path
        return paths
    except OSError as exc:
        raise OSError(f"failed writing outputs under {out_dir}: {exc}") from exc
