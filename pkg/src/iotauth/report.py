"""Attack/defense matrix, per-session operation counts, and their figures.

The report is a JSON document with stable key order; alongside it the matrix
and op counts are written as CSV and rendered to PNG.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .attacks import EXPECTED, AttackId, run_attack  # noqa: E402
from .crypto import OpCounts, count_ops  # noqa: E402
from .netsim import build_world, run_session  # noqa: E402
from .protocol import ProtocolConfig, Variant  # noqa: E402

REPORT_VERSION = 1
VARIANTS = list(Variant)
ATTACKS = list(AttackId)


def session_op_counts(variant: Variant, seed: int = 0, config: Optional[ProtocolConfig] = None) -> OpCounts:
    """Hash / XOR / PUF evaluations over one honest session (login through ledger)."""
    world = build_world(variant, seed, config, k_equals_response=variant is Variant.P21_AW)
    with count_ops() as counts:
        trace = run_session(world, seed)
    if not trace.outcome.complete:
        raise RuntimeError(f"honest {variant.value} session did not complete: {trace.outcome}")
    return counts


def build_report(
    seeds: int = 20,
    config: Optional[ProtocolConfig] = None,
    *,
    trials: int = 20,
    flips: int = 1,
) -> dict:
    matrix: dict[str, dict[str, dict]] = {}
    evidence: dict[str, dict[str, dict]] = {}
    mismatches: list[str] = []
    for attack in ATTACKS:
        matrix[attack.value] = {}
        evidence[attack.value] = {}
        for variant in VARIANTS:
            outcomes = [run_attack(attack, variant, s, config, trials=trials, flips=flips) for s in range(seeds)]
            wins = sum(o.succeeded for o in outcomes)
            expected = EXPECTED[attack][variant]
            consistent = wins in (0, seeds)
            observed = wins == seeds and seeds > 0
            matrix[attack.value][variant.value] = {
                "succeeded": observed,
                "successes": wins,
                "runs": seeds,
                "expected": expected,
            }
            evidence[attack.value][variant.value] = outcomes[0].evidence if outcomes else {}
            if not consistent or observed != expected:
                mismatches.append(
                    f"{attack.value} x {variant.value}: {wins}/{seeds} succeeded, expected "
                    f"{'all' if expected else 'none'}"
                )

    ops = {v.value: session_op_counts(v, 0, config).as_dict() for v in VARIANTS}
    deltas = {}
    for v in VARIANTS:
        if v.enhanced:
            base = ops[v.baseline.value]
            deltas[v.value] = {
                "baseline": v.baseline.value,
                **{k: ops[v.value][k] - base[k] for k in ("hash", "xor", "puf")},
            }
    return {
        "version": REPORT_VERSION,
        "seeds": seeds,
        "variants": [v.value for v in VARIANTS],
        "attacks": [a.value for a in ATTACKS],
        "matrix": matrix,
        "evidence": evidence,
        "op_counts": ops,
        "op_count_delta": deltas,
        "matches_expected": not mismatches,
        "mismatches": mismatches,
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def load_report(path: Path | str) -> dict:
    return json.loads(Path(path).read_text())


def companion_paths(out: Path) -> dict[str, Path]:
    stem = out.with_suffix("")
    return {
        "matrix_csv": Path(f"{stem}_matrix.csv"),
        "ops_csv": Path(f"{stem}_opcounts.csv"),
        "matrix_png": Path(f"{stem}_matrix.png"),
        "ops_png": Path(f"{stem}_opcounts.png"),
    }


def write_report(report: dict, out: Path | str) -> dict[str, Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_report(report))
    paths = companion_paths(out)

    with paths["matrix_csv"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["attack", "variant", "succeeded", "successes", "runs", "expected"])
        for a in report["attacks"]:
            for v in report["variants"]:
                cell = report["matrix"][a][v]
                w.writerow([a, v, cell["succeeded"], cell["successes"], cell["runs"], cell["expected"]])

    with paths["ops_csv"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "hash", "xor", "puf"])
        for v in report["variants"]:
            c = report["op_counts"][v]
            w.writerow([v, c["hash"], c["xor"], c["puf"]])

    plot_matrix(report, paths["matrix_png"])
    plot_op_counts(report, paths["ops_png"])
    return {"report": out, **paths}


def plot_matrix(report: dict, path: Path) -> None:
    attacks, variants = report["attacks"], report["variants"]
    rate = np.array(
        [
            [report["matrix"][a][v]["successes"] / max(report["matrix"][a][v]["runs"], 1) for v in variants]
            for a in attacks
        ]
    )
    fig, ax = plt.subplots(figsize=(7, 3.6))
    im = ax.imshow(rate, cmap="RdYlGn_r", vmin=0, vmax=1)
    ax.set_xticks(range(len(variants)), variants)
    ax.set_yticks(range(len(attacks)), attacks)
    for i, a in enumerate(attacks):
        for j, v in enumerate(variants):
            cell = report["matrix"][a][v]
            mark = "" if cell["succeeded"] == cell["expected"] else " !"
            ax.text(j, i, f"{cell['successes']}/{cell['runs']}{mark}", ha="center", va="center", fontsize=8)
    ax.set_title("attack success rate per variant")
    fig.colorbar(im, ax=ax, fraction=0.03)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_op_counts(report: dict, path: Path) -> None:
    variants = report["variants"]
    kinds = ("hash", "xor", "puf")
    x = np.arange(len(variants))
    width = 0.26
    fig, ax = plt.subplots(figsize=(7, 3.6))
    for i, kind in enumerate(kinds):
        vals = [report["op_counts"][v][kind] for v in variants]
        bars = ax.bar(x + (i - 1) * width, vals, width, label=kind)
        ax.bar_label(bars, fontsize=7)
    ax.set_xticks(x, variants)
    ax.set_ylabel("evaluations per session")
    ax.legend(frameon=False)
    ax.set_title("operation counts, one honest session")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
