"""Regenerate the report fixture and its expected output.

Writes 40 prediction files (4 methods x 5 seeds x internal/external) into
predictions/ and the expected report.csv / report.md into expected/. The
expected values are computed here with scikit-learn and numpy, independently
of the Rust implementation.

    python make_golden.py
"""

import hashlib
import itertools
from pathlib import Path

import numpy as np
from sklearn.metrics import roc_auc_score

HERE = Path(__file__).parent
VERSION = "0.1.0"
METHODS = [("baseline", "Baseline"), ("masking", "Masking"), ("cropping", "Cropping"), ("clahe", "CLAHE")]
SEEDS = [1, 2, 3, 4, 5]
DATASETS = ["internal", "external"]
LABELS = ["Atelectasis", "Edema", "Pneumothorax"]
SCORED = ["White", "Black", "Asian", "Hispanic"]
ALL_GROUPS = SCORED + ["Other"]
ROWS = 40


def fmt_score(x):
    return f"{x:.2f}"


def make_run(mi, seed, di):
    rng = np.random.default_rng(1000 * mi + 10 * seed + di)
    race_signal = [0.9, 0.5, 0.4, 0.7][mi] * (0.8 if di else 1.0)
    diag_signal = [0.8, 0.7, 0.75, 0.8][mi] - 0.1 * di
    groups = [ALL_GROUPS[i % 5] if i % 9 else "Other" for i in range(ROWS)]
    rows = []
    for i in range(ROWS):
        g = groups[i]
        truth, scores = [], []
        for li in range(len(LABELS)):
            u = rng.random()
            t = None if u < 0.15 else int(rng.random() < 0.4)
            # Pneumothorax is never positive for Hispanic rows: a skipped cell.
            if LABELS[li] == "Pneumothorax" and g == "Hispanic" and t is not None:
                t = 0
            base = rng.random()
            s = base * (1 - diag_signal) + (diag_signal if t == 1 else 0.0) * rng.random()
            truth.append(t)
            scores.append(round(min(max(s, 0.0), 1.0), 2))
        race = []
        for sg in SCORED:
            v = rng.random() * (1 - race_signal) + (race_signal if sg == g else 0.0) * rng.random()
            race.append(round(v, 2))
        rows.append((f"r{i:03d}", g, truth, scores, race))
    return rows


def render(method, seed, dataset, rows):
    out = [f"#method={method}", f"#seed={seed}", f"#dataset={dataset}"]
    header = ["sample_id", "race_group"]
    for label in LABELS:
        header += [f"score:{label}", f"gt:{label}"]
    header += [f"race_score:{g}" for g in SCORED]
    out.append(",".join(header))
    for sid, g, truth, scores, race in rows:
        fields = [sid, g]
        for t, s in zip(truth, scores):
            fields += [fmt_score(s), "" if t is None else str(t)]
        fields += [fmt_score(r) for r in race]
        out.append(",".join(fields))
    return "\n".join(out) + "\n"


def auroc(scores, truth):
    return float(roc_auc_score(truth, scores))


def run_metrics(rows):
    # parse back the rounded values exactly as written
    scores = [[float(fmt_score(s)) for s in r[3]] for r in rows]
    race = [[float(fmt_score(s)) for s in r[4]] for r in rows]
    truth = [r[2] for r in rows]
    groups = [r[1] for r in rows]

    present = [g for g in ALL_GROUPS if g in groups and g in SCORED]
    race_vals = []
    for g in present:
        col = SCORED.index(g)
        race_vals.append(auroc([r[col] for r in race], [int(x == g) for x in groups]))
    race_auc = sum(race_vals) / len(race_vals)

    diag = []
    for li in range(len(LABELS)):
        idx = [i for i in range(ROWS) if truth[i][li] is not None]
        diag.append(auroc([scores[i][li] for i in idx], [truth[i][li] for i in idx]))
    diag_auc = sum(diag) / len(diag)

    used = skipped = 0
    per_label = []
    for li in range(len(LABELS)):
        vals = []
        for g in [g for g in ALL_GROUPS if g in groups and g != "Other"]:
            idx = [i for i in range(ROWS) if groups[i] == g and truth[i][li] is not None]
            t = [truth[i][li] for i in idx]
            if len(set(t)) < 2:
                skipped += 1
                continue
            used += 1
            vals.append(auroc([scores[i][li] for i in idx], t))
        if len(vals) >= 2:
            pairs = list(itertools.combinations(vals, 2))
            per_label.append(sum(abs(a - b) for a, b in pairs) / len(pairs))
    disp = sum(per_label) / len(per_label)
    return race_auc, diag_auc, disp, used, skipped


def stats(values):
    return float(np.mean(values)), float(np.std(values, ddof=1))


def main():
    pred_dir = HERE / "predictions"
    pred_dir.mkdir(exist_ok=True)
    metrics = {}
    digests = []
    for mi, (method, _) in enumerate(METHODS):
        for seed in SEEDS:
            for di, dataset in enumerate(DATASETS):
                rows = make_run(mi, seed, di)
                text = render(method, seed, dataset, rows)
                path = pred_dir / f"{method}_{dataset}_seed{seed}.csv"
                path.write_text(text)
                digests.append(hashlib.sha256(text.encode()).hexdigest())
                metrics[(method, dataset, seed)] = run_metrics(rows)
    digests.sort()
    canonical = "disparity=pairwise-mean\ninputs=" + ";".join(digests) + "\n"
    config_hash = hashlib.sha256(canonical.encode()).hexdigest()[:16]

    summary = {}
    for method, _ in METHODS:
        for dataset in DATASETS:
            ms = [metrics[(method, dataset, s)] for s in SEEDS]
            summary[(method, dataset)] = {
                "race": stats([m[0] for m in ms]),
                "diag": stats([m[1] for m in ms]),
                "disp": stats([m[2] for m in ms]),
                "used": sum(m[3] for m in ms),
                "skipped": sum(m[4] for m in ms),
            }

    csv = [f"#tool=cxrprep {VERSION}", f"#config_hash={config_hash}", "#disparity=pairwise-mean"]
    cols = ["method"]
    for metric in ["race_auroc", "diagnostic_auroc", "disparity"]:
        for d in DATASETS:
            cols += [f"{metric}_{d}_mean", f"{metric}_{d}_std"]
    for d in DATASETS:
        cols += [f"seeds_{d}", f"disparity_cells_used_{d}", f"disparity_cells_skipped_{d}"]
    csv.append(",".join(cols))
    for method, _ in METHODS:
        fields = [method]
        for key in ["race", "diag", "disp"]:
            for d in DATASETS:
                mean, std = summary[(method, d)][key]
                fields += [f"{mean:.6f}", f"{std:.6f}"]
        for d in DATASETS:
            s = summary[(method, d)]
            fields += [str(len(SEEDS)), str(s["used"]), str(s["skipped"])]
        csv.append(",".join(fields))

    def cell(method, d, key, dec):
        mean, std = summary[(method, d)][key]
        return f"{mean:.{dec}f} ± {std:.{dec}f}"

    md = [
        f"<!-- cxrprep {VERSION} | config_hash={config_hash} | disparity=pairwise-mean -->",
        "",
        "Race and diagnostic AUROC, mean ± standard deviation across seeds.",
        "",
        "| Method | Race AUROC Internal | Race AUROC External | Diagnostic AUROC Internal | Diagnostic AUROC External |",
        "|:--|:-:|:-:|:-:|:-:|",
    ]
    for method, name in METHODS:
        md.append(
            f"| {name} | {cell(method, 'internal', 'race', 3)} | {cell(method, 'external', 'race', 3)} | "
            f"{cell(method, 'internal', 'diag', 3)} | {cell(method, 'external', 'diag', 3)} |"
        )
    md += [
        "",
        "Average inter-group diagnostic AUROC difference (pairwise-mean), mean ± standard deviation across seeds.",
        "",
        "| Method | Internal | External | Seeds (int/ext) | Cells used/skipped (int) | Cells used/skipped (ext) |",
        "|:--|:-:|:-:|:-:|:-:|:-:|",
    ]
    for method, name in METHODS:
        i, e = summary[(method, "internal")], summary[(method, "external")]
        md.append(
            f"| {name} | {cell(method, 'internal', 'disp', 4)} | {cell(method, 'external', 'disp', 4)} | "
            f"{len(SEEDS)}/{len(SEEDS)} | {i['used']}/{i['skipped']} | {e['used']}/{e['skipped']} |"
        )

    expected = HERE / "expected"
    expected.mkdir(exist_ok=True)
    (expected / "report.csv").write_text("\n".join(csv) + "\n")
    (expected / "report.md").write_text("\n".join(md) + "\n")


if __name__ == "__main__":
    main()
