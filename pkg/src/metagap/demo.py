"""Writes a small self-contained synthetic study (tables, manifest, benchmark runs, config)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .rng import SplitMix64, combine
from .store import INFO_COLUMNS, RESULT_COLUMNS

FAMILIES = {"tree": ["gbm_a", "gbm_b"], "nn": ["mlp_a", "mlp_b"], "tfm": ["pfn_a"]}


def write_demo_study(out_dir: str | Path, seed: int = 7, n_datasets: int = 30, n_repeats: int = 2,
                     n_folds: int = 3) -> Path:
    """Create ``study.json`` and its inputs under ``out_dir``; returns the config path.

    Each dataset has a latent skew level that shapes its numeric columns
    (log-normal spread) and also worsens the "nn" family, so skewness-type
    meta-features carry real signal for ``nn_vs_tree``; ``tfm_vs_tree`` is
    pure noise.
    """
    out = Path(out_dir)
    (out / "datasets").mkdir(parents=True, exist_ok=True)
    rng = SplitMix64(combine(seed, "demo"))
    entries, infos, effects = [], [], {}
    for k in range(n_datasets):
        ds = f"demo_{k:02d}"
        n = 150 + int(rng.integers(450, 1)[0])
        n_num = 3 + int(rng.integers(8, 1)[0])
        n_cat = int(rng.integers(4, 1)[0])
        skew = 0.2 + 1.3 * float(rng.uniform(1)[0])
        miss = 0.05 * float(rng.uniform(1)[0])
        cols = {}
        for j in range(n_num):
            cols[f"x{j}"] = np.exp(skew * rng.normal(n)) + 0.1 * j
        for j in range(n_cat):
            levels = 2 + int(rng.integers(6, 1)[0])
            cols[f"c{j}"] = [f"v{v}" for v in rng.integers(levels, n)]
        frame = pd.DataFrame(cols)
        holes = rng.uniform(frame.size).reshape(frame.shape) < miss
        frame = frame.mask(holes)
        signal = frame[[f"x{j}" for j in range(n_num)]].sum(axis=1, skipna=True).to_numpy()
        frame["target"] = (signal + rng.normal(n) > np.median(signal)).astype(int)
        path = out / "datasets" / f"{ds}.csv"
        frame.to_csv(path, index=False, float_format="%.10g")
        entries.append({"dataset_id": ds, "table_path": f"datasets/{ds}.csv", "target_column": "target",
                        "categorical_columns": [f"c{j}" for j in range(n_cat)],
                        "split_definition": {"type": "kfold", "n_repeats": n_repeats, "n_folds": n_folds,
                                             "seed": combine(seed, ds) % (2 ** 31)}})
        d = n_num + n_cat
        infos.append((ds, n, d, "binary", 2, round(100.0 * n_cat / d, 1)))
        effects[ds] = skew

    mean_skew = float(np.mean(list(effects.values())))
    rows = []
    for ds in sorted(effects):
        base = 0.3 + 0.2 * float(rng.uniform(1)[0])
        nn_shift = 0.06 * (effects[ds] - mean_skew) + 0.01 * float(rng.normal(1)[0])
        for r in range(n_repeats):
            for f in range(n_folds):
                for fam, methods in FAMILIES.items():
                    for m in methods:
                        for st in ("default", "tuned"):
                            e = rng.normal(2)
                            shift = nn_shift if fam == "nn" else (-0.004 if fam == "tfm" else 0.0)
                            test = base + shift + 0.01 * e[0] - (0.003 if st == "tuned" else 0.0)
                            val = test + 0.004 * e[1]
                            rows.append((ds, r, f, m, st, "binary", "log_loss", repr(float(val)), repr(float(test))))
    pd.DataFrame(rows, columns=RESULT_COLUMNS).to_csv(out / "results.csv", index=False)
    pd.DataFrame(infos, columns=INFO_COLUMNS).to_csv(out / "dataset_info.csv", index=False)
    (out / "datasets.json").write_text(json.dumps({"datasets": entries}, indent=2) + "\n")

    config = {
        "results_csv": "results.csv",
        "dataset_info_csv": "dataset_info.csv",
        "dataset_manifest": "datasets.json",
        "families": [{"family_id": fid, "members": ms} for fid, ms in FAMILIES.items()],
        "comparisons": [
            {"comparison_id": "nn_vs_tree", "family_a": "nn", "family_b": "tree"},
            {"comparison_id": "tfm_vs_tree", "family_a": "tfm", "family_b": "tree"},
        ],
        "controls": ["log_n", "log_d", "d_over_n", "cat_fraction", "feature_missing_fraction"],
        "applicability": {},
        "seed": seed,
        "epsilon": 1e-5,
        "screening": {"n_resamples": 500, "ci_level": 0.95},
        "predictive": {"n_resamples": 5000, "ci_level": 0.95},
        "predictors": [{"kind": "knn", "parameters": {"k": 5}}, {"kind": "rank_ridge", "parameters": {"lambda": 1.0}}],
        "output_dir": "out",
    }
    cfg_path = out / "study.json"
    cfg_path.write_text(json.dumps(config, indent=2) + "\n")
    return cfg_path
