#!/usr/bin/env python3
"""Compare all model kinds on each benchmark table and print a model-by-metric matrix.

Expects ``<dir>/<name>_train.csv`` and ``<dir>/<name>_test.csv`` for any of
aadb, eva and para in the canonical CSV layout (attribute columns plus
``overall``). Missing datasets are skipped.
"""
import argparse
import json
from pathlib import Path

from aesthlab.metrics import compute_metrics
from aesthlab.models import predict
from aesthlab.pipeline import COMPARE_KINDS, derive_seed, load_dataset, train_model

NAMES = {"rf": "Random forest", "gbt": "XGBoost-style boosting", "svr": "Support vector regression",
         "mlp": "Multilayer perceptron", "ols": "Linear regression"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", type=Path, help="also write all metrics here")
    args = ap.parse_args()
    results = {}
    for name in ("aadb", "eva", "para"):
        train_path, test_path = args.data_dir / f"{name}_train.csv", args.data_dir / f"{name}_test.csv"
        if not (train_path.exists() and test_path.exists()):
            print(f"[{name}] skipped: tables not found")
            continue
        train, test = load_dataset(train_path, name), load_dataset(test_path, name)
        print(f"\n{name.upper()}  (train {train.n}, test {test.n})")
        print(f"{'Model':<28}{'R2':>8}{'MAE':>9}{'MSE':>9}{'RMSE':>9}{'rho':>8}")
        results[name] = {}
        for kind in COMPARE_KINDS:
            model = train_model(kind, train, seed=derive_seed(args.seed, f"model/{kind}"))
            m = compute_metrics(test.targets, predict(model, test.rows))
            results[name][kind] = m.to_dict()
            print(f"{NAMES[kind]:<28}{m.r2:8.4f}{m.mae:9.4f}{m.mse:9.4f}{m.rmse:9.4f}{m.spearman_rho:8.3f}")
    if args.json:
        args.json.write_text(json.dumps(results, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
