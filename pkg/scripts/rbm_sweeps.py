"""Learning-rate and kernel-width sweeps for the RBM-SVM pipeline.

Without --data a synthetic two-class dataset is generated. Writes one
sweep.csv per parameter under the output root.

    python3 scripts/rbm_sweeps.py --out sweeps/rbm_svm
    python3 scripts/rbm_sweeps.py GSE45584_series_matrix.txt.gz --task rbm_task2
"""
import argparse

from exprgen import experiment

ALPHAS = [0.0006, 0.0009, 0.001, 0.005, 0.01]
GAMMAS = [0.0003, 0.001, 0.008, 0.06, 1.5]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("data", nargs="*")
    ap.add_argument("--labels", default="")
    ap.add_argument("--task", default="rbm_task1")
    ap.add_argument("--noc", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--separation", type=float, default=1.0, help="synthetic data only")
    ap.add_argument("--out", default="sweeps/rbm_svm")
    args = ap.parse_args()

    matrix = None
    if not args.data:
        matrix = experiment.make_synthetic(("ibc", "non_ibc"), 20, 1024, args.separation, args.seed)
    base = experiment.ExperimentConfig(
        data=tuple(args.data), labels=args.labels, task=args.task, pipeline="rbm_svm",
        noc=args.noc, epochs=args.epochs, split=0.5, svm_c=1.0, seed=args.seed,
    )
    for param, values, fixed in (("alpha", ALPHAS, {"gamma": 0.06}), ("gamma", GAMMAS, {"alpha": 0.0006})):
        cfg = base.replace(out=f"{args.out}/{param}", **fixed)
        rows, path = experiment.run_sweep(cfg, param, values, matrix=matrix)
        print(f"# {param} sweep -> {path}")
        for row in rows:
            d = row.report.display()
            print(f"{row.param:>8}  precision {d['precision']:3d}  recall {d['recall']:3d}  f1 {d['f1']:3d}")


if __name__ == "__main__":
    main()
