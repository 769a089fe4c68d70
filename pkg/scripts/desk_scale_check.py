"""Signal vs null synthetic runs of the RBM-logistic pipeline over several seeds."""
import argparse

import numpy as np

from exprgen import experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--separations", default="0,1,2,3")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--noc", type=int, default=64)
    ap.add_argument("--out", default="runs/desk_scale")
    args = ap.parse_args()
    print("separation  precision(mean+-sd)  recall(mean+-sd)")
    for sep in map(float, args.separations.split(",")):
        p, r = [], []
        for seed in range(args.seeds):
            m = experiment.make_synthetic(("ibc", "non_ibc"), 40, 512, sep, seed)
            cfg = experiment.ExperimentConfig(noc=args.noc, seed=seed, out=f"{args.out}/sep{sep}_seed{seed}")
            rep = experiment.run_experiment(cfg, m).report
            p.append(rep.precision)
            r.append(rep.recall)
        print(f"{sep:10.1f}  {np.mean(p):.3f} +- {np.std(p):.3f}       {np.mean(r):.3f} +- {np.std(r):.3f}")


if __name__ == "__main__":
    main()
