"""All GAN membership task parts, then the discriminator learning-rate and epoch sweeps.

Uses the reduced architecture on synthetic data unless --data/--arch full are given.

    python3 scripts/gan_tasks.py --out runs/gan
"""
import argparse

from exprgen import experiment

ALPHA_D = [0.00003, 0.0001, 0.0003, 0.001]
EPOCHS = [2, 4, 6, 8]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("data", nargs="*")
    ap.add_argument("--labels", default="")
    ap.add_argument("--arch", default="reduced", choices=["reduced", "full"])
    ap.add_argument("--alpha", type=float, default=0.05, help="AlphaD = AlphaG for the task table")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/gan")
    args = ap.parse_args()

    matrices = {}
    if not args.data:
        breast = experiment.make_synthetic(("ibc", "non_ibc", "normal"), (20, 20, 5), 256, 2.0, args.seed)
        prostate = experiment.make_synthetic(("prostate_tumor", "prostate_normal"), 20, 256, 2.0, args.seed + 1)
        matrices = {"gan_task1": breast, "gan_task2": breast, "gan_task3": prostate}

    base = experiment.ExperimentConfig(
        data=tuple(args.data), labels=args.labels, pipeline="gan", task="gan_task2", part="2b",
        gan_arch=args.arch, gan_minibatch=4, alpha_d=args.alpha, alpha_g=args.alpha,
        epochs=args.epochs, seed=args.seed,
    )
    print("task       part  precision recall f1")
    for task in experiment.GAN_TASKS:
        for part in experiment.GAN_PARTS:
            cfg = base.replace(task=task, part=part, out=f"{args.out}/{task}_{part}")
            d = experiment.run_experiment(cfg, matrices.get(task)).report.display()
            print(f"{task:<10} {part:<5} {d['precision']:9d} {d['recall']:6d} {d['f1']:3d}")

    for param, values, task in (("alpha_d", ALPHA_D, "gan_task2"), ("epochs", EPOCHS, "gan_task3")):
        cfg = base.replace(task=task, out=f"{args.out}/sweep_{param}")
        rows, path = experiment.run_sweep(cfg, param, values, matrix=matrices.get(task))
        print(f"# {task} part 2b, {param} sweep -> {path}")
        print(path.read_text(), end="")


if __name__ == "__main__":
    main()
