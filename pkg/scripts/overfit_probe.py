"""Fine-tuning probes: how much a single client's data drags a good model down.

For each seed, pretrain on the pooled data, fine-tune on the least and most
useful clients, and compare with an ALO fine-tune on the least useful one.
With --resolution the interpolation grids are also written as CSV.

    python scripts/overfit_probe.py --seeds 3 --resolution 25 --out runs/probe
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from fedkws.data import generate_federation
from fedkws.experiment import PROBE_MODELS, ExperimentSpec, probe_models
from fedkws.landscape import interpolation_landscape
from fedkws.metrics import accuracy


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--pretrain-steps", type=int, default=3000)
    p.add_argument("--resolution", type=int, default=0, help="grid size; 0 skips the grids")
    p.add_argument("--out", default="runs/probe")
    args = p.parse_args()

    table = {k: [] for k in PROBE_MODELS}
    for seed in range(args.seeds):
        spec = ExperimentSpec(data_seed=seed, landscape={"probe_epochs": args.epochs,
                                                          "pretrain_steps": args.pretrain_steps})
        spec.fed = replace(spec.fed, seed=seed)
        data = generate_federation(replace(spec.generator, seed=seed))
        probes = probe_models(spec, data)
        accs = {k: accuracy(probes[k], data.global_test) for k in PROBE_MODELS}
        for k, v in accs.items():
            table[k].append(v)
        print(f"seed {seed} clients {probes['inferior_client']}/{probes['qualified_client']} "
              + " ".join(f"{k} {v:.4f}" for k, v in accs.items()), flush=True)
        if args.resolution:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            for tag, t1 in (("plain", probes["theta1"]), ("alo", probes["theta1_alo"])):
                grid = interpolation_landscape(probes["theta0"], t1, probes["theta2"],
                                               data.global_test, resolution=args.resolution)
                grid.to_csv(out / f"landscape_{tag}_seed{seed}.csv")

    print("\nmean over seeds")
    for k, v in table.items():
        print(f"{k:10s} {np.mean(v):.4f}")


if __name__ == "__main__":
    main()
