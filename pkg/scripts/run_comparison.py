"""Compare federated strategies on one synthetic federation per seed.

Prints final-5-round accuracy, FA and FR for each strategy, averaged over
seeds, and optionally writes the per-seed table as CSV.

    python scripts/run_comparison.py --rounds 150 --seeds 3
"""

import argparse
import csv
from dataclasses import replace

import numpy as np

from fedkws.data import GeneratorSpec, generate_federation
from fedkws.engine import STRATEGIES, FedConfig, run_federation
from fedkws.experiment import final_window_mean


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--strategies", default="fedavg,fedkws_ui,alt_only,alo_only,fedprox")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--clients", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--rounds", type=int, default=150)
    p.add_argument("--local-steps", type=int, default=20)
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--csv", help="write the per-seed table here")
    args = p.parse_args()

    strategies = args.strategies.split(",")
    unknown = set(strategies) - set(STRATEGIES)
    if unknown:
        p.error(f"unknown strategies {sorted(unknown)}")
    base = FedConfig(rounds=args.rounds, local_steps=args.local_steps,
                     sample_fraction=args.fraction, client_lr=args.lr, eval_interval=1)
    rows = []
    for seed in range(args.seeds):
        data = generate_federation(GeneratorSpec(num_clients=args.clients,
                                                 dirichlet_alpha=args.alpha, seed=seed))
        for strategy in strategies:
            res = run_federation(data, replace(base, strategy=strategy, seed=seed),
                                 threads=args.threads)
            row = {
                "seed": seed, "strategy": strategy,
                "accuracy": final_window_mean(r.accuracy for r in res.records),
                "fa": final_window_mean(r.fa for r in res.records),
                "fr": final_window_mean(r.fr for r in res.records),
            }
            rows.append(row)
            print(f"seed {seed} {strategy:10s} acc {row['accuracy']:.4f} "
                  f"fa {row['fa']:.4f} fr {row['fr']:.4f}", flush=True)

    print("\nmean over seeds")
    for strategy in strategies:
        sel = [r for r in rows if r["strategy"] == strategy]
        acc = np.array([r["accuracy"] for r in sel])
        print(f"{strategy:10s} acc {acc.mean():.4f} +- {acc.std():.4f}  "
              f"fa {np.mean([r['fa'] for r in sel]):.4f}  fr {np.mean([r['fr'] for r in sel]):.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
