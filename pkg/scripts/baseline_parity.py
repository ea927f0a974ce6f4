"""AvgPool against the bilateral baselines over every terrain kind."""
from _common import parser, write_csv

from floodcoarse.experiments import baseline_parity
from floodcoarse.scenario import KINDS

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--discharge", type=float, default=100.0)
    args = p.parse_args()
    r = baseline_parity(args.discharge, cache_dir=f"{args.out}/targets")
    for k in r.losses:
        print(f"{k:>13}  median Huber {r.median(k):.4f}  valid {r.valid[k]}")
    labels = [(kind, seed) for kind in KINDS for seed in (0, 1)]
    write_csv(args.out, "baseline_parity.csv", ["kind", "seed"] + list(r.losses),
              [(kind, seed, *(r.losses[k][i] for k in r.losses)) for i, (kind, seed) in enumerate(labels)])
