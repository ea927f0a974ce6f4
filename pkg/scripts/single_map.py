"""DirectMap on one map over many boundary conditions, against AvgPool on held-out ones."""
from _common import parser, write_csv

from floodcoarse.experiments import single_map

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--kinds", default="NotchedEmbankment,CanalWithLevees")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=1, help="terrain noise seed")
    args = p.parse_args()
    rows = []
    for kind in args.kinds.split(","):
        r = single_map(kind, args.epochs, args.lr, args.batch_size, seed=args.seed, cache_dir=f"{args.out}/targets")
        print(f"{kind}: held-out ratio {r.ratio:.3f}, per bc {[round(float(x), 3) for x in r.per_bc]} ({r.seconds:.0f} s)")
        write_csv(args.out, f"single_map_{kind}_history.csv", ["epoch", "train", "holdout", "lr", "events"],
                  r.history.rows)
        rows += [(kind, i, b, t, t / b) for i, (b, t) in enumerate(zip(r.baseline, r.trained))]
    write_csv(args.out, "single_map.csv", ["kind", "holdout_bc", "avgpool", "directmap", "ratio"], rows)
