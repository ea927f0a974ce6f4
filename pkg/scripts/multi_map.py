"""SmallCnn trained on 8 synthetic maps, compared with AvgPool on 4 unseen maps."""
from _common import parser, write_csv

from floodcoarse.experiments import multi_map

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=4)
    args = p.parse_args()
    r = multi_map(args.epochs, args.lr, args.batch_size, cache_dir=f"{args.out}/targets")
    print(f"beats AvgPool on {r.wins}/{len(r.baseline)} held-out maps ({r.seconds:.0f} s)")
    print(f"epoch-0 held-out {r.epoch0_holdout!r}, AvgPool {r.baseline_holdout!r}")
    for i, (b, t) in enumerate(zip(r.baseline, r.trained)):
        print(f"  map {8 + i}: AvgPool {b:.4f}  SmallCnn {t:.4f}  ratio {t / b:.3f}")
    write_csv(args.out, "multi_map.csv", ["map", "avgpool", "smallcnn", "ratio"],
              [(8 + i, b, t, t / b) for i, (b, t) in enumerate(zip(r.baseline, r.trained))])
    write_csv(args.out, "multi_map_history.csv", ["epoch", "train", "holdout", "lr", "events"], r.history.rows)
