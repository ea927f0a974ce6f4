"""Fine vs coarse cost at factor 16."""
from _common import parser, write_csv

from floodcoarse.experiments import bench

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--discharge", type=float, default=5.0)
    args = p.parse_args()
    r = bench(n=args.n, discharge=args.discharge)
    rows = r.deterministic_rows() + [("fine_seconds", repr(r.fine_seconds)), ("coarse_seconds", repr(r.coarse_seconds)),
                                     ("wall_ratio", repr(r.wall_ratio))]
    for k, v in rows:
        print(f"{k:>22}  {v}")
    write_csv(args.out, "bench.csv", ["quantity", "value"], rows)
