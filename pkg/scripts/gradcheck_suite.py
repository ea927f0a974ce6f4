"""Adjoint gradients against central differences on random small instances."""
from _common import parser, write_csv

from floodcoarse.experiments import gradcheck_suite

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-4)
    args = p.parse_args()
    rows = gradcheck_suite(args.n, args.eps)
    for r in rows:
        flag = "" if r.oracle_ok else "  (screened: switch within eps)"
        print(f"seed {r.seed:3d}  {r.size:2d}x{r.size:<2d} {r.steps:3d} steps {r.loss:5s}  "
              f"normwise {r.normwise:.2e}  elementwise {r.elementwise:.2e}  {r.seconds:5.1f} s{flag}")
    print("max normwise over screened-in instances:", max(r.normwise for r in rows if r.oracle_ok))
    write_csv(args.out, "gradcheck_suite.csv",
              ["seed", "size", "steps", "loss", "normwise", "elementwise", "seconds", "oracle_ok"],
              [(r.seed, r.size, r.steps, r.loss, r.normwise, r.elementwise, r.seconds, r.oracle_ok) for r in rows])
