"""Where does the terrain gradient concentrate when a notch lets water through?"""
import numpy as np
from _common import parser, write_csv

from floodcoarse.experiments import localization
from floodcoarse.grid import ElevationMap, write_pgm, write_raster

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--hours", type=float, default=6.0)
    p.add_argument("--noise", type=float, default=0.2)
    args = p.parse_args()
    r = localization(hours=args.hours, noise=args.noise)
    print(f"argmax |grad| {r.argmax}, notch {r.notch}, in 3x3: {r.in_neighborhood}")
    print(f"notch |grad| / median wet |grad| = {r.ratio:.1f}  ({r.steps} steps, {r.seconds:.1f} s)")
    g = np.abs(r.grad)
    i0, j0 = r.notch
    print(np.array2string(np.log10(g[i0 - 3:i0 + 4, j0 - 3:j0 + 4] + 1e-12), precision=1))
    write_csv(args.out, "localization.csv", ["argmax_row", "argmax_col", "notch_row", "notch_col", "ratio", "steps"],
              [(*r.argmax, *r.notch, r.ratio, r.steps)])
    write_raster(ElevationMap(r.grad, 64.0), f"{args.out}/notch_grad.asc")
    write_pgm(np.log10(g + 1e-12), f"{args.out}/notch_grad.pgm")
