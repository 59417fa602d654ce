"""OA against window size M on the reference scene, stride held fixed."""
from _common import parser, setup, write_rows

from vinehsi import experiments as ex


def main():
    p = parser(__doc__, "window_sweep")
    p.add_argument("--sizes", type=int, nargs="+", default=[9, 15, 23])
    p.add_argument("--epochs", type=int, default=ex.SWEEP_EPOCHS)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    with setup(args):
        cfg = ex.REFERENCE_CONFIG.override(epochs=args.epochs, seed=args.seed)
        cells = ex.window_sweep(ex.reference_scene(), cfg, args.sizes)
    rows = [{"patch_size": m, **{k: c[k] for k in ("oa", "aa", "kappa", "f1", "n_train", "n_test", "seconds")}}
            for m, c in cells.items()]
    write_rows(args.out / "window_sweep.csv", rows)


if __name__ == "__main__":
    main()
