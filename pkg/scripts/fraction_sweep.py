"""OA against the fraction of the training split that is kept."""
from _common import parser, setup, write_rows

from vinehsi import experiments as ex


def main():
    p = parser(__doc__, "fraction_sweep")
    p.add_argument("--fractions", type=float, nargs="+", default=[0.1, 0.25, 0.5, 1.0])
    p.add_argument("--epochs", type=int, default=ex.SWEEP_EPOCHS)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    with setup(args):
        cfg = ex.REFERENCE_CONFIG.override(epochs=args.epochs, seed=args.seed)
        cells = ex.fraction_sweep(ex.reference_scene(), cfg, args.fractions)
    rows = [{"train_fraction": f, **{k: c[k] for k in ("oa", "aa", "kappa", "f1", "n_train", "seconds")}}
            for f, c in cells.items()]
    write_rows(args.out / "fraction_sweep.csv", rows)


if __name__ == "__main__":
    main()
