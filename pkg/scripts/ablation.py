"""Architecture variants over several seeds on the reference scene."""
from _common import parser, setup, write_rows

from vinehsi import experiments as ex
from vinehsi.model import Variant


def main():
    p = parser(__doc__, "ablation")
    p.add_argument("--variants", nargs="+", default=[v.value for v in Variant], choices=[v.value for v in Variant])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=ex.SWEEP_EPOCHS)
    args = p.parse_args()
    with setup(args):
        cfg = ex.REFERENCE_CONFIG.override(epochs=args.epochs)
        result = ex.ablation(ex.reference_scene(), cfg, args.variants, args.seeds)
    rows = [{"variant": v, "mean_oa": r["mean"], "std_oa": r["std"], "runs": " ".join(f"{x:.4f}" for x in r["oa"])}
            for v, r in result.items()]
    write_rows(args.out / "ablation.csv", rows)


if __name__ == "__main__":
    main()
