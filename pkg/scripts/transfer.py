"""Warm start from a 9-class scene versus cold start on a 17-class scene."""
from dataclasses import asdict

from _common import parser, setup, write_rows

from vinehsi import experiments as ex


def main():
    p = parser(__doc__, "transfer")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--target", type=float, default=0.95)
    p.add_argument("--noise", type=float, default=0.03)
    args = p.parse_args()
    with setup(args):
        cfg = ex.TRANSFER_CONFIG
        ds_a, ds_b = ex.transfer_datasets(*ex.transfer_scenes(noise_std=args.noise), cfg)
        trials = [ex.transfer_trial(ds_a, ds_b, cfg, s, args.target) for s in args.seeds]
    rows = [asdict(t) for t in trials]
    write_rows(args.out / "transfer.csv", rows)
    print(f"mean epochs to {args.target}: warm {ex.mean_epochs([t.warm_epochs for t in trials], cfg.epochs):.1f}, "
          f"cold {ex.mean_epochs([t.cold_epochs for t in trials], cfg.epochs):.1f}")


if __name__ == "__main__":
    main()
