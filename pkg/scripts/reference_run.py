"""Full command-line pipeline on the reference synthetic scene; prints the test report."""
import time

from _common import parser, setup

from vinehsi import experiments as ex
from vinehsi.formats import read_kv


def main():
    p = parser(__doc__, "reference")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clean", action="store_true", help="noise 0 and no boundary mixing")
    args = p.parse_args()
    with setup(args):
        t0 = time.perf_counter()
        flags = ("--noise", 0, "--mixing", 0) if args.clean else ()
        dirs = ex.reference_chain(args.out, seed=args.seed, synth_flags=flags)
        report = read_kv(dirs["eval"] / "report.txt")
    print(f"oa={report['oa']} kappa={report['kappa']} wall={time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
