#!/usr/bin/env python3
"""Mean N_T against delta for testcase 1; the ratio should approach 2 per halving."""
import argparse

from adem.harness import step_count_stats
from adem.models import make_model


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="testcase1")
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--kmin", type=int, default=4)
    ap.add_argument("--kmax", type=int, default=8)
    args = ap.parse_args(argv)

    model = make_model(args.model)
    rows = step_count_stats(model, model.policy, [2.0 ** -k for k in range(args.kmin, args.kmax + 1)],
                            M=args.paths, seed=args.seed)
    print("delta,mean_steps,std_steps,ratio_to_previous")
    prev = None
    for r in rows:
        ratio = "" if prev is None else f"{r.mean_steps / prev:.4f}"
        print(f"{r.resolution:g},{r.mean_steps:.3f},{r.std_steps:.3f},{ratio}")
        prev = r.mean_steps


if __name__ == "__main__":
    main()
