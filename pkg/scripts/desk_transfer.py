"""Synthetic A->B warm-start experiment: transfer vs. from-scratch training.

    python3 scripts/desk_transfer.py                  # 1/8-width Table-1 topology, ~1 h on one core
    python3 scripts/desk_transfer.py --full-width     # real Table-1 widths, many hours
"""
import argparse
import json
import logging
import sys
import time

from numeral_transfer import experiments, nn


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--full-width", action="store_true", help="use the Table-1 widths")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--samples", type=int, default=500, help="samples per class")
    ap.add_argument("--source-epochs", type=int, default=15)
    ap.add_argument("--reference-epochs", type=int, default=300)
    ap.add_argument("--json", help="write the per-seed results here")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = experiments.WarmStartConfig(seeds=tuple(int(s) for s in args.seeds.split(",")),
                                      samples_per_class=args.samples, source_epochs=args.source_epochs,
                                      reference_epochs=args.reference_epochs)
    if args.full_width:
        cfg.conv, cfg.dense = nn.TABLE1_CONV, nn.TABLE1_DENSE
    t0 = time.perf_counter()
    res = experiments.run_warm_start(cfg, progress=lambda m: print(m, flush=True))

    print(f"\n{'seed':>4} {'xfer@10':>8} {'scratch@10':>10} {'xfer best':>9} {'gap vs ref':>10}")
    for s, gap in zip(res.per_seed, res.parity_gaps()):
        print(f"{s.seed:>4} {s.transfer_at_10:>8.4f} {s.scratch_at_10:>10.4f} "
              f"{s.transfer.best_eval_accuracy:>9.4f} {gap:>+10.4f}")
    print(f"reference scratch best {res.reference.best_eval_accuracy:.4f} at epoch {res.reference.best_epoch}")
    print(f"warm start wins {res.warm_start_wins}/{len(res.per_seed)}; "
          f"max |gap| {max(abs(g) for g in res.parity_gaps()):.4f}; {time.perf_counter() - t0:.0f} s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"config": cfg.to_dict(),
                       "reference": res.reference.summary(),
                       "seeds": [{"seed": s.seed, "source_best": s.source_best,
                                  "transfer": s.transfer.summary(), "scratch": s.scratch.summary(),
                                  "frozen_unchanged": s.frozen_unchanged} for s in res.per_seed]},
                      fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
