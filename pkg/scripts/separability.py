"""How hard are the synthetic scripts? Fit a single softmax layer on raw pixels.

    python3 scripts/separability.py --samples 100 --epochs 100
"""
import argparse

import numpy as np

from numeral_transfer import nn, train
from numeral_transfer.data import stratified_split
from numeral_transfer.synth import generate_synthetic


def linear_model(seed):
    specs = [nn.LayerSpec(nn.FLATTEN), nn.LayerSpec(nn.OUTPUT, nn.N_CLASSES, nn.SOFTMAX)]
    return nn.Model(specs, nn.init_params(specs, np.random.default_rng(seed), np.float32), [True, True])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--samples", type=int, default=100, help="per class")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args(argv)
    for script in ("A", "B"):
        for seed in map(int, args.seeds.split(",")):
            ds = stratified_split(generate_synthetic(script, args.samples, seed), 0.2, seed)
            _, rep = train.fit(linear_model(seed), ds, train.TrainConfig(epochs=args.epochs, seed=seed))
            print(f"script {script} seed {seed}: linear best eval {rep.best_eval_accuracy:.4f} "
                  f"(epoch {rep.best_epoch})", flush=True)


if __name__ == "__main__":
    main()
