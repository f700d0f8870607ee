"""k-fold evaluation of the intent classifier on the keyword-separable corpus.

    python scripts/coin_kfold.py --records 600 --folds 5
"""

import argparse
import json

import numpy as np

from dome.coin import ClassifierConfig, cross_validate
from dome.synthetic import keyword_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--records", type=int, default=600)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ClassifierConfig(d_model=32, heads=4, blocks=1, mlp_hidden=32, epochs=args.epochs,
                           batch_size=16, lr=2e-3, dropout=0.0, max_seq_len=32)
    reports = cross_validate(keyword_corpus(args.records, args.seed), cfg, k=args.folds, seed=args.seed)
    for i, rep in enumerate(reports):
        print(f"fold {i}: P={rep.macro_precision:.4f} R={rep.macro_recall:.4f} "
              f"F1={rep.macro_f1:.4f} acc={rep.accuracy:.4f}")
    summary = {k: float(np.mean([getattr(r, k) for r in reports]))
               for k in ("macro_precision", "macro_recall", "macro_f1")}
    print(json.dumps(dict(summary, folds=len(reports)), sort_keys=True))


if __name__ == "__main__":
    main()
