"""
Full-corpus reproduction
========================

Trains the supervised detectors on the real 12,760 + 12,760 clip corpus
with the published hyperparameters and prints the test table. Expect
several hours per architecture on a CPU; ResNet18 needs its ImageNet
weights under $SPOOFBENCH_WEIGHTS.

    python demos/reproduce_full.py /data/banglafake runs/ resnet18 lcnn

Reference points for the test split: ResNet18 near 79% accuracy and 24%
EER; LCNN close to chance.
"""
import sys
from pathlib import Path

from spoofbench import corpus as cp
from spoofbench import evalkit as ek
from spoofbench import trainer as tr
from spoofbench.features import FeatureStore
from spoofbench.models import ModelSpec, build_model


def reproduce(corpus_root, out_dir, architectures=("resnet18", "lcnn"), seed=42):
    corpus_root, out_dir = Path(corpus_root), Path(out_dir)
    records = cp.parse_metadata(corpus_root / "metadata.csv", corpus_root)
    splits = cp.make_splits(records, seed=seed)
    store = FeatureStore(cache_dir=out_dir / "mel_cache")
    test = splits.select(records, cp.Split.TEST)
    reports = {}
    for arch in architectures:
        model = build_model(ModelSpec.for_architecture(arch), seed=seed)
        model, _ = tr.train(model, records, splits, tr.default_config(arch), store, out_dir / arch)
        reports[arch] = ek.evaluate(model, test, store=store, metadata={"architecture": arch})
        ek.write_report(out_dir / arch / "report", reports[arch])
    return reports


if __name__ == "__main__":
    if len(sys.argv) < 3:
        sys.exit(__doc__)
    archs = tuple(sys.argv[3:]) or ("resnet18", "lcnn")
    reports = reproduce(sys.argv[1], sys.argv[2], archs)
    print(ek.format_table(list(reports.items())))
