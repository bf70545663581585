import os
from pathlib import Path

import numpy as np
import pytest

from spoofbench import corpus as cp

# outcome lines collected by the acceptance suite, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(autouse=True, scope="session")
def _offline_weights(tmp_path_factory):
    """Point the weight lookup at an empty directory unless the caller set one."""
    if "SPOOFBENCH_WEIGHTS" not in os.environ:
        os.environ["SPOOFBENCH_WEIGHTS"] = str(tmp_path_factory.mktemp("no_weights"))
    os.environ.setdefault("HF_HUB_OFFLINE", "1")
    yield


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """64-clip synthetic corpus (32 per class, seed 0) and its records."""
    root = tmp_path_factory.mktemp("fixture")
    cp.generate_fixture_corpus(32, 0, root)
    return root, cp.parse_metadata(root / "metadata.csv", root)


@pytest.fixture(scope="session")
def heldout_corpus(tmp_path_factory):
    """Independent 64-clip corpus drawn with a different seed."""
    root = tmp_path_factory.mktemp("heldout")
    cp.generate_fixture_corpus(32, 1, root)
    return root, cp.parse_metadata(root / "metadata.csv", root)


@pytest.fixture(scope="session")
def feature_store():
    from spoofbench.features import FeatureStore

    return FeatureStore()


def weights_present(name: str) -> bool:
    from spoofbench.models.weights import PretrainedWeightsUnavailable, resolve_file, resolve_hub_dir

    for fn in (resolve_file, resolve_hub_dir):
        try:
            fn(name)
            return True
        except PretrainedWeightsUnavailable:
            pass
    return False


def pair_auc(scores, labels):
    """Brute-force AUC: P(fake > real) + 0.5 P(tie), by counting all pairs."""
    from fractions import Fraction

    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    hits = Fraction(0)
    for p in pos:
        for n in neg:
            hits += 1 if p > n else Fraction(1, 2) if p == n else 0
    return hits / (len(pos) * len(neg))


def brute_eer(scores, labels):
    """EER by sweeping every realizable threshold with exact rational rates.

    FAR(t) = #(real >= t)/N, FRR(t) = #(fake < t)/P over t in {+inf, each
    distinct score descending, -inf}; the crossing of FAR - FRR between two
    consecutive thresholds is located by linear interpolation.
    """
    from fractions import Fraction

    P = sum(1 for y in labels if y == 1)
    N = len(labels) - P
    ts = [float("inf")] + sorted(set(scores), reverse=True) + [float("-inf")]
    pts = []
    for t in ts:
        far = Fraction(sum(1 for s, y in zip(scores, labels) if y == 0 and s >= t), N)
        frr = Fraction(sum(1 for s, y in zip(scores, labels) if y == 1 and s < t), P)
        pts.append((far, frr))
    for far, frr in pts:
        if far == frr:
            return far
    for (a0, r0), (a1, r1) in zip(pts, pts[1:]):
        d0, d1 = a0 - r0, a1 - r1
        if d0 < 0 < d1 or d1 < 0 < d0:
            w = d0 / (d0 - d1)
            return a0 + w * (a1 - a0)
    raise AssertionError("no crossing")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def project_root() -> Path:
    return Path(__file__).resolve().parents[1]


# capacity-run settings: (learning rate, batch size, evaluation interval)
CAPACITY = {
    "lcnn": (1e-3, 16, 5),
    "lcnn_attention": (1e-3, 16, 5),
    "resnet18": (1e-4, 16, 5),
    "vit_b16": (1e-4, 8, 5),
    "cnn_bilstm": (1e-4, 8, 5),
    "wav2vec2_base": (1e-3, 8, 10),
}
# backbones that cannot reach capacity from random weights on a CPU budget
NEEDS_PRETRAINED = {"vit_b16": "vit_b_16", "wav2vec2_base": "wav2vec2-base"}
OPTIONAL_PRETRAINED = {"resnet18": "resnet18", "cnn_bilstm": "resnet18"}


@pytest.fixture(scope="session")
def capacity_runs(fixture_corpus, feature_store):
    """Lazily overfit each architecture on the 64-clip fixture, once per session.

    Returns ``run(arch) -> dict(steps, acc, seconds, model, pretrained)``;
    skips when an architecture needs weights that are not on disk.
    """
    import time

    from spoofbench.features import labels_tensor
    from spoofbench.models import ModelSpec, build_model
    from spoofbench.trainer import TABLE, capacity_check

    _, records = fixture_corpus
    cache = {}

    def run(arch: str):
        if arch in cache:
            return cache[arch]
        if arch in NEEDS_PRETRAINED and not weights_present(NEEDS_PRETRAINED[arch]):
            pytest.skip(f"{arch}: pretrained weights not available offline")
        pretrained = arch in NEEDS_PRETRAINED or (arch in OPTIONAL_PRETRAINED and weights_present(OPTIONAL_PRETRAINED[arch]))
        spec = ModelSpec.for_architecture(arch, pretrained=pretrained)
        t0 = time.perf_counter()
        model = build_model(spec, seed=0)
        x = feature_store.batch(records, spec.input_kind)
        y = labels_tensor(records)
        lr, bs, every = CAPACITY[arch]
        steps, acc = capacity_check(model, x, y, TABLE[spec.architecture][4], lr, bs, 200, 0.95, every)
        cache[arch] = dict(steps=steps, acc=acc, seconds=time.perf_counter() - t0, model=model, pretrained=pretrained)
        return cache[arch]

    return run
