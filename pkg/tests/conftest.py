"""Shared fixtures: synthetic datasets and reference trained models.

Everything here is seeded, so fixture outputs are identical across runs.
"""

import json

import numpy as np
import pytest

from guardscan import cli
from guardscan.classifiers import train_cascade, train_linear_svm
from guardscan.cli import _training_windows
from guardscan.config import PipelineConfig
from guardscan.evaluation import PipelineModels, fit_spacing_model_from_dataset
from guardscan.hog import hog_from_window_stack
from guardscan.synthgen import SynthConfig, load_dataset, make_dataset


@pytest.fixture(scope="session")
def pipeline_cfg():
    return PipelineConfig()


@pytest.fixture(scope="session")
def small_ds(tmp_path_factory, pipeline_cfg):
    """A 6-train / 3-test facade dataset for module-level tests."""
    root = tmp_path_factory.mktemp("small_ds")
    make_dataset(SynthConfig(seed=7), 6, 3, root)
    return load_dataset(root)


@pytest.fixture(scope="session")
def trained(small_ds, pipeline_cfg):
    """Reference SVM, cascade, and spacing models trained on small_ds."""
    cfg = pipeline_cfg
    pos, neg = _training_windows(small_ds, cfg)
    X = np.vstack([hog_from_window_stack(pos, cfg.hog),
                   hog_from_window_stack(neg, cfg.hog)])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    svm = train_linear_svm(X, y, cfg.svm)
    cascade = train_cascade(pos, neg, cfg.cascade)
    k, gmm, table = fit_spacing_model_from_dataset(
        small_ds, cfg.floor, cfg.spacing.fit, cfg.spacing.k_range,
        cfg.spacing.bins, cfg.spacing.s_max, cfg.spacing.tau)
    return {
        "svm": svm,
        "cascade": cascade,
        "spacing_k": k,
        "gmm": gmm,
        "table": table,
        "models": PipelineModels(svm=svm, svm_hog=cfg.hog, cascade=cascade,
                                 spacing_table=table),
        "pos": pos,
        "neg": neg,
    }


def _run_cli_quickstart(root):
    """Full command sequence into `root`; returns paths of every file written."""
    ds = root / "ds"
    assert cli.main(["synth", "--out", str(ds), "--n-train", "4", "--n-test", "2",
                     "--seed", "7"]) == 0
    assert cli.main(["train-svm", "--dataset", str(ds),
                     "--out", str(root / "svm.json")]) == 0
    assert cli.main(["train-cascade", "--dataset", str(ds),
                     "--out", str(root / "cascade.json")]) == 0
    assert cli.main(["eval", "--dataset", str(ds),
                     "--svm-model", str(root / "svm.json"),
                     "--cascade-model", str(root / "cascade.json"),
                     "--stages", "all",
                     "--out", str(root / "report.csv"),
                     "--per-image", str(root / "per_image.jsonl")]) == 0
    manifest = json.loads((ds / "manifest.json").read_text())
    test_image = ds / "images" / manifest["test"][0]
    assert cli.main(["detect", "--model", str(root / "svm.json"),
                     "--out", str(root / "detections.jsonl"), str(test_image)]) == 0
    assert cli.main(["floors", "--image", str(test_image),
                     "--out", str(root / "floors.jsonl")]) == 0
    files = sorted(p for p in root.rglob("*") if p.is_file())
    return files


@pytest.fixture(scope="session")
def cli_artifacts(tmp_path_factory):
    """The same CLI quickstart run twice into separate directories."""
    a = tmp_path_factory.mktemp("cli_run_a")
    b = tmp_path_factory.mktemp("cli_run_b")
    files_a = _run_cli_quickstart(a)
    files_b = _run_cli_quickstart(b)
    return {"root_a": a, "root_b": b, "files_a": files_a, "files_b": files_b}
