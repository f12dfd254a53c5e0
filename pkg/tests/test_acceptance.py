"""Exit criteria.  Each test carries a ``criterion`` marker; a pass/fail line per
criterion is printed in the terminal summary.

Criteria 7, 8 and 11 train on the default synthetic dataset and take several
minutes on one CPU core.
"""

import hashlib
import math
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from scfnet.augment import AugmentConfig, hemisphere_swap, random_resized_crop, time_out
from scfnet.checkpoint import load_checkpoint, load_extractor_only, save_checkpoint
from scfnet.core import ValidationError, load_dataset, save_dataset
from scfnet.metrics import confusion_matrix, micro_tpr, roc_curve
from scfnet.model import ModelConfig, end2end_forward, extract_features, init_params, module_from_params
from scfnet.synth import SynthConfig, generate, generate_pair
from scfnet.train import (
    TrainConfig,
    cross_entropy_loss,
    entropy,
    kl_div_loss,
    patient_kfold,
    soft_cross_entropy,
    train_model,
    transfer_head,
)

from conftest import make_dataset
from test_model import central_difference_check, warm
from test_metrics import pair_count_auc

SEED = 7
SYNTH = SynthConfig(seed=SEED)
# desk-scale extractor width
K = 16


def model_config(ds, **kw):
    return ModelConfig(n_channels=ds.n_channels, window_samples=ds.window_samples,
                       n_classes=ds.n_classes, feature_width=K, **kw)


def train_config(**kw):
    return TrainConfig(seed=SEED, k_folds=5, max_epochs=20, **kw)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pair():
    return generate_pair(SYNTH)


@pytest.fixture(scope="module")
def synthetic_run(pair, tmp_path_factory):
    ds16 = pair[0]
    out = tmp_path_factory.mktemp("run16")
    t0 = time.time()
    record = train_model(ds16, model_config(ds16), train_config(), out_dir=out)
    return record, out, time.time() - t0


@pytest.mark.criterion(1, "channel-permutation equivariance of the extractor")
def test_c01_permutation_equivariance():
    cfg = ModelConfig(n_channels=16, window_samples=512, n_classes=6, feature_width=K)
    gen = torch.Generator().manual_seed(101)
    worst = 0.0
    for trial in range(5):
        params = warm(init_params(cfg, 1000 + trial), seed=trial)
        x = torch.randn(10, 16, 512, generator=gen)  # 5 x 10 = 50 random inputs
        base = extract_features(x, params)
        for _ in range(2):  # 5 x 2 = 10 random permutations
            perm = torch.randperm(16, generator=gen)
            permuted = extract_features(x[:, perm], params)
            worst = max(worst, (permuted - base[:, perm]).abs().max().item())
    print(f"max |f(pi x)[i] - f(x)[pi(i)]| = {worst:.3g}")
    assert worst < 1e-7


@pytest.mark.criterion(2, "batched reshape path equals per-channel loop")
def test_c02_reshape_equals_loop():
    cfg = ModelConfig(n_channels=16, window_samples=512, n_classes=6, feature_width=K)
    params = warm(init_params(cfg, 3))
    x = torch.randn(4, 16, 512, generator=torch.Generator().manual_seed(2))
    batched = extract_features(x, params)
    model = module_from_params(params).eval()
    with torch.no_grad():
        loop = torch.empty_like(batched)
        for b in range(4):
            for c in range(16):
                loop[b, c] = model.extractor(x[b, c].reshape(1, 1, 512))[0]
    diff = (batched - loop).abs().max().item()
    print(f"max abs diff = {diff:.3g}")
    assert diff < 1e-5


@pytest.mark.criterion(3, "analytic gradients match central differences (k=4, T=64, C=2, B=2, float64)")
def test_c03_gradient_check():
    cfg = ModelConfig(n_channels=2, window_samples=64, n_classes=3, feature_width=4)
    model = module_from_params(init_params(cfg, 0), torch.float64)
    x = torch.randn(2, 2, 64, generator=torch.Generator().manual_seed(7), dtype=torch.float64)
    target = torch.tensor([[0.7, 0.2, 0.1], [0.0, 0.25, 0.75]], dtype=torch.float64)
    worst = central_difference_check(model, x, target, h=1e-5)
    print(f"max relative error = {worst:.3g}")
    assert worst < 1e-4


@pytest.mark.criterion(4, "KL / CE hand oracles and KL = CE - H identity")
def test_c04_loss_oracles():
    f64 = dict(dtype=torch.float64)
    kl = kl_div_loss(torch.tensor([[0.5, 0.5]], **f64), torch.log(torch.tensor([[0.25, 0.75]], **f64))).item()
    assert abs(kl - (0.5 * math.log(2) + 0.5 * math.log(2 / 3))) < 1e-6
    assert abs(kl - 0.143841) < 1e-6
    kl = kl_div_loss(torch.tensor([[1.0, 0.0]], **f64), torch.log(torch.tensor([[0.9, 0.1]], **f64))).item()
    assert abs(kl - 0.105361) < 1e-6
    p = torch.tensor([[0.1, 0.6, 0.3]], **f64)
    assert abs(kl_div_loss(p, torch.log(p)).item()) < 1e-9
    assert abs(cross_entropy_loss([0], torch.tensor([[10.0, -10.0]], **f64)).item() - 2.0611536e-9) < 1e-6
    assert abs(cross_entropy_loss([1], torch.zeros(1, 2, **f64)).item() - math.log(2)) < 1e-6
    assert abs(cross_entropy_loss([2], torch.zeros(1, 6, **f64)).item() - math.log(6)) < 1e-6
    rng = np.random.default_rng(4)
    for _ in range(100):
        n, c = int(rng.integers(1, 33)), int(rng.integers(2, 7))
        probs = rng.dirichlet(np.ones(c), n)
        probs[rng.random((n, c)) < 0.15] = 0
        probs[np.arange(n), rng.integers(0, c, n)] += 0.1
        probs /= probs.sum(axis=1, keepdims=True)
        logits = torch.from_numpy(rng.normal(0, 2, (n, c)))
        kl = kl_div_loss(probs, logits).item()
        assert kl >= 0
        assert abs(kl - (soft_cross_entropy(probs, logits).item() - entropy(probs).item())) < 1e-6


@pytest.mark.criterion(5, "trapezoid AUC equals pair-count AUC; micro TPR equals accuracy")
def test_c05_metric_oracles():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 501))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.random(n) if i % 2 else rng.integers(0, 10, n).astype(float)  # half with heavy ties
        worst = max(worst, abs(roc_curve(y, s).auc - pair_count_auc(y, s)))
        labels = rng.integers(0, 6, n)
        preds = rng.integers(0, 6, n)
        assert micro_tpr(confusion_matrix(labels, preds, 6)) == np.count_nonzero(labels == preds) / n
    print(f"max |trapezoid - pair count| = {worst:.3g}")
    assert worst < 1e-9


@pytest.mark.criterion(6, "patient-grouped folds are pure and exhaustive")
def test_c06_patient_purity():
    rng = np.random.default_rng(6)
    for trial in range(200):
        n_patients = int(rng.integers(5, 40))
        k = int(rng.integers(2, 6))
        ds = make_dataset(n_segments=int(rng.integers(n_patients, 5 * n_patients)), n_patients=n_patients,
                          window=1, n_classes=2, seed=trial)
        folds = patient_kfold(ds, k, trial)
        ids = [i for f in folds.segments for i in f]
        assert sorted(ids) == sorted(s.id for s in ds.segments) and len(ids) == len(set(ids))
        owner = {p: f for f, ps in enumerate(folds.patients) for p in ps}
        assert len(owner) == sum(len(ps) for ps in folds.patients)
        by_id = {s.id: s.patient_id for s in ds.segments}
        for f, seg_ids in enumerate(folds.segments):
            assert all(owner[by_id[i]] == f for i in seg_ids)


@pytest.mark.slow
@pytest.mark.criterion(7, "synthetic 16-channel SCFNet: every fold reaches validation micro TPR >= 0.95 within 20 epochs")
def test_c07_synthetic_end_to_end(synthetic_run):
    record, _, seconds = synthetic_run
    for f in record.folds:
        print(f"fold {f.fold}: micro TPR {f.val_micro_tpr:.4f} best epoch {f.best_epoch} / ran {f.epochs}")
    print(f"total epochs across folds: {record.total_epochs}; wall time {seconds:.0f}s")
    assert all(f.epochs <= 20 for f in record.folds)
    assert all(f.val_micro_tpr >= 0.95 for f in record.folds)


@pytest.mark.slow
@pytest.mark.criterion(8, "16->8 channel head-only transfer keeps extractor, >= 0.90 x scratch, end-to-end refuses")
def test_c08_transfer_protocol(pair, synthetic_run, tmp_path):
    ds16, ds8 = pair
    assert not set(ds16.patient_ids()) & set(ds8.patient_ids())
    _, run_dir, _ = synthetic_run
    source = run_dir / "fold0.ckpt"
    src_params = load_checkpoint(source)

    scratch = train_model(ds8, model_config(ds8), train_config())
    tuned = transfer_head(source, ds8, model_config(ds8), train_config(), out_dir=tmp_path / "tuned")

    # (a) extractor bytes untouched in every fold
    for params in tuned.params:
        for name, t in src_params.extractor().items():
            assert params.tensors[name].numpy().tobytes() == t.numpy().tobytes()
    for f in range(5):
        reloaded = load_checkpoint(tmp_path / "tuned" / f"fold{f}.ckpt")
        for name, t in src_params.extractor().items():
            assert reloaded.tensors[name].numpy().tobytes() == t.numpy().tobytes()

    # (b) head-only fine-tune stays within 10% of training from scratch
    print(f"scratch 8-ch micro TPR {scratch.micro_tpr:.4f} ({scratch.total_epochs} epochs); "
          f"head-only {tuned.micro_tpr:.4f} ({tuned.total_epochs} epochs)")
    assert tuned.micro_tpr >= 0.90 * scratch.micro_tpr

    # (c) the end-to-end extractor is tied to 16 channels
    e2e16 = model_config(ds16, arch="end2end")
    e2e_params = init_params(e2e16, SEED)
    save_checkpoint(e2e_params, tmp_path / "e2e.ckpt")
    with pytest.raises(ValidationError):
        transfer_head(tmp_path / "e2e.ckpt", ds8, model_config(ds8, arch="end2end"), train_config())
    x8, _ = ds8.arrays()
    with pytest.raises(ValidationError):
        end2end_forward(x8[:2], e2e_params)


@pytest.mark.criterion(9, "augmentation invariants over 1000 seeded trials each")
def test_c09_augmentation_invariants():
    rng = np.random.default_rng(9)
    T = 10000
    cfg = AugmentConfig(left_channels=list(range(8)), right_channels=list(range(8, 16)))
    lo, hi = AugmentConfig().rrc_range
    t_lo, t_hi = AugmentConfig().timeout_range
    assert (lo, hi, t_lo, t_hi) == (0.8, 1.0, 0, 2000)
    for trial in range(1000):
        x = rng.random((16, T)) + 1.0  # strictly positive so zeros come only from the mask
        assert np.array_equal(random_resized_crop(x, 1.0, 1.0, rng), x)
        assert random_resized_crop(x, lo, hi, rng).shape == x.shape
        out = time_out(x, t_lo, t_hi, rng)
        zeros = out == 0
        n = int(zeros[0].sum())
        assert t_lo <= n <= t_hi
        assert (zeros == zeros[0]).all()
        if n:
            idx = np.flatnonzero(zeros[0])
            assert idx[-1] - idx[0] == n - 1
        assert np.array_equal(out[~zeros], x[~zeros])
        swapped = hemisphere_swap(x, cfg, rng)
        assert sorted(r.tobytes() for r in swapped) == sorted(r.tobytes() for r in x)


@pytest.mark.criterion(10, "bit-exact dataset and checkpoint persistence; extractor-only reload")
def test_c10_persistence(tmp_path):
    ds = generate(replace(SYNTH, n_patients=4, segments_per_patient=5))
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert [s.data.tobytes() for s in ds.segments] == [s.data.tobytes() for s in back.segments]
    assert [s.votes for s in ds.segments] == [s.votes for s in back.segments]
    assert (ds.channel_names, ds.class_names, ds.window_samples) == (back.channel_names, back.class_names,
                                                                     back.window_samples)

    cfg = model_config(ds)
    params = warm(init_params(cfg, 10))
    save_checkpoint(params, tmp_path / "m.ckpt")
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.config == cfg
    assert all(loaded.tensors[n].numpy().tobytes() == t.numpy().tobytes() for n, t in params.tensors.items())

    moved = load_extractor_only(tmp_path / "m.ckpt", replace(cfg, n_channels=8), seed=1)
    assert all(moved.tensors[n].numpy().tobytes() == t.numpy().tobytes() for n, t in params.extractor().items())
    assert moved.tensors["classifier.hidden.weight"].shape[1] == 8 * 2 * K


@pytest.mark.slow
@pytest.mark.criterion(11, "repeat of criterion 7 gives identical run record and checkpoints")
def test_c11_determinism(pair, synthetic_run, tmp_path):
    first, first_dir, _ = synthetic_run
    ds16 = pair[0]
    second = train_model(ds16, model_config(ds16), train_config(), out_dir=tmp_path)
    a, b = first.to_json(), second.to_json()
    for rec in (a, b):
        for f in rec["folds"]:
            f.pop("checkpoint")
    assert a == b
    for f in range(5):
        assert digest(first_dir / f"fold{f}.ckpt") == digest(tmp_path / f"fold{f}.ckpt")
