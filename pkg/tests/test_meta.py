import numpy as np
import pytest

from noir import meta
from noir.inr import ModulatedSiren, SignalSample, SirenConfig, fit_latent, render_grid
from noir.meta import MetaConfig, TrainLog, TrainingDiverged, evaluate_reconstruction, signal_metrics, train_meta
from noir.tasks import TaskSpec, generate

TINY = SirenConfig(n_hidden_layers=2, hidden_size=16, latent_dim=4, hyper_hidden_size=8)


def tiny_signals(n=6, seed=0):
    ds = generate(TaskSpec(resolution=12, n_samples=n, seed=seed, splits=(1.0, 0.0, 0.0)))
    return ds.signals("input", "train")


def test_constant_signal_validation_improves():
    sig = [SignalSample.from_grid(np.full((10, 10), 0.8))]
    cfg = MetaConfig(inner_lr=1e-2, outer_lr=1e-3, max_epochs=30, patience=30, points_per_iter=100)
    _, tlog = train_meta(sig, sig, cfg, TINY)
    assert tlog.best_val_loss < tlog.initial_val_loss


def test_patience_zero_stops_after_first_worse_epoch(monkeypatch):
    vals = iter([1.0, 0.5, 0.7, 0.2, 0.1])
    monkeypatch.setattr(meta, "validation_loss", lambda *a: next(vals))
    cfg = MetaConfig(max_epochs=10, patience=0, points_per_iter=20)
    _, tlog = train_meta(tiny_signals(2), tiny_signals(1), cfg, TINY)
    assert tlog.val_loss == [0.5, 0.7]
    assert tlog.stop_reason == "early_stop"


def test_returns_best_epoch_parameters(monkeypatch):
    snapshots = []
    vals = iter([9.0, 3.0, 1.0, 2.0, 4.0, 5.0])

    def fake(model, *a):
        snapshots.append(model.copy())
        return next(vals)

    monkeypatch.setattr(meta, "validation_loss", fake)
    cfg = MetaConfig(outer_lr=1e-3, max_epochs=5, patience=5, points_per_iter=30)
    best, tlog = train_meta(tiny_signals(3), tiny_signals(1), cfg, TINY)
    assert tlog.best_epoch == 1 and tlog.stop_reason == "max_epochs"
    # snapshot 0 is the initial model; epoch e is snapshot e + 1
    for a, b in zip(best.arrays(), snapshots[2].arrays()):
        assert a.tobytes() == b.tobytes()
    assert any(a.tobytes() != b.tobytes() for a, b in zip(best.arrays(), snapshots[-1].arrays()))


def test_zero_outer_lr_leaves_parameters_untouched():
    model = ModulatedSiren.create(TINY, seed=2)
    before = [a.copy() for a in model.arrays()]
    cfg = MetaConfig(outer_lr=0.0, max_epochs=3, patience=3, points_per_iter=40)
    best, _ = train_meta(tiny_signals(3), [], cfg, TINY, model=model)
    for a, b, c in zip(before, model.arrays(), best.arrays()):
        assert a.tobytes() == b.tobytes() == c.tobytes()


def test_inner_steps_do_not_touch_shared_parameters(monkeypatch):
    seen = []
    original = meta.outer_gradients

    def spy(model, z, coords, target):
        seen.append([a.copy() for a in model.arrays()])
        return original(model, z, coords, target)

    monkeypatch.setattr(meta, "outer_gradients", spy)
    model = ModulatedSiren.create(TINY)
    before = [a.copy() for a in model.arrays()]
    train_meta(tiny_signals(1), [], MetaConfig(outer_lr=1e-3, max_epochs=1, patience=1, points_per_iter=30),
               TINY, model=model)
    # at the first outer gradient, K inner steps have run but nothing changed
    for a, b in zip(before, seen[0]):
        assert a.tobytes() == b.tobytes()
    assert any(a.tobytes() != b.tobytes() for a, b in zip(before, model.arrays()))


def test_training_is_deterministic():
    cfg = MetaConfig(inner_lr=1.0, outer_lr=1e-3, max_epochs=2, patience=2, points_per_iter=40)
    runs = [train_meta(tiny_signals(4), tiny_signals(2, seed=9), cfg, TINY) for _ in range(2)]
    assert runs[0][1].val_loss == runs[1][1].val_loss
    assert runs[0][1].train_loss == runs[1][1].train_loss
    for a, b in zip(runs[0][0].arrays(), runs[1][0].arrays()):
        assert a.tobytes() == b.tobytes()


def test_divergence_is_reported():
    bad = SignalSample.from_grid(np.full((6, 6), np.nan))
    cfg = MetaConfig(outer_lr=1e-3, max_epochs=2, patience=2, points_per_iter=40)
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train_meta([bad], [], cfg, TINY)


def test_trainlog_csv(tmp_path):
    tlog = TrainLog()
    tlog.record(0.5, 0.25)
    tlog.record(0.125, 0.5)
    tlog.to_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text() == "epoch,train_loss,val_loss\n0,0.5,0.25\n1,0.125,0.5\n"
    assert tlog.best_epoch == 0 and tlog.epochs_since_best() == 1


def test_metrics_of_identical_images():
    img = np.random.default_rng(0).uniform(size=(16, 16, 1))
    m = signal_metrics(img, img, categorical=False)
    assert m["psnr"] == 99.0 and m["ssim"] == 1.0
    mask = np.eye(2)[np.random.default_rng(1).integers(0, 2, (16, 16))]
    assert signal_metrics(mask, mask, categorical=True) == {"dsc": 1.0, "iou": 1.0}


def test_reconstruction_of_self_rendered_mask_is_perfect():
    cfg = SirenConfig(n_hidden_layers=2, hidden_size=16, latent_dim=4, hyper_hidden_size=8, out_dim=2,
                      final_activation="softmax")
    model = ModulatedSiren.create(cfg, seed=0)
    # fitting from z=0 with zero steps reproduces the z=0 rendering exactly
    target = render_grid(model, np.zeros(4), (10, 10))
    onehot = np.eye(2)[target.argmax(-1)]
    rows = evaluate_reconstruction(model, [SignalSample.from_grid(onehot, channels=2)] * 3, steps=0)
    assert len(rows) == 3
    assert all(r["dsc"] == 1.0 and r["iou"] == 1.0 for r in rows)


def test_evaluate_reconstruction_seeds_per_signal():
    model = ModulatedSiren.create(TINY)
    sigs = tiny_signals(2)
    rows = evaluate_reconstruction(model, sigs, steps=3, lr=1.0, n_points=50, seed=5)
    z = fit_latent(sigs[1], model, 3, 1.0, 50, seed=6)
    pred = render_grid(model, z, sigs[1].native_resolution)
    assert rows[1]["psnr"] == signal_metrics(pred, sigs[1].image(), False)["psnr"]
