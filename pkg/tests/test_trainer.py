import copy
import dataclasses
import json
import logging

import numpy as np
import pytest

from dcrl import clusterhead as ch
from dcrl import losses
from dcrl.config import ABLATIONS, TrainConfig, schedule
from dcrl.errors import ConfigError
from dcrl.trainer import DCRL, HISTORY_COLUMNS, fit
from oracles import loop_manifold_centers


def _arrays(runner):
    return [p.data.copy() for p in runner.model.params] + [runner.centers.copy()]


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


@pytest.fixture
def runner(tiny_blobs, tiny_config):
    return DCRL.initialise(tiny_blobs, tiny_config)


# -- schedule and config -----------------------------------------------------

@pytest.mark.parametrize("epoch,expected", [(0, (0.1, 0.0)), (75, (0.05, 0.5)), (150, (0.0, 1.0)), (299, (0.0, 1.0))])
def test_schedule_defaults(epoch, expected):
    assert schedule(epoch, TrainConfig()) == pytest.approx(expected, abs=1e-15)


def test_schedule_is_monotone_and_continuous():
    cfg = TrainConfig(epochs=40, ramp_end_epoch=20)
    vals = np.array([schedule(e, cfg) for e in range(40)])
    assert np.all(np.diff(vals[:, 0]) <= 0) and np.all(np.diff(vals[:, 1]) >= 0)
    assert np.max(np.abs(np.diff(vals, axis=0))) <= 0.05 + 1e-12


def test_schedule_without_continuation():
    cfg = TrainConfig().with_ablation("no-continuation")
    assert schedule(0, cfg) == schedule(200, cfg) == (0.1, 1.0)
    with pytest.raises(ValueError):
        schedule(-1, cfg)


@pytest.mark.parametrize("bad", [{"epochs": 0}, {"lr": -1.0}, {"n_clusters": 1}, {"ramp_end_epoch": 400},
                                 {"assign_by": "z"}, {"hidden": (4, 0)}, {"alpha_start": -0.1}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_config_round_trip_and_strictness():
    cfg = TrainConfig(n_clusters=3, hidden=(5, 6), kappa=2.5)
    assert TrainConfig.from_dict(json.loads(cfg.to_json())) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"version": 1, "epochz": 3})
    with pytest.raises(ConfigError, match="version"):
        TrainConfig.from_dict({"version": 7})
    with pytest.raises(ConfigError):
        cfg.with_ablation("nope")
    for name in ABLATIONS:
        cfg.with_ablation(name)


# -- snapshot ----------------------------------------------------------------

def test_epoch_refresh_is_pure(runner, tiny_blobs):
    before = _arrays(runner)
    a = runner.epoch_refresh(tiny_blobs.x)
    b = runner.epoch_refresh(tiny_blobs.x)
    assert _same(before, _arrays(runner))
    for f in ("z", "same", "dx"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert np.array_equal(a.state.p, b.state.p) and np.array_equal(a.graph.indices, b.graph.indices)


def test_snapshot_centres_match_loop_oracle(runner, tiny_blobs):
    snap = runner.epoch_refresh(tiny_blobs.x)
    s = snap.state.s
    for got, x in ((snap.vz, snap.z), (snap.vx, tiny_blobs.x)):
        ref = loop_manifold_centers(x.tolist(), s.tolist(), 3)
        for c in range(3):
            if ref[c] is None:
                assert not got.valid[c]
            else:
                assert np.allclose(got.centers[c], ref[c], atol=1e-12)
    assert np.array_equal(s, np.argmax(snap.state.p, axis=1))
    assert snap.graph.indices.shape == (len(tiny_blobs), 5)


# -- gradient routing ----------------------------------------------------------

def _phase1(r, x, alpha, snap, n=16):
    idx = np.arange(n)
    return r.phase1_step(x[idx], snap.state.p[idx], alpha, snap, sb=snap.state.s[idx])


def test_autoencoder_loss_alone_leaves_centres(runner, tiny_blobs):
    r = copy.deepcopy(runner)
    r.config = dataclasses.replace(r.config, use_rank=False)
    snap = r.epoch_refresh(tiny_blobs.x)
    mu = r.centers.copy()
    _phase1(r, tiny_blobs.x, 0.0, snap)
    assert np.array_equal(r.centers, mu)


def test_rank_loss_moves_only_centres(runner, tiny_blobs):
    on, off = copy.deepcopy(runner), copy.deepcopy(runner)
    off.config = dataclasses.replace(off.config, use_rank=False)
    snap = on.epoch_refresh(tiny_blobs.x)
    _phase1(on, tiny_blobs.x, 0.1, snap)
    _phase1(off, tiny_blobs.x, 0.1, snap)
    assert _same([p.data for p in on.model.params], [p.data for p in off.model.params])
    assert not np.array_equal(on.centers, off.centers)


def test_phase1_total_recomposes(runner, tiny_blobs):
    snap = runner.epoch_refresh(tiny_blobs.x)
    x = tiny_blobs.x[:16]
    p = snap.state.p[:16]
    z = runner.model.encode(x)
    ae = float(np.mean((runner.model.decode(z) - x) ** 2))
    kl = ch.kl_cluster_loss(p, ch.soft_assign(z, runner.centers))
    rank = losses.rank_loss(runner.centers, snap.vx, runner.config.kappa)
    parts = _phase1(runner, tiny_blobs.x, 0.07, snap)
    assert parts["l1"] == pytest.approx(ae + 0.07 * kl + rank, abs=1e-10)
    assert parts["l_ae"] == pytest.approx(ae, abs=1e-12)


def test_phase2_never_touches_decoder(runner, tiny_blobs):
    snap = runner.epoch_refresh(tiny_blobs.x)
    dec = [p.data.copy() for p in runner.model.decoder_params]
    enc = [p.data.copy() for p in runner.model.encoder_params]
    runner.phase2_step(tiny_blobs.x, 1.0, snap)
    assert _same(dec, [p.data for p in runner.model.decoder_params])
    assert not _same(enc, [p.data for p in runner.model.encoder_params])


def test_align_alone_moves_only_centres(runner, tiny_blobs):
    runner.config = dataclasses.replace(runner.config, use_lis=False)
    snap = runner.epoch_refresh(tiny_blobs.x)
    net = [p.data.copy() for p in runner.model.params]
    parts = runner.phase2_step(tiny_blobs.x, 1.0, snap)
    assert _same(net, [p.data for p in runner.model.params])
    assert parts["l2"] == parts["l_align"] > 0


def test_phase2_is_a_no_op_at_rest(runner, tiny_blobs):
    snap = runner.epoch_refresh(tiny_blobs.x)
    runner.centers[:] = snap.vz.centers
    before = _arrays(runner)
    parts = runner.phase2_step(tiny_blobs.x, 0.0, snap)
    assert parts["l2"] == 0.0
    assert _same(before, _arrays(runner))


def test_phase2_decreases_l2_on_frozen_snapshot(runner, tiny_blobs):
    snap = runner.epoch_refresh(tiny_blobs.x)
    runner.config = dataclasses.replace(runner.config, lr=1e-3)
    seen = [runner.phase2_step(tiny_blobs.x, 1.0, snap)["l2"] for _ in range(6)]
    assert all(b < a for a, b in zip(seen, seen[1:]))


# -- full runs ---------------------------------------------------------------

def test_fit_records_history(tiny_blobs, tiny_config):
    r = fit(tiny_blobs, tiny_config)
    assert len(r.history) == tiny_config.epochs
    assert r.history.columns == HISTORY_COLUMNS + ("acc", "nmi")
    assert r.history.column("alpha")[0] == pytest.approx(0.1)
    assert r.history.column("alpha")[-1] == 0.0
    assert r.history.column("beta")[-1] == 1.0
    assert np.all(np.isfinite(r.history.as_array()))


def test_fit_is_deterministic(tiny_blobs, tiny_config):
    a, b = fit(tiny_blobs, tiny_config), fit(tiny_blobs, tiny_config)
    assert a.history.to_csv() == b.history.to_csv()
    assert _same(_arrays(a), _arrays(b))
    c = fit(tiny_blobs, dataclasses.replace(tiny_config, seed=1))
    assert not _same(_arrays(a), _arrays(c))


def test_empty_cluster_centre_is_frozen(runner, tiny_blobs, caplog):
    runner.centers[2] = 1e3  # no point is assigned here
    far = runner.centers[2].copy()
    with caplog.at_level(logging.INFO, logger="dcrl.trainer"):
        runner.fit(tiny_blobs, epochs=2)
    assert np.array_equal(runner.centers[2], far)
    assert "empty clusters [2]" in caplog.text


def test_early_stop(tiny_blobs, tiny_config):
    cfg = dataclasses.replace(tiny_config, epochs=40, ramp_end_epoch=4, early_stop=True, early_stop_patience=2,
                              early_stop_tol=0.5)
    r = fit(tiny_blobs, cfg)
    assert len(r.history) < 40


def test_joint_mode_runs(tiny_blobs, tiny_config):
    r = fit(tiny_blobs, tiny_config.with_ablation("no-alternating"))
    assert len(r.history) == tiny_config.epochs
    assert np.all(np.isfinite(r.history.as_array()))


def test_sep_baseline_runs(tiny_blobs, tiny_config):
    r = fit(tiny_blobs, tiny_config.with_ablation("sep-baseline"))
    assert np.all(r.history.column("l_rank") == 0.0)
