import numpy as np
import pytest

from datm.decoder import GlobalParams, generate_synthetic, init_global_params
from datm.distributions import rng_stream
from datm.encoder import VARIANTS
from datm.evaluation import match_topics
from datm.trainer import (FORMAT_VERSION, CheckpointError, TrainConfig, Trainer, load_checkpoint,
                          read_checkpoint, save_checkpoint, snapshot_iterations, train_joint,
                          train_layerwise)


def toy_corpus(seed=0, V=30, K=4, N=60):
    g = init_global_params(V, [K], rng_stream(seed))
    g.phi[0] = rng_stream(seed + 1).dirichlet(np.full(V, 0.2), size=K).T
    g.c = [0.1]
    return generate_synthetic(g, N, rng_stream(seed + 2))[0]


def cfg(**kw):
    base = dict(widths=(5,), batch_size=20, iterations=30, burn_in=10, num_samples=4, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="vae")
    with pytest.raises(ValueError):
        TrainConfig(num_samples=0)
    with pytest.raises(ValueError):
        TrainConfig(iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        TrainConfig(prune_u=-1)
    TrainConfig(iterations=0, burn_in=0)


def test_snapshot_schedule_spans_window():
    its = snapshot_iterations(cfg(iterations=110, burn_in=10, num_samples=5))
    assert its == [29, 49, 69, 89, 109]
    assert len(snapshot_iterations(cfg(iterations=13, burn_in=10, num_samples=8))) == 3


def test_zero_iterations_return_initial_params():
    c = toy_corpus()
    res = train_joint(c, cfg(iterations=0, burn_in=0))
    fresh = Trainer(c, cfg(iterations=0, burn_in=0))
    assert len(res.samples) == 1
    for a, b in zip(res.samples[0].phi, fresh.g.phi):
        assert np.array_equal(a, b)
    assert res.trace == []


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_trains_and_keeps_invariants(variant):
    res = train_joint(toy_corpus(), cfg(variant=variant, widths=(5, 3)))
    assert len(res.samples) == 4
    for s in res.samples + [res.g]:
        s.check()
    assert np.all(np.isfinite(res.trace))


def test_samples_are_snapshots_not_aliases():
    res = train_joint(toy_corpus(), cfg())
    assert not np.array_equal(res.samples[0].phi[0], res.samples[-1].phi[0])
    assert res.samples[-1] is not res.g


def test_wai_and_whai_share_the_encoder_path_until_globals_move():
    c = toy_corpus()
    a = Trainer(c, cfg(variant="whai"))
    b = Trainer(c, cfg(variant="wai"))
    for (_, x), (_, y) in zip(a.enc.named_arrays(), b.enc.named_arrays()):
        assert np.array_equal(x, y)
    a.step()
    b.step()
    assert a.trace == b.trace
    for (_, x), (_, y) in zip(a.enc.named_arrays(), b.enc.named_arrays()):
        assert np.array_equal(x, y)
    assert not np.array_equal(a.g.phi[0], b.g.phi[0])


def test_non_finite_elbo_aborts():
    tr = Trainer(toy_corpus(), cfg())
    tr.g.r[:] = np.nan
    with pytest.raises(FloatingPointError):
        tr.step()


def test_kl_warmup_ramps_weight():
    tr = Trainer(toy_corpus(), cfg(kl_warmup=4))
    weights = []
    for _ in range(6):
        tr.step()
        weights.append(tr.kl_weight)
    assert weights == [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]


def test_smoothed_elbo_rises_over_training():
    c = toy_corpus(5, V=40, K=5, N=200)
    tr = Trainer(c, cfg(widths=(5,), batch_size=50, iterations=2000, burn_in=1000, step_a=0.05))
    tr.run()
    trace = np.array(tr.trace)
    smooth = np.convolve(trace, np.ones(100) / 100, mode="valid")
    best = np.maximum.accumulate(smooth)
    assert np.all(smooth >= best - 0.05 * np.abs(best))
    assert smooth[-1] > smooth[0]


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip(tmp_path):
    c = toy_corpus()
    tr = Trainer(c, cfg(variant="wai", widths=(5, 2)))
    tr.run()
    save_checkpoint(tmp_path / "a.ckpt", tr, {"extra/tag": np.arange(3.0)}, {"note": "x"})
    back = load_checkpoint(tmp_path / "a.ckpt", c)
    assert back.cfg == tr.cfg and back.iteration == tr.iteration
    for x, y in zip(tr.g.phi + [tr.g.r], back.g.phi + [back.g.r]):
        assert np.array_equal(x, y)
    for (_, x), (_, y) in zip(tr.enc.named_arrays(), back.enc.named_arrays()):
        assert np.array_equal(x, y)
    assert all(np.array_equal(a, b) for a, b in zip(back.state.M, tr.state.M))
    assert back.state.t == tr.state.t and back.state.M_top == tr.state.M_top
    assert len(back.samples) == len(tr.samples) == 4
    assert back.trace == tr.trace
    assert back.extra_meta == {"note": "x"}
    assert np.array_equal(back.extra_arrays["extra/tag"], np.arange(3.0))
    for r1, r2 in zip(tr.rngs, back.rngs):
        assert r1.bit_generator.state == r2.bit_generator.state
    save_checkpoint(tmp_path / "b.ckpt", back, {"extra/tag": np.arange(3.0)}, {"note": "x"})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


@pytest.mark.parametrize("variant", ["whai", "wai", "ghai"])
def test_resume_matches_uninterrupted_run(tmp_path, variant):
    c = toy_corpus()
    full = Trainer(c, cfg(variant=variant))
    full.run()
    save_checkpoint(tmp_path / "full.ckpt", full)

    part = Trainer(c, cfg(variant=variant))
    part.run(iterations=12)
    save_checkpoint(tmp_path / "part.ckpt", part)
    resumed = load_checkpoint(tmp_path / "part.ckpt", c)
    resumed.run(iterations=18)
    save_checkpoint(tmp_path / "resumed.ckpt", resumed)
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "resumed.ckpt").read_bytes()


def test_same_seed_gives_identical_checkpoints(tmp_path):
    c = toy_corpus()
    for name in ("a", "b"):
        tr = Trainer(c, cfg(widths=(5, 3)))
        tr.run()
        save_checkpoint(tmp_path / f"{name}.ckpt", tr)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    tr = Trainer(c, cfg(widths=(5, 3), seed=4))
    tr.run()
    save_checkpoint(tmp_path / "c.ckpt", tr)
    assert (tmp_path / "a.ckpt").read_bytes() != (tmp_path / "c.ckpt").read_bytes()


def _saved(tmp_path):
    tr = Trainer(toy_corpus(), cfg(iterations=3, burn_in=1, num_samples=1))
    tr.run()
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, tr)
    return p


def test_truncated_checkpoint_rejected(tmp_path):
    p = _saved(tmp_path)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_corrupt_byte_rejected(tmp_path):
    p = _saved(tmp_path)
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="corrupt"):
        read_checkpoint(p)


def test_version_mismatch_and_bad_magic(tmp_path):
    p = _saved(tmp_path)
    raw = bytearray(p.read_bytes())
    raw[4:8] = (FORMAT_VERSION + 1).to_bytes(4, "little")
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(p)
    p.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(CheckpointError):
        read_checkpoint(p)


def test_save_is_atomic_on_failure(tmp_path, monkeypatch):
    p = _saved(tmp_path)
    before = p.read_bytes()
    tr = Trainer(toy_corpus(), cfg(iterations=3, burn_in=1, num_samples=1))

    def boom(*a):
        raise OSError("disk full")

    monkeypatch.setattr("datm.trainer.os.replace", boom)
    with pytest.raises(OSError):
        save_checkpoint(p, tr)
    assert p.read_bytes() == before
    assert [f.name for f in tmp_path.iterdir()] == ["m.ckpt"]


# ---------------------------------------------------------------------------
# layer-wise growth


def lw_cfg(**kw):
    base = dict(K1_max=8, num_layers=2, stage_iterations=40, burn_in=20, batch_size=20,
                num_samples=2, seed=1, iterations=40)
    base.update(kw)
    return TrainConfig(**base)


def test_layerwise_without_pruning_keeps_maxima():
    res = train_layerwise(toy_corpus(), lw_cfg(prune_u=0.0))
    assert res.widths == [8, 8] and res.g.widths == [8, 8]
    assert [l.b1.shape[0] for l in res.enc.layers] == [8, 8]
    assert [s["max_width"] for s in res.stages] == [8, 8]


def test_layerwise_pruning_respects_threshold():
    res = train_layerwise(toy_corpus(), lw_cfg(prune_u=0.05, stage_iterations=200, burn_in=100, iterations=200))
    assert np.all(res.g.r >= 0.05)
    assert res.stages[1]["max_width"] == res.widths[0]
    assert res.enc.layers[1].W3.shape == (res.widths[1], res.widths[0])
    res.g.check()
    for s in res.samples:
        assert s.widths == res.g.widths


def test_layerwise_all_pruned_raises():
    with pytest.raises(RuntimeError):
        train_layerwise(toy_corpus(), lw_cfg(prune_u=1e6, num_layers=1))


def test_layerwise_recovers_planted_topics():
    V, K = 50, 5
    phi = np.full((V, K), 1e-3)
    for k in range(K):
        phi[10 * k:10 * (k + 1), k] = rng_stream(40 + k).dirichlet(np.ones(10))
    phi /= phi.sum(axis=0)
    true = GlobalParams([phi], np.full(K, 0.5), c=[0.02])
    corpus, _ = generate_synthetic(true, 600, rng_stream(50))
    res = train_layerwise(corpus, TrainConfig(K1_max=32, num_layers=1, stage_iterations=3000,
                                              burn_in=1500, batch_size=100, num_samples=5,
                                              step_a=0.1, seed=0))
    K1 = res.widths[0]
    assert K <= K1 <= 32
    cos = match_topics(res.g.phi[0], phi)
    assert np.sum(cos >= 0.8) >= K
