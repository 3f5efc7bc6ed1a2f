"""Network, training-loop, and checkpoint behaviour tests."""

from __future__ import annotations

import numpy as np
import pytest

from pointreg import PointSet, center_align, chamfer_distance, synth_blob
from pointreg.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from pointreg.errors import (
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    DimensionError,
    TrainingDivergedError,
    UnitMismatchError,
)
from pointreg.fptnet import (
    FptArchitecture,
    FptParameters,
    extract_features,
    fpt_forward,
    global_feature,
    layer_manifest,
    registration_shift,
)
from pointreg.pipeline import AugmentConfig, augment_pair, normalize_to_unit_box
from pointreg.training import TrainConfig, pair_loss, train


def _pair(rng, n=24, m=20):
    src = PointSet(rng.normal(size=(n, 3)), "source", "normalized")
    tgt = PointSet(rng.normal(size=(m, 3)), "target", "normalized")
    return src, tgt


# ---------------------------------------------------------------------------
# architecture and parameters


def test_architecture_rejects_bad_widths():
    with pytest.raises(DimensionError):
        FptArchitecture(embed_a=(8,))
    with pytest.raises(DimensionError):
        FptArchitecture(transformer=(16, 16, 16, 16, 16, 4))
    with pytest.raises(DimensionError):
        FptArchitecture(tnet_fc=(0, 8))


def test_parameter_manifest_is_complete(tiny_arch):
    params = FptParameters.fresh(tiny_arch, seed=0)
    names = {name for name, _, _ in layer_manifest(tiny_arch)}
    for name in names:
        assert name + ".weight" in params.tensors
        assert name + ".bias" in params.tensors
    assert len(params.tensors) == 2 * len(names)


def test_fresh_is_deterministic_per_seed(tiny_arch):
    a = FptParameters.fresh(tiny_arch, seed=7, identity_init=False)
    b = FptParameters.fresh(tiny_arch, seed=7, identity_init=False)
    c = FptParameters.fresh(tiny_arch, seed=8, identity_init=False)
    for name in a.tensors:
        np.testing.assert_array_equal(a.tensors[name].data, b.tensors[name].data)
    assert any(
        not np.array_equal(a.tensors[n].data, c.tensors[n].data) for n in a.tensors
    )


def test_copy_is_deep(tiny_arch):
    params = FptParameters.fresh(tiny_arch, seed=0)
    dup = params.copy()
    dup.tensors["embed_a.0.weight"].data[0, 0] += 1.0
    assert params.tensors["embed_a.0.weight"].data[0, 0] != dup.tensors["embed_a.0.weight"].data[0, 0]


# ---------------------------------------------------------------------------
# forward behaviour


def test_identity_init_reproduces_center_alignment(tiny_arch, rng):
    params = FptParameters.fresh(tiny_arch, seed=0)
    src, tgt = _pair(rng)
    _, moved = fpt_forward(src, tgt, params)
    np.testing.assert_allclose(moved.points, center_align(src, tgt).points, atol=1e-12)


def test_registration_shift_matches_centroid_difference(rng):
    src, tgt = _pair(rng)
    shift = registration_shift(src.points, tgt.points)
    np.testing.assert_allclose(shift, tgt.centroid - src.centroid, atol=1e-13)


def test_registration_shift_is_bitwise_permutation_stable(rng):
    pts = rng.normal(size=(50, 3))
    tgt = rng.normal(size=(40, 3))
    base = registration_shift(pts, tgt)
    for _ in range(20):
        shuffled = registration_shift(pts[rng.permutation(50)], tgt[rng.permutation(40)])
        np.testing.assert_array_equal(base, shuffled)


def test_features_are_bitwise_permutation_invariant(tiny_arch, rng):
    params = FptParameters.fresh(tiny_arch, seed=3, identity_init=False)
    cloud = PointSet(rng.normal(size=(64, 3)), "source", "normalized")
    base = extract_features(cloud, params)
    for _ in range(50):
        perm = rng.permutation(64)
        shuffled = PointSet(cloud.points[perm], "source", "normalized")
        np.testing.assert_array_equal(extract_features(shuffled, params), base)


def test_global_feature_concatenates_both_clouds(tiny_arch, rng):
    params = FptParameters.fresh(tiny_arch, seed=3, identity_init=False)
    src, tgt = _pair(rng)
    feat = global_feature(src, tgt, params)
    assert feat.shape == (2 * tiny_arch.feature_dim,)
    np.testing.assert_array_equal(feat[: tiny_arch.feature_dim], extract_features(src, params))
    np.testing.assert_array_equal(feat[tiny_arch.feature_dim :], extract_features(tgt, params))


def test_forward_handles_single_point_and_duplicates(tiny_arch, rng):
    params = FptParameters.fresh(tiny_arch, seed=1, identity_init=False)
    single = PointSet(rng.normal(size=(1, 3)), "source", "normalized")
    tgt = PointSet(rng.normal(size=(5, 3)), "target", "normalized")
    disp, moved = fpt_forward(single, tgt, params)
    assert disp.shape == (1, 3) and len(moved) == 1

    dup_pts = np.repeat(rng.normal(size=(1, 3)), 4, axis=0)
    dup = PointSet(dup_pts, "source", "normalized")
    disp, _ = fpt_forward(dup, tgt, params)
    # Identical inputs get identical displacements.
    assert np.ptp(disp, axis=0).max() == 0.0


def test_forward_requires_normalized_units(tiny_arch, rng):
    params = FptParameters.fresh(tiny_arch, seed=0)
    src = PointSet(rng.normal(size=(4, 3)), "source", "mm")
    tgt = PointSet(rng.normal(size=(4, 3)), "target", "normalized")
    with pytest.raises(UnitMismatchError):
        fpt_forward(src, tgt, params)
    with pytest.raises(UnitMismatchError):
        extract_features(src, params)


def test_forward_is_deterministic(tiny_arch, rng):
    params = FptParameters.fresh(tiny_arch, seed=5, identity_init=False)
    src, tgt = _pair(rng)
    a, _ = fpt_forward(src, tgt, params)
    b, _ = fpt_forward(src, tgt, params)
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# training loop


def _blob_corpus(k=6, n=48):
    return [synth_blob(n, seed=i, amplitude=0.25, order=3) for i in range(k)]


def test_first_recorded_loss_is_initial_parameters_loss(tiny_arch):
    corpus = _blob_corpus()
    cfg = TrainConfig(
        minibatch_size=2, learning_rate=1e-3, epochs=1, max_steps=3,
        points_per_set=48, rng_seed=0,
        augment=AugmentConfig(rotation_max_deg=10.0, displacement_max=0.1, tps_sigma=0.05),
    )
    res = train(corpus, cfg, arch=tiny_arch)
    steps = [s for s, _ in res.step_losses]
    assert steps == [0, 1, 2]

    # Re-running from the same fresh parameters reproduces the first loss.
    res2 = train(corpus, cfg, arch=tiny_arch)
    assert res.step_losses[0][1] == res2.step_losses[0][1]


def test_training_is_deterministic_per_seed(tiny_arch):
    corpus = _blob_corpus()
    cfg = TrainConfig(
        minibatch_size=2, learning_rate=1e-3, epochs=1, max_steps=4,
        points_per_set=48, rng_seed=3,
        augment=AugmentConfig(rotation_max_deg=10.0, displacement_max=0.1, tps_sigma=0.05),
    )
    a = train(corpus, cfg, arch=tiny_arch)
    b = train(corpus, cfg, arch=tiny_arch)
    assert a.step_losses == b.step_losses
    for name in a.params.tensors:
        np.testing.assert_array_equal(a.params.tensors[name].data, b.params.tensors[name].data)


def test_zero_learning_rate_leaves_parameters_unchanged(tiny_arch):
    corpus = _blob_corpus()
    init = FptParameters.fresh(tiny_arch, seed=2, identity_init=False)
    before = {n: t.data.copy() for n, t in init.tensors.items()}
    cfg = TrainConfig(
        minibatch_size=2, learning_rate=0.0, epochs=1, max_steps=3,
        points_per_set=48, rng_seed=0,
        augment=AugmentConfig(rotation_max_deg=5.0, displacement_max=0.1, tps_sigma=0.05),
    )
    res = train(corpus, cfg, init=init)
    for name, arr in before.items():
        np.testing.assert_array_equal(res.params.tensors[name].data, arr)


def test_training_fits_identical_pairs_from_random_init(tiny_arch):
    # Sanity fit: with augmentation off a single cloud pairs with itself,
    # so a randomly initialised network must learn to emit (near-)zero
    # displacements, collapsing the loss to a small fraction of its
    # starting value within 200 steps.
    raw = synth_blob(48, seed=9, amplitude=0.3, order=3)
    norm, _ = normalize_to_unit_box(raw)
    cfg = TrainConfig(
        minibatch_size=1, learning_rate=1e-3, epochs=200, max_steps=200,
        points_per_set=48, rng_seed=0, augment=None,
    )
    init = FptParameters.fresh(tiny_arch, seed=3, identity_init=False)
    res = train([norm], cfg, init=init)
    losses = [l for _, l in res.step_losses]
    assert losses[0] > 0.0
    assert losses[-1] < 0.10 * losses[0]


def test_training_descends_on_fixed_pair(tiny_arch, rng):
    # A single repeated misaligned pair must be fittable: loss falls well
    # below the centred starting value (identity init starts the network
    # at the centroid-matched baseline, so any drop is genuine learning).
    raw = synth_blob(48, seed=9, amplitude=0.3, order=3)
    norm, _ = normalize_to_unit_box(raw)
    tgt, src, _ = augment_pair(
        norm, AugmentConfig(rotation_max_deg=15.0, displacement_max=0.1, tps_sigma=0.08), seed=5
    )
    cfg = TrainConfig(
        minibatch_size=1, learning_rate=1e-3, epochs=200, max_steps=200,
        points_per_set=48, rng_seed=0, augment=None,
    )
    res = train([(src, tgt)], cfg, arch=tiny_arch)
    losses = [l for _, l in res.step_losses]
    assert losses[-1] < 0.6 * losses[0]


def test_pair_loss_zero_for_identical_clouds(tiny_arch, rng):
    params = FptParameters.fresh(tiny_arch, seed=0)
    cloud = PointSet(rng.normal(size=(30, 3)), "source", "normalized")
    tgt = PointSet(cloud.points, "target", "normalized")
    assert float(pair_loss(params, cloud, tgt).data) == 0.0


def test_train_rejects_empty_corpus(tiny_arch):
    with pytest.raises(ValueError):
        train([], TrainConfig(max_steps=1), arch=tiny_arch)


def test_train_rejects_mixed_unit_pairs(tiny_arch, rng):
    src = PointSet(rng.normal(size=(8, 3)), "source", "normalized")
    tgt = PointSet(rng.normal(size=(8, 3)), "target", "mm")
    cfg = TrainConfig(minibatch_size=1, max_steps=1, points_per_set=8, augment=None)
    with pytest.raises(UnitMismatchError):
        train([(src, tgt)], cfg, arch=tiny_arch)


def test_diverged_training_reports_last_good_parameters(tiny_arch):
    corpus = _blob_corpus(k=2)
    # A learning rate near the float64 ceiling makes squared distances
    # overflow to inf on the step after the first update.
    cfg = TrainConfig(
        minibatch_size=1, learning_rate=1e155, epochs=50, max_steps=50,
        points_per_set=48, rng_seed=0,
        augment=AugmentConfig(rotation_max_deg=10.0, displacement_max=0.1, tps_sigma=0.05),
    )
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError) as info:
            train(corpus, cfg, arch=tiny_arch)
    assert info.value.last_good is not None


def test_mm_pairs_are_normalized_through_source_frame(tiny_arch, rng):
    # A pair far from the origin in mm must not confuse training: the
    # first loss equals that of the same pair pre-normalized by hand.
    base = rng.normal(size=(32, 3)) * 20.0 + 100.0
    src_mm = PointSet(base, "source", "mm")
    tgt_mm = PointSet(base @ np.eye(3) + 5.0, "target", "mm")
    cfg = TrainConfig(minibatch_size=1, learning_rate=0.0, max_steps=1,
                      points_per_set=32, rng_seed=0, augment=None)
    res = train([(src_mm, tgt_mm)], cfg, arch=tiny_arch)

    norm_src, record = normalize_to_unit_box(src_mm)
    norm_tgt = PointSet(record.normalize(tgt_mm.points), "target", "normalized")
    params = FptParameters.fresh(tiny_arch, seed=0)
    expected = float(pair_loss(params, norm_src, norm_tgt).data)
    assert res.step_losses[0][1] == expected


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_is_bit_exact(tiny_arch, tmp_path):
    params = FptParameters.fresh(tiny_arch, seed=11, identity_init=False)
    path = tmp_path / "model.fpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.arch == params.arch
    for name in params.tensors:
        np.testing.assert_array_equal(loaded.tensors[name].data, params.tensors[name].data)


def test_checkpoint_corruption_detected(tiny_arch, tmp_path):
    params = FptParameters.fresh(tiny_arch, seed=1)
    path = tmp_path / "model.fpt"
    save_checkpoint(params, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_checkpoint_truncation_detected(tiny_arch, tmp_path):
    params = FptParameters.fresh(tiny_arch, seed=1)
    path = tmp_path / "model.fpt"
    save_checkpoint(params, path)
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_checkpoint_bad_magic_detected(tmp_path):
    path = tmp_path / "not_a_model.fpt"
    path.write_bytes(b"NOTMAGIC" + bytes(100))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_checkpoint_version_mismatch_is_distinct_error(tiny_arch, tmp_path):
    params = FptParameters.fresh(tiny_arch, seed=1)
    path = tmp_path / "model.fpt"
    save_checkpoint(params, path)
    blob = bytearray(path.read_bytes())
    # Bump the version field (bytes 8..12) and re-seal the checksum.
    import hashlib
    import struct

    struct.pack_into("<I", blob, len(MAGIC), FORMAT_VERSION + 1)
    body = bytes(blob[:-32])
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_architecture_mismatch_is_distinct_error(tiny_arch, tmp_path):
    params = FptParameters.fresh(tiny_arch, seed=1)
    path = tmp_path / "model.fpt"
    save_checkpoint(params, path)
    other = FptArchitecture(
        embed_a=(4, 4), embed_b=(4, 8, 16), tnet_mlp=(4, 8, 16),
        tnet_fc=(8, 4), transformer=(16, 8, 4, 4, 4, 3),
    )
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(path, arch=other)


def test_checkpoint_load_then_train_reproduces_inline_continuation(tiny_arch, tmp_path):
    corpus = _blob_corpus(k=3)
    cfg = TrainConfig(
        minibatch_size=1, learning_rate=1e-3, epochs=2, max_steps=2,
        points_per_set=48, rng_seed=4,
        augment=AugmentConfig(rotation_max_deg=10.0, displacement_max=0.1, tps_sigma=0.05),
    )
    first = train(corpus, cfg, arch=tiny_arch)
    path = tmp_path / "stage.fpt"
    save_checkpoint(first.params, path)

    cfg2 = TrainConfig(
        minibatch_size=1, learning_rate=1e-3, epochs=2, max_steps=2,
        points_per_set=48, rng_seed=9,
        augment=AugmentConfig(rotation_max_deg=10.0, displacement_max=0.1, tps_sigma=0.05),
    )
    direct = train(corpus, cfg2, init=first.params)
    resumed = train(corpus, cfg2, init=load_checkpoint(path))
    assert direct.step_losses == resumed.step_losses
    for name in direct.params.tensors:
        np.testing.assert_array_equal(
            direct.params.tensors[name].data, resumed.params.tensors[name].data
        )
