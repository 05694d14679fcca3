import json

import numpy as np
import pytest

from wrvi import config as cfgmod
from wrvi.checkpoint import CheckpointError, blob_path, load_checkpoint, read_manifest, save_checkpoint, spec_hash
from wrvi.experiment import build_problem, init_state
from wrvi.train import solver_free_objective, train_loop


def desk(iterations=6):
    cfg = cfgmod.bundled("linear_poisson_desk")
    cfg.problem.n_elements = 8
    cfg.problem.solution_order = 3
    cfg.network.hidden = [6, 6]
    cfg.training.iterations = iterations
    cfg.training.n_samples = 2
    cfg.training.halving_period = 3
    cfg.training.beta_rescale_at = 2
    cfg.observation.width = 4
    return cfg


def states_equal(a, b):
    assert a.heads.keys() == b.heads.keys()
    for k in a.heads:
        for p, q in zip(a.heads[k].params(), b.heads[k].params()):
            assert p.tobytes() == q.tobytes()
        for key in ("in_shift", "in_scale", "out_shift", "out_scale"):
            assert getattr(a.heads[k], key).tobytes() == getattr(b.heads[k], key).tobytes()
    for k in a.m:
        for p, q in zip(a.m[k] + a.v[k], b.m[k] + b.v[k]):
            assert p.tobytes() == q.tobytes()
    assert (a.iteration, a.adam_t, a.lr, a.skipped, a.trainable) == (b.iteration, b.adam_t, b.lr, b.skipped, b.trainable)
    assert a.rng.bit_generator.state == b.rng.bit_generator.state


def test_round_trip(tmp_path):
    cfg = desk()
    spec = build_problem(cfg.problem)
    state = init_state(cfg, spec, with_phi=True)
    state, _ = train_loop(cfg.training, solver_free_objective(spec, cfg.training), state)
    path = save_checkpoint(tmp_path / "ck.json", state, cfgmod.to_dict(cfg))
    loaded, manifest = load_checkpoint(path, expected_hash=spec_hash(cfgmod.to_dict(cfg)["problem"]))
    states_equal(state, loaded)
    assert cfgmod.from_dict(cfgmod.ExperimentConfig, manifest["config"]) == cfg
    assert blob_path(path).exists()
    assert not list(tmp_path.glob("*.tmp"))


def test_resume_is_bit_identical(tmp_path):
    cfg = desk(iterations=8)
    spec = build_problem(cfg.problem)
    obj = solver_free_objective(spec, cfg.training)
    full, _ = train_loop(cfg.training, obj, init_state(cfg, spec))
    part, _ = train_loop(cfg.training, obj, init_state(cfg, spec), iterations=1)
    save_checkpoint(tmp_path / "mid.json", part, cfgmod.to_dict(cfg))
    resumed, _ = load_checkpoint(tmp_path / "mid.json")
    resumed, _ = train_loop(cfg.training, obj, resumed, iterations=7)
    states_equal(full, resumed)


def test_crc_rejects_every_single_byte_flip(tmp_path):
    cfg = desk(iterations=0)
    spec = build_problem(cfg.problem)
    path = save_checkpoint(tmp_path / "ck.json", init_state(cfg, spec), cfgmod.to_dict(cfg))
    blob = blob_path(path)
    good = blob.read_bytes()
    rng = np.random.default_rng(0)
    for _ in range(100):
        bad = bytearray(good)
        pos = int(rng.integers(len(bad)))
        bad[pos] ^= 1 << int(rng.integers(8))
        blob.write_bytes(bytes(bad))
        with pytest.raises(CheckpointError, match="CRC32"):
            load_checkpoint(path)
    blob.write_bytes(good[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    blob.write_bytes(good)
    load_checkpoint(path)


def test_manifest_errors(tmp_path):
    cfg = desk(iterations=0)
    spec = build_problem(cfg.problem)
    path = save_checkpoint(tmp_path / "ck.json", init_state(cfg, spec), cfgmod.to_dict(cfg))
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_hash="0" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")
    manifest = json.loads(path.read_text())
    manifest["version"] = 99
    path.write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="version"):
        read_manifest(path)
    path.write_text("{not json")
    with pytest.raises(CheckpointError):
        read_manifest(path)


def test_layer_shape_mismatch_is_rejected(tmp_path):
    cfg = desk(iterations=0)
    spec = build_problem(cfg.problem)
    path = save_checkpoint(tmp_path / "ck.json", init_state(cfg, spec), cfgmod.to_dict(cfg))
    manifest = json.loads(path.read_text())
    manifest["heads"]["alpha"]["sizes"][1] += 1
    path.write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="layer shapes"):
        load_checkpoint(path)


def test_blob_is_little_endian_float64(tmp_path):
    cfg = desk(iterations=0)
    spec = build_problem(cfg.problem)
    state = init_state(cfg, spec)
    path = save_checkpoint(tmp_path / "ck.json", state, cfgmod.to_dict(cfg))
    manifest = read_manifest(path)
    first = manifest["arrays"][0]
    raw = np.frombuffer(blob_path(path).read_bytes(), dtype="<f8", count=first["nbytes"] // 8)
    np.testing.assert_array_equal(raw.reshape(first["shape"]), state.heads[first["head"]].params()[first["index"]])
    assert manifest["blob_bytes"] == blob_path(path).stat().st_size
