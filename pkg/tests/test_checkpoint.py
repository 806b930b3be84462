import numpy as np
import pytest

from artdiff.checkpoint import (AUTOENC_MAGIC, CheckpointError, DENOISER_MAGIC,
                                load_arrays, save_arrays)
from artdiff.numerics import RngStream


def roundtrip_arrays():
    rng = RngStream(1)
    return {
        "weights": rng.normal((3, 4)),
        "bias": rng.normal((4,)),
        "scalarish": np.array(2.5),
        "meta": np.array([2.0, 16.0]),
    }


def test_roundtrip(tmp_path):
    path = tmp_path / "ck.bin"
    arrays = roundtrip_arrays()
    save_arrays(path, DENOISER_MAGIC, arrays)
    loaded = load_arrays(path, DENOISER_MAGIC)
    assert set(loaded) == set(arrays)
    for name, arr in arrays.items():
        assert np.array_equal(loaded[name], arr)
        assert loaded[name].shape == arr.shape


def test_save_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    arrays = roundtrip_arrays()
    save_arrays(a, DENOISER_MAGIC, arrays)
    save_arrays(b, DENOISER_MAGIC, arrays)
    assert a.read_bytes() == b.read_bytes()


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, DENOISER_MAGIC, roundtrip_arrays())
    with pytest.raises(CheckpointError):
        load_arrays(path, AUTOENC_MAGIC)


def test_corrupted_payload_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, DENOISER_MAGIC, roundtrip_arrays())
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_arrays(path, DENOISER_MAGIC)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, DENOISER_MAGIC, roundtrip_arrays())
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(CheckpointError):
        load_arrays(path, DENOISER_MAGIC)


def test_bad_magic_length():
    with pytest.raises(CheckpointError):
        save_arrays("/tmp/never-written.bin", b"SHORT", {})


def test_denoiser_checkpoint_roundtrip(tmp_path):
    from artdiff.denoisers import (LabelEmbedding, init_toy_denoiser,
                                   load_denoiser, save_denoiser,
                                   toy_denoiser_forward)
    from artdiff.schedule import linear_schedule

    schedule = linear_schedule(123, 2e-4, 0.01)
    params = init_toy_denoiser(RngStream(4), 2)
    embedding = LabelEmbedding.create(8, params.cond_width, 4)
    path = tmp_path / "denoiser.bin"
    save_denoiser(path, params, schedule, embedding)
    p2, s2, e2 = load_denoiser(path)
    assert s2.T == 123
    assert s2.betas[0] == pytest.approx(2e-4, rel=1e-12)
    assert np.array_equal(e2.tokens, embedding.tokens)
    xt = RngStream(5).normal((3, 2))
    assert np.array_equal(toy_denoiser_forward(p2, xt, 7),
                          toy_denoiser_forward(params, xt, 7))


def test_autoencoder_checkpoint_roundtrip(tmp_path):
    from artdiff.latentae import (init_toy_autoencoder, load_autoencoder,
                                  save_autoencoder)

    params = init_toy_autoencoder(RngStream(6), 2, 1)
    path = tmp_path / "ae.bin"
    save_autoencoder(path, params)
    loaded = load_autoencoder(path)
    assert loaded.data_width == 2 and loaded.latent_width == 1
    for name, arr in params.arrays().items():
        assert np.array_equal(arr, loaded.arrays()[name])
    # the two container kinds are not interchangeable
    with pytest.raises(CheckpointError):
        load_arrays(path, DENOISER_MAGIC)
