import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynlfm import io
from dynlfm.config import ConfigError, build_config, read_ini
from dynlfm.generative import SyntheticSpec, generate_cambridge_bars
from dynlfm.inference import SERIES, SamplerConfig, run_chain
from dynlfm.model import Dataset


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- CSV ------------------------------------------------------------------------

def test_load_csv_basic_and_missing(tmp_path):
    d = io.load_csv(write(tmp_path, "1,2\n3,4\n"))
    assert d.shape == (2, 2) and d.observed.all() and d.column_names is None
    m = io.load_csv(write(tmp_path, "1,NA\n,4\n"))
    np.testing.assert_array_equal(m.observed, [[True, False], [False, True]])


def test_load_csv_header(tmp_path):
    d = io.load_csv(write(tmp_path, "a, b\n1,2\n"))
    assert d.column_names == ("a", "b")
    assert d.shape == (1, 2)


def test_load_csv_errors_carry_location(tmp_path):
    with pytest.raises(io.ParseError, match="line 2"):
        io.load_csv(write(tmp_path, "1,2\n3\n"))
    with pytest.raises(io.ParseError, match="line 2, column 2"):
        io.load_csv(write(tmp_path, "1,2\n3,x\n"))
    with pytest.raises(io.ParseError):
        io.load_csv(write(tmp_path, "1,inf\n"))
    with pytest.raises(io.ParseError):
        io.load_csv(write(tmp_path, ""))
    with pytest.raises(io.ParseError):
        io.load_csv(write(tmp_path, "a,b\n"))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
              elements=st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False)))
def test_csv_round_trip_is_bit_exact(tmp_path_factory, x):
    p = tmp_path_factory.mktemp("rt") / "x.csv"
    io.save_csv(p, Dataset(x))
    back = io.load_csv(p)
    assert back.x.tobytes() == x.tobytes()


def test_csv_round_trip_keeps_mask_and_names(tmp_path):
    d = Dataset(np.array([[1.5, np.nan], [0.1, 2.0]]), column_names=("u", "v"))
    io.save_csv(tmp_path / "d.csv", d)
    back = io.load_csv(tmp_path / "d.csv")
    assert back.column_names == ("u", "v")
    np.testing.assert_array_equal(back.observed, d.observed)


def test_matrix_round_trip(tmp_path):
    m = np.random.default_rng(0).normal(size=(3, 4))
    io.save_matrix(tmp_path / "m.csv", m)
    assert io.load_matrix(tmp_path / "m.csv").tobytes() == m.tobytes()
    io.save_matrix(tmp_path / "e.csv", np.zeros((5, 0)))
    assert io.load_matrix(tmp_path / "e.csv").shape == (5, 0)
    io.save_matrix(tmp_path / "i.csv", np.array([[1, 2]]), integer=True)
    assert io.load_matrix(tmp_path / "i.csv", int).dtype.kind == "i"
    (tmp_path / "bad.csv").write_text("1,2\n")
    with pytest.raises(io.ParseError):
        io.load_matrix(tmp_path / "bad.csv")


# -- preprocessing ----------------------------------------------------------------

def test_standardize_and_shift_example():
    out = io.standardize_and_shift(Dataset(np.array([[1.0], [2.0], [3.0]])))
    np.testing.assert_allclose(out.x[:, 0], [0.0, 1.224744871, 2.449489743], atol=1e-9)


def test_standardize_and_shift_is_idempotent():
    x = np.random.default_rng(3).gamma(2.0, 3.0, size=(50, 3))
    out = io.standardize_and_shift(Dataset(x))
    np.testing.assert_allclose(out.x.std(axis=0), 1.0)
    np.testing.assert_allclose(out.x.min(axis=0), 0.0)
    np.testing.assert_allclose(io.standardize_and_shift(out).x, out.x, atol=1e-12)


def test_standardize_uses_observed_cells_only():
    x = np.array([[1.0], [2.0], [3.0], [np.nan]])
    out = io.standardize_and_shift(Dataset(x))
    np.testing.assert_allclose(out.x[:3, 0], [0.0, 1.224744871, 2.449489743], atol=1e-9)
    assert not out.observed[3, 0]


def test_standardize_rejects_constant_column():
    with pytest.raises(io.DegenerateColumnError):
        io.standardize_and_shift(Dataset(np.array([[1.0, 2.0], [1.0, 3.0]])))


def test_scale_variance_does_not_centre():
    out = io.scale_variance(Dataset(np.array([[1.0], [3.0]])))
    np.testing.assert_allclose(out.x[:, 0], [1.0, 3.0])


def test_cholesky_whiten():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(400, 2))
    z = z - z.mean(axis=0)
    ident = z @ np.linalg.inv(np.linalg.cholesky(np.cov(z.T, bias=True))).T
    np.testing.assert_allclose(io.cholesky_whiten(Dataset(ident)).x, ident, atol=1e-10)
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    x = rng.multivariate_normal([1.0, -2.0], cov, size=500)
    w = io.cholesky_whiten(Dataset(x)).x
    np.testing.assert_allclose(np.cov(w.T, bias=True), np.eye(2), atol=1e-10)
    np.testing.assert_allclose(w.mean(axis=0), 0, atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        io.cholesky_whiten(Dataset(rng.normal(size=(2, 3))))
    with pytest.raises(ValueError):
        io.cholesky_whiten(Dataset(np.array([[1.0, np.nan], [2, 3], [4, 1]])))


@settings(max_examples=30, deadline=None)
@given(st.permutations(["standardize", "subtract-min", "scale"]))
def test_preprocess_steps_compose_and_invert(steps):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(30, 3)) * [1, 5, 0.2] + [3, -1, 10]
    data = Dataset(x)
    out, ts = io.preprocess(data, steps)
    expect = x.copy()
    for t in ts:
        expect = t.apply(expect)
    np.testing.assert_allclose(out.x, expect)
    np.testing.assert_allclose(io.invert_transforms(out.x, ts), x, atol=1e-10)
    last = steps[-1]
    if last == "subtract-min":
        np.testing.assert_allclose(out.x.min(axis=0), 0, atol=1e-12)
    elif last in ("standardize", "scale"):
        np.testing.assert_allclose(out.x.std(axis=0), 1, atol=1e-12)
    with pytest.raises(ValueError):
        io.preprocess(data, ["nope"])


def test_affine_dict_round_trip():
    t = io.whiten_transform(Dataset(np.random.default_rng(2).normal(size=(20, 2))))
    back = io.Affine.from_dict(t.to_dict())
    x = np.ones((3, 2))
    np.testing.assert_array_equal(back.apply(x), t.apply(x))


# -- audio ---------------------------------------------------------------------------

def test_stft_zero_input_and_frame_count():
    out = io.stft_spectrogram(np.zeros(256), 128, "hanning", 128)
    assert out.shape == (2, 128) and (out.x == 0).all()
    assert io.stft_spectrogram(np.zeros(300), 128, hop=64).shape[0] == (300 - 128) // 64 + 1


def test_stft_sinusoid_energy_at_bin():
    n, f = 128, 9
    t = np.arange(4 * n)
    mag = io.stft_spectrogram(np.sin(2 * np.pi * f * t / n), n, "hanning", n).x
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    oracle = np.abs([sum(window[j] * math.sin(2 * math.pi * f * j / n)
                         * complex(math.cos(2 * math.pi * k * j / n), -math.sin(2 * math.pi * k * j / n))
                         for j in range(n)) for k in range(n)])
    np.testing.assert_allclose(mag[0], oracle, atol=1e-9)
    big = {f, n - f}
    leak = {f - 1, f + 1, n - f - 1, n - f + 1}
    for k in range(n):
        if k not in big | leak:
            assert mag[0, k] < 1e-9
    assert mag[0, f] == pytest.approx(n / 4)


def test_stft_errors():
    with pytest.raises(ValueError):
        io.stft_spectrogram(np.zeros(10), 128)
    with pytest.raises(ValueError):
        io.stft_spectrogram(np.zeros(256), 128, hop=0)
    with pytest.raises(ValueError):
        io.stft_spectrogram(np.zeros(256), 0)
    with pytest.raises(ValueError):
        io.stft_spectrogram(np.zeros(256), 128, window="boxcar")


def test_read_waveform(tmp_path):
    pcm = (np.sin(np.arange(400) / 5) * 1000).astype("<i2")
    with wave.open(str(tmp_path / "a.wav"), "wb") as fh:
        fh.setnchannels(2)
        fh.setsampwidth(2)
        fh.setframerate(8000)
        fh.writeframes(np.repeat(pcm, 2).tobytes())
    np.testing.assert_array_equal(io.read_waveform(tmp_path / "a.wav"), pcm.astype(float))
    io.save_csv(tmp_path / "w.csv", pcm[:, None].astype(float))
    np.testing.assert_array_equal(io.read_waveform(tmp_path / "w.csv"), pcm.astype(float))


# -- traces and config -------------------------------------------------------------------

def test_trace_round_trip(tmp_path):
    ds = generate_cambridge_bars(SyntheticSpec(n_obs=40, seed=1))
    tr = run_chain(ds.data, SamplerConfig(n_iters=4, burn_in=1, model="dynamic-weighted", k_max=5))
    out = io.save_trace(tr, tmp_path / "tr", {"a": 1}, seed=3)
    back = io.load_trace(out)
    for name in SERIES:
        assert getattr(back, name).tobytes() == getattr(tr, name).tobytes()
    assert back.imputed.tobytes() == tr.imputed.tobytes()
    np.testing.assert_array_equal(back.cells, tr.cells)
    np.testing.assert_array_equal(back.final_state.alloc.lam, tr.final_state.alloc.lam)
    assert back.final_state.weights.b.tobytes() == tr.final_state.weights.b.tobytes()
    assert back.final_state.hypers.rho.tobytes() == tr.final_state.hypers.rho.tobytes()
    manifest = (out / "manifest.json").read_text()
    assert '"seed": 3' in manifest and "config_hash" in manifest
    with pytest.raises(FileNotFoundError):
        io.load_trace(tmp_path)


def test_read_ini_and_build_config(tmp_path):
    p = write(tmp_path, "[run]\npreprocess = standardize, subtract-min\nchains = 2\n"
                        "[sampler]\nk_max = 7\nmodel = static\n"
                        "[priors]\na_sigma = 2.5\n[fixed]\nalpha = 1.5\n", "c.ini")
    over = read_ini(p)
    cfg = build_config(over)
    assert cfg.preprocess == ("standardize", "subtract-min") and cfg.chains == 2
    assert cfg.sampler.k_max == 7 and cfg.sampler.model.value == "static"
    assert cfg.sampler.priors.a_sigma == 2.5 and cfg.sampler.fixed_hypers == {"alpha": 1.5}
    assert isinstance(cfg.to_dict()["sampler"]["priors"]["rho"], list)
    with pytest.raises(ConfigError):
        read_ini(write(tmp_path, "[sampler]\nbogus = 1\n", "b.ini"))
    with pytest.raises(ConfigError):
        read_ini(write(tmp_path, "[sampler]\nk_max = many\n", "b2.ini"))
    with pytest.raises(ConfigError):
        read_ini(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        build_config({"preprocess": ("whiten", "stft")})
    with pytest.raises(ConfigError):
        build_config({"k_max": 0})
