"""Synthetic populations, stimuli, noise model and the dataset container."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsid.groundtruth import (
    BadMagicError,
    Dataset,
    DegeneratePopulationError,
    DoGParams,
    IngestionError,
    ShapeHeaderError,
    StimulusTooSmallError,
    TruncatedFileError,
    VersionMismatchError,
    add_poisson_like_noise,
    build_teacher_cnn,
    build_two_type_population,
    calibrate_scale,
    gaussian_white_stimuli,
    homogeneous_population,
    load_dataset,
    make_dataset,
    make_dog_kernel,
    natural_like_stimuli,
    read_container,
    save_dataset,
    simulate,
    simulate_linear,
    teacher_activations,
    write_container,
    write_pgm,
)


def crop_and_dot(spec, stimuli):
    """Independent rate oracle: explicit crop of each neuron's patch."""
    k = spec.kernels.shape[-1]
    out = np.zeros((len(stimuli), spec.n_neurons))
    for n, (r, c) in enumerate(spec.locations):
        patch = stimuli[:, 0, r:r + k, c:c + k]
        out[:, n] = (patch * spec.kernels[n]).sum(axis=(1, 2))
    return spec.output_scale * out


class TestDoGKernel:
    def test_pure_gaussian(self):
        k = make_dog_kernel(DoGParams(2.0, 4.0, 0.0, 9))
        assert np.all(k > 0)
        assert np.linalg.norm(k) == pytest.approx(1.0, abs=1e-14)

    def test_default_sign_structure(self):
        p = DoGParams()
        k = make_dog_kernel(p)
        r = np.arange(17) - 8
        radius = np.hypot(r[:, None], r[None, :])
        assert k[8, 8] > 0
        assert np.all(k[radius >= 6] < 0)
        # evaluate the formula directly at a few pixels
        def g(sigma):
            e = np.exp(-radius ** 2 / (2 * sigma ** 2))
            return e / e.sum()
        direct = g(2.0) - g(4.0)
        np.testing.assert_allclose(k, direct / np.linalg.norm(direct), atol=1e-15)

    def test_balanced_kernel_sums_to_zero(self):
        assert abs(make_dog_kernel(DoGParams()).sum()) < 1e-12

    @pytest.mark.parametrize("kwargs", [dict(kernel_size=16), dict(kernel_size=1),
                                        dict(center_sigma=4.0, surround_sigma=2.0)])
    def test_invalid_params(self, kwargs):
        with pytest.raises(ValueError):
            DoGParams(**kwargs)


class TestWhiteStimuli:
    def test_mean_within_clt_bound(self):
        s = gaussian_white_stimuli(500, 20, 20, seed=0)
        assert s.shape == (500, 1, 20, 20)
        assert abs(s.mean()) < 4 / np.sqrt(s.size)

    def test_seeding(self):
        a, b = gaussian_white_stimuli(3, 5, 5, 7), gaussian_white_stimuli(3, 5, 5, 7)
        assert a.tobytes() == b.tobytes()
        assert np.abs(a - gaussian_white_stimuli(3, 5, 5, 8)).max() > 0


class TestLinearSimulator:
    def test_matched_filter(self):
        spec = homogeneous_population(3, seed=1)
        k = spec.kernels.shape[-1]
        r, c = spec.locations[0]
        stim = np.zeros((1, 1, 48, 48))
        stim[0, 0, r:r + k, c:c + k] = spec.kernels[0]
        assert simulate_linear(spec, stim)[0, 0] == pytest.approx(spec.output_scale, abs=1e-12)

    def test_zero_stimulus(self):
        spec = homogeneous_population(5, seed=0)
        np.testing.assert_array_equal(simulate_linear(spec, np.zeros((2, 1, 48, 48))), 0.0)

    @pytest.mark.parametrize("builder", [lambda: homogeneous_population(20, seed=3),
                                         lambda: build_two_type_population(6, seed=3)])
    def test_matches_crop_oracle(self, builder):
        spec = builder().with_scale(0.37)
        stim = gaussian_white_stimuli(40, 48, 48, seed=1)
        np.testing.assert_allclose(simulate_linear(spec, stim), crop_and_dot(spec, stim), atol=1e-12, rtol=0)

    def test_location_outside_grid(self):
        with pytest.raises(ValueError, match="inside"):
            spec = homogeneous_population(2, seed=0)
            type(spec)(**{**spec.__dict__, "locations": np.array([[0, 0], [40, 0]])})


class TestNoise:
    def test_zero_rates(self):
        np.testing.assert_array_equal(add_poisson_like_noise(np.zeros((4, 3)), 0), 0.0)

    def test_moments_at_four(self):
        y = add_poisson_like_noise(np.full(100_000, 4.0), seed=1)
        assert abs(y.mean() - 4) < 0.02
        assert abs(y.var() - 4) < 0.1

    @pytest.mark.parametrize("r", [0.01, 0.1, 1.0, 4.0, -0.5])
    def test_variance_equals_absolute_rate(self, r):
        y = add_poisson_like_noise(np.full(200_000, r), seed=2)
        assert 0.95 <= y.var() / abs(r) <= 1.05

    def test_seeded(self):
        r = np.linspace(0, 3, 50)
        assert add_poisson_like_noise(r, 5).tobytes() == add_poisson_like_noise(r, 5).tobytes()


class TestCalibration:
    def test_default_population_hits_target(self):
        spec = homogeneous_population(50, seed=0)
        cal = gaussian_white_stimuli(2048, 48, 48, seed=10)
        spec = spec.with_scale(calibrate_scale(spec, cal))
        fresh = gaussian_white_stimuli(4096, 48, 48, seed=11)
        assert 0.098 <= np.abs(simulate(spec, fresh)).mean() <= 0.102

    def test_already_calibrated(self):
        spec = homogeneous_population(10, seed=0)
        cal = gaussian_white_stimuli(1000, 48, 48, seed=1)
        spec = spec.with_scale(calibrate_scale(spec, cal, 0.2))
        assert calibrate_scale(spec, cal, 0.2) == pytest.approx(spec.output_scale)
        assert calibrate_scale(spec.with_scale(1.0), cal, 0.2) == pytest.approx(spec.output_scale)

    def test_doubling_kernels_halves_scale(self):
        spec = homogeneous_population(10, seed=0)
        cal = gaussian_white_stimuli(1000, 48, 48, seed=1)
        doubled = type(spec)(**{**spec.__dict__, "kernels": 2 * spec.kernels})
        assert calibrate_scale(doubled, cal) == pytest.approx(calibrate_scale(spec, cal) / 2, rel=1e-12)

    def test_zero_population(self):
        spec = homogeneous_population(2, seed=0)
        zero = type(spec)(**{**spec.__dict__, "kernels": np.zeros_like(spec.kernels)})
        with pytest.raises(DegeneratePopulationError):
            calibrate_scale(zero, gaussian_white_stimuli(1000, 48, 48, seed=0))

    def test_teacher_hits_target(self):
        ds, spec = make_dataset(build_teacher_cnn(2, 30, seed=0), 2048, 16, seed=4, stimulus="pink")
        assert 0.098 <= np.abs(ds.rates).mean() <= 0.102


class TestTwoTypes:
    def test_counts(self):
        spec = build_two_type_population(500, seed=0)
        assert spec.n_neurons == 1000
        np.testing.assert_array_equal(np.bincount(spec.type_ids), [500, 500])

    def test_type_zero_is_smaller(self):
        spec = build_two_type_population(100, seed=1)
        r = np.arange(17) - 8
        r2 = r[:, None] ** 2 + r[None, :] ** 2

        def second_moment(k):
            return (np.abs(k) * r2).sum() / np.abs(k).sum()

        m0 = second_moment(spec.kernels[spec.type_ids == 0].mean(axis=0))
        m1 = second_moment(spec.kernels[spec.type_ids == 1].mean(axis=0))
        assert m0 < m1

    def test_zero_width_variance_gives_identical_kernels(self):
        spec = build_two_type_population(5, seed=2, sigma_sds=(0.0, 0.0))
        for t in (0, 1):
            k = spec.kernels[spec.type_ids == t]
            assert np.all(k == k[0])


class TestTeacher:
    def test_population_size(self):
        spec = build_teacher_cnn(4, 250, seed=0)
        assert spec.n_neurons == 1000
        assert spec.grid == (32, 32)

    def test_sixteen_types(self):
        spec = build_teacher_cnn(16, 64, seed=0)
        assert spec.n_neurons == 1024
        assert len(set(spec.teacher_channels)) == 16

    def test_seeded(self):
        a, b = build_teacher_cnn(3, 10, seed=5), build_teacher_cnn(3, 10, seed=5)
        for wa, wb in zip(a.teacher_weights, b.teacher_weights):
            assert wa.tobytes() == wb.tobytes()
        np.testing.assert_array_equal(a.locations, b.locations)

    def test_too_small(self):
        with pytest.raises(StimulusTooSmallError):
            build_teacher_cnn(1, 1, seed=0, stimulus_size=19)

    def test_activations_nonnegative(self):
        spec = build_teacher_cnn(2, 5, seed=0)
        act = teacher_activations(spec, natural_like_stimuli(4, seed=0))
        assert act.shape == (4, 2, 32, 32)
        assert act.min() >= 0

    def test_weight_scale(self):
        spec = build_teacher_cnn(4, 1, seed=0)
        w2 = spec.teacher_weights[1]
        assert w2.std() == pytest.approx(np.sqrt(2 / (16 * 81)), rel=0.05)

    @pytest.mark.slow
    def test_teacher_is_not_linear(self):
        """Ridge on 2^15 samples explains well under half the teacher's variance."""
        ds, spec = make_dataset(build_teacher_cnn(1, 20, seed=0), 2 ** 15, 2048, seed=1, stimulus="pink")
        X = ds.stimuli.reshape(len(ds.stimuli), -1)
        tr, te = ds.split("train"), ds.split("test")
        Xa = np.hstack([X, np.ones((len(X), 1))])
        gram = Xa[tr].T @ Xa[tr]
        best = -np.inf
        for lam in (1.0, 10.0, 100.0, 1000.0):
            beta = np.linalg.solve(gram + lam * np.eye(len(gram)), Xa[tr].T @ ds.rates[tr])
            pred = Xa[te] @ beta
            fev = 1 - ((pred - ds.rates[te]) ** 2).mean(0) / ds.rates[te].var(0)
            best = max(best, fev.mean())
        assert best < 0.5


class TestNaturalLikeStimuli:
    def test_pink_spectrum_slope(self):
        s = natural_like_stimuli(64, 64, 64, seed=0)[:, 0]
        amp = np.abs(np.fft.fft2(s)).mean(axis=0)
        fy = np.fft.fftfreq(64)[:, None]
        fx = np.fft.fftfreq(64)[None, :]
        f = np.hypot(fy, fx)
        bins = np.unique(np.round(f[(f > 0.02) & (f < 0.45)], 3))
        radial = [amp[np.isclose(np.round(f, 3), b)].mean() for b in bins]
        slope = np.polyfit(np.log(bins), np.log(radial), 1)[0]
        assert -1.3 <= slope <= -0.7

    def test_standardized(self):
        s = natural_like_stimuli(20, seed=3)
        assert np.abs(s.mean(axis=(2, 3))).max() <= 1e-10
        assert np.abs(s.var(axis=(2, 3)) - 1).max() <= 1e-6

    def test_image_dir_crops(self, tmp_path):
        rng = np.random.default_rng(0)
        write_pgm(tmp_path / "a.pgm", rng.integers(0, 256, size=(60, 70)))
        s = natural_like_stimuli(5, 44, 44, seed=1, source="image_dir", image_dir=tmp_path)
        assert s.shape == (5, 1, 44, 44)
        assert np.abs(s.var(axis=(2, 3)) - 1).max() <= 1e-6

    def test_constant_image_rejected(self, tmp_path):
        write_pgm(tmp_path / "flat.pgm", np.full((60, 60), 128))
        with pytest.raises(IngestionError):
            natural_like_stimuli(3, 44, 44, seed=0, source="image_dir", image_dir=tmp_path)

    def test_bad_files_listed(self, tmp_path):
        (tmp_path / "junk.pgm").write_bytes(b"P2\n2 2\n255\n1 2 3 4")
        write_pgm(tmp_path / "tiny.pgm", np.zeros((10, 10)))
        with pytest.raises(IngestionError, match="junk.pgm.*tiny.pgm"):
            natural_like_stimuli(1, 44, 44, seed=0, source="image_dir", image_dir=tmp_path)


class TestDatasetFormat:
    def _dataset(self, rates=True, repeats=False):
        rng = np.random.default_rng(0)
        stim = rng.normal(size=(12, 1, 6, 6))
        resp = rng.normal(size=(12, 3))
        return Dataset(stim, resp, rng.normal(size=(12, 3)) if rates else None,
                       {"train": np.arange(8), "test": np.arange(8, 12)},
                       rng.normal(size=(4, 2, 3)) if repeats else None,
                       np.array([[0, 1], [2, 2], [1, 0]]), np.array([0, 1, 0]), {"kind": "linear", "x": 1.5})

    def test_round_trip_bitwise(self, tmp_path):
        ds = self._dataset(repeats=True)
        save_dataset(ds, tmp_path / "d.bin")
        back = load_dataset(tmp_path / "d.bin")
        for name in ("stimuli", "responses", "rates", "repeats", "locations", "type_ids"):
            assert getattr(back, name).tobytes() == getattr(ds, name).tobytes()
        assert back.meta == ds.meta
        for k in ds.splits:
            np.testing.assert_array_equal(back.splits[k], ds.splits[k])

    def test_real_data_without_rates(self, tmp_path):
        save_dataset(self._dataset(rates=False), tmp_path / "d.bin")
        back = load_dataset(tmp_path / "d.bin")
        assert back.rates is None and not back.is_synthetic

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(self._dataset(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            load_dataset(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(self._dataset(), path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            load_dataset(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(self._dataset(), path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(TruncatedFileError):
            load_dataset(path)

    def test_inconsistent_shapes(self, tmp_path):
        path = tmp_path / "d.bin"
        write_container(path, {"stimuli": np.zeros((4, 1, 2, 2)), "responses": np.zeros((5, 2))})
        with pytest.raises(ShapeHeaderError):
            load_dataset(path)

    def test_error_codes_distinct(self):
        codes = {e.code for e in (BadMagicError, VersionMismatchError, TruncatedFileError, ShapeHeaderError)}
        assert len(codes) == 4

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["f", "i", "t"]), st.integers(0, 4)), min_size=1, max_size=5),
           st.integers(0, 1000))
    def test_container_round_trip(self, tmp_path_factory, kinds, seed):
        rng = np.random.default_rng(seed)
        sections = {}
        for j, (kind, n) in enumerate(kinds):
            if kind == "f":
                sections[f"s{j}"] = rng.normal(size=(n, 2))
            elif kind == "i":
                sections[f"s{j}"] = rng.integers(-5, 5, size=(n,), dtype=np.int64)
            else:
                sections[f"s{j}"] = "é" * n
        path = tmp_path_factory.mktemp("c") / "c.bin"
        write_container(path, sections)
        back = read_container(path)
        for k, v in sections.items():
            if isinstance(v, str):
                assert back[k] == v
            else:
                assert back[k].dtype == v.dtype and back[k].tobytes() == v.tobytes()

    def test_overlapping_splits_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((4, 1, 2, 2)), np.zeros((4, 1)), splits={"train": [0, 1], "test": [1, 2]})

    def test_make_dataset_is_seeded(self):
        a, _ = make_dataset(homogeneous_population(4, seed=0), 64, 16, seed=2, n_calibration=1000)
        b, _ = make_dataset(homogeneous_population(4, seed=0), 64, 16, seed=2, n_calibration=1000)
        assert a.responses.tobytes() == b.responses.tobytes()
        assert a.is_synthetic
