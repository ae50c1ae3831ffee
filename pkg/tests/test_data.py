import numpy as np
import pytest

from egunet import io
from egunet.data import (
    EndmemberMatrix,
    HsiCube,
    SceneSpec,
    check_abundances,
    classmap_to_abundance,
    export_abundance_images,
    gaussian_downsample,
    generate_scene,
    load_abundances,
    load_cube,
    load_endmembers,
    read_abundance_csv,
    read_pgm,
    reference_endmembers_from_pure,
    save_abundances,
    save_cube,
    save_endmembers,
)


def clean_spec(**kw):
    return SceneSpec(H=20, W=20, B=30, C=3, scale_range=None, snr_db=None, impulse_fraction=0.0, **kw)


class TestTypes:
    def test_cube_needs_two_bands(self):
        with pytest.raises(ValueError):
            HsiCube(np.zeros((2, 2, 1)))

    def test_cube_rejects_nan(self):
        with pytest.raises(ValueError):
            HsiCube(np.full((2, 2, 3), np.nan))

    def test_wavelengths_increasing(self):
        with pytest.raises(ValueError):
            HsiCube(np.zeros((2, 2, 3)), [0.5, 0.4, 0.6])

    def test_default_class_names(self):
        assert EndmemberMatrix(np.ones((4, 2))).class_names == ["em1", "em2"]

    def test_check_abundances(self):
        assert check_abundances(np.array([[0.2, 0.8], [1.0, 0.0]]))
        assert not check_abundances(np.array([[0.2, 0.7]]))
        assert not check_abundances(np.array([[-0.1, 1.1]]))


class TestScene:
    def test_noiseless_lies_in_cone(self):
        sc = generate_scene(clean_spec(), 0)
        X = sc.cube.pixels()
        A = sc.abundances.reshape(-1, 3)
        assert np.max(np.abs(X - A @ sc.endmembers.E.T)) < 1e-14

    def test_abundances_on_simplex(self):
        sc = generate_scene(SceneSpec(H=20, W=20, B=30, C=5), 1)
        assert check_abundances(sc.abundances, atol=1e-12)

    @pytest.mark.parametrize("snr", [20.0, 30.0, 40.0])
    def test_noise_snr(self, snr):
        spec = SceneSpec(H=40, W=40, B=50, C=3, impulse_fraction=0.0, snr_db=snr)
        sc = generate_scene(spec, 2)
        signal = sc.abundances @ sc.endmembers.E.T * sc.scales[..., None]
        noise = sc.cube.data - signal
        measured = 10 * np.log10(np.mean(signal ** 2) / np.mean(noise ** 2))
        assert abs(measured - snr) <= 0.5

    def test_scaling_range(self):
        sc = generate_scene(SceneSpec(H=20, W=20, B=10, C=2), 3)
        assert 0.75 <= sc.scales.min() and sc.scales.max() <= 1.25

    def test_impulse_fraction(self):
        spec = SceneSpec(H=40, W=40, B=50, C=3, impulse_fraction=0.05, impulse_value=7.0)
        frac = np.mean(generate_scene(spec, 4).cube.data == 7.0)
        assert 0.04 < frac < 0.06

    def test_reproducible(self):
        a, b = generate_scene(SceneSpec(H=10, W=10, B=20, C=3), 5), generate_scene(SceneSpec(H=10, W=10, B=20, C=3), 5)
        np.testing.assert_array_equal(a.cube.data, b.cube.data)

    @pytest.mark.parametrize("kw", [{"C": 9}, {"scale_range": (0.0, 1.0)}, {"snr_db": -3.0}, {"B": 1}])
    def test_infeasible(self, kw):
        with pytest.raises(ValueError):
            generate_scene(SceneSpec(**kw), 0)


class TestClassmap:
    def test_half_half(self):
        A = classmap_to_abundance(np.array([[0, 0], [1, 1]]), 2)
        np.testing.assert_array_equal(A[0, 0], [0.5, 0.5])

    def test_uniform_map(self):
        A = classmap_to_abundance(np.full((6, 4), 2), 2, n_classes=3)
        np.testing.assert_array_equal(A, np.broadcast_to([0.0, 0.0, 1.0], (3, 2, 3)))

    def test_exact_sum_power_of_two(self):
        lab = np.random.default_rng(0).integers(0, 4, (16, 8))
        A = classmap_to_abundance(lab, 4)
        assert np.all(A.sum(axis=-1) == 1.0)

    def test_sum_within_rounding(self):
        # counts / r^2 are exact rationals; only the float sum may be off by an ulp or two
        lab = np.random.default_rng(1).integers(0, 4, (12, 9))
        A = classmap_to_abundance(lab, 3)
        assert np.max(np.abs(A.sum(axis=-1) - 1.0)) <= 4 * np.finfo(float).eps

    def test_not_divisible(self):
        with pytest.raises(ValueError):
            classmap_to_abundance(np.zeros((5, 4), int), 2)


class TestReferences:
    def test_noiseless_scene(self):
        sc = generate_scene(clean_spec(), 0)
        ref = reference_endmembers_from_pure(sc.cube, sc.abundances)
        assert np.max(np.abs(ref.E - sc.endmembers.E)) < 1e-12

    def test_missing_class_named(self):
        A = np.zeros((2, 2, 3))
        A[..., 0] = 1.0
        with pytest.raises(ValueError, match=r"\[1, 2\]"):
            reference_endmembers_from_pure(np.ones((2, 2, 4)), A)

    def test_one_pixel_per_class(self):
        X = np.random.default_rng(2).random((1, 2, 5))
        ref = reference_endmembers_from_pure(X, np.eye(2)[None])
        np.testing.assert_array_equal(ref.E, X[0].T)


class TestDownsample:
    def test_constant(self):
        out = gaussian_downsample(HsiCube(np.full((8, 8, 3), 0.4)), 2)
        assert out.data.shape == (4, 4, 3)
        np.testing.assert_allclose(out.data, 0.4, atol=1e-15)

    def test_blur_only_preserves_band_mean(self):
        data = np.random.default_rng(3).random((9, 7, 4))
        out = gaussian_downsample(HsiCube(data), 1)
        np.testing.assert_allclose(out.data.mean(axis=(0, 1)), data.mean(axis=(0, 1)), atol=1e-10)

    def test_delta_mass(self):
        data = np.zeros((11, 11, 2))
        data[5, 5] = 1.0
        out = gaussian_downsample(HsiCube(data + 0.0), 1)
        np.testing.assert_allclose(out.data.sum(axis=(0, 1)), [1.0, 1.0], atol=1e-10)

    def test_not_divisible(self):
        with pytest.raises(ValueError):
            gaussian_downsample(HsiCube(np.zeros((5, 6, 2))), 2)


class TestExport:
    def test_files_and_levels(self, tmp_path):
        A = np.zeros((3, 4, 2))
        A[..., 0] = 1.0
        paths = export_abundance_images(A, tmp_path)
        assert len(paths) == 3 and paths[-1].suffix == ".csv"
        assert sum(p.suffix == ".pgm" for p in paths) == 2
        np.testing.assert_array_equal(read_pgm(paths[0]), 255)
        np.testing.assert_array_equal(read_pgm(paths[1]), 0)

    def test_csv_round_trip(self, tmp_path):
        A = np.random.default_rng(4).dirichlet(np.ones(3), (5, 6))
        paths = export_abundance_images(A, tmp_path)
        assert np.max(np.abs(read_abundance_csv(paths[-1]) - A)) <= 1e-12

    def test_unwritable_dir(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            export_abundance_images(np.ones((1, 1, 1)), blocker / "sub")


class TestFiles:
    def test_cube_round_trip(self, tmp_path):
        sc = generate_scene(SceneSpec(H=6, W=5, B=8, C=2), 0)
        save_cube(tmp_path / "c.hsux", sc.cube, seed=0)
        back = load_cube(tmp_path / "c.hsux")
        np.testing.assert_array_equal(back.data, sc.cube.data)
        np.testing.assert_array_equal(back.wavelengths, sc.cube.wavelengths)
        assert io.read_header(tmp_path / "c.hsux")["H"] == 6

    def test_abundance_and_endmember_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        A = rng.dirichlet(np.ones(3), (4, 4))
        em = EndmemberMatrix(rng.random((7, 3)), ["a", "b", "c"])
        save_abundances(tmp_path / "a.hsux", A)
        save_endmembers(tmp_path / "e.hsux", em)
        np.testing.assert_array_equal(load_abundances(tmp_path / "a.hsux"), A)
        back = load_endmembers(tmp_path / "e.hsux")
        np.testing.assert_array_equal(back.E, em.E)
        assert back.class_names == ["a", "b", "c"]

    def test_payload_layout(self, tmp_path):
        data = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
        save_cube(tmp_path / "c.hsux", HsiCube(data))
        raw = (tmp_path / "c.hsux").read_bytes()
        body = raw[raw.index(b"\n") + 1:]
        np.testing.assert_array_equal(np.frombuffer(body, "<f8"), np.arange(24.0))

    def test_truncated_payload(self, tmp_path):
        p = save_abundances(tmp_path / "a.hsux", np.ones((2, 2, 1)))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(io.FormatError):
            load_abundances(p)

    def test_wrong_kind(self, tmp_path):
        p = save_abundances(tmp_path / "a.hsux", np.ones((2, 2, 1)))
        with pytest.raises(io.FormatError):
            load_cube(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.hsux"
        p.write_bytes(b'{"magic":"NOPE"}\n')
        with pytest.raises(io.FormatError):
            io.read_header(p)
