import numpy as np
import pytest

from egunet.bundles import EndmemberBundle
from egunet.checkpoint import load_checkpoint, read_training_log, save_checkpoint, write_training_log
from egunet.network import (
    Widths,
    build_network,
    e_net_backward,
    e_net_forward,
    loss_e,
    loss_ur,
    ur_net_backward,
    ur_net_forward,
)
from egunet.nn import ConfigError, ShapeError
from egunet.training import TrainConfig, infer_abundances, train

from _gradcheck import numeric_grad, rel_error

SMALL = Widths((5, 4), (4, 5, 6))
TOL = 1e-4


def toy_problem(variant, B=6, C=3, seed=0):
    rng = np.random.default_rng(seed)
    sig = rng.uniform(0.05, 0.95, (5, B))
    labels = rng.dirichlet(np.ones(C), 5)
    X = rng.uniform(0.05, 0.95, (8, B) if variant == "pw" else (4, 4, B))
    return sig, labels, X


def objective(net, which, sig, labels, X, seed):
    """Scalar loss (``"e"``, ``"ur"`` or ``"o"``) with replayed dropout masks."""
    net.reseed_dropout(seed)
    total = 0.0
    if which in ("e", "o"):
        total += loss_e(e_net_forward(sig, net, "train"), labels)
    if which in ("ur", "o"):
        total += loss_ur(X, ur_net_forward(X, net, "train")[1])
    return total


def analytic(net, which, sig, labels, X, seed):
    net.zero_grad()
    net.reseed_dropout(seed)
    if which in ("e", "o"):
        _, g = loss_e(e_net_forward(sig, net, "train"), labels, return_grad=True)
        e_net_backward(net, g)
    if which in ("ur", "o"):
        _, g = loss_ur(X, ur_net_forward(X, net, "train")[1], return_grad=True)
        ur_net_backward(net, g)
    return [p.grad.copy() for p in net.params()]


def full_loss_errors(variant, which, seed=0):
    """Per-parameter relative gradient errors of a whole-network loss."""
    net = build_network(6, 3, variant, widths=SMALL, seed=seed)
    sig, labels, X = toy_problem(variant, seed=seed)
    grads = analytic(net, which, sig, labels, X, seed)
    errors = []
    for p, g in zip(net.params(), grads):
        num = numeric_grad(lambda: objective(net, which, sig, labels, X, seed), p.value)
        errors.append(rel_error(g, num))
    return errors


LOSS_CASES = [(v, w) for v in ("pw", "ss") for w in ("e", "ur", "o")]


class TestLossGradients:
    @pytest.mark.parametrize("variant,which", LOSS_CASES, ids=[f"{v}-{w}" for v, w in LOSS_CASES])
    def test_finite_differences(self, variant, which):
        assert max(full_loss_errors(variant, which)) < TOL

    @pytest.mark.parametrize("variant", ["pw", "ss"])
    def test_shared_grad_is_sum_of_streams(self, variant):
        # no dropout: the streams would otherwise draw different masks alone and together
        net = build_network(6, 3, variant, widths=SMALL, dropout_keep=1.0)
        sig, labels, X = toy_problem(variant)
        ge = analytic(net, "e", sig, labels, X, 0)
        gu = analytic(net, "ur", sig, labels, X, 0)
        go = analytic(net, "o", sig, labels, X, 0)
        shared = {id(a) for a, _ in net.aliased_pairs()}
        checked = 0
        for p, a, b, c in zip(net.params(), ge, gu, go):
            if id(p) in shared:
                np.testing.assert_allclose(c, a + b, rtol=1e-12, atol=1e-15)
                assert np.any(a != 0) and np.any(b != 0)
                checked += 1
        assert checked == len(net.aliased_pairs())


class TestLosses:
    def test_one_hot_match(self):
        assert loss_e(np.eye(3), np.eye(3)) <= 3 * 1e-11

    def test_uniform_two_class(self):
        assert loss_e([[0.5, 0.5]], [[1.0, 0.0]]) == pytest.approx(-2 * np.log(0.5), abs=1e-12)
        assert loss_e([[0.5, 0.5]], [[1.0, 0.0]]) == pytest.approx(1.3863, abs=1e-4)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        assert loss_e(rng.dirichlet(np.ones(4), 10), rng.dirichlet(np.ones(4), 10)) >= 0

    def test_reconstruction_cases(self):
        assert loss_ur(np.ones((2, 3)), np.ones((2, 3))) == 0.0
        assert loss_ur(np.full((4, 5), 0.5), np.full((4, 5), 0.25)) == 0.0625

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            loss_e(np.ones((2, 3)), np.ones((2, 2)))
        with pytest.raises(ShapeError):
            loss_ur(np.ones((2, 3)), np.ones((3, 2)))


class TestStructure:
    def test_pw_aliases(self):
        net = build_network(198, 4, "pw")
        assert len(net.ur_encoder) + len(net.ur_decoder) == 8
        assert net.sharing == [(1, 1), (2, 2), (3, 3), (4, 4)]
        assert all(a is b for a, b in net.aliased_pairs())

    @pytest.mark.parametrize("B,C", [(10, 2), (50, 5)])
    def test_ss_aliases(self, B, C):
        net = build_network(B, C, "ss", widths=SMALL)
        assert net.sharing == [(3, 3), (4, 4)]
        assert all(a is b for a, b in net.aliased_pairs())

    def test_ur_only_shares_nothing(self):
        net = build_network(10, 3, "pw", "ur_only", widths=SMALL)
        assert net.sharing == [] and net.aliased_pairs() == []

    def test_mutation_visible_in_both_streams(self):
        net = build_network(10, 3, "pw", widths=SMALL)
        e_w = net.e_blocks[0].params()[0]
        e_w.value[0, 0] = 123.0
        assert net.ur_encoder[0].params()[0].value[0, 0] == 123.0

    def test_shared_batchnorm_buffers(self):
        net = build_network(10, 3, "pw", widths=SMALL)
        assert net.e_blocks[0].layers[1].running_mean is net.ur_encoder[0].layers[1].running_mean
        stream = build_network(10, 3, "pw", widths=SMALL, bn_stats="stream")
        assert stream.e_blocks[0].layers[1].running_mean is not stream.ur_encoder[0].layers[1].running_mean

    @pytest.mark.parametrize("variant,extra_blocks", [("pw", ()), ("ss", (0, 1))])
    def test_parameter_overhead(self, variant, extra_blocks):
        net = build_network(12, 3, variant, widths=SMALL)
        extra = sum(p.value.size for i in extra_blocks for p in net.e_blocks[i].params())
        assert net.n_parameters("all") - net.n_parameters("ur") == extra

    @pytest.mark.parametrize("kw", [{"variant": "xx"}, {"ablation": "half"}, {"bn_stats": "both"}])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            build_network(10, 3, **kw)

    def test_bad_dims(self):
        with pytest.raises(ConfigError):
            build_network(3, 3)


class TestForward:
    @pytest.mark.parametrize("variant", ["pw", "ss"])
    def test_e_rows_on_simplex(self, variant):
        net = build_network(20, 4, variant, widths=SMALL)
        P = e_net_forward(np.random.default_rng(0).random((30, 20)), net, "train")
        assert np.all(P >= 0) and np.max(np.abs(P.sum(1) - 1)) <= 1e-12

    @pytest.mark.parametrize("variant", ["pw", "ss"])
    def test_near_uniform_at_init(self, variant):
        net = build_network(50, 4, variant)
        P = e_net_forward(np.random.default_rng(1).random((40, 50)), net, "infer")
        assert np.all(np.abs(P - 0.25) <= 0.2)

    def test_ur_outputs(self):
        net = build_network(20, 4, "ss", widths=SMALL)
        A, Xh = ur_net_forward(np.random.default_rng(2).random((6, 5, 20)), net, "train")
        assert A.shape == (6, 5, 4) and Xh.shape == (6, 5, 20)
        assert np.max(np.abs(A.sum(-1) - 1)) <= 1e-12
        assert np.all((Xh > 0) & (Xh < 1))

    def test_infer_is_deterministic_and_train_differs(self):
        net = build_network(20, 4, "pw", widths=SMALL)
        X = np.random.default_rng(3).random((10, 20))
        a = e_net_forward(X, net, "infer")
        np.testing.assert_array_equal(a, e_net_forward(X, net, "infer"))
        assert not np.array_equal(a, e_net_forward(X, net, "train"))

    def test_ss_rejects_batches(self):
        net = build_network(20, 4, "ss", widths=SMALL)
        with pytest.raises(ShapeError):
            ur_net_forward(np.zeros((2, 3, 3, 20)), net)

    def test_pw_and_ss_agree_on_one_pixel(self):
        B, C = 12, 3
        pw = build_network(B, C, "pw", widths=SMALL, seed=0)
        ss = build_network(B, C, "ss", widths=SMALL, seed=1)

        def copy_block(src, dst, transpose=False):
            (W, b), (K, kb) = src.layers[0].params(), dst.layers[0].params()
            K.value[...] = 0.0
            kh, kw = K.value.shape[:2]
            K.value[kh // 2, kw // 2] = W.value.T if transpose else W.value
            kb.value[...] = b.value
            if len(src.layers[1].params()) == 2:
                for s, d in zip(src.layers[1].params(), dst.layers[1].params()):
                    d.value[...] = s.value

        for i in range(4):
            copy_block(pw.ur_encoder[i], ss.ur_encoder[i], transpose=(i == 3))
            copy_block(pw.ur_decoder[i], ss.ur_decoder[i], transpose=True)
        x = np.random.default_rng(4).uniform(0.05, 0.9, B)
        A_pw, X_pw = ur_net_forward(x[None], pw, "infer")
        A_ss, X_ss = ur_net_forward(x[None, None], ss, "infer")
        assert np.max(np.abs(A_pw[0] - A_ss[0, 0])) < 1e-10
        assert np.max(np.abs(X_pw[0] - X_ss[0, 0])) < 1e-10


def toy_bundle(cube, C, seed=0):
    rng = np.random.default_rng(seed)
    X = cube.reshape(-1, cube.shape[-1])
    idx = rng.choice(len(X), 3 * C, replace=False)
    labels = np.eye(C)[np.arange(3 * C) % C]
    return EndmemberBundle(X[idx], labels, np.arange(3 * C), X[idx], X[idx[:C]], np.arange(3 * C) % C, idx)


@pytest.fixture(scope="module")
def toy_cube():
    rng = np.random.default_rng(5)
    E = rng.uniform(0.1, 0.9, (15, 3))
    A = rng.dirichlet(np.ones(3), (8, 8))
    return A @ E.T


class TestTraining:
    @pytest.mark.parametrize("variant", ["pw", "ss"])
    def test_aliases_bit_identical_after_training(self, toy_cube, variant):
        cfg = TrainConfig(epochs=5, variant=variant)
        net, _ = train(toy_cube, toy_bundle(toy_cube, 3), cfg, SMALL)
        assert all(a is b for a, b in net.aliased_pairs())
        for a, b in net.aliased_pairs():
            assert a.value.tobytes() == b.value.tobytes()

    def test_log_records_every_epoch(self, toy_cube):
        _, rec = train(toy_cube, toy_bundle(toy_cube, 3), TrainConfig(epochs=7), SMALL)
        assert [r.epoch for r in rec] == list(range(1, 8))
        assert all(r.loss_o == r.loss_e + r.loss_ur for r in rec)
        assert rec[0].lr == 0.1 and rec[-1].lr < rec[0].lr

    def test_endmember_loss_decreases(self, toy_cube):
        _, rec = train(toy_cube, toy_bundle(toy_cube, 3), TrainConfig(epochs=200), SMALL)
        assert rec[-1].loss_e < rec[0].loss_e

    def test_deterministic(self, toy_cube):
        b = toy_bundle(toy_cube, 3)
        n1, _ = train(toy_cube, b, TrainConfig(epochs=10, variant="ss"), SMALL)
        n2, _ = train(toy_cube, b, TrainConfig(epochs=10, variant="ss"), SMALL)
        for p, q in zip(n1.params(), n2.params()):
            assert p.value.tobytes() == q.value.tobytes()

    def test_ablations(self, toy_cube):
        b = toy_bundle(toy_cube, 3)
        _, rec_u = train(toy_cube, b, TrainConfig(epochs=3, ablation="ur_only"), SMALL)
        assert all(r.loss_e == 0.0 and r.loss_ur > 0 for r in rec_u)
        net_e, rec_e = train(toy_cube, b, TrainConfig(epochs=3, ablation="e_only"), SMALL)
        assert all(r.loss_ur == 0.0 and r.loss_e > 0 for r in rec_e)
        # the e_only run never touches the decoder
        fresh = build_network(15, 3, "pw", "e_only", SMALL)
        for p, q in zip(net_e.ur_decoder[0].params(), fresh.ur_decoder[0].params()):
            np.testing.assert_array_equal(p.value, q.value)

    @pytest.mark.parametrize("variant,ablation", [("pw", "full"), ("ss", "full"), ("pw", "e_only")])
    def test_inferred_abundances_on_simplex(self, toy_cube, variant, ablation):
        net, _ = train(toy_cube, toy_bundle(toy_cube, 3), TrainConfig(epochs=5, variant=variant,
                                                                      ablation=ablation), SMALL)
        A = infer_abundances(toy_cube, net)
        assert A.shape == (8, 8, 3)
        assert np.all(A >= -1e-12) and np.max(np.abs(A.sum(-1) - 1)) <= 1e-6

    def test_pw_inference_is_pixel_equivariant(self, toy_cube):
        net, _ = train(toy_cube, toy_bundle(toy_cube, 3), TrainConfig(epochs=5), SMALL)
        perm = np.random.default_rng(0).permutation(64)
        flat = toy_cube.reshape(64, 1, -1)
        a = infer_abundances(flat, net)[:, 0]
        b = infer_abundances(flat[perm], net)[:, 0]
        np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-14)

    def test_ss_constant_image_interior(self):
        net = build_network(20, 3, "ss", widths=SMALL)
        net.trained = True
        img = np.tile(np.random.default_rng(6).random(20), (16, 16, 1))
        A = infer_abundances(img, net)
        # zero padding only reaches 3 pixels before and 6 after (pooling pads after)
        assert np.ptp(A[3:-6, 3:-6], axis=(0, 1)).max() == 0.0

    def test_untrained_warns(self, toy_cube):
        with pytest.warns(RuntimeWarning):
            infer_abundances(toy_cube, build_network(15, 3, widths=SMALL))

    def test_band_mismatch(self, toy_cube):
        bundle = toy_bundle(toy_cube, 3)
        bundle.signatures = bundle.signatures[:, :-1]
        with pytest.raises(ConfigError):
            train(toy_cube, bundle, TrainConfig(epochs=1), SMALL)


class TestCheckpoint:
    @pytest.mark.parametrize("variant", ["pw", "ss"])
    def test_round_trip(self, tmp_path, toy_cube, variant):
        cfg = TrainConfig(epochs=4, variant=variant)
        net, rec = train(toy_cube, toy_bundle(toy_cube, 3), cfg, SMALL)
        save_checkpoint(tmp_path / "n.egun", net, cfg)
        back, header = load_checkpoint(tmp_path / "n.egun")
        assert header["train"]["epochs"] == 4 and back.trained and back.epoch == 4
        for p, q in zip(net.params(), back.params()):
            np.testing.assert_array_equal(p.value, q.value)
        for p, q in zip(net.buffers(), back.buffers()):
            np.testing.assert_array_equal(p, q)
        assert all(a is b for a, b in back.aliased_pairs())
        np.testing.assert_array_equal(infer_abundances(toy_cube, net), infer_abundances(toy_cube, back))

    def test_training_log_round_trip(self, tmp_path, toy_cube):
        _, rec = train(toy_cube, toy_bundle(toy_cube, 3), TrainConfig(epochs=3), SMALL)
        log = read_training_log(write_training_log(tmp_path / "log.csv", rec))
        np.testing.assert_array_equal(log["loss_ur"], [r.loss_ur for r in rec])
        assert len(log["epoch"]) == 3
