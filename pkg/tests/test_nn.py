import numpy as np
import pytest

from helpers import finite_difference_check
from mtcascade.nn import (
    BiLstmLayer,
    CheckpointError,
    ConformerBlock,
    LstmLayer,
    ParamStore,
    ScheduleConfig,
    ShapeError,
    Tensor,
    adam_step,
    affine,
    load_arrays,
    lr_at,
    save_arrays,
)
from mtcascade.nn import tensor as T


def _zero_all_but_norms(store):
    for name, p in store.params.items():
        if name.endswith(".gamma"):
            p.data = np.ones_like(p.data)
        elif name.endswith(".beta"):
            p.data = np.zeros_like(p.data)
        else:
            p.data = np.zeros_like(p.data)


def _manual_layernorm(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


class TestAffine:
    def test_identity_weights_pass_through(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        w = Tensor(np.eye(2))
        b = Tensor(np.zeros(2))
        assert np.array_equal(affine(x, w, b).data, x.data)

    def test_hand_case(self):
        x = Tensor(np.array([[1.0, 2.0]]))
        w = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        b = Tensor(np.array([3.0, 3.0]))
        assert affine(x, w, b).data.tolist() == [[4.0, 5.0]]

    def test_shape_mismatch_names_both_shapes(self):
        x = Tensor(np.zeros((2, 3)))
        w = Tensor(np.zeros((4, 5)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            affine(x, w, Tensor(np.zeros(5)))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        store = ParamStore(seed=1, dtype=np.float64)
        w = store.param("w", (3, 4), fan_in=3)
        b = store.param("b", (4,), init="zeros")
        x = Tensor(rng.normal(size=(5, 3)))
        mixer = Tensor(rng.normal(size=(5, 4)))

        def build():
            store.zero_grads()
            return T.tsum(T.mul(affine(x, w, b), mixer))

        assert finite_difference_check(build, store.params, eps=1e-3, rtol=1e-4) is None


class TestConformerBlock:
    def test_zeroed_weights_reduce_to_layernorm(self):
        store = ParamStore(seed=2, dtype=np.float64)
        block = ConformerBlock(store, "b", dim=8, heads=2)
        _zero_all_but_norms(store)
        x = np.random.default_rng(1).normal(size=(5, 8))
        out = block(Tensor(x)).data
        assert np.allclose(out, _manual_layernorm(x), atol=1e-10)

    def test_single_frame_sequence(self):
        store = ParamStore(seed=3, dtype=np.float64)
        block = ConformerBlock(store, "b", dim=8, heads=2)
        out = block(Tensor(np.random.default_rng(2).normal(size=(1, 8))))
        assert out.data.shape == (1, 8)
        assert np.isfinite(out.data).all()

    def test_dim_not_divisible_by_heads_rejected(self):
        store = ParamStore(seed=4)
        with pytest.raises(ShapeError, match="divisible"):
            ConformerBlock(store, "b", dim=9, heads=2)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        store = ParamStore(seed=5, dtype=np.float64)
        block = ConformerBlock(store, "b", dim=8, heads=2, ff_mult=2, conv_kernel=3)
        x = Tensor(rng.normal(size=(4, 8)))
        mixer = Tensor(rng.normal(size=(4, 8)))

        def build():
            store.zero_grads()
            return T.tsum(T.mul(block(x), mixer))

        assert finite_difference_check(build, store.params, eps=1e-4, rtol=1e-3) is None


class TestLstm:
    def test_zero_weights_and_inputs_give_zero_states(self):
        store = ParamStore(seed=6, dtype=np.float64)
        lstm = LstmLayer(store, "l", in_dim=3, hidden=4)
        for p in store.params.values():
            p.data = np.zeros_like(p.data)
        out = lstm(Tensor(np.zeros((5, 3))))
        assert np.array_equal(out.data, np.zeros((5, 4)))

    def test_empty_sequence(self):
        store = ParamStore(seed=7)
        bi = BiLstmLayer(store, "b", in_dim=3, hidden=4)
        out = bi(Tensor(np.zeros((0, 3), dtype=np.float32)))
        assert out.data.shape == (0, 8)

    def test_bilstm_concatenates_directions(self):
        rng = np.random.default_rng(4)
        store = ParamStore(seed=8, dtype=np.float64)
        bi = BiLstmLayer(store, "b", in_dim=3, hidden=4)
        x = rng.normal(size=(5, 3))
        out = bi(Tensor(x)).data
        fwd = bi.fwd(Tensor(x)).data
        bwd = bi.bwd(Tensor(x[::-1].copy())).data[::-1]
        assert np.allclose(out, np.concatenate([fwd, bwd], axis=-1))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        store = ParamStore(seed=9, dtype=np.float64)
        lstm = LstmLayer(store, "l", in_dim=4, hidden=3)
        x = Tensor(rng.normal(size=(3, 4)))
        mixer = Tensor(rng.normal(size=(3, 3)))

        def build():
            store.zero_grads()
            return T.tsum(T.mul(lstm(x), mixer))

        assert finite_difference_check(build, store.params, eps=1e-4, rtol=1e-3) is None

    def test_bilstm_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        store = ParamStore(seed=10, dtype=np.float64)
        bi = BiLstmLayer(store, "b", in_dim=3, hidden=2)
        x = Tensor(rng.normal(size=(3, 3)))
        mixer = Tensor(rng.normal(size=(3, 4)))

        def build():
            store.zero_grads()
            return T.tsum(T.mul(bi(x), mixer))

        assert finite_difference_check(build, store.params, eps=1e-4, rtol=1e-3) is None


class TestAdam:
    def test_zero_gradient_leaves_parameters_and_moments(self):
        store = ParamStore(seed=11, dtype=np.float64)
        p = store.param("p", (3,), init="ones")
        before = p.data.copy()
        p.grad = np.zeros(3)
        adam_step(store, lr=0.1, t=1)
        assert np.array_equal(p.data, before)
        assert np.array_equal(store.opt_state["p"]["m"], np.zeros(3))
        assert np.array_equal(store.opt_state["p"]["v"], np.zeros(3))

    def test_first_step_closed_form(self):
        # bias correction makes the first update -lr * g / (|g| + eps)
        store = ParamStore(seed=12, dtype=np.float64)
        p = store.param("p", (1,), init="zeros")
        g, lr, eps = 0.37, 0.01, 1e-8
        p.grad = np.array([g])
        adam_step(store, lr=lr, eps=eps, t=1)
        expected = -lr * g / (abs(g) + eps)
        assert p.data[0] == pytest.approx(expected, rel=1e-12)

    def test_zero_betas_reduce_to_rms_sgd(self):
        store = ParamStore(seed=13, dtype=np.float64)
        p = store.param("p", (1,), init="zeros")
        g, lr, eps = -1.7, 0.05, 1e-8
        deltas = []
        for t in (1, 2):
            before = p.data.copy()
            p.grad = np.array([g])
            adam_step(store, lr=lr, beta1=0.0, beta2=0.0, eps=eps, t=t)
            deltas.append(float(p.data[0] - before[0]))
        expected = -lr * g / (abs(g) + eps)
        assert deltas[0] == pytest.approx(expected, rel=1e-12)
        assert deltas[1] == pytest.approx(expected, rel=1e-12)

    def test_step_zero_rejected(self):
        store = ParamStore(seed=14)
        store.param("p", (1,))
        with pytest.raises(ValueError):
            adam_step(store, lr=0.1, t=0)


class TestSchedule:
    CFG = ScheduleConfig(warmup_steps=30_000, peak_lr=5e-4, total_steps=100_000,
                         floor_lr=0.0)

    def test_warmup_endpoints(self):
        assert lr_at(0, self.CFG) == 0.0
        assert lr_at(30_000, self.CFG) == pytest.approx(5e-4)

    def test_cosine_midpoint(self):
        cfg = ScheduleConfig(warmup_steps=100, peak_lr=1e-3, total_steps=1100,
                             floor_lr=2e-4)
        mid = 100 + (1100 - 100) // 2
        assert lr_at(mid, cfg) == pytest.approx((1e-3 + 2e-4) / 2)

    def test_clamped_at_floor_beyond_total(self):
        cfg = ScheduleConfig(warmup_steps=10, peak_lr=1e-3, total_steps=100,
                             floor_lr=1e-5)
        assert lr_at(100, cfg) == 1e-5
        assert lr_at(10_000, cfg) == 1e-5

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            ScheduleConfig(warmup_steps=10, peak_lr=1e-4, total_steps=5, floor_lr=0.0)
        with pytest.raises(ValueError):
            ScheduleConfig(warmup_steps=1, peak_lr=1e-4, total_steps=5, floor_lr=1.0)


class TestNumericInvariants:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(scale=5.0, size=(20, 9)))
        rows = T.softmax(x, axis=-1).data.sum(axis=-1)
        assert np.abs(rows - 1.0).max() < 1e-6

    def test_log_softmax_normalizes(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(scale=8.0, size=(6, 7, 5)))
        lse = np.logaddexp.reduce(T.log_softmax(x, axis=-1).data, axis=-1)
        assert np.abs(lse).max() < 1e-6

    def test_layernorm_pre_affine_statistics(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(50, 32)))
        out = T.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-6
        assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-4


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        arrays = {
            "enc.w": rng.normal(size=(4, 5)).astype(np.float32),
            "enc.b": rng.normal(size=(5,)).astype(np.float32),
            "dec.w": rng.normal(size=(2, 2)).astype(np.float64),
        }
        path = tmp_path / "m.ckpt"
        save_arrays(path, arrays, wiring={"kind": "test", "n": 3})
        back, wiring = load_arrays(path)
        assert wiring == {"kind": "test", "n": 3}
        for name, arr in arrays.items():
            assert back[name].tobytes() == arr.tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_arrays(path, {"a": np.zeros(2, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="bad magic"):
            load_arrays(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_arrays(path, {"a": np.arange(100, dtype=np.float32)})
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError, match="truncated"):
            load_arrays(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_arrays(path, {"a": np.zeros(2, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version mismatch"):
            load_arrays(path)

    def test_unknown_tensor_rejected_on_strict_load(self, tmp_path):
        store = ParamStore(seed=15)
        store.param("known", (2,))
        with pytest.raises(KeyError, match="unknown tensor"):
            store.load_state({"unknown": np.zeros(2, dtype=np.float32)}, strict=True)
