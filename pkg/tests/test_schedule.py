import numpy as np
import pytest

from infomax3d import autodiff as ad
from infomax3d.autodiff import tensor as T
from infomax3d.optim import Adam
from infomax3d.schedule import GroupedWarmup, PlateauScheduler, lr_at, warmup_multiplier


class TestAdam:
    def _single(self, x0=1.0, wd=0.0):
        store = ad.ParamStore(0)
        x = store.add("x", (1,))
        x.data[...] = x0
        return store, x, Adam({"x": x}, weight_decay=wd)

    def test_zero_gradient_only_weight_decay(self):
        store, x, opt = self._single(x0=2.0, wd=0.1)
        x.grad = np.zeros(1)
        opt.step(0.5)
        assert x.data[0] == pytest.approx(2.0 * (1 - 0.5 * 0.1))

    def test_zero_gradient_no_decay_unchanged(self):
        store, x, opt = self._single(x0=2.0)
        x.grad = np.zeros(1)
        opt.step(0.5)
        assert x.data[0] == 2.0

    def test_descent_direction(self):
        store, x, opt = self._single(x0=1.0)
        y = T.mul(x, x)
        store.zero_grad()
        T.sum_reduce(y).backward()
        opt.step(0.1)
        assert x.data[0] < 1.0

    def test_quadratic_convergence(self):
        store, x, opt = self._single(x0=1.0)
        for _ in range(100):
            store.zero_grad()
            T.sum_reduce(T.mul(x, x)).backward()
            opt.step(0.05)
        assert abs(x.data[0]) < 1e-3

    def test_nan_gradient_names_parameter(self):
        store, x, opt = self._single()
        x.grad = np.array([np.nan])
        with pytest.raises(ValueError, match="'x'"):
            opt.step(0.1)

    def test_state_roundtrip(self):
        store, x, opt = self._single()
        x.grad = np.ones(1)
        opt.step(0.1)
        state = opt.state_arrays()
        opt2 = Adam({"x": x})
        opt2.load_arrays(state)
        assert opt2.step_count == 1
        assert np.array_equal(opt2.m["x"], opt.m["x"])

    def test_per_parameter_rates(self):
        store = ad.ParamStore(0)
        a = store.add("a", (1,))
        b = store.add("b", (1,))
        a.grad = np.ones(1)
        b.grad = np.ones(1)
        opt = Adam({"a": a, "b": b})
        opt.step(lambda name: 0.1 if name == "a" else 0.0)
        assert a.data[0] != 0.0
        assert b.data[0] == 0.0


class TestWarmup:
    def test_midpoint_exact(self):
        assert lr_at(350, base_lr=8e-5, warmup_spans=(700,)) == 4e-5

    def test_after_span_full_rate(self):
        for step in (700, 900, 10_000):
            assert lr_at(step, base_lr=8e-5, warmup_spans=(700,)) == 8e-5

    def test_after_one_reduction(self):
        assert lr_at(1000, base_lr=8e-5, warmup_spans=(700,), plateau_multiplier=0.6) == pytest.approx(4.8e-5)

    def test_monotone_nondecreasing(self):
        spans = (700,)
        vals = [warmup_multiplier(s, spans, 0) for s in range(0, 800)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert vals[0] == 0.0 and vals[-1] == 1.0

    def test_three_group_sequential_ramp(self):
        spans = (700, 700, 350)
        # group 1 ramps over [0, 700]
        assert warmup_multiplier(350, spans, 0) == 0.5
        assert warmup_multiplier(700, spans, 0) == 1.0
        # group 2 waits, then ramps over [700, 1400]
        assert warmup_multiplier(700, spans, 1) == 0.0
        assert warmup_multiplier(1050, spans, 1) == 0.5
        assert warmup_multiplier(1400, spans, 1) == 1.0
        # group 3 waits until 1400, full at 1750
        assert warmup_multiplier(1400, spans, 2) == 0.0
        assert warmup_multiplier(1575, spans, 2) == 0.5
        assert warmup_multiplier(1750, spans, 2) == 1.0

    def test_group_ordering_holds_throughout(self):
        spans = (700, 700, 350)
        for step in range(0, 1800, 25):
            g = [warmup_multiplier(step, spans, i) for i in range(3)]
            assert g[0] >= g[1] >= g[2]

    def test_grouped_warmup_membership(self):
        w = GroupedWarmup(spans=(10, 10, 5), bn_names=frozenset({"net2d/l0/bn_gamma"}),
                          new_names=frozenset({"head/lin0/W"}))
        assert w.group_of("net2d/l0/bn_gamma") == 0
        assert w.group_of("head/lin0/W") == 1
        assert w.group_of("net2d/l0/msg/W") == 2
        assert w.multiplier("net2d/l0/bn_gamma", 5) == 0.5
        assert w.multiplier("head/lin0/W", 5) == 0.0


class TestPlateau:
    def test_reduction_fires_after_patience_plus_one(self):
        sched = PlateauScheduler(factor=0.6, patience=25, cooldown=20)
        sched.step(1.0)  # sets the best
        fired = []
        for i in range(2, 50):
            if sched.step(2.0):
                fired.append(i)
                break
        # 25 non-improving evaluations tolerated, the 26th fires
        assert fired == [27]
        assert sched.multiplier == pytest.approx(0.6)

    def test_improvement_resets_counter(self):
        sched = PlateauScheduler(factor=0.5, patience=3, cooldown=0)
        sched.step(1.0)
        for _ in range(3):
            sched.step(2.0)
        assert sched.num_bad == 3
        sched.step(0.5)  # strict improvement
        assert sched.num_bad == 0
        for _ in range(3):
            assert not sched.step(2.0)
        assert sched.step(2.0)

    def test_cooldown_suppresses_counting(self):
        sched = PlateauScheduler(factor=0.5, patience=2, cooldown=20)
        sched.step(1.0)
        fires = 0
        for _ in range(3):
            fires += sched.step(2.0)
        assert fires == 1
        # during the 20-evaluation cooldown, non-improvement must not count
        for _ in range(20):
            assert not sched.step(2.0)
            assert sched.num_bad == 0
        # counting resumes: patience 2 -> third bad evaluation fires again
        assert not sched.step(2.0)
        assert not sched.step(2.0)
        assert sched.step(2.0)
        assert sched.multiplier == pytest.approx(0.25)

    def test_equal_metric_is_not_improvement(self):
        sched = PlateauScheduler(factor=0.5, patience=0, cooldown=0)
        sched.step(1.0)
        assert sched.step(1.0)  # equal -> bad -> patience 0 exceeded

    def test_multiplier_monotone_nonincreasing(self, rng):
        sched = PlateauScheduler(factor=0.6, patience=2, cooldown=1)
        prev = 1.0
        for _ in range(200):
            sched.step(float(rng.normal()))
            assert sched.multiplier <= prev
            prev = sched.multiplier

    def test_state_roundtrip(self):
        sched = PlateauScheduler(factor=0.6, patience=25, cooldown=20)
        sched.step(1.0)
        sched.step(2.0)
        clone = PlateauScheduler.from_state(sched.state())
        assert clone.best == 1.0 and clone.num_bad == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            PlateauScheduler(factor=1.5)
        with pytest.raises(ValueError):
            PlateauScheduler(patience=-1)
