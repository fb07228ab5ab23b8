import numpy as np
import pytest

import topothin.parallel.engine as engine_mod
from interleave import explore
from oracles import section_topology
from topothin.image import GrayImage, Point
from topothin.parallel import (
    CompletionLedger,
    ConfigError,
    EngineConfig,
    PixelClaimTable,
    SchedulerError,
    Worker,
    WorkSets,
    Zone,
    commit_lower,
    make_queue,
    merge,
    run_parallel,
    run_parallel_stats,
    split,
    worker_pass,
    worker_steps,
)
from topothin.skeleton import is_stable, lambda_skeleton
from topothin.synthetic import SyntheticSpec, gen_synthetic

VARIANTS = ["guarded", "spin_wait"]
BACKENDS = ["native", "python"]


def rand(seed, size=32, hi=256):
    return GrayImage(np.random.default_rng(seed).integers(0, hi, size=(size, size)))


def interior(h, w, rows=None):
    lo, hi = rows or (1, h - 1)
    return [y * w + x for y in range(lo, hi) for x in range(1, w - 1)]


class TestSplit:
    def test_512_into_8(self):
        zones = split((512, 512), 8)
        sizes = [len(z) for z in zones]
        assert sorted(sizes) == [63, 63] + [64] * 6
        assert max(sizes) - min(sizes) <= 1
        assert zones[0].row_lo == 1 and zones[-1].row_hi == 511
        assert all(a.row_hi == b.row_lo for a, b in zip(zones, zones[1:]))
        assert [z.owner for z in zones] == list(range(8))

    def test_single_and_one_row_each(self):
        F = GrayImage(np.zeros((5, 5)))
        assert split(F, 1) == [Zone(1, 4, 0)]
        assert [(z.row_lo, z.row_hi) for z in split(F, 3)] == [(1, 2), (2, 3), (3, 4)]

    def test_too_many_zones(self):
        with pytest.raises(ConfigError):
            split((5, 5), 4)
        with pytest.raises(ConfigError):
            split((5, 5), 0)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            EngineConfig(threads=0)
        with pytest.raises(ConfigError):
            EngineConfig(lam=-1)
        with pytest.raises(ConfigError):
            EngineConfig(queue_capacity=7)
        with pytest.raises(ConfigError):
            EngineConfig(variant="lockfree")
        with pytest.raises(ConfigError):
            EngineConfig(backend="gpu")
        assert EngineConfig(variant="spin").variant == "spin_wait"


class TestCommitLower:
    def test_uncontended_target_is_lowered_to_alpha(self):
        a = np.zeros((5, 5), dtype=np.uint8)
        a[2, 2] = 10
        a[1, 1] = 3
        claims = PixelClaimTable(a.size)
        assert commit_lower(a, Point(2, 2), 10, claims)
        assert a[2, 2] == 3 and claims.held() == 0

    def test_non_target_untouched(self):
        a = np.zeros((5, 5), dtype=np.uint8)
        a[2, 2] = 10
        claims = PixelClaimTable(a.size)
        assert not commit_lower(a, 12, 9, claims)
        assert a[2, 2] == 10 and claims.held() == 0

    def test_neighbor_lowering_invalidates(self):
        # 2x2 block minus its bottom-right pixel, lambda = 0
        a = np.zeros((5, 5), dtype=np.uint8)
        a[1, 1] = a[1, 2] = a[2, 1] = 9
        claims = PixelClaimTable(a.size)
        p, r = Point(1, 1), Point(2, 1)  # P then R
        # both are simple and not end points in the initial image
        gen_r = engine_mod.commit_steps(a, r.y * 5 + r.x, 0, claims, owner=2, trace=True)
        steps = [next(gen_r) for _ in range(3)]  # R has claimed part of its block
        assert steps[0] == ("claim", r.y * 5 + r.x - 6)
        assert commit_lower(a, p, 0, PixelClaimTable(a.size), owner=1)
        assert a[1, 1] == 0
        # R is now an end point with contrast 9 > 0: the re-check refuses it
        with pytest.raises(StopIteration) as stop:
            while True:
                next(gen_r)
        assert stop.value.value is False
        assert a[1, 2] == 9 and claims.held() == 0

    def test_claims_released_on_error(self):
        a = np.zeros((4, 4), dtype=np.uint8)
        claims = PixelClaimTable(a.size)
        gen = engine_mod.commit_steps(a, 5, 0, claims, owner=0, trace=True)
        next(gen)
        next(gen)
        assert claims.held() == 1
        gen.close()
        assert claims.held() == 0


class TestWorkerPass:
    def _worker(self, F, cands, variant="guarded"):
        h, w = F.pixels.shape
        q = make_queue(variant, F.pixels.size, 4096, 1)
        q.register_producer(0)
        wk = Worker(0, 0, [Zone(1, h - 1, 0)], WorkSets(candidates=cands, shared_out=q))
        return wk, q

    def test_constant_zone(self):
        F = GrayImage(np.full((8, 8), 4))
        wk, q = self._worker(F, interior(8, 8))
        a = F.pixels.copy()
        st = worker_pass(wk, a, EngineConfig(lam=10))
        assert (st.lowered, st.pushed, st.examined) == (0, 0, 36)
        assert len(wk.work.private_rejects) == 36 and len(q) == 0

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_isolated_peak_one_lowering_eight_pushes(self, variant):
        F = gen_synthetic(SyntheticSpec("isolated_peaks", 16, 16, {"contrast": 10, "seed": 4}))
        wk, q = self._worker(F, interior(16, 16), variant)
        a = F.pixels.copy()
        st = worker_pass(wk, a, EngineConfig(lam=10, variant=variant))
        assert (st.lowered, st.pushed) == (1, 8)
        assert a.max() == 0
        peak = int(np.flatnonzero(F.pixels)[0])
        assert wk.work.touched == [peak]
        y, x = divmod(peak, 16)
        assert sorted(q.drain_nowait()) == sorted(
            (y + dy) * 16 + x + dx for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx)

    def test_out_of_zone_candidates_are_forwarded(self):
        F = GrayImage(np.zeros((8, 8)))
        q = make_queue("guarded", 64, 64, 1)
        q.register_producer(0)
        wk = Worker(0, 0, [Zone(1, 4, 0)], WorkSets(candidates=[9, 50], shared_out=q))
        st = worker_pass(wk, F.pixels.copy(), EngineConfig())
        assert st.forwarded == 1 and st.examined == 1 and q.drain_nowait() == [50]

    def test_invalidated_candidate(self):
        a = np.zeros((5, 5), dtype=np.uint8)
        a[1, 1] = a[1, 2] = a[2, 1] = 9
        q = make_queue("guarded", 25, 64, 1)
        q.register_producer(0)
        wk = Worker(0, 0, [Zone(1, 4, 0)], WorkSets(candidates=[7], shared_out=q))

        def hook(owner, step):
            # someone else lowers P right after the scan found R
            if step == ("scan", 0):
                pass
            elif step == ("claim", 1):
                commit_lower(a, Point(1, 1), 0, PixelClaimTable(25), owner=9)

        st = worker_pass(wk, a, EngineConfig(), hook=hook)
        assert (st.examined, st.lowered, st.invalidated) == (1, 0, 1)
        assert 7 in wk.work.private_rejects


class TestMerge:
    def _finished(self, ledger, wid, zone, rejects=()):
        ledger.finish(wid)
        return Worker(wid, 0, [zone], WorkSets(private_rejects=set(rejects)))

    def test_successor_covers_union(self):
        led = CompletionLedger()
        a = self._finished(led, 0, Zone(1, 5, 0), {7})
        b = self._finished(led, 1, Zone(5, 9, 1), {40})
        q = make_queue("guarded", 100)
        q.register_producer(0)
        q.register_producer(1)
        q.push(12, 0)
        s = merge(led, a, b, 2, q)
        assert s.zones == [Zone(1, 9, 2)]
        assert s.work.private_rejects == {7, 40}
        assert list(s.work.candidates) == [12]
        assert led.pairings == [((0, 1), 2)] and s.generation == 1

    def test_empty_queue_successor_has_nothing_to_do(self):
        led = CompletionLedger()
        a = self._finished(led, 0, Zone(1, 3, 0))
        b = self._finished(led, 1, Zone(3, 5, 1))
        q = make_queue("spin_wait", 36)
        q.register_producer(0)
        q.register_producer(1)
        s = merge(led, a, b, 2, q)
        s.work.shared_out = make_queue("spin_wait", 36, 8, 1)
        s.work.shared_out.register_producer(2)
        st = worker_pass(s, np.zeros((6, 6), dtype=np.uint8), EngineConfig())
        assert st.examined == 0 and st.lowered == 0

    def test_errors(self):
        led = CompletionLedger()
        a = self._finished(led, 0, Zone(1, 3, 0))
        b = Worker(1, 0, [Zone(3, 5, 1)])
        with pytest.raises(SchedulerError):
            merge(led, a, b, 2)  # b unfinished
        led.finish(1)
        merge(led, a, b, 2)
        with pytest.raises(SchedulerError):
            merge(led, a, b, 3)  # already paired
        with pytest.raises(SchedulerError):
            led.finish(1)
        led2 = CompletionLedger()
        c = self._finished(led2, 5, Zone(1, 2, 5))
        d = self._finished(led2, 6, Zone(2, 3, 6))
        q = make_queue("guarded", 10)
        q.register_producer(5)
        with pytest.raises(SchedulerError):
            merge(led2, c, d, 7, q)


class TestRunParallel:
    def test_constant_one_round(self):
        F = GrayImage(np.full((20, 20), 3))
        out, st = run_parallel_stats(F, EngineConfig(threads=8))
        assert out == F and st.rounds == 1 and st.lowerings == 0

    @pytest.mark.parametrize("n", [1, 2, 4, 8])
    def test_binary_reduction_trace(self, n):
        F = rand(0, 40)
        _, st = run_parallel_stats(F, EngineConfig(threads=n, lam=5))
        for trace in st.merge_trace:
            sizes = []
            gen_of = {}
            for parents, succ in trace:
                g = max(gen_of.get(p, 0) for p in parents) + 1
                gen_of[succ] = g
                while len(sizes) < g:
                    sizes.append(0)
                sizes[g - 1] += 1
            want = []
            m = n
            while m > 1:
                m = -(-m // 2)
                want.append(m)
            assert sizes == want

    def test_pairing_follows_completion_order(self):
        _, st = run_parallel_stats(rand(1, 40), EngineConfig(threads=8, lam=5))
        assert st.merge_trace[0]
        flat = [p for parents, _ in st.merge_trace[0] for p in parents]
        assert len(flat) == len(set(flat))

    @pytest.mark.parametrize("backend", BACKENDS)
    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("n", [1, 3, 8])
    def test_isolated_peaks_removed(self, variant, n, backend):
        F = gen_synthetic(SyntheticSpec("isolated_peaks", 48, 48, {"contrast": 10, "count": 12}))
        zero = GrayImage(np.zeros((48, 48)))
        assert run_parallel(F, EngineConfig(n, 10, variant, backend=backend)) == zero
        assert run_parallel(F, EngineConfig(n, 9, variant, backend=backend)) == F

    @pytest.mark.parametrize("backend", BACKENDS)
    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("seed", range(3))
    def test_postconditions_and_topology(self, variant, seed, backend):
        F = rand(seed, 48)
        for n in (1, 2, 5):
            for lam in (0, 7):
                cfg = EngineConfig(n, lam, variant, queue_capacity=8, backend=backend)
                G = run_parallel(F, cfg)
                assert np.all(G.pixels <= F.pixels)
                assert np.array_equal(G.pixels[[0, -1]], F.pixels[[0, -1]])
                assert np.array_equal(G.pixels[:, [0, -1]], F.pixels[:, [0, -1]])
                assert is_stable(G, lam)
                if lam == 0:
                    assert section_topology(G.pixels) == section_topology(F.pixels)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_deterministic_single_guarded(self, backend):
        F = rand(5, 48)
        cfg = EngineConfig(1, 5, "guarded", backend=backend)
        assert run_parallel(F, cfg) == run_parallel(F, cfg)


    def test_threads_clamped_to_rows(self):
        F = rand(2, 6)
        assert is_stable(run_parallel(F, EngineConfig(16, 5)), 5)

    def test_tiny_images(self):
        for shape in [(1, 1), (2, 9), (3, 3)]:
            F = GrayImage(np.random.default_rng(0).integers(0, 256, size=shape))
            out = run_parallel(F, EngineConfig(4, 5))
            assert is_stable(out, 5) and out.pixels.shape == shape

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_worker_error_surfaces(self, monkeypatch, backend):
        def broken(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr(engine_mod, "worker_steps", broken)
        monkeypatch.setattr(engine_mod, "native_worker_pass", broken)
        with pytest.raises(RuntimeError, match="boom"):
            run_parallel(rand(0, 16), EngineConfig(4, 5, backend=backend))

    def test_hook_sees_steps(self):
        seen = set()
        run_parallel(rand(0, 12), EngineConfig(2, 5), hook=lambda owner, step: seen.add(step[0]))
        assert {"claim", "commit", "push", "scan"} <= seen


# --- bounded exhaustive interleavings -------------------------------------------

BLOCK = np.array([[0, 0, 0, 0], [0, 5, 5, 0], [0, 5, 5, 0], [0, 0, 0, 0]], dtype=np.uint8)


def two_worker_setup(img, lam, variant="guarded"):
    def setup():
        a = img.copy()
        h, w = a.shape
        claims = PixelClaimTable(a.size)
        q = make_queue(variant, a.size, 4096, 2)
        cfg = EngineConfig(2, lam, variant)
        gens = []
        for wid, z in enumerate(split((h, w), 2)):
            wk = Worker(wid, 0, [Zone(z.row_lo, z.row_hi, wid)],
                        WorkSets(candidates=interior(h, w, (z.row_lo, z.row_hi))))
            q.register_producer(wid)
            wk.work.shared_out = q
            gens.append(worker_steps(wk, a, cfg, claims, trace=True))
        return a, claims, gens, [0, 1], lam
    return setup


@pytest.mark.parametrize("variant", VARIANTS)
def test_interleavings_on_contended_block(variant):
    out = explore(two_worker_setup(BLOCK, 0, variant), preemption_bound=2)
    assert not out.deadlocks and not out.invalid
    assert out.schedules > 100 and out.commits_checked > 0
    for final in out.finals:
        a = np.frombuffer(final, dtype=np.uint8).reshape(4, 4)
        assert section_topology(a) == section_topology(BLOCK)


def test_checker_catches_missing_recheck(monkeypatch):
    import numba

    @numba.njit
    def blind(a, y, x, lam):  # lowers without re-checking the target
        c = a[y, x]
        best = -1
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                v = a[y + dy, x + dx]
                if (dy or dx) and v < c and v > best:
                    best = v
        if best < 0:
            return False
        a[y, x] = best
        return True

    monkeypatch.setattr(engine_mod, "lowering_kernel", lambda target: blind)
    out = explore(two_worker_setup(BLOCK, 0), preemption_bound=1)
    assert out.invalid


def test_checker_catches_deadlock():
    def opposite_order(claims, owner, first, second):
        for i in (first, second):
            yield ("claim", i)
            while not claims.try_claim(i, owner):
                yield ("wait", i)
        yield ("commit", -1)
        claims.release(first, owner)
        claims.release(second, owner)

    def setup():
        claims = PixelClaimTable(4)
        gens = [opposite_order(claims, 0, 1, 2), opposite_order(claims, 1, 2, 1)]
        return np.zeros((2, 2), dtype=np.uint8), claims, gens, [0, 1], 0

    out = explore(setup, preemption_bound=2, check_commits=False)
    assert out.deadlocks
