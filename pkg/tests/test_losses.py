"""Loss terms: analytic examples, exact identities, FD gradient oracles."""

import numpy as np
import pytest

from trajfield import diffcore as dc
from trajfield import losses as ls
from trajfield import renderer as rd
from trajfield.fieldnet import FieldNet, FieldOutput, ModelConfig
from trajfield.scenegen import make_preset, make_scene
from trajfield.scenegen.oracle import OracleField
from trajfield.trajectory import basis_matrix

from test_renderer import ConstField, axis_camera, axis_ndc


def tiny_net(seed=0, T=6, K=3):
    cfg = ModelConfig(T=T, K=K, trunk_width=8, trunk_depth=3, skip_layer=2,
                      embed_dim=6, color_width=8, freqs_spacetime=3,
                      freqs_dir=2, init_seed=seed)
    net = FieldNet(cfg)
    net.params["phi.w"].data[:] = np.random.default_rng(seed + 100).normal(
        0, 0.05, net.params["phi.w"].shape)
    return net


def micro_rays(t0=1, n_pix=2):
    cam = axis_camera(width=16, height=12, focal=14.0)
    ndc = axis_ndc(cam)
    rays = rd.generate_rays(cam, [[4, 6], [8, 10]][:n_pix], t0, ndc)
    return rays, ndc, cam


class TestPhoto:
    def test_identical_zero(self):
        img = np.random.default_rng(0).uniform(0, 1, (10, 3))
        assert ls.photo_loss(dc.Tensor(img), img).item() == 0.0

    def test_black_vs_white(self):
        black = dc.Tensor(np.zeros((5, 3)))
        white = np.ones((5, 3))
        assert ls.photo_loss(black, white).item() == 3.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ls.photo_loss(dc.Tensor(np.zeros((5, 3))), np.zeros((4, 3)))

    def test_gradient_is_two_diff_over_batch(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(0, 1, (7, 3)), rng.uniform(0, 1, (7, 3))
        at = dc.Tensor(a, requires_grad=True)
        ls.photo_loss(at, b).backward()
        assert np.allclose(at.grad, 2.0 * (a - b) / 7)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(2)
        a = dc.Tensor(rng.uniform(0.2, 0.8, (4, 3)))
        b = rng.uniform(0, 1, (4, 3))
        rep = dc.gradient_check(lambda ts: ls.photo_loss(ts[0], b), [a],
                                tolerance=1e-6)
        assert rep.passed, str(rep)


class TestTemporalPhoto:
    def test_static_field_equals_frame_loss(self):
        f = ConstField(4.0, [0.3, 0.6, 0.2])
        rays, ndc, _ = micro_rays()
        depths = rd.sample_depths(8)
        ref = np.full((2, 3), 0.5)
        base = rd.render_frame(f, rays, depths)
        frame = ls.photo_loss(base.comp.rgb, ref).item()
        for t1 in (0, 3, 5):
            warped_loss, _ = ls.temporal_photo_loss(f, rays, t1, depths, ref,
                                                    base=base)
            assert warped_loss.item() == frame

    def test_t1_equals_t0(self):
        net = tiny_net()
        rays, ndc, _ = micro_rays(t0=2)
        depths = rd.sample_depths(8)
        ref = np.full((2, 3), 0.4)
        base = rd.render_frame(net, rays, depths)
        frame = ls.photo_loss(base.comp.rgb, ref).item()
        warped_loss, _ = ls.temporal_photo_loss(net, rays, 2, depths, ref,
                                                base=base)
        assert warped_loss.item() == frame

    def test_occluder_blending_beats_raw_warp(self):
        spec = make_preset("occluder", T=8)
        ds = make_scene(spec, seed=0)
        field = OracleField(spec, sigma_opaque=200.0)
        ndc = ds.ndc()
        t0, t1 = 1, 5
        rows, cols = np.mgrid[0:ds.height:3, 0:ds.width:3]
        px = np.stack([rows.ravel(), cols.ravel()], 1)
        rays = rd.generate_rays(ds.camera(t0), px, t0, ndc)
        depths = rd.sample_depths(48)
        ref = ds.rgb_at(t0, px)
        base = rd.render_frame(field, rays, depths)
        with_occ, _ = ls.temporal_photo_loss(field, rays, t1, depths, ref,
                                             base=base, use_occlusion=True)
        without, _ = ls.temporal_photo_loss(field, rays, t1, depths, ref,
                                            base=base, use_occlusion=False)
        assert with_occ.item() < without.item()


class TestCycle:
    def _state(self, rng, n=5, k=9):
        return (dc.Tensor(rng.normal(size=(n, k))),
                dc.Tensor(rng.uniform(0, 5, size=(n, 1))),
                dc.Tensor(rng.uniform(0, 1, size=(n, 3))))

    def test_identical_states_zero(self):
        rng = np.random.default_rng(3)
        s = self._state(rng)
        p_occ = dc.Tensor(rng.uniform(0, 1, size=(5, 1)))
        assert ls.cycle_loss(s, s, p_occ).item() == 0.0

    def test_fully_occluded_zero(self):
        rng = np.random.default_rng(4)
        a, b = self._state(rng), self._state(rng)
        assert ls.cycle_loss(a, b, dc.Tensor(np.ones((5, 1)))).item() == 0.0

    def test_unit_phi_difference(self):
        phi0 = np.zeros((1, 9))
        phi1 = np.zeros((1, 9))
        phi1[0, 4] = 1.0
        sig = np.array([[2.0]])
        c = np.full((1, 3), 0.5)
        val = ls.cycle_loss((dc.Tensor(phi0), dc.Tensor(sig), dc.Tensor(c)),
                            (dc.Tensor(phi1), dc.Tensor(sig), dc.Tensor(c)),
                            dc.Tensor(np.zeros((1, 1))))
        assert val.item() == 1.0

    def test_sigma_and_color_weighted_tenth(self):
        phi = np.zeros((1, 9))
        v = ls.cycle_loss(
            (dc.Tensor(phi), dc.Tensor([[1.0]]), dc.Tensor([[0.2, 0.2, 0.2]])),
            (dc.Tensor(phi), dc.Tensor([[3.0]]), dc.Tensor([[0.2, 0.5, 0.2]])),
            dc.Tensor(np.zeros((1, 1))))
        assert np.isclose(v.item(), 0.1 * 2.0 + 0.1 * 0.3, atol=1e-12)


class TestSvs:
    def test_point_mass_zero(self):
        a = np.zeros((1, 16))
        a[0, 5] = 1.0
        assert ls.svs_loss(dc.Tensor(a), 4).item() == 0.0

    def test_uniform_half_window(self):
        n = 16
        a = np.full((1, n), 1.0 / n)
        assert np.isclose(ls.svs_loss(dc.Tensor(a), n // 2).item(), 0.5,
                          atol=1e-12)

    def test_split_mass_brute_force(self):
        n = 16
        a = np.zeros((1, n))
        a[0, 0] = a[0, n - 1] = 0.5
        w = n // 4
        # brute-force window scan oracle
        best = max(a[0, z:z + w].sum() for z in range(n - w + 1))
        got = ls.svs_loss(dc.Tensor(a), w).item()
        assert np.isclose(got, 1.0 - best, atol=1e-12) and np.isclose(got, 0.5)

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            ls.svs_loss(dc.Tensor(np.zeros((1, 4))), 5)

    def test_zero_ray_contributes_zero(self):
        a = np.zeros((2, 8))
        a[0, 3] = 1.0
        acc = np.array([1.0, 0.0])
        assert ls.svs_loss(dc.Tensor(a), 2, acc=acc).item() == 0.0

    def test_range(self):
        rng = np.random.default_rng(5)
        w = rng.uniform(0, 1, size=(10, 32))
        a = w / w.sum(axis=1, keepdims=True)
        v = ls.svs_loss(dc.Tensor(a), 8).item()
        assert 0.0 <= v <= 1.0


class _TranslationField:
    """Every point everywhere translates rigidly by v per frame (in world
    space); exact coefficients via basis projection of the NDC track."""

    def __init__(self, v, ndc, T=6, sigma=3.0):
        self.v = np.asarray(v, dtype=np.float64)
        self.ndc = ndc
        self.sigma_v = sigma

        class cfg:
            pass
        cfg.T, cfg.K = T, T - 1
        self.cfg = cfg
        self.basis = basis_matrix(T, T - 1)
        self.times = np.arange(T, dtype=np.float64)

    def query_field(self, p, t):
        pn = p.data if isinstance(p, dc.Tensor) else np.asarray(p)
        x = self.ndc.ndc_to_world(pn)
        track = x[:, None, :] + (self.times - float(t))[None, :, None] \
            * self.v[None, None, :]
        ndc_track = self.ndc.world_to_ndc(track)
        phi = np.einsum("kt,mta->mak", self.basis, ndc_track).reshape(x.shape[0], -1)
        n = x.shape[0]
        return FieldOutput(phi=dc.Tensor(phi),
                           omega=dc.Tensor(np.full((n, 3), 0.5)),
                           sigma=dc.Tensor(np.full((n, 1), self.sigma_v)))

    def query_color(self, omega, t_query, d):
        return dc.Tensor(omega.data)


class TestTrajReg:
    def _setup(self, field, t0=2):
        rays, ndc, _ = micro_rays(t0=t0)
        # keep all samples inside the far cap so Euclidean mapping is exact
        depths = np.tile(np.linspace(0.05, 0.72, 8), (2, 1))
        base = rd.render_frame(field, rays, depths)
        return base, ndc

    def test_zero_trajectories_all_zero(self):
        f = ConstField(2.0, [0.5, 0.5, 0.5])
        base, ndc = self._setup(f)
        s, a, t = ls.traj_reg_terms(base, f, ndc, 2, 4, [-1, 1])
        assert s.item() == 0.0 and a.item() == 0.0 and t.item() == 0.0

    def test_rigid_translation(self):
        rays, ndc, _ = micro_rays(t0=2)
        v = np.array([0.04, -0.02, 0.0])
        f = _TranslationField(v, ndc, T=6)
        depths = np.tile(np.linspace(0.05, 0.72, 8), (2, 1))
        base = rd.render_frame(f, rays, depths)
        s, a, t = ls.traj_reg_terms(base, f, ndc, 2, 4, [-1, 1])
        assert s.item() < 1e-9
        assert a.item() < 1e-9
        assert np.isclose(t.item(), np.abs(v).sum(), atol=1e-9)

    def test_arap_vanishes_in_empty_space(self):
        rays, ndc, _ = micro_rays(t0=2)
        v = np.array([0.05, 0.0, 0.0])

        class Shear(_TranslationField):
            # non-rigid NDC motion: scale displacement by depth
            def query_field(self, p, t):
                out = super().query_field(p, t)
                pn = p.data if isinstance(p, dc.Tensor) else np.asarray(p)
                out.phi.data *= (0.5 + pn[:, 2:3].repeat(out.phi.shape[1], 1))
                return out

        f = Shear(v, ndc, T=6, sigma=0.0)   # sigma 0 -> p_e = sigmoid(3)
        depths = np.tile(np.linspace(0.05, 0.72, 8), (2, 1))
        base = rd.render_frame(f, rays, depths)
        _, arap_soft, _ = ls.traj_reg_terms(base, f, ndc, 2, 4, [-1, 1])
        f2 = Shear(v, ndc, T=6, sigma=50.0)  # occupied -> p_e ~ 0
        base2 = rd.render_frame(f2, rays, depths)
        _, arap_occ, _ = ls.traj_reg_terms(base2, f2, ndc, 2, 4, [-1, 1])
        # weight is (1 - p_e); empty space keeps only sigmoid(-3) of the term
        assert arap_soft.item() < 0.06 * arap_occ.item()

    def test_needs_two_samples(self):
        f = ConstField(1.0, [0.5, 0.5, 0.5])
        rays, ndc, _ = micro_rays()
        base = rd.render_frame(f, rays, np.tile([0.4], (2, 1)))
        with pytest.raises(ValueError):
            ls.traj_reg_terms(base, f, ndc, 1, 3, [-1, 1])


class TestDepth:
    def test_identical_zero(self):
        r = np.linspace(0.2, 0.8, 10)
        assert ls.depth_loss(dc.Tensor(r.copy()), r).item() < 1e-15

    def test_affine_invariance(self):
        ref = np.linspace(0.2, 0.8, 10)
        pred = 2.0 * ref + 5.0
        assert ls.depth_loss(dc.Tensor(pred), ref).item() < 1e-12

    def test_noise_matches_lsq_oracle(self):
        rng = np.random.default_rng(6)
        ref = rng.uniform(0.1, 0.9, 50)
        pred = ref + rng.normal(0, 0.05, 50)
        a, b = np.polyfit(pred, ref, 1)
        expect = np.abs(a * pred + b - ref).mean()
        got = ls.depth_loss(dc.Tensor(pred), ref).item()
        assert np.isclose(got, expect, atol=1e-10)

    def test_degenerate_reference_skipped(self):
        assert ls.depth_loss(dc.Tensor(np.linspace(0, 1, 5)),
                             np.full(5, 0.3)) is None

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(7)
        pred = dc.Tensor(rng.uniform(0.2, 0.8, 6))
        ref = rng.uniform(0.2, 0.8, 6)
        rep = dc.gradient_check(lambda ts: ls.depth_loss(ts[0], ref), [pred],
                                tolerance=1e-4)
        assert rep.passed, str(rep)


class TestFlow:
    def test_static_opaque_field_zero_flow(self):
        f = ConstField(1e4, [0.5, 0.5, 0.5])
        rays, ndc, cam = micro_rays(t0=1)
        depths = rd.sample_depths(16)
        base = rd.render_frame(f, rays, depths)
        gt = np.array([[1.5, -0.5], [0.25, 2.0]])
        tgt = ls.FlowTarget(dt=1, cam=cam, gt=gt)
        got = ls.flow_loss(base, f, ndc, 1, rays.pixels, tgt).item()
        assert np.isclose(got, np.abs(gt).sum(axis=1).mean(), atol=1e-6)

    def test_parallax_flow_from_gt_depth(self):
        # translating camera over a static scene: predicted flow from the
        # oracle field equals the dataset's analytic parallax flow
        spec = make_preset("static-plane", T=6)
        ds = make_scene(spec, seed=0)
        field = OracleField(spec, sigma_opaque=400.0)
        ndc = ds.ndc()
        t0 = 2
        rows, cols = np.mgrid[8:ds.height - 8:5, 8:ds.width - 8:7]
        px = np.stack([rows.ravel(), cols.ravel()], 1)
        rays = rd.generate_rays(ds.camera(t0), px, t0, ndc)
        base = rd.render_frame(field, rays, rd.sample_depths(64))
        for dt in (-1, 1):
            gt = ds.flow_at(t0, dt, px)
            tgt = ls.FlowTarget(dt=dt, cam=ds.camera(t0 + dt), gt=gt)
            err = ls.flow_loss(base, field, ndc, t0, px, tgt).item()
            assert err < 0.5, f"dt={dt}: mean L1 {err}"

    def test_gt_field_moving_scene(self):
        spec = make_preset("moving-sphere", T=6)
        ds = make_scene(spec, seed=0)
        field = OracleField(spec, sigma_opaque=400.0)
        ndc = ds.ndc()
        t0 = 3
        rows, cols = np.mgrid[8:ds.height - 8:5, 8:ds.width - 8:7]
        px = np.stack([rows.ravel(), cols.ravel()], 1)
        rays = rd.generate_rays(ds.camera(t0), px, t0, ndc)
        base = rd.render_frame(field, rays, rd.sample_depths(64))
        tgt = ls.FlowTarget(dt=1, cam=ds.camera(t0 + 1), gt=ds.flow_at(t0, 1, px))
        assert ls.flow_loss(base, field, ndc, t0, px, tgt).item() < 0.5


class TestTotal:
    def _batch(self, ds, t0, t1, cfg_n=8):
        from trajfield.trainer import TrainConfig, assemble_batch
        cfg = TrainConfig(n_samples=cfg_n, batch_uniform=4, batch_mask=2,
                          stratified=False, svs_window=2)
        rng = np.random.default_rng(0)
        px = np.array([[5, 7], [30, 40], [10, 60], [50, 20], [32, 48], [20, 30]])
        return assemble_batch(ds, t0, px, t1, cfg, rng, ds.ndc())

    def test_zero_reg_weights_leaves_photometric(self):
        ds = make_scene(make_preset("moving-sphere", T=6), seed=0)
        net = tiny_net(T=6, K=3)
        batch = self._batch(ds, 2, 4)
        w0 = ls.LossWeights(cycle=0, traj=0, svs=0, depth=0, flow=0)
        bd, root = ls.total_loss(net, batch, w0, ds.ndc())
        assert np.isclose(bd.total, bd.photometric, atol=1e-15)

    def test_breakdown_sums_to_total(self):
        ds = make_scene(make_preset("moving-sphere", T=6), seed=0)
        net = tiny_net(T=6, K=3)
        batch = self._batch(ds, 2, 4)
        w = ls.LossWeights(cycle=1.0, traj=0.1, svs=1e-3, depth=0.04, flow=0.02)
        bd, root = ls.total_loss(net, batch, w, ds.ndc())
        expect = (bd.photometric + w.cycle * bd.cycle + w.traj * bd.traj
                  + w.svs * bd.svs + w.depth * bd.depth + w.flow * bd.flow)
        assert np.isclose(bd.total, expect, atol=1e-12)
        assert bd.total == root.item()

    def test_all_terms_nonnegative(self):
        ds = make_scene(make_preset("moving-sphere", T=6), seed=0)
        net = tiny_net(T=6, K=3)
        bd, _ = ls.total_loss(net, self._batch(ds, 0, 2),
                              ls.LossWeights(), ds.ndc())
        for k, v in bd.to_dict().items():
            assert v >= 0.0, f"{k} negative: {v}"

    def test_neighbor_terms_skipped_at_ends(self):
        ds = make_scene(make_preset("moving-sphere", T=6), seed=0)
        net = tiny_net(T=6, K=3)
        bd, _ = ls.total_loss(net, self._batch(ds, 0, 2),
                              ls.LossWeights(), ds.ndc())
        assert bd.photo_prev == 0.0 and bd.photo_next > 0.0

    def test_one_adam_step_decreases_fixed_batch_loss(self):
        from trajfield.trainer import AdamState, TrainConfig, train_step
        ds = make_scene(make_preset("moving-sphere", T=6), seed=0)
        net = tiny_net(T=6, K=3)
        adam = AdamState.for_field(net)
        batch = self._batch(ds, 2, 4)
        cfg = TrainConfig(n_samples=8, batch_uniform=4, batch_mask=2,
                          shard_rays=6, lr=1e-4)
        w = ls.LossWeights()
        before = ls.total_loss(net, batch, w, ds.ndc())[0].total
        train_step(net, adam, batch, w, 1e-4, ds.ndc(), cfg)
        after = ls.total_loss(net, batch, w, ds.ndc())[0].total
        assert after < before
