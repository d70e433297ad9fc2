import numpy as np
import pytest

from imprint import constitutive as con
from imprint import mfnn
from imprint import neural
from imprint.surrogate import SimSetting, gen_dataset, simulate_record


def _const_mlp(values, d_in):
    values = np.asarray(values, dtype=float)
    m = neural.init_mlp(d_in, values.size, 0)
    for W in m.weights:
        W[:] = 0.0
    for b in m.biases:
        b[:] = 0.0
    m.target_lo = values.copy()
    m.target_hi = values + 1.0
    return m


def _const_base(values):
    return mfnn.BaseModel(_const_mlp(values, 10), "params", np.zeros(4))


def _const_transfer(base, values, use_base_pred=True):
    values = np.asarray(values, dtype=float)
    if use_base_pred:
        # the augmented head emits correction factors on the base
        # prediction, so store values/anchor to predict exactly values
        values = values / mfnn._anchor_pred(base, np.zeros((1, 10)))[0]
    d_in = 14 if use_base_pred else 10
    return mfnn.TransferModel(base, _const_mlp(values, d_in),
                              use_base_pred, np.zeros(4))


def _const_committee(c1, c2, c3a, c3b, a1=0.0, a2=0.0, logits=(0.0, 0.0)):
    base = _const_base(c1)
    return mfnn.CommitteePredictor(
        base, _const_transfer(base, c2),
        [_const_transfer(base, c3a), _const_transfer(base, c3b)],
        [(0.3, 0.15), (0.3, 0.05)],
        a1, a2, np.asarray(logits, dtype=float))


class TestCombination:
    def test_reference_arithmetic(self):
        got = mfnn.combine_sources(0.19, 0.33, 1.0, 2.0, 3.0)
        assert got == pytest.approx(2.29, rel=1e-12)

    def test_alpha_construction_stays_convex(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a1, a2 = rng.normal(scale=4.0, size=2)
            cp = _const_committee([1.0] * 4, [2.0] * 4, [3.0] * 4, [3.0] * 4,
                                  a1=a1, a2=a2)
            assert 0.0 < cp.alpha1 < 1.0
            assert 0.0 < cp.alpha2 < 1.0
            assert cp.alpha1 + cp.alpha2 < 1.0
            assert cp.member_weights.sum() == pytest.approx(1.0, rel=1e-12)

    def test_prediction_bounded_by_sources(self):
        rng = np.random.default_rng(1)
        c1 = rng.uniform(1.0, 2.0, size=4)
        c2 = rng.uniform(2.0, 3.0, size=4)
        c3 = rng.uniform(0.5, 1.5, size=4)
        for _ in range(20):
            cp = _const_committee(c1, c2, c3, c3,
                                  a1=rng.normal(scale=3.0),
                                  a2=rng.normal(scale=3.0),
                                  logits=rng.normal(size=2))
            y = mfnn.predict(cp, np.ones(10))
            lo = np.minimum(np.minimum(c1, c2), c3)
            hi = np.maximum(np.maximum(c1, c2), c3)
            assert np.all(y >= lo - 1e-12)
            assert np.all(y <= hi + 1e-12)

    def test_saturated_alpha_selects_base(self):
        cp = _const_committee([1.5] * 4, [9.0] * 4, [4.0] * 4, [7.0] * 4, a1=40.0)
        y = mfnn.predict(cp, np.zeros(10))
        assert np.allclose(y, 1.5, atol=1e-8)

    def test_identical_members_ignore_logits(self):
        a = _const_committee([1.0] * 4, [2.0] * 4, [5.0] * 4, [5.0] * 4,
                             logits=(3.0, -1.0))
        b = _const_committee([1.0] * 4, [2.0] * 4, [5.0] * 4, [5.0] * 4,
                             logits=(-2.0, 4.0))
        x = np.linspace(0.0, 1.0, 10)
        assert np.allclose(mfnn.predict(a, x), mfnn.predict(b, x), rtol=1e-12)

    def test_batch_prediction_matches_single(self):
        cp = _const_committee([1.0] * 4, [2.0] * 4, [3.0] * 4, [4.0] * 4,
                              a1=0.3, a2=-0.2, logits=(0.5, 0.1))
        X = np.random.default_rng(2).uniform(size=(5, 10))
        batch = mfnn.predict(cp, X)
        for i in range(5):
            assert np.allclose(batch[i], mfnn.predict(cp, X[i]), rtol=1e-13)


def _fake_record(rid="lo-00000", kind="ludwik", nfeat=13):
    params = {"E": 100.0, "sigma_y": 0.4, "n": 0.3, "K": 1.0}
    return {"id": rid, "fidelity": "LO2D", "nu": 0.3, "mu": 0.15,
            "kind": kind, "params": params,
            "features": list(np.linspace(1.0, 2.0, nfeat)),
            "hardness": 1.0, "targets": dict(params), "seed": 0}


class TestRecordPlumbing:
    def test_record_features_truncates_to_imprint_set(self):
        rec = _fake_record(nfeat=13)
        f = mfnn.record_features(rec)
        assert f.shape == (10,)
        assert np.array_equal(f, np.linspace(1.0, 2.0, 13)[:10])
        exp = _fake_record(rid="exp-000-r0", nfeat=10)
        assert mfnn.record_features(exp).shape == (10,)

    def test_param_targets_order(self):
        t = mfnn.param_targets(_fake_record())
        assert np.array_equal(t, [100.0, 0.4, 0.3, 1.0])

    def test_pointwise_targets_match_law(self):
        p = con.HollomonParams(150.0, 0.45, 0.2)
        rec = {"id": "lo-00001", "kind": "hollomon",
               "params": {"E": 150.0, "sigma_y": 0.45, "n": 0.2},
               "targets": {"E": 150.0, "sigma_y": 0.45, "n": 0.2},
               "features": [1.0] * 13}
        y = mfnn.pointwise_targets(rec)
        assert y.shape == (18,)
        assert y[0] == 150.0 and y[1] == 0.45
        grid = con.pointwise_strain_grid(150.0, 0.45)
        assert np.allclose(y[2:], con.eval_hollomon(p, grid), rtol=1e-14)

    def test_dataset_xy_shapes_and_mode_error(self):
        recs = [_fake_record(), _fake_record()]
        X, Y = mfnn.dataset_xy(recs, "params")
        assert X.shape == (2, 10) and Y.shape == (2, 4)
        X, Y = mfnn.dataset_xy(recs, "pointwise")
        assert Y.shape == (2, 18)
        with pytest.raises(ValueError):
            mfnn.dataset_xy(recs, "curves")

    def test_group_and_average_replicates(self):
        recs = []
        for k in range(2):
            for j in range(3):
                r = _fake_record(rid=f"exp-{k:03d}-r{j}", nfeat=10)
                r["features"] = list(np.full(10, float(k * 10 + j)))
                recs.append(r)
        groups = mfnn.group_exp_records(recs)
        assert sorted(groups) == [0, 1]
        means = mfnn.material_feature_means(groups)
        assert np.allclose(means[0], 1.0)
        assert np.allclose(means[1], 11.0)

    def test_split_records_sizes(self):
        recs = [_fake_record(rid=f"lo-{i:05d}") for i in range(40)]
        train, val = mfnn.split_records(recs)
        assert len(train) == 35 and len(val) == 5
        assert train[0]["id"] == "lo-00000"
        assert val[-1]["id"] == "lo-00039"

    def test_clamp_params_box(self):
        p = mfnn.clamp_params([500.0, -1.0, 0.5, 3.0])
        assert p.E == 300.0 and p.sigma_y == 0.05
        assert p.n == 0.5 and p.K == 2.0

    def test_stress_curve_error_zero_for_exact_prediction(self):
        p = con.LudwikParams(120.0, 0.3, 0.4, 0.9)
        spec = con.MaterialSpec("ludwik", p)
        assert mfnn.stress_curve_error(spec, p) == 0.0


class TestPolyline:
    def test_clamped_monotone_and_anchored(self):
        y = np.concatenate([[100.0, 0.5], np.array([
            0.6, 0.55, -0.2, 0.7, 0.65, 0.8, 0.7, 0.9,
            0.85, 1.0, 0.95, 1.1, 1.0, 1.2, 1.1, 1.3])])
        strains, stresses = mfnn.polyline_from_pointwise(y)
        assert strains[0] == 0.0 and stresses[0] == 0.0
        assert strains[1] == pytest.approx(0.005)
        assert stresses[1] >= 0.5
        assert np.all(np.diff(strains) > 0.0)
        assert np.all(np.diff(stresses) >= 0.0)
        assert np.all(stresses >= 0.0)
        assert len(strains) == 17
        assert stresses[3] == pytest.approx(0.6)  # the -0.2 dip is clamped

    def test_negative_scalars_guarded(self):
        y = np.concatenate([[-5.0, -1.0], np.zeros(16)])
        strains, stresses = mfnn.polyline_from_pointwise(y)
        assert np.all(np.isfinite(strains))
        assert np.all(np.diff(strains) > 0.0)
        assert np.all(np.diff(stresses) >= 0.0)


@pytest.fixture(scope="module")
def lo_small():
    return gen_dataset({"ludwik": 1000}, SimSetting(), base_seed=4000)


@pytest.fixture(scope="module")
def hi_small():
    hi = SimSetting(fidelity="HI3D")
    train = gen_dataset({"ludwik": 40}, hi, base_seed=5000).records
    val = gen_dataset({"ludwik": 16}, hi, base_seed=6000).records
    return train, val


_FAST = neural.TrainConfig(lr=1e-3, batch_size=32, max_epochs=120,
                           patience=120, seed=0)


@pytest.fixture(scope="module")
def base_small(lo_small):
    return mfnn.train_base(lo_small, cfg=_FAST)


class TestPipelinePieces:
    def test_train_base_requires_1000(self, lo_small):
        with pytest.raises(ValueError):
            mfnn.train_base(lo_small.records[:100], cfg=_FAST)

    def test_train_base_reports_val_mape(self, base_small):
        assert base_small.val_mape.shape == (4,)
        assert np.all(np.isfinite(base_small.val_mape))
        assert base_small.mlp.dims[0] == 10
        assert base_small.mlp.dims[-1] == 4

    def test_transfer_head_dims_with_and_without_base_pred(self, base_small, hi_small):
        train, val = hi_small
        tm = mfnn.transfer_hi(base_small, train, val, cfg=_FAST)
        assert tm.head.dims[0] == 14
        bare = mfnn.transfer_hi(base_small, train, val, cfg=_FAST,
                                use_base_pred=False)
        assert bare.head.dims[0] == 10
        X = np.array([mfnn.record_features(r) for r in val])
        assert mfnn.predict_transfer(tm, X).shape == (len(val), 4)

    def test_transfer_empty_dataset_rejected(self, base_small):
        with pytest.raises(ValueError):
            mfnn.transfer_hi(base_small, [], cfg=_FAST)

    def test_committee_never_underperforms_sources(self, base_small, hi_small):
        train, val = hi_small
        sim_only = mfnn.transfer_hi(base_small, train, val, cfg=_FAST)
        member = mfnn.transfer_hi(base_small, train, val,
                                  cfg=neural.TrainConfig(lr=1e-3, batch_size=32,
                                                         max_epochs=120,
                                                         patience=120, seed=1))
        cal = val[:8]
        cp = mfnn.fit_committee([member], base_small, sim_only, cal)
        X, T = mfnn.dataset_xy(cal)
        scale = np.array([270.0, 0.95, 0.8, 1.9])

        def loss(P):
            r = (P - T) / scale
            return float(np.mean(r * r))

        committee_loss = loss(mfnn.predict(cp, X))
        pure = [loss(neural.forward(base_small.mlp, X)),
                loss(mfnn.predict_transfer(sim_only, X)),
                loss(mfnn.predict_transfer(member, X))]
        assert committee_loss <= min(pure) + 1e-6

    def test_fit_committee_requires_calibration_rows(self, base_small, hi_small):
        train, val = hi_small
        sim_only = mfnn.transfer_hi(base_small, train, val, cfg=_FAST)
        with pytest.raises(ValueError):
            mfnn.fit_committee([sim_only], base_small, sim_only, [])


@pytest.fixture(scope="module")
def cal_materials():
    rng = np.random.default_rng(11)
    return [con.sample_material("ludwik", rng) for _ in range(2)]


@pytest.fixture(scope="module")
def tiny_exp():
    return gen_dataset({"ludwik": 4}, SimSetting(fidelity="EXP"),
                       base_seed=9000, replicates=2)


class TestGridScan:
    def test_exact_setting_ranks_first_with_zero_score(self, cal_materials):
        s = SimSetting(nu=0.3, mu=0.05, fidelity="HI3D")
        means = [simulate_record(sp, s, seed=0).features[:10]
                 for sp in cal_materials]
        ranked = mfnn.grid_gap_scan(cal_materials, means)
        assert ranked[0][:2] == (0.3, 0.05)
        assert ranked[0][2] < 1e-9
        assert len(ranked) == 9
        assert all(np.isfinite(r[2]) and r[2] >= 0.0 for r in ranked)
        assert [r[2] for r in ranked] == sorted(r[2] for r in ranked)

    def test_scan_deterministic(self, cal_materials):
        s = SimSetting(nu=0.2, mu=0.25, fidelity="HI3D")
        means = [simulate_record(sp, s, seed=0).features[:10]
                 for sp in cal_materials]
        a = mfnn.grid_gap_scan(cal_materials, means)
        b = mfnn.grid_gap_scan(cal_materials, means)
        assert a == b
        assert a[0][:2] == (0.2, 0.25)

    def test_scan_input_validation(self, cal_materials):
        with pytest.raises(ValueError):
            mfnn.grid_gap_scan(cal_materials, [np.ones(10)])
        with pytest.raises(ValueError):
            mfnn.grid_gap_scan([], [])


class TestCalibrationWorkflow:
    def test_calibrate_smoke(self, base_small, hi_small, tiny_exp):
        train, val = hi_small
        rep = mfnn.calibrate_committee(
            base_small, train, val, tiny_exp.records,
            n_cal=2, replicates=2, head_cfg=_FAST, member_hi_count=12)
        assert len(rep.scan) == 9
        assert len(rep.committee.members) == 3
        assert rep.cal_ids == [0, 1]
        assert rep.test_ids == [2, 3]
        assert rep.committee.settings == [tuple(r[:2]) for r in rep.scan[:3]]
        groups = mfnn.group_exp_records(tiny_exp.records)
        errs = mfnn.evaluate_on_materials(rep.committee, groups, rep.test_ids)
        assert set(errs) == {2, 3}
        assert all(np.isfinite(v) and v >= 0.0 for v in errs.values())

    def test_calibrate_validates_counts(self, base_small, hi_small, tiny_exp):
        train, val = hi_small
        with pytest.raises(ValueError):
            mfnn.calibrate_committee(base_small, train, val, tiny_exp.records,
                                     n_cal=0, replicates=2)
        with pytest.raises(ValueError):
            mfnn.calibrate_committee(base_small, train, val, tiny_exp.records,
                                     n_cal=2, replicates=9)

    def test_evaluate_exact_constant_predictor(self, tiny_exp):
        groups = mfnn.group_exp_records(tiny_exp.records)
        truth = mfnn.param_targets(groups[2][0])
        cp = _const_committee(truth, truth, truth, truth)
        errs = mfnn.evaluate_on_materials(cp, groups, [2])
        assert errs[2] == 0.0


class TestCommitteeSerialization:
    def test_round_trip(self, tmp_path):
        cp = _const_committee([1.0, 0.5, 0.3, 1.2], [2.0] * 4,
                              [3.0] * 4, [2.5] * 4,
                              a1=0.4, a2=-0.7, logits=(0.2, -0.1))
        path = tmp_path / "committee.json"
        mfnn.save_committee(cp, str(path))
        back = mfnn.load_committee(str(path))
        X = np.random.default_rng(3).uniform(size=(4, 10))
        assert np.allclose(mfnn.predict(back, X), mfnn.predict(cp, X),
                           rtol=0.0, atol=1e-12)
        assert back.settings == cp.settings
        assert back.alpha1 == pytest.approx(cp.alpha1, rel=1e-15)
        assert np.allclose(back.member_weights, cp.member_weights, rtol=1e-15)

    def test_version_refused(self, tmp_path):
        import json
        cp = _const_committee([1.0] * 4, [2.0] * 4, [3.0] * 4, [2.5] * 4)
        path = tmp_path / "committee.json"
        mfnn.save_committee(cp, str(path))
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(neural.ModelFormatError):
            mfnn.load_committee(str(path))
