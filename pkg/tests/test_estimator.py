import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cpabarrier import CpaBarrier, grid_sample
from cpabarrier.dataset import LipschitzInfo
from cpabarrier.dynamics import LinearOracle


@pytest.fixture(scope="module")
def half_map_data():
    o = LinearOracle(0.5 * np.eye(2), lipschitz=LipschitzInfo.joint(0.5))
    return grid_sample(o, [[0.0, 1.0], [0.0, 1.0]], 0.25)


@pytest.fixture(scope="module")
def fitted(half_map_data):
    return CpaBarrier(max_iter_phase2=3).fit(half_map_data)


class TestParams:
    def test_get_set_clone(self):
        est = CpaBarrier(epsilon=0.2, refine="boundary")
        p = est.get_params()
        assert p["epsilon"] == 0.2 and p["refine"] == "boundary" and p["oracle"] is None
        twin = clone(est)
        assert twin.get_params() == p and twin is not est
        est.set_params(rho=2.0)
        assert est.rho == 2.0

    def test_bad_param_fails_at_fit(self, half_map_data):
        with pytest.raises(ValueError):
            CpaBarrier(slack_form="nope").fit(half_map_data)


class TestFitPredict:
    def test_attributes(self, fitted, half_map_data):
        assert fitted.feasible_ and fitted.certificate_.passed
        assert fitted.n_features_in_ == 2 and fitted.area_ > 0
        assert fitted.gamma_.shape == (fitted.result_.tri.n_simplices,)

    def test_predict_matches_function(self, fitted):
        pts = np.random.default_rng(0).uniform(-0.5, 1.5, size=(500, 2))
        d = fitted.decision_function(pts)
        np.testing.assert_array_equal(d, fitted.W_.evaluate_many(pts))
        np.testing.assert_array_equal(fitted.predict(pts), d <= 0)
        assert not fitted.predict([[5.0, 5.0]])[0]

    def test_path_input(self, tmp_path, half_map_data, fitted):
        half_map_data.save(tmp_path / "d.csv")
        again = CpaBarrier(max_iter_phase2=3).fit(str(tmp_path / "d.csv"))
        np.testing.assert_array_equal(again.W_.values, fitted.W_.values)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            CpaBarrier().predict([[0.0, 0.0]])

    def test_wrong_width(self, fitted):
        with pytest.raises(ValueError):
            fitted.predict([[0.0, 0.0, 0.0]])

    def test_autonomous_has_no_controller(self, fitted):
        with pytest.raises(ValueError):
            fitted.controller()
