import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from intensity_lab.estimators import FACTOR_COLUMNS, BehaviorSimulator, ResponseProfile, SaturationDetector
from intensity_lab.metrics import counts_to_events
from intensity_lab.validation import check_counts, check_random_state, check_series


def as_array(counts):
    return np.array([[c.views, c.positives, c.negatives] for c in counts])


def test_response_profile_transform(inc_counts):
    profile = ResponseProfile().fit(inc_counts)
    X = profile.factors_
    np.testing.assert_array_equal(profile.transform(inc_counts), X)
    np.testing.assert_array_equal(ResponseProfile().fit_transform(inc_counts), X)
    assert X.shape == (25, len(FACTOR_COLUMNS))
    assert X[0, 0] == 2452 / 106329
    assert np.isnan(X[0, 3])
    assert round(X[1, 3], 4) == 1.3117
    raw = ResponseProfile(cr_mode="raw").fit(inc_counts).factors_
    assert round(raw[1, 3], 4) == 1.3127
    assert list(profile.get_feature_names_out()) == list(FACTOR_COLUMNS)
    assert profile.totals_.views == 399146


def test_response_profile_accepts_arrays_and_events(inc_counts):
    from_array = ResponseProfile().fit_transform(as_array(inc_counts))
    events = list(counts_to_events(inc_counts[:3], group="G4"))
    from_events = ResponseProfile().fit(inc_counts).transform(events)
    np.testing.assert_array_equal(from_array[:3, :3], from_events[:, :3])


def test_response_profile_bad_mode(inc_counts):
    with pytest.raises(ValueError):
        ResponseProfile(cr_mode="approx").fit(inc_counts)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        ResponseProfile().transform([[10, 1, 0]])
    with pytest.raises(NotFittedError):
        SaturationDetector().predict()


def test_params_and_clone():
    det = SaturationDetector(window=4, epsilon=0.05)
    assert det.get_params()["window"] == 4
    twin = clone(det)
    assert twin.get_params() == det.get_params() and twin is not det
    assert BehaviorSimulator(random_state=3).set_params(policy="decreasing").policy == "decreasing"


def test_saturation_detector_on_counts(inc_counts):
    det = SaturationDetector().fit(inc_counts)
    assert det.detected_level_ == 10 and not det.fallback_
    flags = det.predict()
    assert flags[:10].sum() == 0 and flags[10:].all()
    assert list(det.predict([9, 11])) == [0, 1]


def test_saturation_detector_on_factor_array(inc_table):
    X = np.array([[r.rpf, r.rnf] for r in inc_table])
    det = SaturationDetector().fit(X, sample_weight=[r.views for r in inc_table])
    assert det.detected_level_ == 10


def test_behavior_simulator_sample(inc_counts):
    sim = BehaviorSimulator(random_state=11).fit(inc_counts)
    table = sim.sample(2000)
    assert table[0].views == 2000
    assert table == BehaviorSimulator(random_state=11).fit(inc_counts).sample(2000)
    assert sim.model_.click_prob[0] == 2452 / 106329


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_series([[1, 2]])
    with pytest.raises(ValueError):
        check_series([1.0, np.inf])
    with pytest.raises(ValueError):
        check_counts(np.array([[1, 2]]))
    with pytest.raises(ValueError):
        check_counts([[10, 1.5, 0]])
    with pytest.raises(ValueError):
        check_counts([])
    with pytest.raises(ValueError):
        check_random_state(1.5)
    assert check_random_state(7) == 7
    assert 0 <= check_random_state(None) < 2**64
