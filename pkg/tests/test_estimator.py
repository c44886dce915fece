"""Featurization, GLM training, gradient checks, and the remote scorer client."""

from __future__ import annotations

import json
import math
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from progkit.estimator import (
    DEFAULT_SUCCESS_THRESHOLD,
    FEATURE_NAMES,
    FEATURE_SCHEMA,
    EstimatorError,
    FeatureVector,
    ProgressModel,
    RemoteHTTPError,
    RemoteProtocolError,
    RemoteRangeError,
    RemoteScoreError,
    RemoteTimeout,
    StateView,
    bce_loss,
    featurize,
    grad_check,
    initial_state_view,
    load_model,
    predict_progress,
    predict_progress_state,
    predict_success,
    save_model,
    score_remote,
    score_remote_batch,
    state_view,
    token_overlap,
    train,
)
from progkit.model import Action

from gen import random_action_sequence
from test_recipes import clicks, make_traj


def sv(instruction="open the settings menu", history=(), observation=""):
    return StateView(
        instruction=instruction,
        action_history=tuple(history),
        observation=observation,
    )


def named(vector):
    return dict(zip(FEATURE_NAMES, vector.values))


class TestFeaturize:
    def test_empty_state_is_all_zero(self):
        features = named(featurize(sv()))
        assert features["history_length"] == 0.0
        assert all(
            features[name] == 0.0 for name in FEATURE_NAMES if name.startswith("count_")
        )
        assert features["repetition"] == 0.0
        assert features["last_action_is_nothing"] == 0.0

    def test_three_identical_clicks(self):
        features = named(featurize(sv(history=[Action.click(4)] * 3)))
        assert features["count_click"] == 3.0
        assert features["repetition"] == 1.0
        assert features["distinct_elements"] == 1.0
        assert features["history_length"] == 0.75

    def test_half_token_overlap(self):
        # instruction tokens {open, the, settings, menu}, observation
        # tokens {settings, menu, list, photo}: 2 shared of min-size 4.
        view = sv(observation="settings menu list photo")
        assert named(featurize(view))["instruction_observation_overlap"] == 0.5

    def test_entered_text_overlap(self):
        view = sv(
            instruction="search for red shoes",
            history=[Action.input(2, "red shoes")],
        )
        assert named(featurize(view))["instruction_entered_text_overlap"] == 1.0

    def test_distinct_elements_counted_once(self):
        history = [Action.click(1), Action.click(2), Action.long_click(1)]
        assert named(featurize(sv(history=history)))["distinct_elements"] == 2.0

    def test_last_action_nothing_flag(self):
        history = [Action.click(1), Action.nothing()]
        assert named(featurize(sv(history=history)))["last_action_is_nothing"] == 1.0

    def test_repetition_is_longest_run_fraction(self):
        history = [Action.click(1), Action.click(1), Action.click(2), Action.click(1)]
        assert named(featurize(sv(history=history)))["repetition"] == 0.5

    def test_deterministic(self):
        rng = random.Random(17)
        for _ in range(20):
            view = sv(history=random_action_sequence(rng, 6))
            assert featurize(view) == featurize(view)

    def test_token_normalization_ignores_case_and_punctuation(self):
        assert token_overlap("Open, The! Menu", "open the menu") == 1.0

    def test_non_finite_feature_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            FeatureVector(values=(float("nan"),) * len(FEATURE_NAMES))


class TestPredictProgress:
    def test_zero_model_gives_half(self):
        assert predict_progress(ProgressModel.initial(), featurize(sv())) == 0.5

    def test_extreme_bias_stays_inside_unit_interval(self):
        high = ProgressModel(weights=(0.0,) * len(FEATURE_NAMES), bias=1000.0)
        low = ProgressModel(weights=(0.0,) * len(FEATURE_NAMES), bias=-1000.0)
        features = featurize(sv())
        assert 0.999 < predict_progress(high, features) < 1.0
        assert 0.0 < predict_progress(low, features) < 0.001

    def test_matches_hand_computed_sigmoid(self):
        weights = [0.0] * len(FEATURE_NAMES)
        weights[FEATURE_NAMES.index("count_click")] = 0.5
        model = ProgressModel(weights=tuple(weights), bias=-0.2)
        view = sv(history=[Action.click(1), Action.click(2)])
        expected = 1.0 / (1.0 + math.exp(-(0.5 * 2 - 0.2)))
        assert predict_progress_state(model, view) == pytest.approx(expected)

    def test_schema_mismatch_rejected(self):
        stale = ProgressModel(
            weights=(0.0,), bias=0.0, schema_version="progress-features/0"
        )
        with pytest.raises(EstimatorError, match="schema"):
            predict_progress(stale, featurize(sv()))


class TestBceLoss:
    def test_half_versus_one_is_ln_two(self):
        assert bce_loss(0.5, 1.0) == pytest.approx(math.log(2))

    def test_matched_point_three_is_binary_entropy(self):
        assert bce_loss(0.3, 0.3) == pytest.approx(0.6109, abs=5e-5)

    def test_symmetric_half(self):
        assert bce_loss(0.5, 0.5) == pytest.approx(math.log(2))

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.1])
    def test_prediction_outside_open_interval_rejected(self, bad):
        with pytest.raises(EstimatorError, match="p_hat"):
            bce_loss(bad, 0.5)

    @pytest.mark.parametrize("bad", [-0.01, 1.01])
    def test_label_outside_closed_interval_rejected(self, bad):
        with pytest.raises(EstimatorError, match="p_star"):
            bce_loss(0.5, bad)

    def test_minimized_when_prediction_equals_label(self):
        for p_star in (0.1, 0.3, 0.5, 0.9):
            at_label = bce_loss(p_star, p_star)
            for q in (0.05, 0.2, 0.4, 0.6, 0.8, 0.95):
                assert at_label <= bce_loss(q, p_star) + 1e-12


def clicky(n, element=0, instruction="tap through the menu"):
    return sv(instruction, [Action.click(element)] * n, "menu")


def scrolly(n, instruction="tap through the menu"):
    return sv(instruction, [Action.scroll("down")] * n, "feed")


class TestTrain:
    def separable(self):
        pos = [(clicky(n), 1.0) for n in (4, 5, 6)]
        neg = [(scrolly(n), 0.0) for n in (4, 5, 6)]
        return pos + neg

    def test_separable_set_reaches_low_loss(self):
        _, curve = train(self.separable(), lr=1.0, epochs=800)
        assert curve[-1] < 0.1

    def test_single_example_converges_to_label(self):
        view = clicky(3)
        model, _ = train([(view, 0.7)], lr=0.05, epochs=2000)
        assert predict_progress_state(model, view) == pytest.approx(0.7, abs=0.05)

    def test_zero_epochs_returns_initialization(self):
        model, curve = train(self.separable(), epochs=0)
        assert model.weights == ProgressModel.initial().weights
        assert model.bias == 0.0
        assert curve == []

    def test_curve_length_matches_epochs(self):
        _, curve = train(self.separable(), lr=0.1, epochs=25)
        assert len(curve) == 25

    def test_full_batch_small_lr_is_monotone(self):
        _, curve = train(self.separable(), lr=0.05, epochs=100)
        assert all(b <= a + 1e-12 for a, b in zip(curve, curve[1:]))

    def test_minibatch_deterministic_given_seed(self):
        data = self.separable()
        model_a, curve_a = train(data, lr=0.3, epochs=30, batch_size=2, seed=5)
        model_b, curve_b = train(data, lr=0.3, epochs=30, batch_size=2, seed=5)
        assert model_a == model_b and curve_a == curve_b
        model_c, _ = train(data, lr=0.3, epochs=30, batch_size=2, seed=6)
        assert model_c != model_a

    def test_divergence_names_epoch(self):
        # One example saturated against its label keeps a full-magnitude
        # residual, so an absurd learning rate drives a weight through
        # +/-inf into NaN.
        data = [(clicky(3), 1.0), (clicky(6), 0.0), (clicky(6, element=1), 0.0)]
        with pytest.raises(EstimatorError, match=r"diverged at epoch \d+"):
            train(data, lr=1.7e308, epochs=5)

    def test_empty_dataset_rejected(self):
        with pytest.raises(EstimatorError, match="at least one"):
            train([])

    def test_out_of_range_label_rejected(self):
        with pytest.raises(EstimatorError, match="outside"):
            train([(clicky(1), 1.5)])

    def test_metadata_records_hyperparameters(self):
        model, curve = train(self.separable(), lr=0.2, epochs=10, seed=3)
        assert model.metadata["epochs"] == 10
        assert model.metadata["learning_rate"] == 0.2
        assert model.metadata["final_loss"] == curve[-1]


class TestGradCheck:
    def random_case(self, rng):
        model = ProgressModel(
            weights=tuple(rng.uniform(-2, 2) for _ in FEATURE_NAMES),
            bias=rng.uniform(-2, 2),
        )
        view = sv(
            instruction="check the gradient",
            history=random_action_sequence(rng, 6),
            observation="screen with the gradient",
        )
        return model, (view, rng.random())

    def test_hundred_random_pairs_within_tolerance(self):
        rng = random.Random(2024)
        for _ in range(100):
            model, sample = self.random_case(rng)
            assert grad_check(model, sample, epsilon=1e-5) < 1e-4

    def test_zero_gradient_point(self):
        model = ProgressModel.initial()
        assert grad_check(model, (sv(), 0.5)) < 1e-8

    def test_repeated_call_identical(self):
        rng = random.Random(9)
        model, sample = self.random_case(rng)
        assert grad_check(model, sample) == grad_check(model, sample)

    def test_bad_epsilon_rejected(self):
        with pytest.raises(EstimatorError, match="epsilon"):
            grad_check(ProgressModel.initial(), (sv(), 0.5), epsilon=0.0)


class TestPredictSuccess:
    def biased(self, bias):
        return ProgressModel(weights=(0.0,) * len(FEATURE_NAMES), bias=bias)

    def test_high_final_progress_is_success(self):
        assert predict_success(self.biased(3.0), make_traj("t", clicks(1, 2)))

    def test_low_final_progress_is_failure(self):
        assert not predict_success(self.biased(-3.0), make_traj("t", clicks(1, 2)))

    def test_boundary_counts_as_success(self):
        model = ProgressModel.initial()
        assert predict_progress_state(model, sv()) == DEFAULT_SUCCESS_THRESHOLD
        assert predict_success(model, make_traj("t", clicks(1)))

    def test_bad_threshold_rejected(self):
        with pytest.raises(EstimatorError, match="tau_s"):
            predict_success(self.biased(0.0), make_traj("t", clicks(1)), tau_s=1.0)


class TestStateViews:
    def test_state_view_slices_history_before_step(self):
        t = make_traj("t", clicks(1, 2, 3))
        view = state_view(t, 1)
        assert view.action_history == (Action.click(1),)
        assert view.observation == t.steps[1].observation
        assert view.instruction == t.instruction

    def test_first_step_has_empty_history(self):
        t = make_traj("t", clicks(1, 2))
        assert state_view(t, 0).action_history == ()

    def test_out_of_range_rejected(self):
        t = make_traj("t", clicks(1))
        with pytest.raises(IndexError):
            state_view(t, 1)

    def test_initial_state_is_blank(self):
        t = make_traj("t", clicks(1, 2))
        view = initial_state_view(t)
        assert view.action_history == () and view.observation == ""


class TestModelIO:
    def test_round_trip(self, tmp_path):
        model, _ = train([(clicky(2), 1.0), (scrolly(2), 0.0)], lr=0.3, epochs=20)
        path = tmp_path / "model.json"
        save_model(path, model)
        assert load_model(path) == model

    def test_unknown_schema_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"schema_version": "mystery/2", "weights": [], "bias": 0}')
        with pytest.raises(EstimatorError, match="schema"):
            load_model(path)

    def test_saved_bytes_stable(self, tmp_path):
        model, _ = train([(clicky(2), 1.0)], lr=0.1, epochs=5)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_model(a, model)
        save_model(b, model)
        assert a.read_bytes() == b.read_bytes()


class _StubHandler(BaseHTTPRequestHandler):
    requests_seen: list = []

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        type(self).requests_seen.append(json.loads(body))
        route = self.path
        if route == "/slow":
            time.sleep(1.0)
            route = "/ok"
        responses = {
            "/ok": (200, '{"progress": 0.42}'),
            "/range": (200, '{"progress": 1.7}'),
            "/notjson": (200, "progress!"),
            "/missing": (200, '{"score": 0.4}'),
            "/stringy": (200, '{"progress": "high"}'),
            "/boolean": (200, '{"progress": true}'),
            "/broken": (500, "{}"),
        }
        status, payload = responses.get(route, (404, "{}"))
        data = payload.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    thread.join()


class TestScoreRemote:
    def view(self):
        return sv(history=[Action.click(1), Action.input(2, "hello")], observation="form")

    def test_scores_and_measures_latency(self, stub_server):
        progress, latency = score_remote(f"{stub_server}/ok", self.view())
        assert progress == 0.42
        assert latency > 0.0

    def test_wire_format(self, stub_server):
        _StubHandler.requests_seen.clear()
        score_remote(f"{stub_server}/ok", self.view())
        request = _StubHandler.requests_seen[-1]
        assert set(request) == {"instruction", "actions", "observation"}
        assert request["actions"][0] == {"kind": "click", "element_id": 1}
        assert request["actions"][1] == {"kind": "input", "element_id": 2, "text": "hello"}

    def test_out_of_range_progress(self, stub_server):
        with pytest.raises(RemoteRangeError, match="1.7"):
            score_remote(f"{stub_server}/range", self.view())

    def test_non_json_body(self, stub_server):
        with pytest.raises(RemoteProtocolError, match="non-JSON"):
            score_remote(f"{stub_server}/notjson", self.view())

    def test_missing_key(self, stub_server):
        with pytest.raises(RemoteProtocolError, match="progress"):
            score_remote(f"{stub_server}/missing", self.view())

    @pytest.mark.parametrize("route", ["stringy", "boolean"])
    def test_non_numeric_progress(self, stub_server, route):
        with pytest.raises(RemoteProtocolError, match="not numeric"):
            score_remote(f"{stub_server}/{route}", self.view())

    def test_http_error_status(self, stub_server):
        with pytest.raises(RemoteHTTPError, match="500"):
            score_remote(f"{stub_server}/broken", self.view())

    def test_slow_server_times_out(self, stub_server):
        with pytest.raises(RemoteTimeout):
            score_remote(f"{stub_server}/slow", self.view(), timeout=0.15)

    def test_unreachable_endpoint(self):
        with pytest.raises(RemoteScoreError):
            score_remote("http://127.0.0.1:9/ok", self.view(), timeout=0.5)

    def test_batch_preserves_order(self, stub_server):
        results = score_remote_batch(
            f"{stub_server}/ok", [self.view()] * 6, max_in_flight=3
        )
        assert [p for p, _ in results] == [0.42] * 6
