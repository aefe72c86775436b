import json
import math
import socket
import threading
import time

import pytest

from mmosim.config import load_policy_weights
from mmosim.domain import Action, AgentState, ProfileClass, SimTime
from mmosim.policy import (
    ACTION_ORDER, ActionDecision, HeuristicPolicy, PolicyContext,
    PolicyFailure, RemotePolicy, ReplayPolicy, heuristic_score,
    softmax_sample,
)
from mmosim.pool import OutboundPool
from mmosim.rng import RandomStream
from tests.conftest import make_profile

CHANNELS = {"npc_shop": True, "black_market": True, "informal_trade": False}


def make_ctx(profile=None, state=AgentState.ONLINE, balance=1000,
             last_outcomes=(), session=5, surplus=0, step=10):
    return PolicyContext(
        profile=profile or make_profile(),
        state=state,
        balance=balance,
        last_outcomes=tuple(last_outcomes),
        recent_actions=(),
        broadcasts_pending=(),
        channels=dict(CHANNELS),
        time=SimTime(step, 24),
        session_steps_remaining=session,
        surplus_tradables=surplus,
    )


def softmax_probs(scores, temperature=1.0):
    top = max(scores.values())
    ws = {a: math.exp((s - top) / temperature) for a, s in scores.items()}
    z = sum(ws.values())
    return {a: w / z for a, w in ws.items()}


def flat_weights(**betas):
    base = {pc.value: {a.value: 0.0 for a in ACTION_ORDER}
            for pc in ProfileClass}
    w = {"base_weight": base, "beta_loss_buy": 0.0, "beta_loss_quit": 0.0,
         "beta_session_end": 0.0, "beta_broke_battle": 0.0,
         "beta_surplus_sell": 0.0, "temperature": 1.0}
    w.update(betas)
    return w


class TestHeuristicScore:
    def test_all_betas_zero_uniform_base_gives_quarter_each(self):
        policy = HeuristicPolicy(flat_weights(), reserve_floor=40,
                                 rng=RandomStream(1, "d"))
        n = 100_000
        counts = {a: 0 for a in ACTION_ORDER}
        ctx = make_ctx()
        for _ in range(n):
            counts[policy.decide(ctx).action] += 1
        # 2 sigma around 0.25
        sigma = math.sqrt(0.25 * 0.75 / n)
        for a in ACTION_ORDER:
            assert abs(counts[a] / n - 0.25) < 2.5 * sigma, counts

    def test_greedy_limit_takes_argmax(self):
        w = flat_weights()
        w["base_weight"]["stable_development"]["sell"] = 2.0
        w["temperature"] = 0.0
        policy = HeuristicPolicy(w, 40, RandomStream(2, "d"))
        ctx = make_ctx()
        for _ in range(100):
            assert policy.decide(ctx).action is Action.SELL

    def test_tilted_zero_tolerance_player_logs_off(self):
        # Shipped default weights: a fresh loss with zero frustration
        # tolerance makes offline the overwhelming choice.
        weights = load_policy_weights()
        policy = HeuristicPolicy(weights, 40, RandomStream(3, "d"))
        profile = make_profile(frustration_tolerance=0.0, spend_propensity=0.5)
        ctx = make_ctx(profile=profile,
                       last_outcomes=[{"n": 3, "win": False, "income": 0}])
        n = 10_000
        offline = sum(policy.decide(ctx).action is Action.OFFLINE
                      for _ in range(n))
        assert offline / n >= 0.9

    def test_defeat_raises_buy_probability_for_high_skill(self):
        weights = load_policy_weights()
        profile = make_profile(profile_class=ProfileClass.HIGH_SKILL,
                               spend_propensity=0.6,
                               frustration_tolerance=0.8)
        after_loss = make_ctx(profile=profile, balance=2000,
                              last_outcomes=[{"n": 5, "win": False, "income": 0}])
        after_win = make_ctx(profile=profile, balance=2000,
                             last_outcomes=[{"n": 5, "win": True, "income": 600}])
        p_loss = softmax_probs(heuristic_score(after_loss, weights, 40))[Action.BUY]
        p_win = softmax_probs(heuristic_score(after_win, weights, 40))[Action.BUY]
        assert p_loss > p_win

    def test_buy_probability_monotone_in_spend_propensity(self):
        weights = load_policy_weights()
        previous = -1.0
        for spend in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            profile = make_profile(spend_propensity=spend)
            ctx = make_ctx(profile=profile,
                           last_outcomes=[{"n": 1, "win": False, "income": 0}])
            p_buy = softmax_probs(heuristic_score(ctx, weights, 40))[Action.BUY]
            assert p_buy >= previous
            previous = p_buy

    def test_session_exhaustion_pulls_offline(self):
        weights = load_policy_weights()
        fresh = make_ctx(session=5)
        done = make_ctx(session=0)
        p_fresh = softmax_probs(heuristic_score(fresh, weights, 40))[Action.OFFLINE]
        p_done = softmax_probs(heuristic_score(done, weights, 40))[Action.OFFLINE]
        assert p_done > 0.8 > p_fresh

    def test_thin_wallet_pulls_into_battle(self):
        weights = load_policy_weights()
        broke = make_ctx(balance=10)
        flush = make_ctx(balance=10_000)
        s_broke = heuristic_score(broke, weights, reserve_floor=40)
        s_flush = heuristic_score(flush, weights, reserve_floor=40)
        assert s_broke[Action.BATTLE] > s_flush[Action.BATTLE]

    def test_surplus_pulls_toward_sell(self):
        weights = load_policy_weights()
        some = make_ctx(surplus=2)
        none = make_ctx(surplus=0)
        assert heuristic_score(some, weights, 40)[Action.SELL] > \
            heuristic_score(none, weights, 40)[Action.SELL]

    def test_rationale_names_dominant_factor(self):
        weights = load_policy_weights()
        policy = HeuristicPolicy(weights, 40, RandomStream(5, "d"))
        ctx = make_ctx(session=0)
        for _ in range(50):
            decision = policy.decide(ctx)
            if decision.action is Action.OFFLINE:
                assert "session exhausted" in decision.rationale
                break
        else:
            pytest.fail("offline never chosen with exhausted session")

    def test_decide_is_pure_given_stream_state(self):
        weights = load_policy_weights()
        ctx = make_ctx()
        a = HeuristicPolicy(weights, 40, RandomStream(7, "d"))
        b = HeuristicPolicy(weights, 40, RandomStream(7, "d"))
        assert [a.decide(ctx).action for _ in range(40)] == \
            [b.decide(ctx).action for _ in range(40)]


class TestSoftmaxSample:
    def test_masking_restricts_support(self):
        scores = {a: 1.0 for a in ACTION_ORDER}
        rng = RandomStream(11, "m")
        picks = {softmax_sample(scores, 1.0, (Action.BUY, Action.SELL), rng)
                 for _ in range(100)}
        assert picks <= {Action.BUY, Action.SELL}

    def test_empty_mask_fails(self):
        with pytest.raises(PolicyFailure):
            softmax_sample({a: 0.0 for a in ACTION_ORDER}, 1.0, (),
                           RandomStream(1, "m"))


class TestReplay:
    def test_reproduces_trajectory_exactly(self):
        trajectory = {(1, 10): Action.BATTLE, (1, 11): Action.BUY,
                      (2, 10): Action.OFFLINE}
        policy = ReplayPolicy(trajectory)
        ctx = make_ctx(profile=make_profile(uid=1), step=10)
        assert policy.decide(ctx).action is Action.BATTLE
        ctx = make_ctx(profile=make_profile(uid=1), step=11)
        assert policy.decide(ctx).action is Action.BUY

    def test_off_trajectory_is_a_policy_failure(self):
        policy = ReplayPolicy({})
        with pytest.raises(PolicyFailure):
            policy.decide(make_ctx())

    def test_from_corpus(self):
        records = [{"uid": 4, "abs_step": 2, "action": "sell"}]
        policy = ReplayPolicy.from_corpus(records)
        ctx = make_ctx(profile=make_profile(uid=4), step=2)
        assert policy.decide(ctx).action is Action.SELL


class StubPolicyServer:
    """Line-JSON responder with a configurable behavior function."""

    def __init__(self, behavior):
        self.behavior = behavior
        self.server = socket.create_server(("127.0.0.1", 0))
        self.port = self.server.getsockname()[1]
        self.requests: list[dict] = []
        self._stop = False
        self.thread = threading.Thread(target=self._serve, daemon=True)
        self.thread.start()

    def _serve(self):
        self.server.settimeout(0.2)
        while not self._stop:
            try:
                conn, _ = self.server.accept()
            except socket.timeout:
                continue
            with conn:
                data = b""
                while b"\n" not in data:
                    chunk = conn.recv(65536)
                    if not chunk:
                        break
                    data += chunk
                if not data:
                    continue
                request = json.loads(data.split(b"\n")[0])
                self.requests.append(request)
                reply = self.behavior(request)
                if reply is None:
                    continue
                if isinstance(reply, float):
                    time.sleep(reply)
                    reply = {"action": "battle"}
                conn.sendall((json.dumps(reply) + "\n").encode())

    def close(self):
        self._stop = True
        self.thread.join(timeout=2.0)
        self.server.close()


class TestRemote:
    def test_echo_server_battle_decision(self):
        server = StubPolicyServer(lambda req: {"action": "battle",
                                               "rationale": "aggressive"})
        try:
            policy = RemotePolicy("127.0.0.1", server.port, OutboundPool(4))
            decision = policy.decide(make_ctx())
            assert decision.action is Action.BATTLE
            assert decision.rationale == "aggressive"
            assert decision.latency_ms > 0
            # The wire request carries the documented context document.
            req = server.requests[0]
            assert req["protocol_version"] == 1
            assert req["state"] == "online"
            assert set(req) >= {"uid", "step", "balance", "profile",
                                "last_outcomes", "recent_actions", "channels",
                                "broadcasts"}
        finally:
            server.close()

    def test_unknown_action_is_policy_failure(self):
        server = StubPolicyServer(lambda req: {"action": "dance"})
        try:
            policy = RemotePolicy("127.0.0.1", server.port, OutboundPool(4))
            with pytest.raises(PolicyFailure) as err:
                policy.decide(make_ctx())
            assert "unknown action" in str(err.value)
        finally:
            server.close()

    def test_malformed_response_is_policy_failure(self):
        server = StubPolicyServer(lambda req: {"speech": "hello"})
        try:
            policy = RemotePolicy("127.0.0.1", server.port, OutboundPool(4))
            with pytest.raises(PolicyFailure) as err:
                policy.decide(make_ctx())
            assert "malformed" in str(err.value)
        finally:
            server.close()

    def test_deadline_overrun_is_timeout(self):
        server = StubPolicyServer(lambda req: 0.5)  # sleep half a second
        try:
            policy = RemotePolicy("127.0.0.1", server.port, OutboundPool(4),
                                  deadline_ms=100)
            t0 = time.perf_counter()
            with pytest.raises(PolicyFailure) as err:
                policy.decide(make_ctx())
            assert "timeout" in str(err.value)
            assert time.perf_counter() - t0 < 0.4
        finally:
            server.close()

    def test_connection_refused_is_policy_failure(self):
        policy = RemotePolicy("127.0.0.1", 9, OutboundPool(4), deadline_ms=200)
        with pytest.raises(PolicyFailure):
            policy.decide(make_ctx())


def test_default_weights_hold_the_reference_action_shares():
    # Calibration contract of the shipped weight table: in-session action
    # shares of the default 500-agent population stay within 10 points of
    # the recorded reference distribution (battle-heavy, offline-light).
    from collections import Counter

    from mmosim.config import RunConfig
    from mmosim.datagen import export_trajectories
    from mmosim.engine import SimulationRun

    weights = load_policy_weights()
    reference = weights["reference_action_shares"]
    config = RunConfig.from_dict({
        "config_version": 1, "run_id": "calib", "seed": 1234,
        "steps_per_day": 24, "total_days": 2,
        "population": {"clusters": "default", "n": 500, "seed": 1234},
        "feature_flags": {"informal_trade_enabled": True},
    })
    run = SimulationRun(config)
    run.run_to_end()
    counts = Counter()
    for day in (0, 1):
        for r in export_trajectories(run.events, config.resolve_population(),
                                     24, day):
            if r["state"] != "offline":
                counts[r["action"]] += 1
    total = sum(counts.values())
    for action, target in reference.items():
        share = counts.get(action, 0) / total
        assert abs(share - target) <= 0.10, (action, share, target)
    assert counts["battle"] > counts["offline"]  # battle-heavy in session
