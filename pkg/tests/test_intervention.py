import pytest

from mmosim.domain import Action
from mmosim.engine import SimulationRun
from mmosim.intervention import (
    InterventionTimeline, InvalidParamValue, PastStep, UnknownFeature,
    UnknownParamPath, parse_intervention,
)
from mmosim.policy import ReplayPolicy
from tests.conftest import make_config
from tests.test_engine import flat_population

CATALOG = {"pistol", "smg"}


class TestValidation:
    def test_enable_feature_happy_path(self):
        iv = parse_intervention(
            {"kind": "enable_feature", "name": "black_market_enabled",
             "at_step": 96}, CATALOG)
        assert iv.at_step == 96
        assert iv.announce is True

    def test_unknown_feature(self):
        with pytest.raises(UnknownFeature):
            parse_intervention({"kind": "enable_feature", "name": "jetpacks",
                                "at_step": 0}, CATALOG)

    def test_tax_rate_out_of_range_rejected(self):
        with pytest.raises(InvalidParamValue):
            parse_intervention({"kind": "set_param", "path": "tax_rate",
                                "value": 1.5, "at_step": 0}, CATALOG)

    def test_unknown_param_path(self):
        with pytest.raises(UnknownParamPath):
            parse_intervention({"kind": "set_param", "path": "gravity",
                                "value": 1.0, "at_step": 0}, CATALOG)
        with pytest.raises(UnknownParamPath):
            parse_intervention({"kind": "set_param",
                                "path": "npc_price.bfg9000",
                                "value": 10, "at_step": 0}, CATALOG)

    def test_npc_price_path_accepts_catalog_items(self):
        iv = parse_intervention({"kind": "set_param",
                                 "path": "npc_price.pistol",
                                 "value": 900, "at_step": 5}, CATALOG)
        assert iv.value == 900

    @pytest.mark.parametrize("path,value", [
        ("p_fraud", 0.5), ("habit_decay", 0.9), ("battle.lambda_win", 1.2),
    ])
    def test_other_mutable_paths(self, path, value):
        iv = parse_intervention({"kind": "set_param", "path": path,
                                 "value": value, "at_step": 0}, CATALOG)
        assert iv.value == value


class TestTimeline:
    def test_schedule_past_step_rejected(self):
        timeline = InterventionTimeline(CATALOG)
        with pytest.raises(PastStep):
            timeline.schedule({"kind": "set_param", "path": "tax_rate",
                               "value": 0.1, "at_step": 3}, current_step=10)

    def test_identical_resubmission_returns_same_id(self):
        timeline = InterventionTimeline(CATALOG)
        doc = {"kind": "enable_feature", "name": "black_market_enabled",
               "at_step": 12}
        a = timeline.schedule(dict(doc), 0)
        b = timeline.schedule(dict(doc), 0)
        assert a == b
        assert len(timeline.all()) == 1

    def test_due_sorted_by_id_and_applied_excluded(self):
        timeline = InterventionTimeline(CATALOG)
        timeline.schedule({"kind": "set_param", "path": "tax_rate",
                           "value": 0.1, "at_step": 5}, 0)
        timeline.schedule({"kind": "set_param", "path": "p_fraud",
                           "value": 0.2, "at_step": 5}, 0)
        due = timeline.due(5)
        assert len(due) == 2
        assert due[0].intervention_id < due[1].intervention_id
        timeline.mark_applied(due[0].intervention_id)
        assert [iv.intervention_id for iv in timeline.due(5)] == \
            [due[1].intervention_id]
        assert timeline.due(6) == []


class TestEngineApplication:
    def test_feature_flip_applies_exactly_at_step(self):
        cfg = make_config(
            run_id="flip", total_days=2, seed=11,
            feature_flags={"black_market_enabled": False,
                           "informal_trade_enabled": True},
            interventions=[{"kind": "enable_feature",
                            "name": "black_market_enabled", "at_step": 24}])
        run = SimulationRun(cfg)
        run.advance(24)
        assert run.flags["black_market_enabled"] is False
        run.advance(1)
        assert run.flags["black_market_enabled"] is True
        applied = [e for e in run.events if e.kind == "intervention_applied"]
        assert len(applied) == 1
        assert applied[0].step.abs_step == 24
        assert applied[0].payload["intervention"]["name"] == \
            "black_market_enabled"

    def test_announcement_broadcast_lands_next_step(self):
        cfg = make_config(
            run_id="announce", total_days=1, seed=13,
            population=flat_population(2, activeness=1.0),
            interventions=[{"kind": "set_param", "path": "tax_rate",
                            "value": 0.2, "at_step": 3}])
        run = SimulationRun(cfg)
        run.bind_replay(ReplayPolicy(
            {(u, s): Action.BATTLE for u in (1, 2) for s in range(24)}))
        run.run_to_end()
        delivered = [e for e in run.events if e.kind == "message_delivered"]
        assert delivered
        assert all(e.step.abs_step == 4 for e in delivered)
        assert all("tax_rate" in e.payload["body"] for e in delivered)

    def test_broadcast_event_kind_pushes_its_body(self):
        cfg = make_config(
            run_id="shout", total_days=1, seed=13,
            population=flat_population(1, activeness=1.0),
            interventions=[{"kind": "broadcast_event",
                            "body": "double loot weekend", "at_step": 2}])
        run = SimulationRun(cfg)
        run.bind_replay(ReplayPolicy(
            {(1, s): Action.BATTLE for s in range(24)}))
        run.run_to_end()
        bodies = [e.payload["body"] for e in run.events
                  if e.kind == "message_delivered"]
        assert bodies == ["double loot weekend"]

    def test_param_change_takes_effect_for_later_trades(self):
        # Tax goes to zero mid-run: trades afterwards burn nothing.
        cfg = make_config(
            run_id="taxcut", total_days=2, seed=17, tax_rate=0.25,
            feature_flags={"black_market_enabled": True},
            interventions=[{"kind": "set_param", "path": "tax_rate",
                            "value": 0.0, "at_step": 24}])
        run = SimulationRun(cfg)
        run.run_to_end()
        for ev in run.events:
            if ev.kind == "trade_executed":
                if ev.step.abs_step >= 24:
                    assert ev.payload["tax"] == 0
                else:
                    assert ev.payload["tax"] > 0 or ev.payload["price"] < 2

    def test_disable_channel_silences_it_from_that_step(self):
        cfg = make_config(
            run_id="mute", total_days=3, seed=19,
            feature_flags={"informal_trade_enabled": True,
                           "black_market_enabled": False},
            interventions=[{"kind": "disable_feature",
                            "name": "informal_trade_enabled", "at_step": 30}])
        run = SimulationRun(cfg)
        run.run_to_end()
        informal_steps = [e.step.abs_step for e in run.events
                          if e.kind == "informal_trade_executed"]
        assert all(s < 30 for s in informal_steps)

    def test_same_step_disjoint_params_commute(self):
        docs = [
            {"kind": "set_param", "path": "tax_rate", "value": 0.2,
             "at_step": 10},
            {"kind": "set_param", "path": "p_fraud", "value": 0.4,
             "at_step": 10},
        ]
        results = []
        for ordering in (docs, list(reversed(docs))):
            cfg = make_config(run_id="pair", seed=23, total_days=1,
                              interventions=list(ordering))
            run = SimulationRun(cfg)
            run.advance(11)
            results.append((run.params["tax_rate"], run.params["p_fraud"],
                            [e.payload["intervention_id"] for e in run.events
                             if e.kind == "intervention_applied"]))
        assert results[0] == results[1]
        assert results[0][:2] == (0.2, 0.4)

    def test_same_step_flag_visible_to_decisions(self):
        # Informal trading switched on at step 2; the sell decided that very
        # step must already be able to use it.
        population = flat_population(2, activeness=1.0)
        cfg = make_config(
            run_id="atomic", total_days=1, seed=29, p_fraud=0.0,
            population=population, initial_balance=2000,
            item_catalog=[{"item_id": "pistol", "name": "Pistol",
                           "category": "gear", "npc_price": 800,
                           "tradable": True}],
            feature_flags={"informal_trade_enabled": False,
                           "black_market_enabled": False},
            interventions=[{"kind": "enable_feature",
                            "name": "informal_trade_enabled", "at_step": 2}])
        run = SimulationRun(cfg)
        run.bind_replay(ReplayPolicy({
            (1, 0): Action.BUY, (1, 1): Action.BUY, (1, 2): Action.SELL,
            **{(1, s): Action.OFFLINE for s in range(3, 24)},
            **{(2, s): Action.BATTLE for s in range(24)},
        }))
        run.run_to_end()
        informal = [e for e in run.events
                    if e.kind == "informal_trade_executed"]
        assert len(informal) == 1
        assert informal[0].step.abs_step == 2

    def test_full_reproducibility_with_interventions(self):
        def build():
            return make_config(
                run_id="repro", seed=31, total_days=2,
                interventions=[
                    {"kind": "set_param", "path": "tax_rate", "value": 0.12,
                     "at_step": 20},
                    {"kind": "enable_feature",
                     "name": "informal_trade_enabled", "at_step": 24},
                ])

        a = SimulationRun(build())
        a.run_to_end()
        b = SimulationRun(build())
        b.run_to_end()
        assert [e.to_record() for e in a.events] == \
            [e.to_record() for e in b.events]

    def test_params_reconstructible_from_config_plus_log(self):
        from mmosim.analytics import LogFold

        cfg = make_config(
            run_id="audit", seed=37, total_days=2, tax_rate=0.05,
            interventions=[
                {"kind": "set_param", "path": "tax_rate", "value": 0.3,
                 "at_step": 12},
                {"kind": "set_param", "path": "battle.lambda_win",
                 "value": 1.4, "at_step": 30},
            ])
        run = SimulationRun(cfg)
        run.run_to_end()
        fold = LogFold(run.config).feed_all(run.events)
        assert fold.params["tax_rate"] == run.params["tax_rate"] == 0.3
        assert fold.params["lambda_win"] == run.params["lambda_win"] == 1.4
        assert fold.flags == run.flags
