#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace tts;
using testing_support::SynthSetup;

namespace {

std::size_t first_index(const World& w, Role r) {
    for (std::size_t i = 0; i < w.steps.size(); ++i)
        if (w.steps[i].role == r) return i;
    return w.steps.size();
}

}  // namespace

TEST(Geometry, Validation) {
    LatentGeometry g;
    EXPECT_NO_THROW(g.validate());
    g.gate_layer = 7;
    EXPECT_THROW(g.validate(), ConfigError);
    g = {};
    g.margin = 0.5;
    EXPECT_THROW(g.validate(), ConfigError);
    g = {};
    g.epsilon = 1.0;
    EXPECT_THROW(g.validate(), ConfigError);
}

TEST(Geometry, GateDirectionIsUnitAndSeeded) {
    LatentGeometry a, b;
    b.direction_seed = 9;
    SyntheticModel ma(a), mb(b);
    EXPECT_NEAR(l2_norm(ma.gate_direction()), 1.0, 1e-12);
    EXPECT_NE(ma.gate_direction(), mb.gate_direction());
    EXPECT_EQ(ma.gate_direction(), SyntheticModel(a).gate_direction());
}

TEST(BuildWorld, ProductWorldShape) {
    const World w = build_world(stock_spec(Regime::Mixed, "m1", 3), 4);
    EXPECT_EQ(w.problem.id, "m1");
    EXPECT_EQ(w.steps.size(), w.cot.steps.size());
    EXPECT_EQ(w.gold, w.question_values[0] * w.question_values[1] * w.question_values[2]);
    EXPECT_EQ(w.problem.gold_answer, std::to_string(w.gold));
    for (auto v : w.question_values) {
        EXPECT_GE(v, 3);
        EXPECT_LE(v, 19);
    }
    EXPECT_TRUE(collision_free(AnswerFn::Product, w.question_values, {true, true, true}));
}

TEST(BuildWorld, RejectsBadTemplates) {
    SyntheticSpec s;
    s.label = "bad";
    s.steps = {{Role::Decorative, "No operand here.", std::nullopt}};
    EXPECT_THROW(build_world(s, 0), ConfigError);
    s.steps = {{Role::Operand, "Value is 3 and {}.", std::nullopt}};
    EXPECT_THROW(build_world(s, 0), ConfigError);
    s.steps = {{Role::Operand, "Value is {}.", std::nullopt}, {Role::Decorative, "Has {} slot.", std::nullopt}};
    EXPECT_THROW(build_world(s, 0), ConfigError);
    s.steps = {{Role::Operand, "Value is {}. More", std::nullopt}};
    EXPECT_THROW(build_world(s, 0), ConfigError);
    s.steps = {{Role::Operand, "Value is {}.", std::nullopt}};
    s.operand_values = {1, 2};
    EXPECT_THROW(build_world(s, 0), ConfigError);
}

TEST(BuildWorld, CollisionCheck) {
    EXPECT_FALSE(collision_free(AnswerFn::Sum, {3, 4}, {true, true}));
    EXPECT_TRUE(collision_free(AnswerFn::Sum, {3, 4}, {true, false}));
    EXPECT_FALSE(collision_free(AnswerFn::Product, {2, 3}, {true, true}));  // (3,2) swaps
}

TEST(Serialization, SpecRoundTrip) {
    auto s = stock_spec(Regime::Steering, "rt", 3);
    s.geometry.direction_seed = 5;
    const auto back = spec_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
    EXPECT_EQ(back.geometry, s.geometry);
    EXPECT_EQ(role_from_string(to_string(Role::SelfVerify)), Role::SelfVerify);
    EXPECT_THROW(role_from_string("nope"), ConfigError);
}

TEST(SyntheticModel, GateScoresSeparateByEngagement) {
    SynthSetup setup(testing_support::stock_specs({Regime::Steering, Regime::Mixed, Regime::SelfVerify}, 6));
    for (const auto& w : setup.worlds) {
        const auto steps = w.cot.step_texts();
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const double g = setup.model->gate_score(w.problem.question, steps, i, {});
            if (w.steps[i].engaged)
                EXPECT_NEAR(g, 2.0, 1e-12);
            else
                EXPECT_NEAR(g, 0.0, 1e-12);
        }
    }
}

TEST(SyntheticModel, IntactTraceAnswersGold) {
    SynthSetup setup(testing_support::stock_specs({Regime::And, Regime::Or, Regime::Mixed, Regime::SelfVerify,
                                                   Regime::Steering},
                                                  10));
    BackendSession s(setup.model);
    for (const auto& w : setup.worlds) {
        EXPECT_EQ(s.early_exit_answer(w.problem.question, w.cot.step_texts()).canonical, std::to_string(w.gold));
        EXPECT_EQ(s.generate_cot(w.problem.question).first, w.cot.raw_text);
    }
}

TEST(SyntheticModel, ConfidenceShape) {
    LatentGeometry g;
    SynthSetup setup({stock_spec(Regime::And, "c1")}, 1, g);
    const World& w = setup.worlds[0];
    const auto steps = w.cot.step_texts();
    Interventions none;
    const std::string gold = std::to_string(w.gold);
    EXPECT_EQ(setup.model->early_exit_confidence(w.problem.question, steps, gold, none), 1.0 - g.epsilon);
    EXPECT_EQ(setup.model->early_exit_confidence(w.problem.question, steps, std::to_string(w.gold + 2), none),
              std::ldexp(g.epsilon, -3));
    EXPECT_EQ(setup.model->early_exit_confidence(w.problem.question, steps, "2.5", none), 0.0);
}

TEST(SyntheticModel, SteeringAtGateEngagesIgnoredOperand) {
    SynthSetup setup({stock_spec(Regime::Steering, "st", 2)});
    BackendSession s(setup.model);
    const World& w = setup.worlds[0];
    const std::size_t ignored = 1;
    ASSERT_FALSE(w.steps[ignored].engaged);
    // Perturb the ignored operand so engaging it changes the route.
    const auto plan = enumerate_perturbations(w.cot.steps[ignored]).front();
    auto steps = w.cot.step_texts();
    steps[ignored] = plan.text;
    const auto& q = w.problem.question;
    ASSERT_EQ(s.early_exit_answer(q, steps).canonical, std::to_string(w.gold));
    const TokenRange r = s.layout(q, steps).steps[ignored];
    const Vec v = scaled(setup.model->gate_direction(), 2.0);
    const Answer at_gate = s.with_steering({3, v, r, 1}, [&] { return s.early_exit_answer(q, steps); });
    EXPECT_FALSE(at_gate.canonical == std::to_string(w.gold));
    const Answer late = s.with_steering({4, v, r, 1}, [&] { return s.early_exit_answer(q, steps); });
    EXPECT_EQ(late.canonical, std::to_string(w.gold)) << "steering above the gate is read too late";
    const Answer early = s.with_steering({1, v, r, 1}, [&] { return s.early_exit_answer(q, steps); });
    EXPECT_FALSE(early.canonical == std::to_string(w.gold)) << "earlier deltas persist to the gate";
}

TEST(SyntheticModel, ZeroAttentionAtGateDisengages) {
    SynthSetup setup({stock_spec(Regime::And, "za", 2)});
    BackendSession s(setup.model);
    const World& w = setup.worlds[0];
    const std::size_t op = first_index(w, Role::Operand);
    auto steps = w.cot.step_texts();
    steps[op] = enumerate_perturbations(w.cot.steps[op]).front().text;
    const auto& q = w.problem.question;
    ASSERT_FALSE(s.early_exit_answer(q, steps).canonical == std::to_string(w.gold));
    const TokenRange r = s.layout(q, steps).steps[op];
    EXPECT_EQ(s.with_attention_scale({3, r, 0.0}, [&] { return s.early_exit_answer(q, steps); }).canonical,
              std::to_string(w.gold));
    EXPECT_FALSE(s.with_attention_scale({2, r, 0.0}, [&] { return s.early_exit_answer(q, steps); }).canonical ==
                 std::to_string(w.gold));
}

TEST(SyntheticModel, AttentionFollowsEngagement) {
    SynthSetup setup({stock_spec(Regime::Steering, "at", 2)});
    BackendSession s(setup.model);
    const World& w = setup.worlds[0];
    const auto steps = w.cot.step_texts();
    const auto lay = s.layout(w.problem.question, steps);
    const TokenRange queries{lay.cue.begin, lay.num_tokens};
    const auto a = s.capture_attention(w.problem.question, steps, 4);
    EXPECT_GT(a.mass(lay.steps[0], queries), a.mass(lay.steps[1], queries));
    const auto below_gate = s.capture_attention(w.problem.question, steps, 3);
    EXPECT_NEAR(below_gate.mass(lay.steps[0], queries) / lay.steps[0].size(),
                below_gate.mass(lay.steps[1], queries) / lay.steps[1].size(), 0.2);
}

TEST(Oracle, StockRegimeValues) {
    LatentGeometry g;
    g.epsilon = 0.0;
    auto check = [&](Regime r, Role role, double tts_expected, double nec, double suf) {
        const World w = build_world(stock_spec(r, "o", 2, g), 3);
        const auto o = oracle_scores(w, first_index(w, role));
        EXPECT_EQ(o.tts, tts_expected) << to_string(role);
        EXPECT_EQ(o.ate_nec, nec) << to_string(role);
        EXPECT_EQ(o.ate_suf, suf) << to_string(role);
    };
    check(Regime::And, Role::Operand, 1.0, 1.0, 1.0);
    check(Regime::And, Role::Decorative, 0.0, 0.0, 0.0);
    check(Regime::Or, Role::Operand, 1.0, 1.0, 1.0);  // the alternate comes later, outside the prefix
    check(Regime::Or, Role::Alternate, 0.5, 0.0, 1.0);
    check(Regime::SelfVerify, Role::SelfVerify, 0.0, 0.0, 0.0);
}

TEST(Oracle, LaterOperandHasNoSufficiency) {
    LatentGeometry g;
    g.epsilon = 0.0;
    const World w = build_world(stock_spec(Regime::And, "o2", 3, g), 8);
    std::vector<std::size_t> ops;
    for (std::size_t i = 0; i < w.steps.size(); ++i)
        if (w.steps[i].role == Role::Operand) ops.push_back(i);
    EXPECT_EQ(oracle_scores(w, ops[0]).tts, 1.0);
    for (std::size_t k = 1; k < ops.size(); ++k) {
        const auto o = oracle_scores(w, ops[k]);
        EXPECT_EQ(o.ate_nec, 1.0);
        EXPECT_EQ(o.ate_suf, 0.0);
        EXPECT_EQ(o.tts, 0.5);
    }
}
