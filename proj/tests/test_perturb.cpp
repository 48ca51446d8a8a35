#include <gtest/gtest.h>

#include <set>

#include "helpers.hpp"

using namespace tts;
using testing_support::Gen;

namespace {

// Everything outside the literals must be untouched and each literal must move
// by exactly its offset, in its own fraction precision.
void expect_digit_only_change(const Step& orig, const std::string& text, const std::vector<int>& offsets) {
    const auto spans = find_numeric_spans(text);
    ASSERT_EQ(spans.size(), orig.numeric_spans.size()) << orig.text << " -> " << text;
    std::size_t ca = 0, cb = 0;
    for (std::size_t k = 0; k < spans.size(); ++k) {
        const auto& a = orig.numeric_spans[k];
        const auto& b = spans[k];
        ASSERT_EQ(orig.text.substr(ca, a.begin - ca), text.substr(cb, b.begin - cb));
        ASSERT_EQ(a.frac_digits, b.frac_digits);
        std::int64_t unit = 1;
        for (int f = 0; f < a.frac_digits; ++f) unit *= 10;
        ASSERT_EQ(b.scaled, a.scaled + offsets[k] * unit);
        ca = a.end;
        cb = b.end;
    }
    ASSERT_EQ(orig.text.substr(ca), text.substr(cb));
}

}  // namespace

TEST(Offset, RejectsZeroAndOutOfRange) {
    EXPECT_THROW(Offset(0), ContractError);
    EXPECT_THROW(Offset(4), ContractError);
    EXPECT_THROW(Offset(-4), ContractError);
    EXPECT_EQ(Offset(-3).value(), -3);
}

TEST(Offset, DrawCoversAllValues) {
    Rng rng(5);
    std::set<int> seen;
    for (int i = 0; i < 2000; ++i) seen.insert(Offset::draw(rng).value());
    EXPECT_EQ(seen, (std::set<int>{-3, -2, -1, 1, 2, 3}));
}

TEST(PerturbStep, NumberlessStepIsDropped) {
    const Step s = make_step(2, "Let us think.");
    const auto p = perturb_step(s, 9);
    EXPECT_TRUE(p.plan.dropped);
    EXPECT_TRUE(p.text.empty());
    EXPECT_EQ(apply_plan(s, p.plan), "");
}

TEST(PerturbContext, NumberlessStepsKeptVerbatim) {
    const std::vector<Step> ctx = {make_step(0, "Let us think."), make_step(1, "We have 4 pens.")};
    const auto p = perturb_context(ctx, 3);
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p[0].text, "Let us think.");
    EXPECT_FALSE(p[0].plan.dropped);
    EXPECT_NE(p[1].text, "We have 4 pens.");
}

TEST(PerturbProperty, DigitOnlyMutation) {
    Gen g(21);
    for (int trial = 0; trial < 500; ++trial) {
        const Step s = make_step(0, g.sentence(1 + g.below(4)));
        ASSERT_FALSE(s.numeric_spans.empty());
        const auto p = perturb_step(s, g.rng.next_u64());
        std::vector<int> offs;
        for (const auto& [k, o] : p.plan.span_offsets) offs.push_back(o.value());
        expect_digit_only_change(s, p.text, offs);
        ASSERT_EQ(apply_plan(s, p.plan), p.text);
        ASSERT_EQ(plan_from_json(to_json(p.plan)), p.plan);
        ASSERT_EQ(perturb_step(s, p.plan.seed).text, p.text);
    }
}

TEST(PerturbProperty, EnumerationIsCompleteAndOrdered) {
    Gen g(22);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t k = 1 + g.below(3);
        const Step s = make_step(0, g.sentence(k));
        const auto all = enumerate_perturbations(s);
        ASSERT_EQ(all.size(), offset_combinations(k));
        std::set<std::vector<int>> distinct;
        for (const auto& p : all) {
            std::vector<int> offs;
            for (const auto& [i, o] : p.plan.span_offsets) offs.push_back(o.value());
            expect_digit_only_change(s, p.text, offs);
            distinct.insert(offs);
        }
        ASSERT_EQ(distinct.size(), all.size());
        ASSERT_EQ(all.front().plan.span_offsets.front().second.value(), -3);
        ASSERT_EQ(all.back().plan.span_offsets.back().second.value(), 3);
        // Last span varies fastest.
        if (k >= 2) {
            ASSERT_EQ(all[1].plan.span_offsets[k - 1].second.value(), -2);
            ASSERT_EQ(all[1].plan.span_offsets[0].second.value(), -3);
        }
    }
}

TEST(Enumeration, CapRaises) {
    const Step s = make_step(0, "1 2 3 4 5 6");
    EXPECT_THROW(enumerate_perturbations(s), EnumerationError);
    EXPECT_EQ(enumerate_perturbations(make_step(0, "1 2 3 4 5")).size(), 7776u);
    EXPECT_THROW(enumerate_perturbations(make_step(0, "1 2"), 35), EnumerationError);
    EXPECT_EQ(enumerate_perturbations(make_step(0, "1 2"), 36).size(), 36u);
}

TEST(Enumeration, ContextOrderEarlierStepsMostSignificant) {
    const std::vector<Step> ctx = {make_step(0, "a 10."), make_step(1, "Think."), make_step(2, "b 20.")};
    const auto all = enumerate_context_perturbations(ctx);
    ASSERT_EQ(all.size(), 36u);
    EXPECT_EQ(all[0][0].text, "a 7.");
    EXPECT_EQ(all[0][2].text, "b 17.");
    EXPECT_EQ(all[1][0].text, "a 7.");
    EXPECT_EQ(all[1][2].text, "b 18.");
    EXPECT_EQ(all[6][0].text, "a 8.");
    for (const auto& v : all) EXPECT_EQ(v[1].text, "Think.");
}

TEST(Enumeration, NumberlessStepSingleDroppedVariant) {
    const auto all = enumerate_perturbations(make_step(1, "Think."));
    ASSERT_EQ(all.size(), 1u);
    EXPECT_TRUE(all[0].plan.dropped);
}

TEST(Enumeration, OffsetCombinationsSaturates) {
    EXPECT_EQ(offset_combinations(0), 1u);
    EXPECT_EQ(offset_combinations(5), 7776u);
    EXPECT_EQ(offset_combinations(200), SIZE_MAX);
}
