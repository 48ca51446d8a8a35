#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "helpers.hpp"

using namespace tts;
using testing_support::Gen;

TEST(NumericSpans, FindsIntegersDecimalsAndSigns) {
    const auto spans = find_numeric_spans("We have 3 apples, -2.50 dollars and x1 = 7.");
    ASSERT_EQ(spans.size(), 3u);
    EXPECT_EQ(spans[0].scaled, 3);
    EXPECT_EQ(spans[1].scaled, -250);
    EXPECT_EQ(spans[1].frac_digits, 2);
    EXPECT_EQ(spans[2].scaled, 7);
}

TEST(NumericSpans, SubtractionIsNotASign) {
    const auto spans = find_numeric_spans("so 10-3 is 7");
    ASSERT_EQ(spans.size(), 3u);
    EXPECT_EQ(spans[1].scaled, 3);
}

TEST(NumericSpans, IdentifierDigitsIgnored) {
    EXPECT_TRUE(find_numeric_spans("a_2 and x12 and v3").empty());
}

TEST(RenderScaled, KeepsFractionDigits) {
    EXPECT_EQ(render_scaled(250, 2), "2.50");
    EXPECT_EQ(render_scaled(-5, 1), "-0.5");
    EXPECT_EQ(render_scaled(7, 0), "7");
    EXPECT_EQ(render_scaled(3, 3), "0.003");
}

TEST(MaskDigits, ReplacesNumericRuns) {
    EXPECT_EQ(mask_digits("add 12 and -3.5 - x"), "add # and #.# - x");
    EXPECT_EQ(mask_digits("The first factor is 9."), mask_digits("The first factor is 12."));
}

TEST(Segment, SplitsSentences) {
    const auto steps = segment("First 3 + 4 = 7. Then double it! Is it 14? Yes");
    ASSERT_EQ(steps.size(), 4u);
    EXPECT_EQ(steps[0].text, "First 3 + 4 = 7.");
    EXPECT_EQ(steps[3].text, "Yes");
    for (std::size_t i = 0; i < steps.size(); ++i) EXPECT_EQ(steps[i].index, i);
}

TEST(Segment, DoesNotSplitInsideMath) {
    const auto steps = segment("We get $x = 1. y = 2$ here. Done.");
    ASSERT_EQ(steps.size(), 2u);
    EXPECT_EQ(steps[0].text, "We get $x = 1. y = 2$ here.");
}

TEST(Segment, BlankLinesSplit) {
    const auto steps = segment("line one\n\nline two");
    ASSERT_EQ(steps.size(), 2u);
}

TEST(Segment, EmptyInputGivesNoSteps) { EXPECT_TRUE(segment("   \n ").empty()); }

TEST(SelfVerification, LexiconIsCaseInsensitive) {
    EXPECT_TRUE(flag_self_verification("Wait, let me recompute that."));
    EXPECT_TRUE(flag_self_verification("LET ME VERIFY the sum"));
    EXPECT_FALSE(flag_self_verification("The sum is 12."));
    EXPECT_TRUE(flag_self_verification("hmm odd", {"hmm"}));
}

TEST(Answers, CanonicalNumber) {
    EXPECT_EQ(canonical_number("007"), "7");
    EXPECT_EQ(canonical_number("2.50"), "2.5");
    EXPECT_EQ(canonical_number("-0"), "0");
    EXPECT_EQ(canonical_number("1,000"), "1000");
    EXPECT_FALSE(canonical_number("abc").has_value());
}

TEST(Answers, Canonicalize) {
    EXPECT_EQ(canonicalize_answer("42").canonical, "42");
    EXPECT_EQ(canonicalize_answer("so \\boxed{12} is it").canonical, "12");
    EXPECT_EQ(canonicalize_answer("The answer is 3.0 apples").canonical, "3");
    EXPECT_FALSE(canonicalize_answer("").parsable());
    EXPECT_FALSE(canonicalize_answer("no idea at all").parsable());
}

TEST(Answers, UnparsableNeverEqual) {
    const Answer a = canonicalize_answer("");
    EXPECT_FALSE(a == a);
    EXPECT_TRUE(canonicalize_answer("12") == canonicalize_answer("12.00"));
}

TEST(Dataset, ParsesAndReportsLine) {
    std::istringstream ok(R"({"id":"a","question":"q?","answer":"1"}

{"id":"b","question":"r?","answer":"2"})");
    const auto ps = parse_dataset(ok);
    ASSERT_EQ(ps.size(), 2u);
    EXPECT_EQ(ps[1].gold_answer, "2");

    std::istringstream bad(R"({"id":"a","question":"q?","answer":"1"}
{"id":"b","question":"r?"})");
    try {
        parse_dataset(bad);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(Dataset, DuplicateIdsRejected) {
    std::istringstream in(R"({"id":"a","question":"q","answer":"1"}
{"id":"a","question":"r","answer":"2"})");
    EXPECT_THROW(parse_dataset(in), DatasetError);
}

TEST(Dataset, RoundTrip) {
    std::vector<Problem> ps = {{"x", "What is \"2\"+2?", "4"}, {"y", "line\nbreak", "5"}};
    std::stringstream s;
    write_dataset(s, ps);
    const auto back = parse_dataset(s);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].question, ps[0].question);
    EXPECT_EQ(back[1].question, ps[1].question);
}

TEST(Split, RejectsBadInput) {
    std::vector<Problem> two = {{"a", "q", "1"}, {"b", "q", "1"}};
    EXPECT_THROW(split_dataset(two), SplitError);
    std::vector<Problem> three = {{"a", "q", "1"}, {"b", "q", "1"}, {"c", "q", "1"}};
    EXPECT_THROW(split_dataset(three, {0.5, 0.5, 0.5}), SplitError);
}

TEST(SplitProperty, DisjointCoveringDeterministic) {
    Gen g(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 3 + g.below(200);
        std::vector<Problem> ps;
        for (std::size_t i = 0; i < n; ++i) ps.push_back({"p" + std::to_string(g.rng.next_u64()), "q", "1"});
        const double a = g.unit(), b = g.unit() * (1 - a);
        const std::array<double, 3> r{a, b, 1 - a - b};
        const std::uint64_t seed = g.rng.next_u64();
        const auto s = split_dataset(ps, r, seed);

        std::set<std::string> all;
        for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
        ASSERT_EQ(all.size(), n);
        ASSERT_EQ(s.train.size() + s.val.size() + s.test.size(), n);
        for (std::size_t k = 0; k < 3; ++k) {
            const std::size_t sz = k == 0 ? s.train.size() : k == 1 ? s.val.size() : s.test.size();
            ASSERT_LE(std::abs(static_cast<double>(sz) - r[k] * static_cast<double>(n)), 1.0 + 1e-9);
        }

        auto shuffled = ps;
        g.rng.shuffle(shuffled);
        const auto s2 = split_dataset(shuffled, r, seed);
        ASSERT_EQ(s.train, s2.train);
        ASSERT_EQ(s.val, s2.val);
        ASSERT_EQ(s.test, s2.test);

        const auto back = split_from_json(to_json(s));
        ASSERT_EQ(back.train, s.train);
        ASSERT_EQ(back.seed, s.seed);
    }
}
