#pragma once

// Numeric-offset and drop perturbations of steps and contexts, plus the
// exhaustive enumeration used by enumerate-mode scoring and the oracle.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tts/error.hpp"
#include "tts/trace.hpp"
#include "tts/util.hpp"

namespace tts {

/// A non-zero shift in {-3,-2,-1,1,2,3} applied to one numeric literal.
class Offset {
public:
    static constexpr std::array<int, 6> kValues = {-3, -2, -1, 1, 2, 3};

    explicit Offset(int value) : value_(value) {
        if (value == 0 || value < -3 || value > 3)
            throw ContractError("offset must be in {-3,-2,-1,1,2,3}, got " + std::to_string(value));
    }
    int value() const { return value_; }
    friend bool operator==(const Offset&, const Offset&) = default;

    static Offset draw(Rng& rng) { return Offset(kValues[rng.below(kValues.size())]); }

private:
    int value_;
};

struct PerturbationPlan {
    std::size_t step_index = 0;
    std::vector<std::pair<std::size_t, Offset>> span_offsets;
    bool dropped = false;
    std::uint64_t seed = 0;

    friend bool operator==(const PerturbationPlan&, const PerturbationPlan&) = default;
};

struct PerturbedStep {
    std::string text;  // empty when the step was dropped
    PerturbationPlan plan;
};

inline json to_json(const PerturbationPlan& p) {
    json offsets = json::array();
    for (const auto& [span, off] : p.span_offsets) offsets.push_back({span, off.value()});
    return json{{"step", p.step_index}, {"offsets", offsets}, {"dropped", p.dropped}, {"seed", p.seed}};
}

inline PerturbationPlan plan_from_json(const json& j) {
    PerturbationPlan p;
    p.step_index = j.at("step").get<std::size_t>();
    p.dropped = j.at("dropped").get<bool>();
    p.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("offsets")) p.span_offsets.emplace_back(o.at(0).get<std::size_t>(), Offset(o.at(1).get<int>()));
    return p;
}

/// Rewrites each numeric literal of `step` shifted by its offset. The integer
/// part moves; fraction digits keep their count. Text between literals is untouched.
inline std::string apply_offsets(const Step& step, const std::vector<int>& offsets) {
    std::string out;
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < step.numeric_spans.size(); ++k) {
        const auto& span = step.numeric_spans[k];
        out.append(step.text, cursor, span.begin - cursor);
        std::int64_t unit = 1;
        for (int f = 0; f < span.frac_digits; ++f) unit *= 10;
        out += render_scaled(span.scaled + offsets[k] * unit, span.frac_digits);
        cursor = span.end;
    }
    out.append(step.text, cursor, std::string::npos);
    return out;
}

/// Replays a plan against its step.
inline std::string apply_plan(const Step& step, const PerturbationPlan& plan) {
    if (plan.dropped) return {};
    if (plan.span_offsets.empty()) return step.text;
    std::vector<int> offsets(step.numeric_spans.size(), 0);
    for (const auto& [span, off] : plan.span_offsets) offsets.at(span) = off.value();
    return apply_offsets(step, offsets);
}

/// do(X=0) for one step: independent offsets per numeric literal, or removal
/// when the step has no numbers.
inline PerturbedStep perturb_step(const Step& step, std::uint64_t seed) {
    PerturbedStep out;
    out.plan.step_index = step.index;
    out.plan.seed = seed;
    if (step.numeric_spans.empty()) {
        out.plan.dropped = true;
        return out;
    }
    Rng rng(seed);
    std::vector<int> offsets;
    for (std::size_t k = 0; k < step.numeric_spans.size(); ++k) {
        const Offset o = Offset::draw(rng);
        offsets.push_back(o.value());
        out.plan.span_offsets.emplace_back(k, o);
    }
    out.text = apply_offsets(step, offsets);
    return out;
}

/// C' for a context: every literal in every step gets its own offset. Steps
/// without numbers stay verbatim; context steps are never dropped.
inline std::vector<PerturbedStep> perturb_context(const std::vector<Step>& context, std::uint64_t seed) {
    std::vector<PerturbedStep> out;
    out.reserve(context.size());
    for (std::size_t i = 0; i < context.size(); ++i) {
        const Step& s = context[i];
        if (s.numeric_spans.empty()) {
            PerturbedStep kept;
            kept.text = s.text;
            kept.plan.step_index = s.index;
            kept.plan.seed = seed;
            out.push_back(std::move(kept));
        } else {
            out.push_back(perturb_step(s, derive_seed({seed, i})));
        }
    }
    return out;
}

inline constexpr std::size_t kDefaultEnumerationCap = 7776;  // 6^5

/// 6^k, saturating at SIZE_MAX.
inline std::size_t offset_combinations(std::size_t k) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < k; ++i) {
        if (n > SIZE_MAX / 6) return SIZE_MAX;
        n *= 6;
    }
    return n;
}

namespace detail {

// Odometer over k digits in [0,6); digit 0 is most significant.
inline bool next_assignment(std::vector<std::size_t>& digits) {
    for (std::size_t i = digits.size(); i-- > 0;) {
        if (++digits[i] < 6) return true;
        digits[i] = 0;
    }
    return false;
}

}  // namespace detail

/// Every assignment of one offset per literal, lexicographic over spans with
/// ascending offsets. A step without numbers yields its single dropped variant.
inline std::vector<PerturbedStep> enumerate_perturbations(const Step& step, std::size_t cap = kDefaultEnumerationCap) {
    std::vector<PerturbedStep> out;
    const std::size_t k = step.numeric_spans.size();
    if (k == 0) {
        PerturbedStep d;
        d.plan.step_index = step.index;
        d.plan.dropped = true;
        out.push_back(std::move(d));
        return out;
    }
    const std::size_t total = offset_combinations(k);
    if (total > cap)
        throw EnumerationError("step " + std::to_string(step.index) + " has " + std::to_string(k) +
                               " numeric literals (6^k > cap " + std::to_string(cap) + "); use monte_carlo mode");
    out.reserve(total);
    std::vector<std::size_t> digits(k, 0);
    do {
        PerturbedStep p;
        p.plan.step_index = step.index;
        std::vector<int> offsets(k);
        for (std::size_t i = 0; i < k; ++i) {
            offsets[i] = Offset::kValues[digits[i]];
            p.plan.span_offsets.emplace_back(i, Offset(offsets[i]));
        }
        p.text = apply_offsets(step, offsets);
        out.push_back(std::move(p));
    } while (detail::next_assignment(digits));
    return out;
}

/// Every perturbed version of a whole context, in odometer order over all
/// literals of all steps (earlier steps most significant).
inline std::vector<std::vector<PerturbedStep>> enumerate_context_perturbations(const std::vector<Step>& context,
                                                                               std::size_t cap = kDefaultEnumerationCap) {
    std::size_t k = 0;
    for (const auto& s : context) k += s.numeric_spans.size();
    const std::size_t total = offset_combinations(k);
    if (total > cap)
        throw EnumerationError("context has " + std::to_string(k) + " numeric literals (6^k > cap " +
                               std::to_string(cap) + "); use monte_carlo mode");
    std::vector<std::vector<PerturbedStep>> out;
    out.reserve(total);
    std::vector<std::size_t> digits(k, 0);
    do {
        std::vector<PerturbedStep> variant;
        variant.reserve(context.size());
        std::size_t d = 0;
        for (const auto& s : context) {
            PerturbedStep p;
            p.plan.step_index = s.index;
            std::vector<int> offsets(s.numeric_spans.size());
            for (std::size_t i = 0; i < offsets.size(); ++i, ++d) {
                offsets[i] = Offset::kValues[digits[d]];
                p.plan.span_offsets.emplace_back(i, Offset(offsets[i]));
            }
            p.text = offsets.empty() ? s.text : apply_offsets(s, offsets);
            variant.push_back(std::move(p));
        }
        out.push_back(std::move(variant));
    } while (detail::next_assignment(digits));
    return out;
}

}  // namespace tts
