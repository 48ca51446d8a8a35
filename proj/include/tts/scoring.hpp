#pragma once

// Confidence cells S_x(c), necessity/sufficiency effects, the True-Thinking
// Score, the DropStep baseline, threshold selection and distribution summaries.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/backend.hpp"
#include "tts/error.hpp"
#include "tts/perturb.hpp"
#include "tts/trace.hpp"
#include "tts/util.hpp"

namespace tts {

enum class ScoreMode { Enumerate, MonteCarlo };
enum class Variant { Full, NecOnly };

struct ScoreConfig {
    ScoreMode mode = ScoreMode::Enumerate;
    std::size_t num_samples = 5;
    std::uint64_t seed = 0;
    Variant variant = Variant::Full;
    double alpha = 0.9;
    double beta = 0.0;
    double cutoff = 0.005;  // decorative self-verification
    std::size_t enumeration_cap = kDefaultEnumerationCap;

    void validate() const {
        if (!(beta >= 0.0 && beta < alpha && alpha <= 1.0))
            throw ConfigError("thresholds must satisfy 0 <= beta < alpha <= 1 (alpha=" + std::to_string(alpha) +
                              ", beta=" + std::to_string(beta) + ")");
        if (num_samples < 1) throw ConfigError("num_samples must be >= 1");
        if (!(cutoff >= 0.0)) throw ConfigError("cutoff must be non-negative");
    }
};

inline std::string to_string(ScoreMode m) { return m == ScoreMode::Enumerate ? "enumerate" : "monte_carlo"; }
inline std::string to_string(Variant v) { return v == Variant::Full ? "full" : "nec_only"; }

inline ScoreMode mode_from_string(const std::string& s) {
    if (s == "enumerate") return ScoreMode::Enumerate;
    if (s == "monte_carlo") return ScoreMode::MonteCarlo;
    throw ConfigError("mode must be enumerate or monte_carlo, got '" + s + "'");
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "nec_only") return Variant::NecOnly;
    throw ConfigError("variant must be full or nec_only, got '" + s + "'");
}

inline json to_json(const ScoreConfig& c) {
    return json{{"mode", to_string(c.mode)}, {"num_samples", c.num_samples}, {"seed", c.seed},
                {"variant", to_string(c.variant)}, {"alpha", c.alpha}, {"beta", c.beta},
                {"cutoff", c.cutoff}, {"enumeration_cap", c.enumeration_cap}};
}

inline ScoreConfig score_config_from_json(const json& j) {
    ScoreConfig c;
    try {
        c.mode = mode_from_string(j.value("mode", std::string("enumerate")));
        c.num_samples = j.value("num_samples", c.num_samples);
        c.seed = j.value("seed", c.seed);
        c.variant = variant_from_string(j.value("variant", std::string("full")));
        c.alpha = j.value("alpha", c.alpha);
        c.beta = j.value("beta", c.beta);
        c.cutoff = j.value("cutoff", c.cutoff);
        c.enumeration_cap = j.value("enumeration_cap", c.enumeration_cap);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad score config: ") + e.what());
    }
    return c;
}

struct StepScore {
    std::string problem_id;
    std::size_t step_index = 0;
    std::size_t num_steps = 0;
    double S1_1 = 0, S0_1 = 0, S1_0 = 0, S0_0 = 0;
    double ate_nec = 0, ate_suf = 0, tts = 0;
    double dropstep = 0;
    std::size_t n_evals = 0;
    std::string y_star;  // target of the S cells
    std::string y_gt;    // target of DropStep
    bool is_self_verification = false;
    json plans = json::object();  // per-cell perturbation plans (Monte Carlo) or variant counts

    /// Normalized step position in (0, 1).
    double position() const {
        return num_steps ? (static_cast<double>(step_index) + 0.5) / static_cast<double>(num_steps) : 0.0;
    }
};

inline json to_json(const StepScore& s) {
    return json{{"problem_id", s.problem_id}, {"step_index", s.step_index}, {"num_steps", s.num_steps},
                {"S1_1", s.S1_1},             {"S0_1", s.S0_1},             {"S1_0", s.S1_0},
                {"S0_0", s.S0_0},             {"ate_nec", s.ate_nec},       {"ate_suf", s.ate_suf},
                {"tts", s.tts},               {"dropstep", s.dropstep},     {"n_evals", s.n_evals},
                {"y_star", s.y_star},         {"y_gt", s.y_gt},             {"is_self_verification", s.is_self_verification},
                {"plans", s.plans}};
}

inline StepScore step_score_from_json(const json& j) {
    StepScore s;
    s.problem_id = j.at("problem_id").get<std::string>();
    s.step_index = j.at("step_index").get<std::size_t>();
    s.num_steps = j.at("num_steps").get<std::size_t>();
    s.S1_1 = j.at("S1_1").get<double>();
    s.S0_1 = j.at("S0_1").get<double>();
    s.S1_0 = j.at("S1_0").get<double>();
    s.S0_0 = j.at("S0_0").get<double>();
    s.ate_nec = j.at("ate_nec").get<double>();
    s.ate_suf = j.at("ate_suf").get<double>();
    s.tts = j.at("tts").get<double>();
    s.dropstep = j.at("dropstep").get<double>();
    s.n_evals = j.at("n_evals").get<std::size_t>();
    s.y_star = j.at("y_star").get<std::string>();
    s.y_gt = j.at("y_gt").get<std::string>();
    s.is_self_verification = j.at("is_self_verification").get<bool>();
    s.plans = j.value("plans", json::object());
    return s;
}

// ---------------------------------------------------------------------------
// Effects
// ---------------------------------------------------------------------------

inline double ate_nec(double S1_1, double S0_1) { return S1_1 - S0_1; }
inline double ate_suf(double S1_0, double S0_0) { return S1_0 - S0_0; }

inline double tts(double S1_1, double S0_1, double S1_0, double S0_0) {
    return 0.5 * (std::abs(S1_1 - S0_1) + std::abs(S1_0 - S0_0));
}

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

struct CellEstimate {
    double value = 0.0;
    std::size_t n_evals = 0;
    json plans = json::array();
};

namespace detail {

inline std::vector<std::string> prompt_steps(const std::vector<std::string>& context, const std::string& step) {
    std::vector<std::string> out;
    for (const auto& c : context)
        if (!c.empty()) out.push_back(c);
    if (!step.empty()) out.push_back(step);
    return out;
}

inline std::vector<std::string> texts(const std::vector<PerturbedStep>& ps) {
    std::vector<std::string> out;
    for (const auto& p : ps) out.push_back(p.text);
    return out;
}

inline json plans_json(const std::vector<PerturbedStep>& ps) {
    json a = json::array();
    for (const auto& p : ps) a.push_back(to_json(p.plan));
    return a;
}

}  // namespace detail

/// Seed of one Monte Carlo draw. Each cell gets its own stream.
inline std::uint64_t draw_seed(const ScoreConfig& cfg, const std::string& problem_id, std::size_t step_index, int cell,
                               std::size_t draw, int part) {
    return derive_seed({cfg.seed, fnv1a(problem_id), step_index, static_cast<std::uint64_t>(cell), draw,
                        static_cast<std::uint64_t>(part)});
}

/// S_x(c): mean confidence in y* with the step intact (x=1) or perturbed (x=0)
/// under the intact (c=1) or perturbed (c=0) context. Enumerate mode iterates
/// contexts in the outer loop and step variants in the inner loop.
inline CellEstimate estimate_S(BackendSession& session, const Problem& problem, const ChainOfThought& cot,
                               std::size_t step_index, int x, int c, const ScoreConfig& cfg, const Answer& y_star) {
    if (!session.info().caps.confidence) throw ContractError("backend lacks the confidence capability");
    if (step_index >= cot.steps.size()) throw ContractError("step index out of range");
    if ((x != 0 && x != 1) || (c != 0 && c != 1)) throw ContractError("x and c must be 0 or 1");
    const Step& step = cot.steps[step_index];
    const std::vector<Step> context(cot.steps.begin(), cot.steps.begin() + static_cast<std::ptrdiff_t>(step_index));
    std::vector<std::string> intact_ctx;
    for (const auto& s : context) intact_ctx.push_back(s.text);

    CellEstimate est;
    auto eval = [&](const std::vector<std::string>& ctx, const std::string& s) {
        ++est.n_evals;
        return session.early_exit_confidence(problem.question, detail::prompt_steps(ctx, s), y_star);
    };

    if (x == 1 && c == 1) {
        est.value = eval(intact_ctx, step.text);
        return est;
    }

    if (cfg.mode == ScoreMode::Enumerate) {
        std::vector<std::vector<std::string>> contexts;
        if (c == 1) {
            contexts.push_back(intact_ctx);
        } else {
            for (const auto& v : enumerate_context_perturbations(context, cfg.enumeration_cap))
                contexts.push_back(detail::texts(v));
        }
        std::vector<std::string> variants;
        if (x == 1) {
            variants.push_back(step.text);
        } else {
            for (const auto& v : enumerate_perturbations(step, cfg.enumeration_cap)) variants.push_back(v.text);
        }
        if (contexts.size() * variants.size() > cfg.enumeration_cap)
            throw EnumerationError("cell enumeration of " + std::to_string(contexts.size() * variants.size()) +
                                   " variants exceeds cap " + std::to_string(cfg.enumeration_cap) +
                                   "; use monte_carlo mode");
        double sum = 0.0;
        for (const auto& ctx : contexts)
            for (const auto& s : variants) sum += eval(ctx, s);
        est.value = sum / static_cast<double>(contexts.size() * variants.size());
        est.plans = json{{"contexts", contexts.size()}, {"step_variants", variants.size()}};
        return est;
    }

    const int cell = x == 0 && c == 1 ? 1 : x == 1 && c == 0 ? 2 : 3;
    double sum = 0.0;
    for (std::size_t k = 0; k < cfg.num_samples; ++k) {
        json plan = json::object();
        std::vector<std::string> ctx = intact_ctx;
        std::string s = step.text;
        if (c == 0) {
            const auto pc = perturb_context(context, draw_seed(cfg, problem.id, step_index, cell, k, 0));
            ctx = detail::texts(pc);
            plan["context"] = detail::plans_json(pc);
        }
        if (x == 0) {
            const auto ps = perturb_step(step, draw_seed(cfg, problem.id, step_index, cell, k, 1));
            s = ps.text;
            plan["step"] = to_json(ps.plan);
        }
        sum += eval(ctx, s);
        est.plans.push_back(std::move(plan));
    }
    est.value = sum / static_cast<double>(cfg.num_samples);
    return est;
}

/// P(y_GT | q, C, s) - P(y_GT | q, C).
inline double dropstep_score(BackendSession& session, const Problem& problem, const ChainOfThought& cot,
                             std::size_t step_index) {
    if (step_index >= cot.steps.size()) throw ContractError("step index out of range");
    const Answer gold = canonicalize_answer(problem.gold_answer);
    if (!gold.parsable()) throw DatasetError("gold answer of '" + problem.id + "' is unparsable");
    std::vector<std::string> ctx;
    for (std::size_t j = 0; j < step_index; ++j) ctx.push_back(cot.steps[j].text);
    const double without = session.early_exit_confidence(problem.question, ctx, gold);
    ctx.push_back(cot.steps[step_index].text);
    const double with = session.early_exit_confidence(problem.question, detail::prompt_steps(ctx, ""), gold);
    return with - without;
}

inline StepScore score_step(BackendSession& session, const Problem& problem, const ChainOfThought& cot,
                            std::size_t step_index, const ScoreConfig& cfg, const Answer& y_star) {
    StepScore s;
    s.problem_id = problem.id;
    s.step_index = step_index;
    s.num_steps = cot.steps.size();
    s.y_star = *y_star.canonical;
    s.y_gt = canonicalize_answer(problem.gold_answer).canonical.value_or("");
    s.is_self_verification = cot.steps[step_index].is_self_verification;
    const auto c11 = estimate_S(session, problem, cot, step_index, 1, 1, cfg, y_star);
    const auto c01 = estimate_S(session, problem, cot, step_index, 0, 1, cfg, y_star);
    const auto c10 = estimate_S(session, problem, cot, step_index, 1, 0, cfg, y_star);
    const auto c00 = estimate_S(session, problem, cot, step_index, 0, 0, cfg, y_star);
    s.S1_1 = c11.value;
    s.S0_1 = c01.value;
    s.S1_0 = c10.value;
    s.S0_0 = c00.value;
    s.n_evals = c11.n_evals + c01.n_evals + c10.n_evals + c00.n_evals;
    s.plans = json{{"S0_1", c01.plans}, {"S1_0", c10.plans}, {"S0_0", c00.plans}};
    s.ate_nec = ate_nec(s.S1_1, s.S0_1);
    s.ate_suf = ate_suf(s.S1_0, s.S0_0);
    s.tts = cfg.variant == Variant::Full ? tts(s.S1_1, s.S0_1, s.S1_0, s.S0_0) : std::abs(s.ate_nec);
    s.dropstep = dropstep_score(session, problem, cot, step_index);
    return s;
}

struct ChainScores {
    Answer y_star;
    std::vector<StepScore> steps;
    std::vector<std::string> skipped;  // one message per skipped step
};

/// Scores every step against y*, the early-exit answer on the full trace.
/// With an unparsable y* there is no event to condition on and every step is skipped.
inline ChainScores score_chain(BackendSession& session, const Problem& problem, const ChainOfThought& cot,
                               const ScoreConfig& cfg) {
    ChainScores out;
    out.y_star = session.early_exit_answer(problem.question, cot.step_texts());
    if (!out.y_star.parsable()) {
        for (const auto& s : cot.steps)
            out.skipped.push_back(problem.id + " step " + std::to_string(s.index) + ": reference answer unparsable ('" +
                                  out.y_star.raw + "')");
        return out;
    }
    for (std::size_t i = 0; i < cot.steps.size(); ++i) {
        try {
            out.steps.push_back(score_step(session, problem, cot, i, cfg, out.y_star));
        } catch (const EnumerationError& e) {
            out.skipped.push_back(problem.id + " step " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Selection and summaries
// ---------------------------------------------------------------------------

struct ThresholdSets {
    std::vector<StepScore> true_thinking;
    std::vector<StepScore> decorative;
};

inline ThresholdSets select_threshold_sets(const std::vector<StepScore>& scores, double alpha, double beta) {
    if (!(alpha > beta)) throw ConfigError("alpha must exceed beta");
    ThresholdSets out;
    for (const auto& s : scores) {
        if (s.tts >= alpha) out.true_thinking.push_back(s);
        if (s.tts <= beta) out.decorative.push_back(s);
    }
    if (out.true_thinking.empty())
        throw SelectionError("no step has TTS >= alpha=" + std::to_string(alpha) + "; true-thinking set is empty");
    if (out.decorative.empty())
        throw SelectionError("no step has TTS <= beta=" + std::to_string(beta) + "; decorative set is empty");
    return out;
}

struct DistributionStats {
    std::size_t n = 0;
    double mean = 0.0;
    double median = 0.0;
    double frac_ge_03 = 0.0;
    double frac_ge_07 = 0.0;
    std::array<std::optional<double>, 10> decile_mean;  // absent when a decile holds no step
    std::array<std::size_t, 10> decile_count{};
};

inline DistributionStats distribution_stats(const std::vector<StepScore>& scores) {
    if (scores.empty()) throw ContractError("distribution_stats needs at least one score");
    DistributionStats st;
    st.n = scores.size();
    std::vector<double> v;
    std::array<double, 10> sums{};
    for (const auto& s : scores) {
        v.push_back(s.tts);
        st.mean += s.tts;
        if (s.tts >= 0.3) st.frac_ge_03 += 1.0;
        if (s.tts >= 0.7) st.frac_ge_07 += 1.0;
        const auto d = std::min<std::size_t>(9, static_cast<std::size_t>(s.position() * 10.0));
        sums[d] += s.tts;
        ++st.decile_count[d];
    }
    const auto n = static_cast<double>(st.n);
    st.mean /= n;
    st.frac_ge_03 /= n;
    st.frac_ge_07 /= n;
    std::sort(v.begin(), v.end());
    st.median = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    for (std::size_t d = 0; d < 10; ++d)
        if (st.decile_count[d]) st.decile_mean[d] = sums[d] / static_cast<double>(st.decile_count[d]);
    return st;
}

inline json to_json(const DistributionStats& s) {
    json deciles = json::array();
    for (const auto& d : s.decile_mean) deciles.push_back(d ? json(*d) : json(nullptr));
    return json{{"n", s.n},
                {"mean", s.mean},
                {"median", s.median},
                {"frac_ge_0.3", s.frac_ge_03},
                {"frac_ge_0.7", s.frac_ge_07},
                {"decile_mean", deciles},
                {"decile_count", s.decile_count}};
}

/// Self-verification steps whose TTS falls below `cutoff`.
inline std::vector<StepScore> find_decorative_self_verification(const std::vector<StepScore>& scores, double cutoff) {
    std::vector<StepScore> out;
    for (const auto& s : scores)
        if (s.is_self_verification && s.tts < cutoff) out.push_back(s);
    return out;
}

}  // namespace tts
