#pragma once

// Difference-in-means steering directions, baselines, the engagement and
// disengagement flip tests, layer sweeps, self-verification steering, the
// threshold ablation, attention deltas, and steering-vector files.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/backend.hpp"
#include "tts/error.hpp"
#include "tts/perturb.hpp"
#include "tts/scoring.hpp"
#include "tts/trace.hpp"
#include "tts/util.hpp"

namespace tts {

struct Provenance {
    std::string method = "truethinking";
    double alpha = 0.9;
    double beta = 0.0;
    std::size_t n_tt = 0;
    std::size_t n_dt = 0;
    std::string split = "train";
    std::string variant = "full";
    std::uint64_t seed = 0;
};

struct SteeringVector {
    std::string model_id;
    int layer = 1;
    Vec vector;
    double norm = 0.0;
    Provenance provenance;
};

inline json to_json(const Provenance& p) {
    return json{{"method", p.method}, {"alpha", p.alpha},   {"beta", p.beta},       {"n_tt", p.n_tt},
                {"n_dt", p.n_dt},     {"split", p.split},   {"variant", p.variant}, {"seed", p.seed}};
}

inline Provenance provenance_from_json(const json& j) {
    Provenance p;
    p.method = j.value("method", p.method);
    p.alpha = j.value("alpha", p.alpha);
    p.beta = j.value("beta", p.beta);
    p.n_tt = j.value("n_tt", p.n_tt);
    p.n_dt = j.value("n_dt", p.n_dt);
    p.split = j.value("split", p.split);
    p.variant = j.value("variant", p.variant);
    p.seed = j.value("seed", p.seed);
    return p;
}

/// Header written in front of vector files; the node name ties the 1-based layer to the graph.
inline json vector_header(const SteeringVector& v) {
    return json{{"model_id", v.model_id},
                {"layer", v.layer},
                {"node", "blocks." + std::to_string(v.layer - 1) + ".residual_out"},
                {"d", v.vector.size()},
                {"norm", v.norm},
                {"provenance", to_json(v.provenance)}};
}

// ---------------------------------------------------------------------------
// Corpus and step references
// ---------------------------------------------------------------------------

struct CorpusItem {
    Problem problem;
    ChainOfThought cot;
};

using Corpus = std::map<std::string, CorpusItem>;  // by problem id

/// A step located inside its trace; hidden states are read at its last token.
struct StepRef {
    std::string problem_id;
    std::string question;
    std::vector<std::string> prefix;  // steps 0..index inclusive
};

inline StepRef step_ref(const Corpus& corpus, const std::string& problem_id, std::size_t step_index) {
    auto it = corpus.find(problem_id);
    if (it == corpus.end()) throw ContractError("no trace for problem '" + problem_id + "'");
    const auto& steps = it->second.cot.steps;
    if (step_index >= steps.size()) throw ContractError("step index out of range for '" + problem_id + "'");
    StepRef r{problem_id, it->second.problem.question, {}};
    for (std::size_t j = 0; j <= step_index; ++j) r.prefix.push_back(steps[j].text);
    return r;
}

inline std::vector<StepRef> step_refs(const Corpus& corpus, const std::vector<StepScore>& scores) {
    std::vector<StepRef> out;
    for (const auto& s : scores) out.push_back(step_ref(corpus, s.problem_id, s.step_index));
    return out;
}

inline Vec last_token_hidden(BackendSession& session, const StepRef& ref, int layer) {
    const auto lay = session.layout(ref.question, ref.prefix);
    const TokenRange r = lay.steps.back();
    if (r.empty()) throw ContractError("step of '" + ref.problem_id + "' has no tokens");
    return session.capture_hidden(ref.question, ref.prefix, layer, {r.end - 1}).front().vector;
}

// ---------------------------------------------------------------------------
// Directions
// ---------------------------------------------------------------------------

/// v = mean h(true-thinking) - mean h(decorative) at `layer`, last token of each step.
inline SteeringVector extract_direction(BackendSession& session, const std::vector<StepRef>& true_thinking,
                                        const std::vector<StepRef>& decorative, int layer, Provenance prov = {}) {
    if (true_thinking.empty()) throw SelectionError("extract_direction: true-thinking class is empty");
    if (decorative.empty()) throw SelectionError("extract_direction: decorative class is empty");
    const auto d = static_cast<std::size_t>(session.info().hidden_dim);
    auto mean = [&](const std::vector<StepRef>& refs) {
        Vec m(d, 0.0);
        for (const auto& r : refs) {
            const Vec h = last_token_hidden(session, r, layer);
            for (std::size_t i = 0; i < d; ++i) m[i] += h[i];
        }
        for (double& x : m) x /= static_cast<double>(refs.size());
        return m;
    };
    const Vec mt = mean(true_thinking);
    const Vec md = mean(decorative);
    SteeringVector v;
    v.model_id = session.info().model_id;
    v.layer = layer;
    v.vector.resize(d);
    for (std::size_t i = 0; i < d; ++i) v.vector[i] = mt[i] - md[i];
    v.norm = l2_norm(v.vector);
    prov.n_tt = true_thinking.size();
    prov.n_dt = decorative.size();
    v.provenance = std::move(prov);
    return v;
}

/// Seeded isotropic direction with the reference's layer and norm.
inline SteeringVector random_vector(const SteeringVector& reference, std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x524e44ULL, static_cast<std::uint64_t>(reference.layer)}));
    SteeringVector v = reference;
    for (double& x : v.vector) x = rng.normal();
    const double n = l2_norm(v.vector);
    for (double& x : v.vector) x *= reference.norm / n;
    v.norm = l2_norm(v.vector);
    v.provenance.method = "random_vector";
    v.provenance.seed = seed;
    return v;
}

inline SteeringVector zero_vector(const SteeringVector& reference) {
    SteeringVector v = reference;
    std::fill(v.vector.begin(), v.vector.end(), 0.0);
    v.norm = 0.0;
    v.provenance.method = "zero_vector";
    return v;
}

// ---------------------------------------------------------------------------
// Test cases
// ---------------------------------------------------------------------------

enum class CaseKind { Engagement, Disengagement, SelfVerify };

inline std::string to_string(CaseKind k) {
    switch (k) {
        case CaseKind::Engagement: return "engagement";
        case CaseKind::Disengagement: return "disengagement";
        case CaseKind::SelfVerify: return "self_verify";
    }
    return "?";
}

inline CaseKind case_kind_from_string(const std::string& s) {
    if (s == "engagement") return CaseKind::Engagement;
    if (s == "disengagement") return CaseKind::Disengagement;
    if (s == "self_verify") return CaseKind::SelfVerify;
    throw ParseError("unknown case kind '" + s + "'", 0);
}

struct TestCase {
    CaseKind kind = CaseKind::Engagement;
    std::string problem_id;
    std::string question;
    std::size_t step_index = 0;
    std::vector<std::string> context;  // steps before the target, as presented
    std::string step_text;             // the steered step as presented (s' or the intact self-verification)
    PerturbationPlan plan;             // of the step (engagement / disengagement)
    json context_plans = json::array();
    std::string context_condition = "intact";
    std::string gold;
    std::string baseline_answer;  // f(q, context + step) before steering

    std::vector<std::string> prompt() const {
        auto p = context;
        p.push_back(step_text);
        return p;
    }
};

inline json to_json(const TestCase& c) {
    return json{{"kind", to_string(c.kind)},   {"problem_id", c.problem_id},
                {"question", c.question},      {"step_index", c.step_index},
                {"context", c.context},        {"step_text", c.step_text},
                {"plan", to_json(c.plan)},     {"context_plans", c.context_plans},
                {"context_condition", c.context_condition}, {"gold", c.gold},
                {"baseline_answer", c.baseline_answer}};
}

inline TestCase test_case_from_json(const json& j) {
    TestCase c;
    c.kind = case_kind_from_string(j.at("kind").get<std::string>());
    c.problem_id = j.at("problem_id").get<std::string>();
    c.question = j.at("question").get<std::string>();
    c.step_index = j.at("step_index").get<std::size_t>();
    c.context = j.at("context").get<std::vector<std::string>>();
    c.step_text = j.at("step_text").get<std::string>();
    c.plan = plan_from_json(j.at("plan"));
    c.context_plans = j.value("context_plans", json::array());
    c.context_condition = j.value("context_condition", std::string("intact"));
    c.gold = j.at("gold").get<std::string>();
    c.baseline_answer = j.value("baseline_answer", std::string());
    return c;
}

namespace detail {

inline std::uint64_t case_seed(std::uint64_t seed, const std::string& pid, std::size_t i, std::uint64_t tag) {
    return derive_seed({seed, fnv1a(pid), i, tag});
}

inline constexpr std::uint64_t kCaseTag = 0x43415345ULL;  // "CASE"
inline constexpr std::uint64_t kSelfVerifyTag = 0x5356ULL;

// One s' per step, shared by both causal tests so they see the same perturbation.
inline std::vector<TestCase> select_step_cases(BackendSession& session, const Corpus& corpus, std::uint64_t seed,
                                               CaseKind kind, const std::set<std::string>* only) {
    std::vector<TestCase> out;
    for (const auto& [pid, item] : corpus) {
        if (only && !only->count(pid)) continue;
        const Answer gold = canonicalize_answer(item.problem.gold_answer);
        if (!gold.parsable()) continue;
        std::vector<std::string> ctx;
        for (const auto& step : item.cot.steps) {
            const PerturbedStep sp = perturb_step(step, case_seed(seed, pid, step.index, kCaseTag));
            // A dropped step has no tokens left to steer.
            if (!sp.plan.dropped) {
                const Answer a_c = session.early_exit_answer(item.problem.question, ctx);
                auto with = ctx;
                with.push_back(sp.text);
                const Answer a_s = session.early_exit_answer(item.problem.question, with);
                const bool eligible = a_c == gold && (kind == CaseKind::Engagement ? a_s == gold : !(a_s == gold));
                if (eligible) {
                    TestCase c;
                    c.kind = kind;
                    c.problem_id = pid;
                    c.question = item.problem.question;
                    c.step_index = step.index;
                    c.context = ctx;
                    c.step_text = sp.text;
                    c.plan = sp.plan;
                    c.gold = *gold.canonical;
                    c.baseline_answer = a_s.canonical.value_or("");
                    out.push_back(std::move(c));
                }
            }
            ctx.push_back(step.text);
        }
    }
    return out;
}

}  // namespace detail

/// Steps the model ignores: correct without the step and still correct with s'.
inline std::vector<TestCase> select_engagement_cases(BackendSession& session, const Corpus& corpus,
                                                     std::uint64_t seed, const std::set<std::string>* only = nullptr) {
    return detail::select_step_cases(session, corpus, seed, CaseKind::Engagement, only);
}

/// Steps the model uses: correct without the step, wrong with s'.
inline std::vector<TestCase> select_disengagement_cases(BackendSession& session, const Corpus& corpus,
                                                        std::uint64_t seed,
                                                        const std::set<std::string>* only = nullptr) {
    return detail::select_step_cases(session, corpus, seed, CaseKind::Disengagement, only);
}

/// Self-verification steps (restricted to `steps` when given, keyed by problem
/// id and index) where f(q, C, S) = y_GT but f(q, C', S) != y_GT.
inline std::vector<TestCase> select_self_verification_cases(
    BackendSession& session, const Corpus& corpus, std::uint64_t seed,
    const std::set<std::pair<std::string, std::size_t>>* steps = nullptr, const std::set<std::string>* only = nullptr) {
    std::vector<TestCase> out;
    for (const auto& [pid, item] : corpus) {
        if (only && !only->count(pid)) continue;
        const Answer gold = canonicalize_answer(item.problem.gold_answer);
        if (!gold.parsable()) continue;
        const auto& all = item.cot.steps;
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (!all[i].is_self_verification) continue;
            if (steps && !steps->count({pid, i})) continue;
            const std::vector<Step> context(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(i));
            std::vector<std::string> ctx;
            for (const auto& s : context) ctx.push_back(s.text);
            ctx.push_back(all[i].text);
            if (!(session.early_exit_answer(item.problem.question, ctx) == gold)) continue;
            const auto pc = perturb_context(context, detail::case_seed(seed, pid, i, detail::kSelfVerifyTag));
            TestCase c;
            c.kind = CaseKind::SelfVerify;
            c.problem_id = pid;
            c.question = item.problem.question;
            c.step_index = i;
            for (const auto& p : pc) {
                c.context.push_back(p.text);
                c.context_plans.push_back(to_json(p.plan));
            }
            c.step_text = all[i].text;
            c.plan.step_index = i;
            c.context_condition = "perturbed";
            c.gold = *gold.canonical;
            const Answer before = session.early_exit_answer(c.question, c.prompt());
            if (before == gold) continue;
            c.baseline_answer = before.canonical.value_or("");
            out.push_back(std::move(c));
        }
    }
    return out;
}

/// Re-checks a case's eligibility predicate against the backend.
inline bool verify_case(BackendSession& session, const TestCase& c) {
    const Answer gold = canonicalize_answer(c.gold);
    const Answer now = session.early_exit_answer(c.question, c.prompt());
    switch (c.kind) {
        case CaseKind::Engagement:
            return session.early_exit_answer(c.question, c.context) == gold && now == gold;
        case CaseKind::Disengagement:
            return session.early_exit_answer(c.question, c.context) == gold && !(now == gold);
        case CaseKind::SelfVerify: return !(now == gold);
    }
    return false;
}

// ---------------------------------------------------------------------------
// Flip tests
// ---------------------------------------------------------------------------

struct LayerResult {
    int layer = 0;
    std::size_t flips = 0;
    std::size_t eligible = 0;
    std::vector<bool> outcomes;  // per case, in input order

    /// Absent when there is nothing to divide by.
    std::optional<double> rate() const {
        if (eligible == 0) return std::nullopt;
        return static_cast<double>(flips) / static_cast<double>(eligible);
    }
};

inline bool is_flip(CaseKind kind, const Answer& steered, const Answer& gold) {
    return kind == CaseKind::Engagement ? !(steered == gold) : steered == gold;
}

/// Steers every case's target step with sign * multiplier * v and counts flips.
/// Engagement flips when the answer leaves y_GT; disengagement and
/// self-verification flip when it returns to y_GT.
inline LayerResult run_flip_test(BackendSession& session, const std::vector<TestCase>& cases,
                                 const SteeringVector& v, int sign, double multiplier = 1.0) {
    LayerResult r;
    r.layer = v.layer;
    const Vec scaled_v = scaled(v.vector, multiplier);
    for (const auto& c : cases) {
        const auto prompt = c.prompt();
        const TokenRange range = session.layout(c.question, prompt).steps.back();
        const SteeringHook hook{v.layer, scaled_v, range, sign};
        const Answer steered =
            session.with_steering(hook, [&] { return session.early_exit_answer(c.question, prompt); });
        const bool flip = is_flip(c.kind, steered, canonicalize_answer(c.gold));
        r.outcomes.push_back(flip);
        r.flips += flip ? 1 : 0;
        ++r.eligible;
    }
    return r;
}

struct FlipReport {
    CaseKind kind = CaseKind::Engagement;
    std::string method = "truethinking";
    int sign = 1;
    std::vector<LayerResult> layers;
    std::optional<std::pair<int, double>> top1;  // best defined rate; ties go to the lower layer
};

inline std::optional<std::pair<int, double>> compute_top1(const std::vector<LayerResult>& layers) {
    std::optional<std::pair<int, double>> best;
    for (const auto& l : layers) {
        const auto r = l.rate();
        if (!r) continue;
        if (!best || *r > best->second || (*r == best->second && l.layer < best->first)) best = {{l.layer, *r}};
    }
    return best;
}

inline json to_json(const FlipReport& f) {
    json layers = json::array();
    for (const auto& l : f.layers) {
        const auto r = l.rate();
        layers.push_back(json{{"layer", l.layer},
                              {"flips", l.flips},
                              {"eligible", l.eligible},
                              {"rate", r ? json(*r) : json(nullptr)}});
    }
    json top = f.top1 ? json{{"layer", f.top1->first}, {"rate", f.top1->second}} : json(nullptr);
    return json{{"kind", to_string(f.kind)}, {"method", f.method}, {"sign", f.sign}, {"layers", layers}, {"top1", top}};
}

/// One flip test per layer; `vectors` holds one direction per layer.
inline FlipReport layer_sweep(BackendSession& session, const std::vector<TestCase>& cases,
                              const std::vector<SteeringVector>& vectors, int sign, CaseKind kind,
                              std::string method = "truethinking") {
    FlipReport rep;
    rep.kind = kind;
    rep.method = std::move(method);
    rep.sign = sign;
    for (const auto& v : vectors) rep.layers.push_back(run_flip_test(session, cases, v, sign));
    rep.top1 = compute_top1(rep.layers);
    return rep;
}

/// Same flip semantics with the step's attention weights scaled instead of steering.
inline LayerResult attention_scaling_baseline(BackendSession& session, const std::vector<TestCase>& cases, int layer,
                                              double scale) {
    LayerResult r;
    r.layer = layer;
    for (const auto& c : cases) {
        const auto prompt = c.prompt();
        const TokenRange range = session.layout(c.question, prompt).steps.back();
        const Answer out = session.with_attention_scale(
            {layer, range, scale}, [&] { return session.early_exit_answer(c.question, prompt); });
        const bool flip = is_flip(c.kind, out, canonicalize_answer(c.gold));
        r.outcomes.push_back(flip);
        r.flips += flip ? 1 : 0;
        ++r.eligible;
    }
    return r;
}

// ---------------------------------------------------------------------------
// DropStep-selected classes
// ---------------------------------------------------------------------------

/// Top `n_tt` and bottom `n_dt` steps by DropStep score; ties by (problem id, step).
inline ThresholdSets select_dropstep_sets(std::vector<StepScore> scores, std::size_t n_tt, std::size_t n_dt) {
    if (scores.empty() || n_tt == 0 || n_dt == 0) throw SelectionError("DropStep selection needs non-empty classes");
    auto key = [](const StepScore& s) { return std::pair(s.problem_id, s.step_index); };
    std::sort(scores.begin(), scores.end(), [&](const StepScore& a, const StepScore& b) {
        if (a.dropstep != b.dropstep) return a.dropstep > b.dropstep;
        return key(a) < key(b);
    });
    ThresholdSets out;
    out.true_thinking.assign(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(std::min(n_tt, scores.size())));
    std::sort(scores.begin(), scores.end(), [&](const StepScore& a, const StepScore& b) {
        if (a.dropstep != b.dropstep) return a.dropstep < b.dropstep;
        return key(a) < key(b);
    });
    out.decorative.assign(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(std::min(n_dt, scores.size())));
    return out;
}

inline FlipReport dropstep_direction_baseline(BackendSession& session, const Corpus& corpus,
                                              const std::vector<StepScore>& train_scores, std::size_t n_tt,
                                              std::size_t n_dt, const std::vector<TestCase>& cases,
                                              const std::vector<int>& layers, int sign, CaseKind kind) {
    const auto sets = select_dropstep_sets(train_scores, n_tt, n_dt);
    const auto tt = step_refs(corpus, sets.true_thinking);
    const auto dt = step_refs(corpus, sets.decorative);
    std::vector<SteeringVector> vs;
    for (int l : layers) {
        Provenance p;
        p.method = "dropstep_direction";
        vs.push_back(extract_direction(session, tt, dt, l, p));
    }
    return layer_sweep(session, cases, vs, sign, kind, "dropstep_direction");
}

// ---------------------------------------------------------------------------
// Self-verification, ablation, attention
// ---------------------------------------------------------------------------

struct SelfVerifyResult {
    LayerResult restored;           // flips = cases restored to y_GT
    double baseline_accuracy = 0.0; // before steering; 0 by case construction
};

inline SelfVerifyResult steer_self_verification(BackendSession& session, const std::vector<TestCase>& cases,
                                                const SteeringVector& v, int sign = 1) {
    SelfVerifyResult r;
    std::size_t correct_before = 0;
    for (const auto& c : cases)
        if (session.early_exit_answer(c.question, c.prompt()) == canonicalize_answer(c.gold)) ++correct_before;
    r.baseline_accuracy = cases.empty() ? 0.0 : static_cast<double>(correct_before) / static_cast<double>(cases.size());
    r.restored = run_flip_test(session, cases, v, sign);
    return r;
}

struct BandResult {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t n_tt = 0;
    std::optional<LayerResult> result;  // absent when the band holds no step
    bool degenerate = false;            // extracted vector is (near) zero
    double norm = 0.0;
};

/// Engagement flip rate of directions extracted from each TTS band against a
/// fixed decorative class.
inline std::vector<BandResult> threshold_ablation(BackendSession& session, const Corpus& corpus,
                                                  const std::vector<StepScore>& train_scores,
                                                  const std::vector<std::pair<double, double>>& bands,
                                                  const std::vector<StepScore>& decorative,
                                                  const std::vector<TestCase>& cases, int layer,
                                                  double degenerate_norm = 1e-9) {
    const auto dt = step_refs(corpus, decorative);
    std::vector<BandResult> out;
    for (const auto& [lo, hi] : bands) {
        BandResult b{lo, hi, 0, std::nullopt, false, 0.0};
        std::vector<StepScore> band;
        for (const auto& s : train_scores)
            if (s.tts >= lo && s.tts <= hi) band.push_back(s);
        b.n_tt = band.size();
        if (!band.empty()) {
            Provenance p;
            p.method = "threshold_band";
            p.alpha = lo;
            const auto v = extract_direction(session, step_refs(corpus, band), dt, layer, p);
            b.norm = v.norm;
            b.degenerate = v.norm <= degenerate_norm;
            b.result = run_flip_test(session, cases, v, +1);
        }
        out.push_back(std::move(b));
    }
    return out;
}

/// Mean attention mass on the case's step keys from the query tokens after the
/// step, without and with steering the step by sign * v.
inline std::pair<double, double> attention_delta(BackendSession& session, const TestCase& c, const SteeringVector& v,
                                                 int attention_layer, int sign = 1) {
    const auto prompt = c.prompt();
    const auto lay = session.layout(c.question, prompt);
    const TokenRange keys = lay.steps.back();
    const TokenRange queries{keys.end, lay.num_tokens};
    const double before = session.capture_attention(c.question, prompt, attention_layer).mass(keys, queries);
    const double after = session.with_steering({v.layer, v.vector, keys, sign}, [&] {
        return session.capture_attention(c.question, prompt, attention_layer).mass(keys, queries);
    });
    return {before, after};
}

// ---------------------------------------------------------------------------
// Vector files
// ---------------------------------------------------------------------------

inline constexpr char kVectorMagic[4] = {'T', 'T', 'S', 'V'};

/// "TTSV", u32 version, u32 header length, JSON header, float32 little-endian data.
inline void write_vector_binary(const std::filesystem::path& path, const SteeringVector& v) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vector file '" + path.string() + "'");
    const std::string header = vector_header(v).dump();
    out.write(kVectorMagic, 4);
    const std::uint32_t version = 1, len = static_cast<std::uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (double x : v.vector) {
        const float f = static_cast<float>(x);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
}

/// "# {header}" line followed by one %.17g value per line.
inline void write_vector_text(const std::filesystem::path& path, const SteeringVector& v) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vector file '" + path.string() + "'");
    out << "# " << vector_header(v).dump() << '\n';
    char buf[40];
    for (double x : v.vector) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        out << buf << '\n';
    }
}

namespace detail {

inline SteeringVector vector_from_header(const json& h, Vec data) {
    SteeringVector v;
    v.model_id = h.at("model_id").get<std::string>();
    v.layer = h.at("layer").get<int>();
    if (h.at("d").get<std::size_t>() != data.size()) throw ParseError("vector length does not match header", 0);
    v.vector = std::move(data);
    v.norm = l2_norm(v.vector);
    v.provenance = provenance_from_json(h.value("provenance", json::object()));
    return v;
}

}  // namespace detail

/// Reads either format. The norm is recomputed from the stored values.
inline SteeringVector read_vector(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open vector file '" + path.string() + "'");
    char magic[4] = {};
    in.read(magic, 4);
    try {
        if (in && std::memcmp(magic, kVectorMagic, 4) == 0) {
            std::uint32_t version = 0, len = 0;
            in.read(reinterpret_cast<char*>(&version), 4);
            in.read(reinterpret_cast<char*>(&len), 4);
            if (!in || version != 1) throw ParseError("bad vector file header in '" + path.string() + "'", 0);
            std::string header(len, '\0');
            in.read(header.data(), len);
            const json h = json::parse(header);
            Vec data(h.at("d").get<std::size_t>());
            for (double& x : data) {
                float f = 0;
                in.read(reinterpret_cast<char*>(&f), 4);
                if (!in) throw ParseError("truncated vector data in '" + path.string() + "'", 0);
                x = f;
            }
            return detail::vector_from_header(h, std::move(data));
        }
        in.clear();
        in.seekg(0);
        std::string line;
        std::getline(in, line);
        if (line.rfind("# ", 0) != 0) throw ParseError("vector file '" + path.string() + "' has no header", 1);
        const json h = json::parse(line.substr(2));
        Vec data;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (detail::trim(line).empty()) continue;
            try {
                data.push_back(std::stod(line));
            } catch (const std::exception&) {
                throw ParseError("bad number in vector file", lineno);
            }
        }
        return detail::vector_from_header(h, std::move(data));
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad vector header: ") + e.what(), 0);
    }
}

}  // namespace tts
