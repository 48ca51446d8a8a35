#pragma once

// A deterministic reasoner with a fully known causal structure. Operand steps
// feed an AND-combined answer function, alternate steps restate the total (an
// OR route), decorative steps never matter, and self-verification steps are
// ignored unless engaged. Engagement is read off a single latent gate
// direction, so steering and attention claims are exactly checkable.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/backend.hpp"
#include "tts/error.hpp"
#include "tts/perturb.hpp"
#include "tts/trace.hpp"
#include "tts/util.hpp"

namespace tts {

enum class Role { Operand, Alternate, Decorative, SelfVerify };
enum class AnswerFn { Sum, Product };

inline std::string to_string(Role r) {
    switch (r) {
        case Role::Operand: return "OPERAND";
        case Role::Alternate: return "ALTERNATE";
        case Role::Decorative: return "DECORATIVE";
        case Role::SelfVerify: return "SELF_VERIFY";
    }
    return "?";
}

inline Role role_from_string(const std::string& s) {
    if (s == "OPERAND") return Role::Operand;
    if (s == "ALTERNATE") return Role::Alternate;
    if (s == "DECORATIVE") return Role::Decorative;
    if (s == "SELF_VERIFY") return Role::SelfVerify;
    throw ConfigError("unknown step role '" + s + "'");
}

/// Shared by every world a synthetic model serves.
struct LatentGeometry {
    int latent_dim = 128;
    int num_layers = 6;
    int gate_layer = 3;
    double gate_threshold = 1.0;  // theta
    double margin = 2.0;          // gamma
    double epsilon = 1e-6;
    double attention_coupling = 1.0;  // kappa
    std::uint64_t direction_seed = 0;

    friend bool operator==(const LatentGeometry&, const LatentGeometry&) = default;

    void validate() const {
        if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
        if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
        if (gate_layer < 1 || gate_layer > num_layers) throw ConfigError("gate_layer outside [1, num_layers]");
        if (!(gate_threshold > 0.0)) throw ConfigError("gate_threshold must be positive");
        if (!(margin > gate_threshold)) throw ConfigError("margin must exceed gate_threshold");
        if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in [0, 1)");
    }
};

struct StepTemplate {
    Role role = Role::Decorative;
    std::string text;              // "{}" marks the numeric slot
    std::optional<bool> engaged;   // overrides the role default
};

struct SyntheticSpec {
    std::string label;
    std::vector<StepTemplate> steps;
    AnswerFn answer_fn = AnswerFn::Sum;
    std::vector<std::int64_t> operand_values;  // optional; drawn from [value_min, value_max] when empty
    std::int64_t value_min = 2;
    std::int64_t value_max = 20;
    bool require_collision_free = false;
    LatentGeometry geometry;
};

inline bool default_engaged(Role r) { return r == Role::Operand || r == Role::Alternate; }

struct WorldStep {
    Role role = Role::Decorative;
    std::string text;
    std::string key;  // digit-masked text, stable under numeric perturbation
    std::optional<std::int64_t> value;
    std::size_t operand_index = 0;  // meaningful for operands
    bool engaged = false;
};

struct World {
    SyntheticSpec spec;
    std::uint64_t seed = 0;
    Problem problem;
    ChainOfThought cot;
    std::vector<WorldStep> steps;
    std::vector<std::int64_t> question_values;
    std::int64_t gold = 0;

    std::vector<Role> roles() const {
        std::vector<Role> r;
        for (const auto& s : steps) r.push_back(s.role);
        return r;
    }
};

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const LatentGeometry& g) {
    return json{{"latent_dim", g.latent_dim},       {"num_layers", g.num_layers},
                {"gate_layer", g.gate_layer},       {"gate_threshold", g.gate_threshold},
                {"margin", g.margin},               {"epsilon", g.epsilon},
                {"attention_coupling", g.attention_coupling}, {"direction_seed", g.direction_seed}};
}

inline LatentGeometry geometry_from_json(const json& j) {
    LatentGeometry g;
    g.latent_dim = j.value("latent_dim", g.latent_dim);
    g.num_layers = j.value("num_layers", g.num_layers);
    g.gate_layer = j.value("gate_layer", g.gate_layer);
    g.gate_threshold = j.value("gate_threshold", g.gate_threshold);
    g.margin = j.value("margin", g.margin);
    g.epsilon = j.value("epsilon", g.epsilon);
    g.attention_coupling = j.value("attention_coupling", g.attention_coupling);
    g.direction_seed = j.value("direction_seed", g.direction_seed);
    return g;
}

inline json to_json(const SyntheticSpec& s) {
    json steps = json::array();
    for (const auto& t : s.steps) {
        json st{{"role", to_string(t.role)}, {"text", t.text}};
        if (t.engaged) st["engaged"] = *t.engaged;
        steps.push_back(st);
    }
    return json{{"label", s.label},
                {"steps", steps},
                {"answer_fn", s.answer_fn == AnswerFn::Sum ? "sum" : "product"},
                {"operand_values", s.operand_values},
                {"value_min", s.value_min},
                {"value_max", s.value_max},
                {"require_collision_free", s.require_collision_free},
                {"geometry", to_json(s.geometry)}};
}

inline SyntheticSpec spec_from_json(const json& j) {
    try {
        SyntheticSpec s;
        s.label = j.at("label").get<std::string>();
        for (const auto& st : j.at("steps")) {
            StepTemplate t;
            t.role = role_from_string(st.at("role").get<std::string>());
            t.text = st.at("text").get<std::string>();
            if (st.contains("engaged")) t.engaged = st["engaged"].get<bool>();
            s.steps.push_back(std::move(t));
        }
        const auto fn = j.value("answer_fn", std::string("sum"));
        if (fn != "sum" && fn != "product") throw ConfigError("answer_fn must be sum or product");
        s.answer_fn = fn == "sum" ? AnswerFn::Sum : AnswerFn::Product;
        s.operand_values = j.value("operand_values", std::vector<std::int64_t>{});
        s.value_min = j.value("value_min", s.value_min);
        s.value_max = j.value("value_max", s.value_max);
        s.require_collision_free = j.value("require_collision_free", false);
        if (j.contains("geometry")) s.geometry = geometry_from_json(j["geometry"]);
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad synthetic spec: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// World construction
// ---------------------------------------------------------------------------

inline std::int64_t apply_answer_fn(AnswerFn fn, const std::vector<std::int64_t>& v) {
    std::int64_t acc = fn == AnswerFn::Sum ? 0 : 1;
    for (auto x : v) acc = fn == AnswerFn::Sum ? acc + x : acc * x;
    return acc;
}

/// True when no assignment of offsets (at least one non-zero) to the engaged
/// operands reproduces the unperturbed result.
inline bool collision_free(AnswerFn fn, const std::vector<std::int64_t>& values, const std::vector<bool>& engaged) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (engaged[i]) idx.push_back(i);
    const std::int64_t gold = apply_answer_fn(fn, values);
    std::vector<int> choice(idx.size(), 0);  // 0 = untouched, 1..6 = Offset::kValues[c-1]
    while (true) {
        std::size_t k = 0;
        while (k < choice.size() && ++choice[k] > 6) choice[k++] = 0;
        if (k == choice.size()) return true;
        auto v = values;
        for (std::size_t j = 0; j < idx.size(); ++j)
            if (choice[j]) v[idx[j]] += Offset::kValues[static_cast<std::size_t>(choice[j] - 1)];
        if (apply_answer_fn(fn, v) == gold) return false;
    }
}

namespace detail {

inline std::string fill_slot(const std::string& tmpl, std::optional<std::int64_t> value) {
    const auto p = tmpl.find("{}");
    if (p == std::string::npos) return tmpl;
    return tmpl.substr(0, p) + std::to_string(*value) + tmpl.substr(p + 2);
}

inline std::size_t count_slots(const std::string& tmpl) {
    std::size_t n = 0;
    for (auto p = tmpl.find("{}"); p != std::string::npos; p = tmpl.find("{}", p + 2)) ++n;
    return n;
}

}  // namespace detail

inline World build_world(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.geometry.validate();
    if (spec.steps.empty()) throw ConfigError("synthetic spec '" + spec.label + "' has no steps");
    std::size_t n_operands = 0;
    for (const auto& t : spec.steps) {
        const bool numeric = t.role != Role::Decorative;
        if (detail::count_slots(t.text) != (numeric ? 1u : 0u))
            throw ConfigError("template '" + t.text + "' must have " + (numeric ? "one" : "no") + " {} slot");
        std::string bare = t.text;
        if (auto p = bare.find("{}"); p != std::string::npos) bare.erase(p, 2);
        if (std::any_of(bare.begin(), bare.end(), detail::is_digit))
            throw ConfigError("template '" + t.text + "' has digits outside its slot");
        if (t.role == Role::Operand) ++n_operands;
    }
    if (n_operands == 0) throw ConfigError("synthetic spec '" + spec.label + "' needs at least one OPERAND");
    if (!spec.operand_values.empty() && spec.operand_values.size() != n_operands)
        throw ConfigError("operand_values has " + std::to_string(spec.operand_values.size()) + " entries for " +
                          std::to_string(n_operands) + " operands");
    if (spec.value_min > spec.value_max) throw ConfigError("value_min exceeds value_max");

    World w;
    w.spec = spec;
    w.seed = seed;

    std::vector<bool> operand_engaged;
    for (const auto& t : spec.steps)
        if (t.role == Role::Operand) operand_engaged.push_back(t.engaged.value_or(true));

    Rng rng(derive_seed({seed, fnv1a(spec.label)}));
    const auto span = static_cast<std::uint64_t>(spec.value_max - spec.value_min + 1);
    for (int attempt = 0;; ++attempt) {
        if (!spec.operand_values.empty()) {
            w.question_values = spec.operand_values;
        } else {
            w.question_values.clear();
            for (std::size_t i = 0; i < n_operands; ++i)
                w.question_values.push_back(spec.value_min + static_cast<std::int64_t>(rng.below(span)));
        }
        if (!spec.require_collision_free || collision_free(spec.answer_fn, w.question_values, operand_engaged)) break;
        if (!spec.operand_values.empty() || attempt > 1000)
            throw ConfigError("synthetic spec '" + spec.label + "': no collision-free operand values");
    }
    w.gold = apply_answer_fn(spec.answer_fn, w.question_values);

    std::map<std::string, std::size_t> keys;
    std::size_t op = 0;
    std::vector<std::string> texts;
    for (const auto& t : spec.steps) {
        WorldStep s;
        s.role = t.role;
        s.engaged = t.engaged.value_or(default_engaged(t.role));
        if (t.role == Role::Operand) {
            s.operand_index = op;
            s.value = w.question_values[op++];
        } else if (t.role != Role::Decorative) {
            s.value = w.gold;
        }
        s.text = detail::fill_slot(t.text, s.value);
        s.key = mask_digits(s.text);
        if (!keys.emplace(s.key, w.steps.size()).second)
            throw ConfigError("synthetic spec '" + spec.label + "' repeats step template '" + t.text + "'");
        texts.push_back(s.text);
        w.steps.push_back(std::move(s));
    }

    const std::string id = spec.label.empty() ? "w" + hex64(seed) : spec.label;
    std::ostringstream q;
    q << "World " << id << ": combine";
    for (std::size_t i = 0; i < w.question_values.size(); ++i) q << (i ? ", " : " ") << w.question_values[i];
    q << " by " << (spec.answer_fn == AnswerFn::Sum ? "sum" : "product") << ".";
    w.problem = Problem{id, q.str(), std::to_string(w.gold)};

    std::string raw;
    for (std::size_t i = 0; i < texts.size(); ++i) raw += (i ? " " : "") + texts[i];
    w.cot = make_chain(id, raw, canonicalize_answer(std::to_string(w.gold)));
    if (w.cot.steps.size() != w.steps.size())
        throw ConfigError("synthetic spec '" + spec.label + "' templates do not segment one sentence per step");
    for (std::size_t i = 0; i < w.steps.size(); ++i)
        if (w.cot.steps[i].text != w.steps[i].text)
            throw ConfigError("synthetic spec '" + spec.label + "' step " + std::to_string(i) + " segments differently");
    return w;
}

// ---------------------------------------------------------------------------
// The backend
// ---------------------------------------------------------------------------

/// Serves any number of worlds sharing one latent geometry. Tokens are
/// whitespace-separated words of question, steps and cue.
class SyntheticModel : public Model {
public:
    explicit SyntheticModel(LatentGeometry geometry, std::string model_id = "synthetic")
        : geometry_(geometry) {
        geometry_.validate();
        info_.model_id = std::move(model_id);
        info_.num_layers = geometry_.num_layers;
        info_.hidden_dim = geometry_.latent_dim;
        info_.caps = {true, true, true, true, true};
        Rng rng(derive_seed({geometry_.direction_seed, 0x47415445ULL}));  // "GATE"
        w_.resize(static_cast<std::size_t>(geometry_.latent_dim));
        for (double& x : w_) x = rng.normal();
        const double n = l2_norm(w_);
        for (double& x : w_) x /= n;
    }

    void add_world(World world) {
        if (!(world.spec.geometry == geometry_))
            throw ConfigError("world '" + world.problem.id + "' has a different latent geometry");
        const std::string q = world.problem.question;
        if (!worlds_.emplace(q, std::move(world)).second) throw ConfigError("duplicate world question '" + q + "'");
    }

    const World& world(const std::string& question) const {
        auto it = worlds_.find(question);
        if (it == worlds_.end()) throw ContractError("synthetic backend has no world for question '" + question + "'");
        return it->second;
    }

    const Vec& gate_direction() const { return w_; }
    const LatentGeometry& geometry() const { return geometry_; }
    const ModelInfo& info() const override { return info_; }

    PromptLayout layout(const std::string& question, const std::vector<std::string>& steps) const override {
        PromptLayout l;
        std::size_t t = count_words(question);
        l.question = {0, t};
        for (const auto& s : steps) {
            const std::size_t n = count_words(s);
            l.steps.push_back({t, t + n});
            t += n;
        }
        const std::size_t cue = count_words(std::string(kEarlyExitCue));
        l.cue = {t, t + cue};
        l.num_tokens = t + cue;
        return l;
    }

    Generation generate_cot(const std::string& question, const Interventions& iv) const override {
        const World& w = world(question);
        return {w.cot.raw_text, early_exit_decode(question, w.cot.step_texts(), iv)};
    }

    double early_exit_confidence(const std::string& question, const std::vector<std::string>& steps,
                                 const std::string& target, const Interventions& iv) const override {
        const std::int64_t a = answer(question, steps, iv);
        const auto t = canonical_number(target);
        if (!t || t->find('.') != std::string::npos) return 0.0;
        const double diff = std::abs(std::stod(*t) - static_cast<double>(a));
        if (diff == 0.0) return 1.0 - geometry_.epsilon;
        if (diff > 2000.0) return 0.0;
        return std::ldexp(geometry_.epsilon, -static_cast<int>(diff) - 1);
    }

    std::string early_exit_decode(const std::string& question, const std::vector<std::string>& steps,
                                  const Interventions& iv) const override {
        return std::to_string(answer(question, steps, iv));
    }

    std::vector<Vec> capture_hidden(const std::string& question, const std::vector<std::string>& steps, int layer,
                                    const std::vector<std::size_t>& positions,
                                    const Interventions& iv) const override {
        const auto toks = tokenize(world(question), question, steps);
        std::vector<Vec> out;
        for (auto p : positions) out.push_back(hidden(world(question), toks, p, layer, iv));
        return out;
    }

    AttentionMap capture_attention(const std::string& question, const std::vector<std::string>& steps, int layer,
                                   const Interventions& iv) const override {
        const World& w = world(question);
        const auto toks = tokenize(w, question, steps);
        const std::size_t n = toks.size();
        Vec score(n);
        for (std::size_t j = 0; j < n; ++j)
            score[j] = geometry_.attention_coupling * dot(hidden(w, toks, j, layer - 1, iv), w_);
        AttentionMap m{layer, std::vector<Vec>(n, Vec(n, 0.0))};
        for (std::size_t i = 0; i < n; ++i) {
            double mx = score[0];
            for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, score[j]);
            Vec e(i + 1);
            double sum = 0.0, raw_sum = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                const double raw = std::exp(score[j] - mx);
                raw_sum += raw;
                e[j] = raw * iv.scale(layer, j);
                sum += e[j];
            }
            // A row whose every key was zero-scaled keeps its unscaled weights.
            for (std::size_t j = 0; j <= i; ++j)
                m.matrix[i][j] = sum > 0.0 ? e[j] / sum : std::exp(score[j] - mx) / raw_sum;
        }
        return m;
    }

    /// <h^gate_layer at the step's last token, w> for prompt step `slot`.
    double gate_score(const std::string& question, const std::vector<std::string>& steps, std::size_t slot,
                      const Interventions& iv) const {
        const World& w = world(question);
        const auto toks = tokenize(w, question, steps);
        const auto l = layout(question, steps);
        if (slot >= l.steps.size() || l.steps[slot].empty()) throw ContractError("gate_score: no such step");
        return dot(hidden(w, toks, l.steps[slot].end - 1, geometry_.gate_layer, iv), w_);
    }

private:
    struct Token {
        std::string key;        // step key or a part tag
        std::size_t pos = 0;    // word index within its part
        int world_step = -1;    // index into World::steps, -1 for question/cue/unknown
        int slot = -1;          // index into the prompt's step list
    };

    static std::size_t count_words(const std::string& s) {
        std::istringstream in(s);
        std::string word;
        std::size_t n = 0;
        while (in >> word) ++n;
        return n;
    }

    std::vector<Token> tokenize(const World& w, const std::string& question,
                                const std::vector<std::string>& steps) const {
        std::vector<Token> toks;
        auto add = [&](const std::string& text, const std::string& key, int ws, int slot) {
            const std::size_t n = count_words(text);
            for (std::size_t i = 0; i < n; ++i) toks.push_back({key, i, ws, slot});
        };
        add(question, "#question", -1, -1);
        for (std::size_t s = 0; s < steps.size(); ++s) {
            const std::string key = mask_digits(detail::trim(steps[s]));
            int ws = -1;
            for (std::size_t k = 0; k < w.steps.size(); ++k)
                if (w.steps[k].key == key) ws = static_cast<int>(k);
            add(steps[s], key, ws, static_cast<int>(s));
        }
        add(std::string(kEarlyExitCue), "#cue", -1, -1);
        return toks;
    }

    // h^l_t = base (orthogonal to w) + [l >= gate] g gamma w + hooks at layers <= l.
    Vec hidden(const World& w, const std::vector<Token>& toks, std::size_t t, int layer,
               const Interventions& iv) const {
        const auto d = static_cast<std::size_t>(geometry_.latent_dim);
        const Token& tok = toks.at(t);
        Rng rng(derive_seed({fnv1a(w.problem.question), fnv1a(tok.key), tok.pos, static_cast<std::uint64_t>(layer)}));
        Vec h(d);
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        for (double& x : h) x = sd * rng.normal();
        const double along = dot(h, w_);
        for (std::size_t i = 0; i < d; ++i) h[i] -= along * w_[i];
        if (layer >= geometry_.gate_layer && tok.world_step >= 0 &&
            w.steps[static_cast<std::size_t>(tok.world_step)].engaged)
            for (std::size_t i = 0; i < d; ++i) h[i] += geometry_.margin * w_[i];
        for (int l = 1; l <= layer; ++l)
            if (auto delta = iv.delta(l, t))
                for (std::size_t i = 0; i < d; ++i) h[i] += (*delta)[i];
        return h;
    }

    std::int64_t answer(const std::string& question, const std::vector<std::string>& steps,
                        const Interventions& iv) const {
        const World& w = world(question);
        const auto toks = tokenize(w, question, steps);
        const auto l = layout(question, steps);
        const int gate = geometry_.gate_layer;

        std::vector<std::int64_t> operands = w.question_values;
        std::vector<std::int64_t> alternates;
        std::optional<std::int64_t> verified;
        for (std::size_t s = 0; s < steps.size(); ++s) {
            const TokenRange r = l.steps[s];
            if (r.empty()) continue;
            const int ws = toks[r.begin].world_step;
            if (ws < 0) continue;
            const WorldStep& meta = w.steps[static_cast<std::size_t>(ws)];
            if (meta.role == Role::Decorative) continue;
            const auto spans = find_numeric_spans(steps[s]);
            if (spans.empty()) continue;
            const auto stated = static_cast<std::int64_t>(std::llround(spans.front().value()));
            const std::size_t last = r.end - 1;
            bool engaged = dot(hidden(w, toks, last, gate, iv), w_) > geometry_.gate_threshold;
            if (iv.has_attention(gate) && iv.scale(gate, last) == 0.0) engaged = false;
            if (!engaged) continue;
            switch (meta.role) {
                case Role::Operand: operands[meta.operand_index] = stated; break;
                case Role::Alternate: alternates.push_back(stated); break;
                case Role::SelfVerify: verified = stated; break;
                case Role::Decorative: break;
            }
        }
        const std::int64_t route = apply_answer_fn(w.spec.answer_fn, operands);
        std::int64_t a = route;
        if (route == w.gold || std::find(alternates.begin(), alternates.end(), w.gold) != alternates.end())
            a = w.gold;
        else if (!alternates.empty())
            a = alternates.back();
        if (verified) a = *verified;
        return a;
    }

    LatentGeometry geometry_;
    ModelInfo info_;
    Vec w_;
    std::map<std::string, World> worlds_;
};

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

struct OracleScores {
    double S1_1 = 0, S0_1 = 0, S1_0 = 0, S0_0 = 0;
    double ate_nec = 0, ate_suf = 0, tts = 0;
    double dropstep = 0;
};

/// Exact cell values by enumerating offsets over the world's stated values.
/// Works on numbers and default engagement only; never renders or parses text.
inline OracleScores oracle_scores(const World& w, std::size_t step_index, std::size_t cap = kDefaultEnumerationCap) {
    if (step_index >= w.steps.size()) throw ContractError("oracle_scores: step index out of range");
    const double eps = w.spec.geometry.epsilon;

    struct Present {
        const WorldStep* step;
        std::int64_t value;
    };
    auto decide = [&](const std::vector<Present>& present) {
        std::vector<std::int64_t> ops = w.question_values;
        std::optional<std::int64_t> sv;
        bool alt_gold = false;
        std::optional<std::int64_t> last_alt;
        for (const auto& p : present) {
            if (!p.step->engaged) continue;
            if (p.step->role == Role::Operand) ops[p.step->operand_index] = p.value;
            if (p.step->role == Role::Alternate) {
                alt_gold = alt_gold || p.value == w.gold;
                last_alt = p.value;
            }
            if (p.step->role == Role::SelfVerify) sv = p.value;
        }
        std::int64_t route = w.spec.answer_fn == AnswerFn::Sum ? 0 : 1;
        for (auto v : ops) route = w.spec.answer_fn == AnswerFn::Sum ? route + v : route * v;
        std::int64_t out = (route == w.gold || alt_gold) ? w.gold : last_alt.value_or(route);
        return sv ? *sv : out;
    };
    auto conf = [&](std::int64_t a, std::int64_t target) {
        const double diff = std::abs(static_cast<double>(target) - static_cast<double>(a));
        if (diff == 0.0) return 1.0 - eps;
        if (diff > 2000.0) return 0.0;
        return std::ldexp(eps, -static_cast<int>(diff) - 1);
    };

    std::vector<Present> intact;
    for (const auto& s : w.steps) intact.push_back({&s, s.value.value_or(0)});
    const std::int64_t y_star = decide(intact);

    std::vector<std::size_t> ctx_numeric;
    for (std::size_t j = 0; j < step_index; ++j)
        if (w.steps[j].value) ctx_numeric.push_back(j);
    const WorldStep& target = w.steps[step_index];
    const std::size_t ctx_variants = offset_combinations(ctx_numeric.size());
    const std::size_t step_variants = target.value ? 6 : 1;
    if (ctx_variants > cap || (ctx_variants == SIZE_MAX ? true : ctx_variants * step_variants > cap))
        throw EnumerationError("oracle enumeration exceeds cap");

    // ctx_offsets[k] is the offset of ctx_numeric[k]; step_offset 0 = intact, kNone = dropped.
    constexpr int kNone = 99;
    auto evaluate = [&](const std::vector<int>& ctx_offsets, int step_offset) {
        std::vector<Present> p;
        std::size_t k = 0;
        for (std::size_t j = 0; j < step_index; ++j) {
            const auto& s = w.steps[j];
            std::int64_t v = s.value.value_or(0);
            if (s.value) v += ctx_offsets.empty() ? 0 : ctx_offsets[k++];
            p.push_back({&s, v});
        }
        if (step_offset != kNone) p.push_back({&target, target.value.value_or(0) + step_offset});
        return conf(decide(p), y_star);
    };

    std::vector<std::vector<int>> contexts;
    {
        std::vector<int> digits(ctx_numeric.size(), 0);
        while (true) {
            std::vector<int> offs;
            for (int d : digits) offs.push_back(Offset::kValues[static_cast<std::size_t>(d)]);
            contexts.push_back(offs);
            std::size_t i = digits.size();
            while (i > 0 && ++digits[i - 1] == 6) digits[--i] = 0;
            if (i == 0) break;
        }
    }
    std::vector<int> step_offsets;
    if (target.value)
        step_offsets.assign(Offset::kValues.begin(), Offset::kValues.end());
    else
        step_offsets.push_back(kNone);

    const std::vector<int> zero_ctx(ctx_numeric.size(), 0);
    OracleScores o;
    o.S1_1 = evaluate(zero_ctx, 0);
    double sum = 0.0;
    for (int so : step_offsets) sum += evaluate(zero_ctx, so);
    o.S0_1 = sum / static_cast<double>(step_offsets.size());
    sum = 0.0;
    for (const auto& c : contexts) sum += evaluate(c, 0);
    o.S1_0 = sum / static_cast<double>(contexts.size());
    sum = 0.0;
    for (const auto& c : contexts)
        for (int so : step_offsets) sum += evaluate(c, so);
    o.S0_0 = sum / static_cast<double>(contexts.size() * step_offsets.size());
    o.ate_nec = o.S1_1 - o.S0_1;
    o.ate_suf = o.S1_0 - o.S0_0;
    o.tts = 0.5 * (std::abs(o.S1_1 - o.S0_1) + std::abs(o.S1_0 - o.S0_0));

    // DropStep targets the gold answer, not y*.
    auto gold_conf = [&](bool with_step) {
        std::vector<Present> p;
        for (std::size_t j = 0; j < step_index; ++j) p.push_back({&w.steps[j], w.steps[j].value.value_or(0)});
        if (with_step) p.push_back({&target, target.value.value_or(0)});
        return conf(decide(p), w.gold);
    };
    o.dropstep = gold_conf(true) - gold_conf(false);
    return o;
}

// ---------------------------------------------------------------------------
// Stock worlds
// ---------------------------------------------------------------------------

enum class Regime { And, Or, Mixed, SelfVerify, Steering };

inline const std::vector<std::string>& ordinal_words() {
    static const std::vector<std::string> w = {"first", "second", "third", "fourth", "fifth", "sixth", "seventh"};
    return w;
}

/// A ready-made spec for one regime. Product worlds with collision-free values
/// keep every cell value in {0, 1} up to epsilon.
///  And        : operands and decorative steps
///  Or         : operands, then an alternate restating the total
///  Mixed      : operands, decorative, alternate
///  SelfVerify : operands, decorative, a self-verification restating the total
///  Steering   : an engaged and an ignored operand, decorative, self-verification;
///               no alternate, so engagement and disengagement both change answers
inline SyntheticSpec stock_spec(Regime regime, const std::string& label, std::size_t n_operands = 2,
                                LatentGeometry geometry = {}) {
    if (n_operands < 1 || n_operands > 4) throw ConfigError("stock worlds take 1 to 4 operands");
    SyntheticSpec s;
    s.label = label;
    s.answer_fn = AnswerFn::Product;
    s.require_collision_free = true;
    s.value_min = 3;
    s.value_max = 19;
    s.geometry = geometry;
    const auto& ord = ordinal_words();
    auto operand = [&](std::size_t i, std::optional<bool> engaged = std::nullopt) {
        s.steps.push_back({Role::Operand, "The " + ord[i] + " factor is {}.", engaged});
    };
    auto decorative = [&](const std::string& text) { s.steps.push_back({Role::Decorative, text, std::nullopt}); };
    switch (regime) {
        case Regime::And:
            decorative("Let us read the problem carefully.");
            for (std::size_t i = 0; i < n_operands; ++i) operand(i);
            decorative("Multiplying these gives the product.");
            break;
        case Regime::Or:
            for (std::size_t i = 0; i < n_operands; ++i) operand(i);
            s.steps.push_back({Role::Alternate, "Recall that the total is {}.", std::nullopt});
            break;
        case Regime::Mixed:
            for (std::size_t i = 0; i < n_operands; ++i) operand(i);
            decorative("This is a standard setup.");
            s.steps.push_back({Role::Alternate, "Recall that the total is {}.", std::nullopt});
            break;
        case Regime::SelfVerify:
            for (std::size_t i = 0; i < n_operands; ++i) operand(i);
            decorative("Now combine the factors.");
            s.steps.push_back({Role::SelfVerify, "Wait, let me recompute: the total is {}.", std::nullopt});
            break;
        case Regime::Steering:
            operand(0);
            for (std::size_t i = 1; i < std::max<std::size_t>(n_operands, 2); ++i) operand(i, false);
            decorative("This is a standard setup.");
            s.steps.push_back({Role::SelfVerify, "Wait, let me recompute: the total is {}.", std::nullopt});
            break;
    }
    return s;
}

}  // namespace tts
