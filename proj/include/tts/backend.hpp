#pragma once

// Model-access contract: the abstract Model every adapter implements, hook
// descriptions, and BackendSession, which validates hooks, enforces declared
// capabilities and caches every call by content.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/error.hpp"
#include "tts/trace.hpp"
#include "tts/util.hpp"

namespace tts {

struct Capabilities {
    bool confidence = false;
    bool hidden_capture = false;
    bool steering = false;
    bool attention_scale = false;
    bool attention_capture = false;
};

struct ModelInfo {
    std::string model_id;
    int num_layers = 0;  // L; layers are 1-based
    int hidden_dim = 0;  // d
    Capabilities caps;
};

/// Token positions of each prompt part. Dropped (empty) steps get an empty range.
struct PromptLayout {
    std::size_t num_tokens = 0;
    TokenRange question;
    std::vector<TokenRange> steps;
    TokenRange cue;
};

struct HiddenState {
    int layer = 0;
    std::size_t token_index = 0;
    Vec vector;
};

/// h^layer <- h^layer + sign * vector on every token of `range`.
struct SteeringHook {
    int layer = 1;
    Vec vector;
    TokenRange range;
    int sign = 1;
};

/// Pre-normalization attention weights toward keys in `range` are multiplied by `scale`.
struct AttentionScaleHook {
    int layer = 1;
    TokenRange range;
    double scale = 1.0;
};

/// Head-averaged, row-normalized attention; matrix[query][key].
struct AttentionMap {
    int layer = 0;
    std::vector<Vec> matrix;

    /// Mean over queries in `queries` of the mass placed on keys in `keys`.
    double mass(const TokenRange& keys, const TokenRange& queries) const {
        double total = 0.0;
        std::size_t n = 0;
        for (std::size_t q = queries.begin; q < queries.end && q < matrix.size(); ++q, ++n)
            for (std::size_t k = keys.begin; k < keys.end && k < matrix[q].size(); ++k) total += matrix[q][k];
        return n ? total / static_cast<double>(n) : 0.0;
    }
};

struct Interventions {
    std::vector<SteeringHook> steering;
    std::vector<AttentionScaleHook> attention;

    bool empty() const { return steering.empty() && attention.empty(); }

    /// Sum of active steering deltas at (layer, token), or nullopt when no hook covers it.
    /// Deltas are summed before being added, so +v and -v on one range cancel exactly.
    std::optional<Vec> delta(int layer, std::size_t token) const {
        std::optional<Vec> out;
        for (const auto& h : steering) {
            if (h.layer != layer || !h.range.contains(token)) continue;
            if (!out) out = Vec(h.vector.size(), 0.0);
            for (std::size_t i = 0; i < h.vector.size(); ++i) (*out)[i] += h.sign * h.vector[i];
        }
        return out;
    }

    bool has_steering(int layer) const {
        for (const auto& h : steering)
            if (h.layer == layer) return true;
        return false;
    }

    /// Product of attention scales toward `key` at `layer`; 1 when none applies.
    double scale(int layer, std::size_t key) const {
        double s = 1.0;
        for (const auto& h : attention)
            if (h.layer == layer && h.range.contains(key)) s *= h.scale;
        return s;
    }

    bool has_attention(int layer) const {
        for (const auto& h : attention)
            if (h.layer == layer) return true;
        return false;
    }

    /// Stable text identifying the hook set, used in cache keys.
    std::string descriptor() const {
        std::string out;
        for (const auto& h : steering) {
            const auto* bytes = reinterpret_cast<const char*>(h.vector.data());
            out += "S" + std::to_string(h.layer) + ":" + std::to_string(h.range.begin) + "-" +
                   std::to_string(h.range.end) + ":" + std::to_string(h.sign) + ":" +
                   hex64(fnv1a(std::string_view(bytes, h.vector.size() * sizeof(double)))) + ";";
        }
        for (const auto& h : attention) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", h.scale);
            out += "A" + std::to_string(h.layer) + ":" + std::to_string(h.range.begin) + "-" +
                   std::to_string(h.range.end) + ":" + buf + ";";
        }
        return out;
    }
};

struct Generation {
    std::string cot;          // the reasoning trace
    std::string answer_text;  // raw decode after the early-exit cue on the full trace
};

inline constexpr std::string_view kEarlyExitCue = "The final result is";

/// What an adapter implements. Every operation is a pure function of the
/// weights, the prompt and the interventions passed in.
class Model {
public:
    virtual ~Model() = default;
    virtual const ModelInfo& info() const = 0;
    virtual PromptLayout layout(const std::string& question, const std::vector<std::string>& steps) const = 0;
    virtual Generation generate_cot(const std::string& question, const Interventions& iv) const = 0;
    virtual double early_exit_confidence(const std::string& question, const std::vector<std::string>& steps,
                                         const std::string& target, const Interventions& iv) const = 0;
    virtual std::string early_exit_decode(const std::string& question, const std::vector<std::string>& steps,
                                          const Interventions& iv) const = 0;
    virtual std::vector<Vec> capture_hidden(const std::string& question, const std::vector<std::string>& steps,
                                            int layer, const std::vector<std::size_t>& positions,
                                            const Interventions& iv) const = 0;
    virtual AttentionMap capture_attention(const std::string& question, const std::vector<std::string>& steps,
                                           int layer, const Interventions& iv) const = 0;
};

struct CacheStats {
    std::size_t hits = 0;
    std::size_t misses = 0;  // calls that reached the model
};

/// One exclusive handle on a model. Calls on a session are not thread-safe.
class BackendSession {
public:
    explicit BackendSession(std::shared_ptr<const Model> model,
                            std::optional<std::filesystem::path> cache_dir = std::nullopt)
        : model_(std::move(model)) {
        if (!model_) throw ContractError("backend session needs a model");
        const auto& i = model_->info();
        if (i.num_layers < 1 || i.hidden_dim < 1) throw ContractError("model must have L >= 1 and d >= 1");
        if (cache_dir) {
            std::filesystem::create_directories(*cache_dir);
            cache_file_ = *cache_dir / ("cache-" + hex64(fnv1a(i.model_id)) + ".jsonl");
            load_cache();
        }
    }

    const ModelInfo& info() const { return model_->info(); }
    const Model& model() const { return *model_; }
    const CacheStats& stats() const { return stats_; }
    void reset_stats() { stats_ = {}; }

    PromptLayout layout(const std::string& question, const std::vector<std::string>& steps) const {
        return model_->layout(question, steps);
    }

    /// Greedy trace plus its parsed final answer.
    std::pair<std::string, Answer> generate_cot(const std::string& question) {
        require(info().caps.confidence, "confidence");
        const json r = cached("generate_cot", json{{"q", question}}, [&] {
            const Generation g = model_->generate_cot(question, active_);
            return json{{"cot", g.cot}, {"answer", g.answer_text}};
        });
        return {r.at("cot").get<std::string>(), canonicalize_answer(r.at("answer").get<std::string>())};
    }

    double early_exit_confidence(const std::string& question, const std::vector<std::string>& steps,
                                 const Answer& target) {
        require(info().caps.confidence, "confidence");
        if (!target.canonical || target.canonical->empty())
            throw ContractError("early_exit_confidence needs a parsable, non-empty target");
        const json r = cached("confidence", json{{"q", question}, {"s", steps}, {"t", *target.canonical}}, [&] {
            return json(model_->early_exit_confidence(question, steps, *target.canonical, active_));
        });
        return r.get<double>();
    }

    Answer early_exit_answer(const std::string& question, const std::vector<std::string>& steps) {
        require(info().caps.confidence, "confidence");
        const json r = cached("answer", json{{"q", question}, {"s", steps}},
                              [&] { return json(model_->early_exit_decode(question, steps, active_)); });
        return canonicalize_answer(r.get<std::string>());
    }

    std::vector<HiddenState> capture_hidden(const std::string& question, const std::vector<std::string>& steps,
                                            int layer, const std::vector<std::size_t>& positions) {
        require(info().caps.hidden_capture, "hidden_capture");
        check_layer(layer);
        const std::size_t n = layout(question, steps).num_tokens;
        for (auto p : positions)
            if (p >= n)
                throw ContractError("position " + std::to_string(p) + " outside prompt of " + std::to_string(n) +
                                    " tokens");
        const json r = cached("hidden", json{{"q", question}, {"s", steps}, {"l", layer}, {"p", positions}}, [&] {
            return json(model_->capture_hidden(question, steps, layer, positions, active_));
        });
        std::vector<HiddenState> out;
        for (std::size_t k = 0; k < positions.size(); ++k) out.push_back({layer, positions[k], r.at(k).get<Vec>()});
        return out;
    }

    AttentionMap capture_attention(const std::string& question, const std::vector<std::string>& steps, int layer) {
        require(info().caps.attention_capture, "attention_capture");
        check_layer(layer);
        const json r = cached("attention", json{{"q", question}, {"s", steps}, {"l", layer}}, [&] {
            return json(model_->capture_attention(question, steps, layer, active_).matrix);
        });
        return AttentionMap{layer, r.get<std::vector<Vec>>()};
    }

    /// Runs `inner` with the hook active, then removes it.
    template <class F>
    auto with_steering(const SteeringHook& hook, F&& inner) -> decltype(inner()) {
        require(info().caps.steering, "steering");
        check_layer(hook.layer);
        if (hook.range.empty()) throw ContractError("steering hook needs a non-empty token range");
        if (hook.vector.size() != static_cast<std::size_t>(info().hidden_dim))
            throw ContractError("steering vector has dimension " + std::to_string(hook.vector.size()) +
                                ", model has " + std::to_string(info().hidden_dim));
        if (!all_finite(hook.vector)) throw ContractError("steering vector has non-finite entries");
        if (hook.sign != 1 && hook.sign != -1) throw ContractError("steering sign must be +1 or -1");
        for (const auto& h : active_.steering) check_overlap(h.layer, h.range, hook.layer, hook.range);
        active_.steering.push_back(hook);
        Pop pop{[this] { active_.steering.pop_back(); }};
        return inner();
    }

    template <class F>
    auto with_attention_scale(const AttentionScaleHook& hook, F&& inner) -> decltype(inner()) {
        require(info().caps.attention_scale, "attention_scale");
        check_layer(hook.layer);
        if (hook.range.empty()) throw ContractError("attention hook needs a non-empty token range");
        if (!(hook.scale >= 0.0) || !std::isfinite(hook.scale))
            throw ContractError("attention scale must be finite and non-negative");
        for (const auto& h : active_.attention) check_overlap(h.layer, h.range, hook.layer, hook.range);
        active_.attention.push_back(hook);
        Pop pop{[this] { active_.attention.pop_back(); }};
        return inner();
    }

private:
    struct Pop {
        std::function<void()> fn;
        ~Pop() { fn(); }
    };

    void require(bool has, const char* cap) const {
        if (!has) throw CapabilityError("backend '" + info().model_id + "' lacks capability " + cap);
    }

    void check_layer(int layer) const {
        if (layer < 1 || layer > info().num_layers)
            throw ContractError("layer " + std::to_string(layer) + " outside [1, " + std::to_string(info().num_layers) +
                                "]");
    }

    // Identical ranges compose (nested +v/-v); partial overlaps are ambiguous.
    static void check_overlap(int la, const TokenRange& a, int lb, const TokenRange& b) {
        if (la == lb && a.intersects(b) && !(a == b))
            throw ContractError("overlapping hooks on layer " + std::to_string(la));
    }

    json cached(const std::string& op, const json& args, const std::function<json()>& compute) {
        std::string key = info().model_id + '\x1f' + op + '\x1f' + args.dump() + '\x1f' + active_.descriptor();
        if (auto it = cache_.find(key); it != cache_.end()) {
            ++stats_.hits;
            return it->second;
        }
        ++stats_.misses;
        json value = compute();
        if (cache_file_) {
            std::ofstream out(*cache_file_, std::ios::app);
            out << json{{"k", key}, {"v", value}}.dump() << '\n';
        }
        cache_.emplace(std::move(key), value);
        return value;
    }

    void load_cache() {
        std::ifstream in(*cache_file_);
        std::string line;
        while (std::getline(in, line)) {
            // A torn final line from an interrupted run is skipped, not fatal.
            const json rec = json::parse(line, nullptr, false);
            if (rec.is_discarded() || !rec.is_object() || !rec.contains("k") || !rec.contains("v")) continue;
            cache_.insert_or_assign(rec["k"].get<std::string>(), rec["v"]);
        }
    }

    std::shared_ptr<const Model> model_;
    Interventions active_;
    std::unordered_map<std::string, json> cache_;
    std::optional<std::filesystem::path> cache_file_;
    CacheStats stats_;
};

}  // namespace tts
