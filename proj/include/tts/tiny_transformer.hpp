#pragma once

// A byte-level decoder-only transformer (pre-LN, multi-head attention, GELU
// MLP, tied unembedding) that runs in-process with residual-stream and
// attention hooks. Weights come from a seed or a small binary checkpoint.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/backend.hpp"
#include "tts/error.hpp"
#include "tts/util.hpp"

namespace tts {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct TinyConfig {
    int vocab = 256;
    int d_model = 64;
    int num_layers = 4;
    int num_heads = 4;
    int max_seq_len = 512;
    int max_new_tokens = 128;
    int answer_tokens = 12;
};

class TinyTransformer : public Model {
public:
    static constexpr char kMagic[4] = {'T', 'T', 'S', 'W'};
    static constexpr std::uint32_t kVersion = 1;

    static std::shared_ptr<TinyTransformer> random(TinyConfig cfg, std::uint64_t seed, std::string model_id) {
        auto m = std::shared_ptr<TinyTransformer>(new TinyTransformer(cfg, std::move(model_id)));
        Rng rng(derive_seed({seed, 0x544e59ULL}));
        const double std_proj = 0.02 / std::sqrt(2.0 * cfg.num_layers);
        for (auto& p : m->params_) {
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                switch (p.init) {
                    case Init::Normal: p.data[i] = static_cast<float>(0.02 * rng.normal()); break;
                    case Init::Proj: p.data[i] = static_cast<float>(std_proj * rng.normal()); break;
                    case Init::One: p.data[i] = 1.0f; break;
                    case Init::Zero: p.data[i] = 0.0f; break;
                }
            }
        }
        return m;
    }

    /// Adapter config: {"model": "tiny-random:SEED" | checkpoint path, "device": "cpu",
    /// "max_seq_len": N, "dtype": "f32"}; unknown values are config errors.
    static std::shared_ptr<TinyTransformer> from_config(const json& cfg) {
        const std::string device = cfg.value("device", std::string("cpu"));
        if (device != "cpu") throw ConfigError("tiny transformer runs on device 'cpu' only, got '" + device + "'");
        const std::string dtype = cfg.value("dtype", std::string("f32"));
        if (dtype != "f32") throw ConfigError("tiny transformer supports dtype 'f32' only, got '" + dtype + "'");
        const std::string model = cfg.value("model", std::string("tiny-random:0"));
        std::shared_ptr<TinyTransformer> m;
        if (model.rfind("tiny-random:", 0) == 0) {
            TinyConfig tc;
            tc.d_model = cfg.value("d_model", tc.d_model);
            tc.num_layers = cfg.value("num_layers", tc.num_layers);
            tc.num_heads = cfg.value("num_heads", tc.num_heads);
            std::uint64_t seed = 0;
            try {
                seed = std::stoull(model.substr(12));
            } catch (const std::exception&) {
                throw ConfigError("bad model id '" + model + "'");
            }
            tc.max_seq_len = cfg.value("max_seq_len", tc.max_seq_len);
            m = random(tc, seed, model);
        } else {
            m = load(model);
            if (cfg.contains("max_seq_len")) {
                const int n = cfg["max_seq_len"].get<int>();
                if (n > m->cfg_.max_seq_len) throw ConfigError("max_seq_len exceeds the checkpoint's position table");
                m->cfg_.max_seq_len = n;
            }
        }
        return m;
    }

    static std::shared_ptr<TinyTransformer> load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a TTSW checkpoint: " + path.string(), 0);
        auto u32 = [&] {
            std::uint32_t v = 0;
            in.read(reinterpret_cast<char*>(&v), 4);
            if (!in) throw ParseError("truncated checkpoint header", 0);
            return v;
        };
        if (u32() != kVersion) throw ParseError("unsupported checkpoint version", 0);
        TinyConfig cfg;
        cfg.vocab = static_cast<int>(u32());
        cfg.d_model = static_cast<int>(u32());
        cfg.num_layers = static_cast<int>(u32());
        cfg.num_heads = static_cast<int>(u32());
        cfg.max_seq_len = static_cast<int>(u32());
        std::string id(u32(), '\0');
        in.read(id.data(), static_cast<std::streamsize>(id.size()));
        auto m = std::shared_ptr<TinyTransformer>(new TinyTransformer(cfg, id));
        for (auto& p : m->params_) {
            in.read(reinterpret_cast<char*>(p.data.data()), static_cast<std::streamsize>(p.data.size() * 4));
            if (!in) throw ParseError("truncated checkpoint weights", 0);
        }
        return m;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
        out.write(kMagic, 4);
        auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
        u32(kVersion);
        u32(static_cast<std::uint32_t>(cfg_.vocab));
        u32(static_cast<std::uint32_t>(cfg_.d_model));
        u32(static_cast<std::uint32_t>(cfg_.num_layers));
        u32(static_cast<std::uint32_t>(cfg_.num_heads));
        u32(static_cast<std::uint32_t>(cfg_.max_seq_len));
        u32(static_cast<std::uint32_t>(info_.model_id.size()));
        out.write(info_.model_id.data(), static_cast<std::streamsize>(info_.model_id.size()));
        for (const auto& p : params_)
            out.write(reinterpret_cast<const char*>(p.data.data()), static_cast<std::streamsize>(p.data.size() * 4));
    }

    const TinyConfig& config() const { return cfg_; }
    const ModelInfo& info() const override { return info_; }

    PromptLayout layout(const std::string& question, const std::vector<std::string>& steps) const override {
        return build(question, steps).layout;
    }

    Generation generate_cot(const std::string& question, const Interventions& iv) const override {
        std::vector<int> toks = encode(prefix(question));
        if (toks.size() >= static_cast<std::size_t>(cfg_.max_seq_len))
            throw TruncationError("question does not fit the context window");
        const std::size_t start = toks.size();
        // Leave room for the cue and the answer of the early-exit pass over the trace.
        const std::size_t reserve = kEarlyExitCue.size() + static_cast<std::size_t>(cfg_.answer_tokens) + 32;
        if (toks.size() + reserve >= static_cast<std::size_t>(cfg_.max_seq_len))
            throw TruncationError("question does not fit the context window");
        const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_seq_len) - reserve,
                                                        start + static_cast<std::size_t>(cfg_.max_new_tokens));
        while (toks.size() < limit) {
            const int next = argmax(forward(toks, iv, toks.size() - 1).logits.back());
            if (next == 0) break;
            toks.push_back(next);
        }
        std::string cot;
        for (std::size_t i = start; i < toks.size(); ++i) cot += static_cast<char>(toks[i]);
        Generation g{cot, {}};
        g.answer_text = early_exit_decode(question, segment_texts(cot), iv);
        if (!canonicalize_answer(g.answer_text).parsable())
            throw TruncationError("generation ended without a parsable answer");
        return g;
    }

    double early_exit_confidence(const std::string& question, const std::vector<std::string>& steps,
                                 const std::string& target, const Interventions& iv) const override {
        std::vector<int> toks = build(question, steps).tokens;
        const std::size_t first = toks.size();
        for (unsigned char c : " " + target) toks.push_back(c);
        if (toks.size() > static_cast<std::size_t>(cfg_.max_seq_len))
            throw TruncationError("prompt plus answer exceeds the context window");
        const auto out = forward(toks, iv, first - 1);
        double p = 1.0;
        for (std::size_t i = first; i < toks.size(); ++i) p *= softmax_at(out.logits[i - first], toks[i]);
        return p;
    }

    std::string early_exit_decode(const std::string& question, const std::vector<std::string>& steps,
                                  const Interventions& iv) const override {
        std::vector<int> toks = build(question, steps).tokens;
        if (toks.size() + static_cast<std::size_t>(cfg_.answer_tokens) > static_cast<std::size_t>(cfg_.max_seq_len))
            throw TruncationError("prompt exceeds the context window");
        std::string out;
        for (int k = 0; k < cfg_.answer_tokens; ++k) {
            const int next = argmax(forward(toks, iv, toks.size() - 1).logits.back());
            if (next == 0 || next == '\n') break;
            toks.push_back(next);
            out += static_cast<char>(next);
        }
        return out;
    }

    std::vector<Vec> capture_hidden(const std::string& question, const std::vector<std::string>& steps, int layer,
                                    const std::vector<std::size_t>& positions,
                                    const Interventions& iv) const override {
        const auto toks = build(question, steps).tokens;
        const auto out = forward(toks, iv, toks.size() - 1, layer);
        std::vector<Vec> res;
        for (auto p : positions) res.push_back(out.hidden.at(p));
        return res;
    }

    AttentionMap capture_attention(const std::string& question, const std::vector<std::string>& steps, int layer,
                                   const Interventions& iv) const override {
        const auto toks = build(question, steps).tokens;
        auto out = forward(toks, iv, toks.size() - 1, 0, layer);
        return AttentionMap{layer, std::move(out.attention)};
    }

private:
    enum class Init { Normal, Proj, One, Zero };
    struct Param {
        std::vector<float> data;
        Init init;
    };
    struct Block {
        std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_out, b_out;
    };
    struct Built {
        std::vector<int> tokens;
        PromptLayout layout;
    };
    struct ForwardOut {
        std::vector<Vec> logits;     // positions from `logits_from` onward
        std::vector<Vec> hidden;     // residual stream after the requested block
        std::vector<Vec> attention;  // head-averaged map at the requested layer
    };

    TinyTransformer(TinyConfig cfg, std::string model_id) : cfg_(cfg) {
        if (cfg.vocab != 256) throw ConfigError("tiny transformer is byte-level; vocab must be 256");
        if (cfg.d_model < 1 || cfg.num_heads < 1 || cfg.d_model % cfg.num_heads != 0)
            throw ConfigError("d_model must be a positive multiple of num_heads");
        if (cfg.num_layers < 1 || cfg.max_seq_len < 16) throw ConfigError("bad tiny transformer shape");
        info_.model_id = std::move(model_id);
        info_.num_layers = cfg.num_layers;
        info_.hidden_dim = cfg.d_model;
        info_.caps = {true, true, true, true, true};
        const auto d = static_cast<std::size_t>(cfg.d_model);
        auto add = [&](std::size_t n, Init init) {
            params_.push_back({std::vector<float>(n), init});
            return params_.size() - 1;
        };
        tok_emb_ = add(256 * d, Init::Normal);
        pos_emb_ = add(static_cast<std::size_t>(cfg.max_seq_len) * d, Init::Normal);
        for (int l = 0; l < cfg.num_layers; ++l) {
            Block b{};
            b.ln1_g = add(d, Init::One);
            b.ln1_b = add(d, Init::Zero);
            b.w_qkv = add(d * 3 * d, Init::Normal);
            b.b_qkv = add(3 * d, Init::Zero);
            b.w_o = add(d * d, Init::Proj);
            b.b_o = add(d, Init::Zero);
            b.ln2_g = add(d, Init::One);
            b.ln2_b = add(d, Init::Zero);
            b.w_fc = add(d * 4 * d, Init::Normal);
            b.b_fc = add(4 * d, Init::Zero);
            b.w_out = add(4 * d * d, Init::Proj);
            b.b_out = add(d, Init::Zero);
            blocks_.push_back(b);
        }
        lnf_g_ = add(d, Init::One);
        lnf_b_ = add(d, Init::Zero);
    }

    static std::string prefix(const std::string& question) { return "Question: " + question + "\nReasoning:"; }

    static std::vector<int> encode(const std::string& s) {
        std::vector<int> t;
        for (unsigned char c : s) t.push_back(c);
        return t;
    }

    static std::vector<std::string> segment_texts(const std::string& cot) {
        std::vector<std::string> out;
        for (const auto& s : segment(cot)) out.push_back(s.text);
        return out;
    }

    Built build(const std::string& question, const std::vector<std::string>& steps) const {
        Built b;
        std::string text = "Question: ";
        b.layout.question = {text.size(), text.size() + question.size()};
        text += question + "\nReasoning:";
        for (const auto& s : steps) {
            if (s.empty()) {
                b.layout.steps.push_back({text.size(), text.size()});
                continue;
            }
            text += " ";
            b.layout.steps.push_back({text.size(), text.size() + s.size()});
            text += s;
        }
        text += " ";
        b.layout.cue = {text.size(), text.size() + kEarlyExitCue.size()};
        text += kEarlyExitCue;
        b.layout.num_tokens = text.size();
        b.tokens = encode(text);
        return b;
    }

    const float* P(std::size_t idx) const { return params_[idx].data.data(); }

    static void layer_norm(const Vec& x, const float* g, const float* b, Vec& out) {
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(x.size());
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(x.size());
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        out.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * g[i] + b[i];
    }

    // out = in * W + bias, W stored row-major [in][out].
    static void affine(const Vec& in, const float* w, const float* bias, std::size_t n_out, Vec& out) {
        out.assign(bias, bias + n_out);
        for (std::size_t i = 0; i < in.size(); ++i) {
            const double x = in[i];
            const float* row = w + i * n_out;
            for (std::size_t j = 0; j < n_out; ++j) out[j] += x * row[j];
        }
    }

    static double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x))); }

    static int argmax(const Vec& v) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < v.size(); ++i)
            if (v[i] > v[best]) best = i;
        return static_cast<int>(best);
    }

    static double softmax_at(const Vec& logits, int k) {
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : logits) sum += std::exp(v - mx);
        return std::exp(logits[static_cast<std::size_t>(k)] - mx) / sum;
    }

    ForwardOut forward(const std::vector<int>& toks, const Interventions& iv, std::size_t logits_from,
                       int capture_layer = 0, int attention_layer = 0) const {
        const auto n = toks.size();
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto H = static_cast<std::size_t>(cfg_.num_heads);
        const std::size_t dh = d / H;
        if (n > static_cast<std::size_t>(cfg_.max_seq_len)) throw TruncationError("sequence exceeds the context window");

        std::vector<Vec> x(n, Vec(d));
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t i = 0; i < d; ++i)
                x[t][i] = P(tok_emb_)[static_cast<std::size_t>(toks[t]) * d + i] + P(pos_emb_)[t * d + i];

        ForwardOut out;
        Vec a, tmp, hid;
        std::vector<Vec> qkv(n);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int l = 1; l <= cfg_.num_layers; ++l) {
            const Block& b = blocks_[static_cast<std::size_t>(l - 1)];
            for (std::size_t t = 0; t < n; ++t) {
                layer_norm(x[t], P(b.ln1_g), P(b.ln1_b), a);
                affine(a, P(b.w_qkv), P(b.b_qkv), 3 * d, qkv[t]);
            }
            const bool scaled = iv.has_attention(l);
            const bool want_attn = l == attention_layer;
            if (want_attn) out.attention.assign(n, Vec(n, 0.0));
            std::vector<Vec> ctx(n, Vec(d, 0.0));
            Vec w(n), raw(n);
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t i = 0; i < n; ++i) {
                    double mx = -1e300;
                    for (std::size_t j = 0; j <= i; ++j) {
                        double s = 0.0;
                        for (std::size_t k = 0; k < dh; ++k) s += qkv[i][h * dh + k] * qkv[j][d + h * dh + k];
                        w[j] = s * inv_sqrt;
                        mx = std::max(mx, w[j]);
                    }
                    double sum = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        raw[j] = std::exp(w[j] - mx);
                        w[j] = scaled ? raw[j] * iv.scale(l, j) : raw[j];
                        sum += w[j];
                    }
                    if (sum == 0.0) {  // every visible key zero-scaled: keep the unscaled row
                        sum = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) sum += (w[j] = raw[j]);
                    }
                    for (std::size_t j = 0; j <= i; ++j) {
                        const double p = w[j] / sum;
                        if (want_attn) out.attention[i][j] += p / static_cast<double>(H);
                        for (std::size_t k = 0; k < dh; ++k) ctx[i][h * dh + k] += p * qkv[j][2 * d + h * dh + k];
                    }
                }
            }
            for (std::size_t t = 0; t < n; ++t) {
                affine(ctx[t], P(b.w_o), P(b.b_o), d, tmp);
                for (std::size_t i = 0; i < d; ++i) x[t][i] += tmp[i];
                layer_norm(x[t], P(b.ln2_g), P(b.ln2_b), a);
                affine(a, P(b.w_fc), P(b.b_fc), 4 * d, hid);
                for (double& v : hid) v = gelu(v);
                affine(hid, P(b.w_out), P(b.b_out), d, tmp);
                for (std::size_t i = 0; i < d; ++i) x[t][i] += tmp[i];
                if (auto delta = iv.delta(l, t))
                    for (std::size_t i = 0; i < d; ++i) x[t][i] += (*delta)[i];
            }
            if (l == capture_layer) out.hidden = x;
        }
        for (std::size_t t = logits_from; t < n; ++t) {
            layer_norm(x[t], P(lnf_g_), P(lnf_b_), a);
            Vec logits(256, 0.0);
            for (std::size_t v = 0; v < 256; ++v) {
                const float* e = P(tok_emb_) + v * d;
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) s += a[i] * e[i];
                logits[v] = s;
            }
            out.logits.push_back(std::move(logits));
        }
        return out;
    }

    TinyConfig cfg_;
    ModelInfo info_;
    std::vector<Param> params_;
    std::vector<Block> blocks_;
    std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0;
};

}  // namespace tts
