#pragma once

// Hand-rolled generators and small fixtures shared by the test suites.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "tts/tts.hpp"

namespace testing_support {

namespace fs = std::filesystem;

struct Gen {
    tts::Rng rng;
    explicit Gen(std::uint64_t seed) : rng(seed) {}

    std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng.below(n)); }
    double unit() { return rng.uniform(); }

    std::string word() {
        static const std::vector<std::string> words = {"the", "value", "is", "so", "we", "get", "apples",
                                                       "then", "total", "each", "box", "holds", "more"};
        return words[below(words.size())];
    }

    // Integer or decimal literal, never negative, always space-separated.
    std::string number() {
        std::string s = std::to_string(below(100));
        if (below(3) == 0) {
            const std::size_t f = 1 + below(2);
            for (std::size_t i = 0; i < f; ++i) s += static_cast<char>('0' + below(10));
            s.insert(s.size() - f, ".");
        }
        return s;
    }

    // A sentence with exactly `k` numeric literals.
    std::string sentence(std::size_t k) {
        std::vector<std::string> parts;
        const std::size_t w = 2 + below(5);
        for (std::size_t i = 0; i < w; ++i) parts.push_back(word());
        for (std::size_t i = 0; i < k; ++i) parts.insert(parts.begin() + static_cast<std::ptrdiff_t>(below(parts.size() + 1)), number());
        std::string out;
        for (const auto& p : parts) out += (out.empty() ? "" : " ") + p;
        return out + ".";
    }
};

/// Unique scratch directory, removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = fs::temp_directory_path() / ("tts-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

/// Synthetic model holding one world per (regime, seed).
struct SynthSetup {
    std::shared_ptr<tts::SyntheticModel> model;
    std::vector<tts::World> worlds;

    explicit SynthSetup(const std::vector<tts::SyntheticSpec>& specs, std::uint64_t seed = 1,
                        tts::LatentGeometry g = {}) {
        model = std::make_shared<tts::SyntheticModel>(g);
        for (std::size_t i = 0; i < specs.size(); ++i) {
            auto spec = specs[i];
            spec.geometry = g;
            worlds.push_back(tts::build_world(spec, tts::derive_seed({seed, i})));
            model->add_world(worlds.back());
        }
    }

    tts::Corpus corpus() const {
        tts::Corpus c;
        for (const auto& w : worlds) c[w.problem.id] = tts::CorpusItem{w.problem, w.cot};
        return c;
    }
};

inline std::vector<tts::SyntheticSpec> stock_specs(const std::vector<tts::Regime>& regimes, std::size_t count,
                                                   tts::LatentGeometry g = {}) {
    std::vector<tts::SyntheticSpec> out;
    for (std::size_t i = 0; i < count; ++i) {
        char label[32];
        std::snprintf(label, sizeof label, "s%03zu", i);
        out.push_back(tts::stock_spec(regimes[i % regimes.size()], label, 2 + (i / regimes.size()) % 3, g));
    }
    return out;
}

}  // namespace testing_support
