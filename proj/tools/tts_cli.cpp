// tts: score chain-of-thought steps, extract and apply steering directions.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tts/tts.hpp"

namespace {

struct Overrides {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string layers;
    std::string mode;
    std::string variant;
    std::optional<double> alpha, beta, cutoff;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
        app->add_option("--out", out, "output directory (overrides output_dir)");
        app->add_option("--seed", seed, "global seed");
        app->add_option("--layers", layers, "comma-separated layer list");
        app->add_option("--mode", mode, "enumerate | monte_carlo")->check(CLI::IsMember({"enumerate", "monte_carlo"}));
        app->add_option("--variant", variant, "full | nec_only")->check(CLI::IsMember({"full", "nec_only"}));
        app->add_option("--alpha", alpha, "true-thinking threshold");
        app->add_option("--beta", beta, "decorative threshold");
        app->add_option("--cutoff", cutoff, "decorative self-verification cutoff");
    }

    nlohmann::json patch() const {
        nlohmann::json j = nlohmann::json::object();
        if (!out.empty()) j["output_dir"] = std::filesystem::absolute(out).string();
        if (seed) j["seed"] = *seed;
        if (!layers.empty()) {
            std::vector<int> ls;
            std::stringstream ss(layers);
            std::string item;
            while (std::getline(ss, item, ',')) {
                try {
                    ls.push_back(std::stoi(item));
                } catch (const std::exception&) {
                    throw tts::ConfigError("bad --layers entry '" + item + "'");
                }
            }
            j["layers"] = ls;
        }
        if (!mode.empty()) j["score"]["mode"] = mode;
        if (!variant.empty()) j["score"]["variant"] = variant;
        if (alpha) j["score"]["alpha"] = *alpha;
        if (beta) j["score"]["beta"] = *beta;
        if (cutoff) j["score"]["cutoff"] = *cutoff;
        return j;
    }

    tts::runner::RunConfig load() const { return tts::runner::load_run_config(config, patch()); }
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Step-level causal scoring and steering for chain-of-thought traces"};
    app.require_subcommand(1);

    Overrides score_o, extract_o, steer_o;
    auto* score = app.add_subcommand("score", "score every step of every trace");
    score_o.attach(score);
    auto* extract = app.add_subcommand("extract", "extract per-layer steering vectors from a score run");
    extract_o.attach(extract);
    auto* steer = app.add_subcommand("steer", "run engagement / disengagement / self-verification tests");
    steer_o.attach(steer);

    std::vector<std::string> runs;
    std::string report_out;
    auto* report = app.add_subcommand("report", "consolidate run directories into tables and plots");
    report->add_option("runs", runs, "run directories")->required();
    report->add_option("--out", report_out, "report directory")->required();

    std::string fx_out;
    std::uint64_t fx_seed = 0;
    std::size_t fx_count = 30;
    std::string fx_regimes = "and,self_verify,steering";
    auto* fixtures = app.add_subcommand("synth-fixtures", "write synthetic worlds, a dataset and a config");
    fixtures->add_option("--out", fx_out, "fixture directory")->required();
    fixtures->add_option("--seed", fx_seed, "world seed");
    fixtures->add_option("--count", fx_count, "number of worlds");
    fixtures->add_option("--regimes", fx_regimes, "comma-separated: and, or, mixed, self_verify, steering");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : tts::runner::kConfigError;
    }

    using namespace tts::runner;
    try {
        if (score->parsed()) return cmd_score(score_o.load());
        if (extract->parsed()) return cmd_extract(extract_o.load());
        if (steer->parsed()) return cmd_steer(steer_o.load());
        if (report->parsed()) {
            std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
            return cmd_report(dirs, report_out);
        }
        if (fixtures->parsed()) {
            std::vector<tts::Regime> regimes;
            for (const auto& r : split_list(fx_regimes)) regimes.push_back(regime_from_string(r));
            return cmd_synth_fixtures(fx_out, fx_seed, fx_count, regimes);
        }
    } catch (const tts::SelectionError& e) {
        std::cerr << "selection error: " << e.what() << '\n';
        return kEmptySelection;
    } catch (const tts::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const tts::ParseError& e) {
        std::cerr << "parse error (line " << e.line() << "): " << e.what() << '\n';
        return kConfigError;
    } catch (const tts::DatasetError& e) {
        std::cerr << "dataset error: " << e.what() << '\n';
        return kConfigError;
    } catch (const tts::SplitError& e) {
        std::cerr << "split error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kPartialFailure;
    }
    return kOk;
}
