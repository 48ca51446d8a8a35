#pragma once

// Experiment orchestration: run configuration, model construction, the
// append-only record store, and the score / extract / steer / report /
// synth-fixtures commands.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/backend.hpp"
#include "tts/error.hpp"
#include "tts/plot.hpp"
#include "tts/scoring.hpp"
#include "tts/steering.hpp"
#include "tts/synthetic.hpp"
#include "tts/tiny_transformer.hpp"
#include "tts/trace.hpp"

namespace tts::runner {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kConfigError = 1, kPartialFailure = 2, kEmptySelection = 3 };

inline constexpr const char* kCacheEnv = "TTS_CACHE_DIR";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    json raw;  // as loaded plus overrides; hashed
    fs::path base_dir;
    fs::path dataset;
    json backend;
    ScoreConfig score;
    std::uint64_t split_seed = 0;
    std::array<double, 3> ratios{0.6, 0.1, 0.3};
    std::vector<int> layers;  // empty = every layer
    std::vector<std::string> methods;
    fs::path output_dir;
    std::uint64_t seed = 0;
    std::size_t random_seeds = 20;
    std::vector<std::pair<double, double>> ablation_bands;
    std::size_t attention_cases = 10;

    bool has_method(const std::string& m) const {
        return std::find(methods.begin(), methods.end(), m) != methods.end();
    }
};

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m = {"truethinking", "dropstep_direction", "attention_scale",
                                               "random_vector"};
    return m;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
}

/// Parses a config object. Relative paths are resolved against `base_dir`.
inline RunConfig parse_run_config(const json& raw, const fs::path& base_dir) {
    if (!raw.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    c.raw = raw;
    c.base_dir = base_dir;
    try {
        if (!raw.contains("dataset")) throw ConfigError("config needs a 'dataset' path");
        c.dataset = resolve(base_dir, raw.at("dataset").get<std::string>());
        c.backend = raw.value("backend", json{{"kind", "synthetic"}});
        c.seed = raw.value("seed", std::uint64_t{0});
        json score = raw.value("score", json::object());
        if (!score.contains("seed")) score["seed"] = c.seed;
        c.score = score_config_from_json(score);
        const json split = raw.value("split", json::object());
        c.split_seed = split.value("seed", c.seed);
        if (split.contains("ratios")) {
            const auto r = split["ratios"].get<std::vector<double>>();
            if (r.size() != 3) throw ConfigError("split.ratios needs three entries");
            c.ratios = {r[0], r[1], r[2]};
        }
        c.layers = raw.value("layers", std::vector<int>{});
        c.methods = raw.value("methods", known_methods());
        c.output_dir = resolve(base_dir, raw.value("output_dir", std::string("run")));
        c.random_seeds = raw.value("random_seeds", c.random_seeds);
        c.attention_cases = raw.value("attention_cases", c.attention_cases);
        const auto bands = raw.value("ablation_bands", std::vector<std::vector<double>>{{0.0, 0.03}, {0.3, 0.6}, {0.9, 1.0}});
        for (const auto& b : bands) {
            if (b.size() != 2 || b[0] > b[1]) throw ConfigError("each ablation band is [lo, hi] with lo <= hi");
            c.ablation_bands.emplace_back(b[0], b[1]);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    for (const auto& m : c.methods)
        if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
            throw ConfigError("unknown method '" + m + "'");
    if (c.random_seeds < 1) throw ConfigError("random_seeds must be >= 1");
    c.score.validate();
    return c;
}

inline RunConfig load_run_config(const fs::path& path, const json& overrides = json::object()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    json raw = json::parse(in, nullptr, false);
    if (raw.is_discarded()) throw ConfigError("config '" + path.string() + "' is not valid JSON");
    raw.merge_patch(overrides);
    return parse_run_config(raw, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

/// Hash of the canonical config, excluding where outputs go.
inline std::string config_hash(const RunConfig& c) {
    json j = c.raw;
    j.erase("output_dir");
    return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Synthetic worlds file: {"geometry": {...}, "worlds": [{"spec": {...}, "seed": N}, ...]}.
inline std::shared_ptr<SyntheticModel> load_synthetic(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open worlds file '" + path.string() + "'");
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("worlds")) throw ConfigError("worlds file '" + path.string() + "' is malformed");
    const LatentGeometry g = geometry_from_json(j.value("geometry", json::object()));
    auto m = std::make_shared<SyntheticModel>(g, j.value("model_id", std::string("synthetic")));
    for (const auto& w : j["worlds"]) {
        SyntheticSpec spec = spec_from_json(w.at("spec"));
        spec.geometry = g;
        m->add_world(build_world(spec, w.value("seed", std::uint64_t{0})));
    }
    return m;
}

inline std::shared_ptr<const Model> make_model(const RunConfig& c) {
    const std::string kind = c.backend.value("kind", std::string("synthetic"));
    if (kind == "synthetic") {
        if (!c.backend.contains("worlds")) throw ConfigError("synthetic backend needs a 'worlds' file");
        return load_synthetic(resolve(c.base_dir, c.backend["worlds"].get<std::string>()));
    }
    if (kind == "tiny_transformer") {
        json b = c.backend;
        const std::string model = b.value("model", std::string("tiny-random:0"));
        if (model.rfind("tiny-random:", 0) != 0) b["model"] = resolve(c.base_dir, model).string();
        return TinyTransformer::from_config(b);
    }
    throw ConfigError("unknown backend kind '" + kind + "'");
}

inline fs::path cache_dir(const RunConfig& c) {
    if (const char* env = std::getenv(kCacheEnv); env && *env) return fs::path(env);
    return c.output_dir / "cache";
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// Single-writer, append-only line-delimited store. Ids are derived from
/// content keys, so replays reproduce the file byte for byte.
class RecordStore {
public:
    RecordStore(const fs::path& path, std::string config_hash) : hash_(std::move(config_hash)) {
        fs::create_directories(path.parent_path());
        out_.open(path, std::ios::trunc);
        if (!out_) throw Error("cannot write records to '" + path.string() + "'");
    }

    std::string append(const std::string& kind, const std::string& key, const json& payload) {
        static const std::set<std::string> kinds = {"step_score", "test_case", "flip_report", "vector_meta", "stats"};
        if (!kinds.count(kind)) throw ContractError("unknown record kind '" + kind + "'");
        std::string id = kind + ":" + key;
        out_ << json{{"id", id}, {"kind", kind}, {"seq", seq_++}, {"config_hash", hash_}, {"payload", payload}}.dump()
             << '\n';
        out_.flush();
        return id;
    }

private:
    std::ofstream out_;
    std::string hash_;
    std::size_t seq_ = 0;
};

inline std::vector<json> read_records(const fs::path& path) {
    std::vector<json> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (tts::detail::trim(line).empty()) continue;
        json r = json::parse(line, nullptr, false);
        if (r.is_discarded()) throw ParseError("bad record in '" + path.string() + "'", n);
        out.push_back(std::move(r));
    }
    return out;
}

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Wall-clock times and cache counters live here, never in records.
inline void update_manifest(const RunConfig& c, const std::string& command, const std::string& started, int exit_code,
                            const CacheStats& cache) {
    const fs::path p = c.output_dir / "manifest.json";
    json m = json::object();
    if (std::ifstream in(p); in) {
        m = json::parse(in, nullptr, false);
        if (m.is_discarded() || !m.is_object()) m = json::object();
    }
    m["config_hash"] = config_hash(c);
    m["config"] = c.raw;
    m["commands"][command] = json{{"started", started},
                                  {"finished", utc_now()},
                                  {"exit_code", exit_code},
                                  {"cache_hits", cache.hits},
                                  {"cache_misses", cache.misses}};
    std::ofstream(p) << m.dump(2) << '\n';
}

inline void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out << s;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

class Log {
public:
    explicit Log(const fs::path& path) : out_(path, std::ios::app) {}
    void operator()(const std::string& msg) {
        std::cerr << msg << '\n';
        out_ << msg << '\n';
    }

private:
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Run state shared by the later commands
// ---------------------------------------------------------------------------

struct RunState {
    std::vector<Problem> problems;
    DatasetSplit split;
    Corpus corpus;
    std::vector<StepScore> scores;  // sorted by (problem id, step)
};

inline std::vector<int> layers_of(const RunConfig& c, const ModelInfo& info) {
    std::vector<int> out = c.layers;
    if (out.empty())
        for (int l = 1; l <= info.num_layers; ++l) out.push_back(l);
    for (int l : out)
        if (l < 1 || l > info.num_layers)
            throw ConfigError("layer " + std::to_string(l) + " outside [1, " + std::to_string(info.num_layers) + "]");
    return out;
}

inline RunState load_run(const RunConfig& c) {
    RunState st;
    st.problems = load_dataset(c.dataset.string());
    std::ifstream sp(c.output_dir / "split.json");
    if (!sp) throw ConfigError("no score run in '" + c.output_dir.string() + "' (missing split.json)");
    st.split = split_from_json(json::parse(sp));
    std::map<std::string, Problem> by_id;
    for (const auto& p : st.problems) by_id[p.id] = p;
    for (const auto& r : read_records(c.output_dir / "chains.jsonl")) {
        const std::string id = r.at("id").get<std::string>();
        auto it = by_id.find(id);
        if (it == by_id.end()) continue;
        st.corpus[id] = CorpusItem{it->second, make_chain(id, r.at("cot").get<std::string>(),
                                                          canonicalize_answer(r.at("answer").get<std::string>()))};
    }
    for (const auto& r : read_records(c.output_dir / "records" / "score.jsonl"))
        if (r.at("kind") == "step_score") st.scores.push_back(step_score_from_json(r.at("payload")));
    return st;
}

inline std::vector<StepScore> scores_in(const std::vector<StepScore>& scores, const std::set<std::string>& ids) {
    std::vector<StepScore> out;
    for (const auto& s : scores)
        if (ids.count(s.problem_id)) out.push_back(s);
    return out;
}

inline std::string split_of(const DatasetSplit& s, const std::string& id) {
    if (s.train.count(id)) return "train";
    if (s.val.count(id)) return "val";
    return "test";
}

inline fs::path vector_path(const RunConfig& c, const std::string& method, int layer, const char* ext = ".ttsv") {
    return c.output_dir / "vectors" / (method + "_L" + std::to_string(layer) + ext);
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

inline int cmd_score(const RunConfig& c) {
    const std::string started = utc_now();
    if (!fs::exists(c.dataset)) throw ConfigError("dataset '" + c.dataset.string() + "' does not exist");
    fs::create_directories(c.output_dir);
    Log log(c.output_dir / "log.txt");
    const std::string hash = config_hash(c);

    auto problems = load_dataset(c.dataset.string());
    const DatasetSplit split = split_dataset(problems, c.ratios, c.split_seed);
    write_text(c.output_dir / "split.json", to_json(split).dump(2) + "\n");
    std::sort(problems.begin(), problems.end(), [](const Problem& a, const Problem& b) { return a.id < b.id; });

    BackendSession session(make_model(c), cache_dir(c));
    RecordStore records(c.output_dir / "records" / "score.jsonl", hash);
    std::ofstream chains(c.output_dir / "chains.jsonl", std::ios::trunc);
    std::vector<StepScore> all;
    bool partial = false;
    for (const auto& p : problems) {
        try {
            const auto [cot_text, answer] = session.generate_cot(p.question);
            chains << json{{"id", p.id}, {"cot", cot_text}, {"answer", answer.raw}}.dump() << '\n';
            const ChainOfThought cot = make_chain(p.id, cot_text, answer);
            const ChainScores cs = score_chain(session, p, cot, c.score);
            for (const auto& msg : cs.skipped) {
                log("skipped " + msg);
                partial = true;
            }
            for (const auto& s : cs.steps) {
                json payload = to_json(s);
                payload["split"] = split_of(split, p.id);
                records.append("step_score", p.id + ":" + std::to_string(s.step_index), payload);
                all.push_back(s);
            }
        } catch (const Error& e) {
            log("failed " + p.id + ": " + e.what());
            partial = true;
        }
    }

    std::ostringstream csv;
    csv << "problem_id,step_index,split,position,S1_1,S0_1,S1_0,S0_0,ate_nec,ate_suf,tts,dropstep,is_self_verification\n";
    for (const auto& s : all)
        csv << s.problem_id << ',' << s.step_index << ',' << split_of(split, s.problem_id) << ',' << fmt(s.position())
            << ',' << fmt(s.S1_1) << ',' << fmt(s.S0_1) << ',' << fmt(s.S1_0) << ',' << fmt(s.S0_0) << ','
            << fmt(s.ate_nec) << ',' << fmt(s.ate_suf) << ',' << fmt(s.tts) << ',' << fmt(s.dropstep) << ','
            << (s.is_self_verification ? 1 : 0) << '\n';
    write_text(c.output_dir / "scores.csv", csv.str());

    if (!all.empty()) {
        const DistributionStats st = distribution_stats(all);
        json payload = to_json(st);
        json dec = json::array();
        for (const auto& s : find_decorative_self_verification(all, c.score.cutoff))
            dec.push_back(s.problem_id + ":" + std::to_string(s.step_index));
        payload["decorative_self_verification"] = dec;
        payload["cutoff"] = c.score.cutoff;
        records.append("stats", "tts_distribution", payload);
        write_text(c.output_dir / "stats.json", payload.dump(2) + "\n");

        std::vector<double> values;
        for (const auto& s : all) values.push_back(s.tts);
        write_text(c.output_dir / "plots" / "tts_hist.svg",
                   plot::histogram(values, 20, 0.0, 1.0, "TTS distribution", "TTS"));
        plot::Series pos{"mean TTS", {}};
        for (std::size_t d = 0; d < 10; ++d) pos.points.emplace_back(10.0 * static_cast<double>(d) + 5.0, st.decile_mean[d]);
        write_text(c.output_dir / "plots" / "tts_position.svg",
                   plot::lines({pos}, "Mean TTS by step position", "step percentile", "mean TTS"));
        std::ostringstream dcsv;
        dcsv << "decile,count,mean_tts\n";
        for (std::size_t d = 0; d < 10; ++d) dcsv << d << ',' << st.decile_count[d] << ',' << fmt(st.decile_mean[d]) << '\n';
        write_text(c.output_dir / "position_deciles.csv", dcsv.str());
    } else {
        log("no step was scored");
        partial = true;
    }

    const int code = partial ? kPartialFailure : kOk;
    update_manifest(c, "score", started, code, session.stats());
    return code;
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

inline int cmd_extract(const RunConfig& c) {
    const std::string started = utc_now();
    const RunState st = load_run(c);
    BackendSession session(make_model(c), cache_dir(c));
    RecordStore records(c.output_dir / "records" / "extract.jsonl", config_hash(c));
    const auto train = scores_in(st.scores, st.split.train);
    const ThresholdSets sets = select_threshold_sets(train, c.score.alpha, c.score.beta);
    const auto tt = step_refs(st.corpus, sets.true_thinking);
    const auto dt = step_refs(st.corpus, sets.decorative);
    const auto layers = layers_of(c, session.info());
    fs::create_directories(c.output_dir / "vectors");

    auto save = [&](const SteeringVector& v, const std::string& method) {
        write_vector_binary(vector_path(c, method, v.layer), v);
        write_vector_text(vector_path(c, method, v.layer, ".txt"), v);
        json meta = vector_header(v);
        meta["file"] = vector_path(c, method, v.layer).filename().string();
        records.append("vector_meta", method + ":L" + std::to_string(v.layer), meta);
    };

    for (int l : layers) {
        Provenance p;
        p.alpha = c.score.alpha;
        p.beta = c.score.beta;
        p.variant = to_string(c.score.variant);
        p.seed = c.seed;
        save(extract_direction(session, tt, dt, l, p), "truethinking");
    }
    if (c.has_method("dropstep_direction")) {
        const auto ds = select_dropstep_sets(train, sets.true_thinking.size(), sets.decorative.size());
        const auto dtt = step_refs(st.corpus, ds.true_thinking);
        const auto ddt = step_refs(st.corpus, ds.decorative);
        for (int l : layers) {
            Provenance p;
            p.method = "dropstep_direction";
            p.seed = c.seed;
            save(extract_direction(session, dtt, ddt, l, p), "dropstep_direction");
        }
    }
    update_manifest(c, "extract", started, kOk, session.stats());
    return kOk;
}

// ---------------------------------------------------------------------------
// steer
// ---------------------------------------------------------------------------

inline void write_sweep_plot(const RunConfig& c, const std::vector<FlipReport>& reports, CaseKind kind) {
    std::vector<plot::Series> series;
    for (const auto& r : reports) {
        if (r.kind != kind) continue;
        plot::Series s{r.method, {}};
        for (const auto& l : r.layers) s.points.emplace_back(l.layer, l.rate());
        series.push_back(std::move(s));
    }
    write_text(c.output_dir / "plots" / ("sweep_" + to_string(kind) + ".svg"),
               plot::lines(series, to_string(kind) + " test: flip rate by layer", "layer", "flip rate"));
}

inline int cmd_steer(const RunConfig& c) {
    const std::string started = utc_now();
    const RunState st = load_run(c);
    BackendSession session(make_model(c), cache_dir(c));
    RecordStore records(c.output_dir / "records" / "steer.jsonl", config_hash(c));
    Log log(c.output_dir / "log.txt");
    const auto layers = layers_of(c, session.info());

    auto load_family = [&](const std::string& method) {
        std::vector<SteeringVector> vs;
        for (int l : layers) {
            const auto p = vector_path(c, method, l);
            if (!fs::exists(p)) throw ConfigError("missing vector file '" + p.string() + "'; run extract first");
            vs.push_back(read_vector(p));
        }
        return vs;
    };
    const auto tt_vectors = load_family("truethinking");

    const auto eng = select_engagement_cases(session, st.corpus, c.seed, &st.split.test);
    const auto dis = select_disengagement_cases(session, st.corpus, c.seed, &st.split.test);
    for (const auto* set : {&eng, &dis})
        for (const auto& tc : *set)
            records.append("test_case", to_string(tc.kind) + ":" + tc.problem_id + ":" + std::to_string(tc.step_index),
                           to_json(tc));
    if (eng.empty()) log("no eligible engagement cases; rates reported as absent");
    if (dis.empty()) log("no eligible disengagement cases; rates reported as absent");

    std::vector<FlipReport> reports;
    const std::pair<const std::vector<TestCase>*, std::pair<CaseKind, int>> kinds[] = {
        {&eng, {CaseKind::Engagement, +1}}, {&dis, {CaseKind::Disengagement, -1}}};
    for (const auto& [cases, ks] : kinds) {
        const auto [kind, sign] = ks;
        if (c.has_method("truethinking")) reports.push_back(layer_sweep(session, *cases, tt_vectors, sign, kind));
        std::vector<SteeringVector> zeros;
        for (const auto& v : tt_vectors) zeros.push_back(zero_vector(v));
        reports.push_back(layer_sweep(session, *cases, zeros, sign, kind, "zero_vector"));
        if (c.has_method("random_vector")) {
            FlipReport r{kind, "random_vector", sign, {}, std::nullopt};
            for (const auto& v : tt_vectors) {
                LayerResult pooled;
                pooled.layer = v.layer;
                for (std::size_t k = 0; k < c.random_seeds; ++k) {
                    const auto one = run_flip_test(session, *cases, random_vector(v, derive_seed({c.seed, k})), sign);
                    pooled.flips += one.flips;
                    pooled.eligible += one.eligible;
                }
                r.layers.push_back(pooled);
            }
            r.top1 = compute_top1(r.layers);
            reports.push_back(std::move(r));
        }
        if (c.has_method("dropstep_direction"))
            reports.push_back(layer_sweep(session, *cases, load_family("dropstep_direction"), sign, kind,
                                          "dropstep_direction"));
        if (c.has_method("attention_scale")) {
            const double scale = kind == CaseKind::Engagement ? 100.0 : 0.0;
            FlipReport r{kind, "attention_scale", sign, {}, std::nullopt};
            for (int l : layers) r.layers.push_back(attention_scaling_baseline(session, *cases, l, scale));
            r.top1 = compute_top1(r.layers);
            reports.push_back(std::move(r));
        }
    }

    json all_reports = json::array();
    std::ostringstream csv;
    csv << "method,kind,sign,layer,flips,eligible,rate,record_id\n";
    for (const auto& r : reports) {
        const json j = to_json(r);
        const std::string id = records.append("flip_report", r.method + ":" + to_string(r.kind), j);
        all_reports.push_back(j);
        for (const auto& l : r.layers)
            csv << r.method << ',' << to_string(r.kind) << ',' << r.sign << ',' << l.layer << ',' << l.flips << ','
                << l.eligible << ',' << fmt(l.rate()) << ',' << id << '\n';
    }
    write_text(c.output_dir / "flip_reports.json", all_reports.dump(2) + "\n");
    write_text(c.output_dir / "flip_rates.csv", csv.str());
    write_sweep_plot(c, reports, CaseKind::Engagement);
    write_sweep_plot(c, reports, CaseKind::Disengagement);

    // Best truethinking engagement layer drives the single-layer analyses.
    int best = tt_vectors.front().layer;
    for (const auto& r : reports)
        if (r.method == "truethinking" && r.kind == CaseKind::Engagement && r.top1) best = r.top1->first;
    const SteeringVector& best_v =
        *std::find_if(tt_vectors.begin(), tt_vectors.end(), [&](const SteeringVector& v) { return v.layer == best; });

    // Self-verification steering on decorative self-verification steps of the test split.
    std::set<std::pair<std::string, std::size_t>> sv_steps;
    for (const auto& s : find_decorative_self_verification(scores_in(st.scores, st.split.test), c.score.cutoff))
        sv_steps.insert({s.problem_id, s.step_index});
    const auto sv_cases = select_self_verification_cases(session, st.corpus, c.seed, &sv_steps, &st.split.test);
    for (const auto& tc : sv_cases)
        records.append("test_case", "self_verify:" + tc.problem_id + ":" + std::to_string(tc.step_index), to_json(tc));
    {
        plot::Series curve{"after steering", {}};
        plot::Series base{"before steering", {}};
        std::ostringstream svcsv;
        svcsv << "layer,restored,eligible,accuracy,baseline_accuracy\n";
        json payload = json::array();
        for (const auto& v : tt_vectors) {
            const auto r = steer_self_verification(session, sv_cases, v);
            curve.points.emplace_back(v.layer, r.restored.rate());
            base.points.emplace_back(v.layer, sv_cases.empty() ? std::optional<double>() : r.baseline_accuracy);
            svcsv << v.layer << ',' << r.restored.flips << ',' << r.restored.eligible << ',' << fmt(r.restored.rate())
                  << ',' << fmt(r.baseline_accuracy) << '\n';
            payload.push_back(json{{"layer", v.layer},
                                   {"restored", r.restored.flips},
                                   {"eligible", r.restored.eligible},
                                   {"accuracy", r.restored.rate() ? json(*r.restored.rate()) : json(nullptr)},
                                   {"baseline_accuracy", r.baseline_accuracy}});
        }
        records.append("stats", "self_verification", json{{"layers", payload}});
        write_text(c.output_dir / "self_verify.csv", svcsv.str());
        write_text(c.output_dir / "plots" / "self_verify.svg",
                   plot::lines({curve, base}, "Self-verification steering", "layer", "accuracy"));
    }

    // Attention mass on the steered step, before and under +v / -v.
    {
        const int att_layer = std::min(best + 1, session.info().num_layers);
        std::ostringstream acsv;
        acsv << "problem_id,step_index,attention_layer,before,after_plus,after_minus\n";
        json payload = json::array();
        double sb = 0, sp = 0, sm = 0;
        std::size_t n = 0;
        for (const auto& tc : eng) {
            if (n >= c.attention_cases) break;
            const auto plus = attention_delta(session, tc, best_v, att_layer, +1);
            const auto minus = attention_delta(session, tc, best_v, att_layer, -1);
            acsv << tc.problem_id << ',' << tc.step_index << ',' << att_layer << ',' << fmt(plus.first) << ','
                 << fmt(plus.second) << ',' << fmt(minus.second) << '\n';
            payload.push_back(json{{"problem_id", tc.problem_id}, {"step_index", tc.step_index},
                                   {"before", plus.first}, {"after_plus", plus.second}, {"after_minus", minus.second}});
            sb += plus.first;
            sp += plus.second;
            sm += minus.second;
            ++n;
        }
        records.append("stats", "attention_delta",
                       json{{"steering_layer", best}, {"attention_layer", att_layer}, {"cases", payload}});
        write_text(c.output_dir / "attention.csv", acsv.str());
        const double k = n ? 1.0 / static_cast<double>(n) : 0.0;
        const double top = std::max({sb * k, sp * k, sm * k, 1e-12});
        write_text(c.output_dir / "plots" / "attention.svg",
                   plot::bars({"before", "+v", "-v"},
                              {plot::Series{"mean step mass", {{0, n ? std::optional(sb * k) : std::nullopt},
                                                                {1, n ? std::optional(sp * k) : std::nullopt},
                                                                {2, n ? std::optional(sm * k) : std::nullopt}}}},
                              "Attention to the steered step (layer " + std::to_string(att_layer) + ")",
                              "attention mass", top * 1.1));
    }

    // Threshold ablation against the fixed decorative class.
    {
        std::ostringstream bcsv;
        bcsv << "lo,hi,n_tt,flips,eligible,rate,degenerate,norm\n";
        json payload = json::array();
        try {
            const auto train = scores_in(st.scores, st.split.train);
            const auto sets = select_threshold_sets(train, c.score.alpha, c.score.beta);
            for (const auto& b :
                 threshold_ablation(session, st.corpus, train, c.ablation_bands, sets.decorative, eng, best)) {
                const auto rate = b.result ? b.result->rate() : std::nullopt;
                bcsv << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.n_tt << ',' << (b.result ? b.result->flips : 0) << ','
                     << (b.result ? b.result->eligible : 0) << ',' << fmt(rate) << ',' << (b.degenerate ? 1 : 0) << ','
                     << fmt(b.norm) << '\n';
                payload.push_back(json{{"lo", b.lo}, {"hi", b.hi}, {"n_tt", b.n_tt},
                                       {"rate", rate ? json(*rate) : json(nullptr)}, {"degenerate", b.degenerate},
                                       {"empty", !b.result.has_value()}});
            }
        } catch (const SelectionError& e) {
            log(std::string("threshold ablation skipped: ") + e.what());
        }
        records.append("stats", "threshold_ablation", json{{"layer", best}, {"bands", payload}});
        write_text(c.output_dir / "ablation.csv", bcsv.str());
    }

    update_manifest(c, "steer", started, kOk, session.stats());
    return kOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Consolidates runs into a Table-1-style CSV, a TTS histogram and a markdown summary.
inline int cmd_report(const std::vector<fs::path>& runs, const fs::path& out) {
    if (runs.empty()) throw ConfigError("report needs at least one run directory");
    std::set<std::string> hashes;
    std::vector<double> tts_values;
    std::ostringstream table;
    table << "run,method,kind,top1_layer,top1_rate,record_id\n";
    std::ostringstream md;
    std::size_t n_scores = 0;
    for (const auto& run : runs) {
        std::ifstream mf(run / "manifest.json");
        if (mf) {
            const json m = json::parse(mf, nullptr, false);
            if (!m.is_discarded()) hashes.insert(m.value("config_hash", std::string("?")));
        }
        for (const auto& r : read_records(run / "records" / "score.jsonl")) {
            if (r.at("kind") != "step_score") continue;
            tts_values.push_back(r.at("payload").at("tts").get<double>());
            ++n_scores;
        }
        for (const auto& r : read_records(run / "records" / "steer.jsonl")) {
            if (r.at("kind") != "flip_report") continue;
            const json& p = r.at("payload");
            table << run.filename().string() << ',' << p.at("method").get<std::string>() << ','
                  << p.at("kind").get<std::string>() << ',';
            if (p.at("top1").is_null())
                table << ",,";
            else
                table << p["top1"]["layer"].get<int>() << ',' << fmt(p["top1"]["rate"].get<double>()) << ',';
            table << r.at("id").get<std::string>() << '\n';
        }
    }
    if (n_scores == 0) throw SelectionError("report: the given runs contain no step scores");

    fs::create_directories(out);
    if (hashes.size() > 1) {
        md << "> WARNING: these runs come from different configurations (" << hashes.size() << " config hashes).\n\n";
        std::cerr << "warning: mixed config hashes across runs\n";
    }
    write_text(out / "table1.csv", table.str());
    std::sort(tts_values.begin(), tts_values.end());
    std::ostringstream hist;
    hist << "bin_lo,bin_hi,count\n";
    for (int b = 0; b < 20; ++b) {
        const double lo = b / 20.0, hi = (b + 1) / 20.0;
        const auto cnt = std::count_if(tts_values.begin(), tts_values.end(),
                                       [&](double v) { return v >= lo && (v < hi || (b == 19 && v <= hi)); });
        hist << fmt(lo) << ',' << fmt(hi) << ',' << cnt << '\n';
    }
    write_text(out / "tts_hist.csv", hist.str());
    write_text(out / "tts_hist.svg", plot::histogram(tts_values, 20, 0.0, 1.0, "TTS distribution", "TTS"));

    std::vector<StepScore> pseudo;
    for (double v : tts_values) {
        StepScore s;
        s.tts = v;
        pseudo.push_back(s);
    }
    const auto st = distribution_stats(pseudo);
    md << "# TTS report\n\n";
    md << "Runs: " << runs.size() << ", scored steps: " << n_scores << "\n\n";
    md << "| statistic | value |\n|---|---|\n";
    md << "| mean TTS | " << fmt(st.mean) << " |\n| median TTS | " << fmt(st.median) << " |\n";
    md << "| fraction >= 0.3 | " << fmt(st.frac_ge_03) << " |\n| fraction >= 0.7 | " << fmt(st.frac_ge_07) << " |\n\n";
    md << "Top-1 flip rates are in table1.csv; each row names its source record.\n";
    write_text(out / "report.md", md.str());
    return kOk;
}

// ---------------------------------------------------------------------------
// synth-fixtures
// ---------------------------------------------------------------------------

/// Materializes synthetic worlds, a dataset and a ready-to-run config in `out`.
inline int cmd_synth_fixtures(const fs::path& out, std::uint64_t seed, std::size_t count,
                              const std::vector<Regime>& regimes, const LatentGeometry& geometry = {}) {
    if (count == 0) throw ConfigError("synth-fixtures needs count >= 1");
    if (regimes.empty()) throw ConfigError("synth-fixtures needs at least one regime");
    fs::create_directories(out);
    json worlds = json::array();
    std::vector<Problem> problems;
    for (std::size_t i = 0; i < count; ++i) {
        const Regime r = regimes[i % regimes.size()];
        char label[32];
        std::snprintf(label, sizeof label, "w%03zu", i);
        const SyntheticSpec spec = stock_spec(r, label, 2 + (i / regimes.size()) % 2, geometry);
        const std::uint64_t ws = derive_seed({seed, i});
        const World w = build_world(spec, ws);
        worlds.push_back(json{{"spec", to_json(spec)}, {"seed", ws}});
        problems.push_back(w.problem);
    }
    write_text(out / "worlds.json", json{{"geometry", to_json(geometry)}, {"worlds", worlds}}.dump(2) + "\n");
    std::ostringstream ds;
    write_dataset(ds, problems);
    write_text(out / "dataset.jsonl", ds.str());
    const json cfg{{"dataset", "dataset.jsonl"},
                   {"backend", {{"kind", "synthetic"}, {"worlds", "worlds.json"}}},
                   {"score", {{"mode", "enumerate"}, {"alpha", 0.9}, {"beta", 0.0}, {"cutoff", 0.005}}},
                   {"split", {{"ratios", {0.6, 0.1, 0.3}}}},
                   {"seed", seed},
                   {"output_dir", "run"}};
    write_text(out / "config.json", cfg.dump(2) + "\n");
    return kOk;
}

inline Regime regime_from_string(const std::string& s) {
    if (s == "and") return Regime::And;
    if (s == "or") return Regime::Or;
    if (s == "mixed") return Regime::Mixed;
    if (s == "self_verify") return Regime::SelfVerify;
    if (s == "steering") return Regime::Steering;
    throw ConfigError("unknown regime '" + s + "'");
}

}  // namespace tts::runner
