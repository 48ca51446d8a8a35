// Acceptance gate: one PASS/FAIL/SKIP line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "helpers.hpp"

using namespace tts;
using testing_support::Gen;
using testing_support::SynthSetup;
using testing_support::TempDir;

namespace {

int failures = 0;

struct Check {
    bool ok = true;
    std::string detail;
    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

void report(int n, const std::string& title, const Check& c, const std::string& info) {
    std::printf("%s criterion %d: %s (%s)\n", c.ok ? "PASS" : "FAIL", n, title.c_str(),
                c.ok ? info.c_str() : c.detail.c_str());
    std::fflush(stdout);
    if (!c.ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t index_of(const World& w, Role r) {
    for (std::size_t i = 0; i < w.steps.size(); ++i)
        if (w.steps[i].role == r) return i;
    return w.steps.size();
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// ---------------------------------------------------------------------------

void criterion1() {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto specs = testing_support::stock_specs({Regime::And, Regime::Or, Regime::Mixed, Regime::SelfVerify}, 24);
    SynthSetup setup(specs, 101);
    BackendSession s(setup.model);
    std::size_t steps = 0;
    for (const auto& w : setup.worlds) {
        const auto chain = score_chain(s, w.problem, w.cot, ScoreConfig{});
        c.require(chain.skipped.empty(), w.problem.id + " had skipped steps");
        c.require(chain.steps.size() == w.steps.size(), w.problem.id + " step count mismatch");
        for (const auto& sc : chain.steps) {
            const auto o = oracle_scores(w, sc.step_index);
            const bool same = sc.S1_1 == o.S1_1 && sc.S0_1 == o.S0_1 && sc.S1_0 == o.S1_0 && sc.S0_0 == o.S0_0 &&
                              sc.ate_nec == o.ate_nec && sc.ate_suf == o.ate_suf && sc.tts == o.tts &&
                              sc.dropstep == o.dropstep;
            c.require(same, w.problem.id + " step " + std::to_string(sc.step_index) + " differs from oracle");
            ++steps;
        }
    }
    const double secs = seconds_since(t0);
    c.require(secs < 60.0, "took " + std::to_string(secs) + " s");
    char info[160];
    std::snprintf(info, sizeof info, "%zu worlds, %zu steps bit-exact, %.2f s", setup.worlds.size(), steps, secs);
    report(1, "enumerate-mode scores equal the oracle", c, info);
}

void criterion2() {
    Check c;
    LatentGeometry g;
    g.epsilon = 0.0;
    const auto specs = testing_support::stock_specs({Regime::And, Regime::Or, Regime::Mixed, Regime::SelfVerify}, 24, g);
    SynthSetup setup(specs, 202, g);
    BackendSession s(setup.model);
    std::size_t n_op = 0, n_alt = 0, n_dec = 0;
    double max_alt_drop = 0.0;
    for (const auto& w : setup.worlds) {
        const bool pure_and = w.spec.steps.front().role == Role::Decorative;  // the And layout opens with prose
        const auto chain = score_chain(s, w.problem, w.cot, ScoreConfig{});
        for (const auto& sc : chain.steps) {
            const WorldStep& ws = w.steps[sc.step_index];
            const std::string where = w.problem.id + ":" + std::to_string(sc.step_index);
            if (ws.role == Role::Operand && pure_and) {
                c.require(sc.ate_nec == 1.0, "operand " + where + " ATE_nec " + std::to_string(sc.ate_nec));
                ++n_op;
            } else if (ws.role == Role::Alternate) {
                c.require(sc.ate_nec == 0.0 && sc.ate_suf == 1.0 && sc.tts == 0.5, "alternate " + where);
                max_alt_drop = std::max(max_alt_drop, sc.dropstep);
                c.require(sc.dropstep <= 0.05, "alternate " + where + " DropStep " + std::to_string(sc.dropstep));
                ++n_alt;
            } else if (ws.role == Role::Decorative) {
                c.require(sc.tts == 0.0, "decorative " + where + " TTS " + std::to_string(sc.tts));
                ++n_dec;
            }
        }
    }
    c.require(n_op > 0 && n_alt > 0 && n_dec > 0, "a role class was empty");
    char info[200];
    std::snprintf(info, sizeof info, "epsilon=0: %zu operands nec=1, %zu alternates (0,1,0.5), %zu decorative TTS=0, "
                  "max alternate DropStep %.3g", n_op, n_alt, n_dec, max_alt_drop);
    report(2, "regime separation on the synthetic backend", c, info);
}

void criterion3() {
    Check c;
    const auto specs = testing_support::stock_specs({Regime::And, Regime::Mixed, Regime::Steering}, 60);
    SynthSetup setup(specs, 303);
    BackendSession s(setup.model);
    const auto corpus = setup.corpus();
    std::vector<StepScore> scores;
    for (const auto& w : setup.worlds)
        for (auto& sc : score_chain(s, w.problem, w.cot, ScoreConfig{}).steps) scores.push_back(std::move(sc));
    const auto sets = select_threshold_sets(scores, 0.9, 0.0);
    c.require(sets.true_thinking.size() >= 50 && sets.decorative.size() >= 50,
              "classes too small: " + std::to_string(sets.true_thinking.size()) + "/" +
                  std::to_string(sets.decorative.size()));
    const int gate = setup.model->geometry().gate_layer;
    const auto v = extract_direction(s, step_refs(corpus, sets.true_thinking), step_refs(corpus, sets.decorative), gate);
    const double cos = cosine(v.vector, setup.model->gate_direction());
    c.require(cos >= 0.95, "cosine " + std::to_string(cos));

    const StepRef tt = step_ref(corpus, sets.true_thinking.front().problem_id, sets.true_thinking.front().step_index);
    const StepRef dt = step_ref(corpus, sets.decorative.front().problem_id, sets.decorative.front().step_index);
    for (int l = 1; l <= setup.model->info().num_layers; ++l) {
        const auto single = extract_direction(s, {tt}, {dt}, l);
        const Vec a = last_token_hidden(s, tt, l), b = last_token_hidden(s, dt, l);
        for (std::size_t i = 0; i < a.size(); ++i)
            c.require(single.vector[i] == a[i] - b[i], "singleton difference not exact at layer " + std::to_string(l));
    }
    char info[160];
    std::snprintf(info, sizeof info, "n_TT=%zu n_DT=%zu cosine=%.4f at layer %d; singleton exact",
                  sets.true_thinking.size(), sets.decorative.size(), cos, gate);
    report(3, "difference-in-means recovers the gate direction", c, info);
}

void criterion4() {
    Check c;
    const auto specs = testing_support::stock_specs({Regime::And, Regime::SelfVerify, Regime::Steering}, 30);
    SynthSetup setup(specs, 404);
    BackendSession s(setup.model);
    const auto corpus = setup.corpus();
    std::vector<StepScore> scores;
    for (const auto& w : setup.worlds)
        for (auto& sc : score_chain(s, w.problem, w.cot, ScoreConfig{}).steps) scores.push_back(std::move(sc));
    const auto sets = select_threshold_sets(scores, 0.9, 0.0);
    const int gate = setup.model->geometry().gate_layer;
    const auto v = extract_direction(s, step_refs(corpus, sets.true_thinking), step_refs(corpus, sets.decorative), gate);

    const auto eng = select_engagement_cases(s, corpus, 7);
    const auto dis = select_disengagement_cases(s, corpus, 7);
    c.require(!eng.empty() && !dis.empty(), "no eligible cases");
    const auto re = run_flip_test(s, eng, v, +1).rate();
    const auto rd = run_flip_test(s, dis, v, -1).rate();
    c.require(re == 1.0, "engagement rate " + (re ? std::to_string(*re) : std::string("absent")));
    c.require(rd == 1.0, "disengagement rate " + (rd ? std::to_string(*rd) : std::string("absent")));

    double rand_e = 0, rand_d = 0;
    const std::size_t seeds = 20;
    for (std::size_t k = 0; k < seeds; ++k) {
        const auto r = random_vector(v, derive_seed({404, k}));
        rand_e += *run_flip_test(s, eng, r, +1).rate();
        rand_d += *run_flip_test(s, dis, r, -1).rate();
    }
    rand_e /= seeds;
    rand_d /= seeds;
    c.require(rand_e <= 0.1 && rand_d <= 0.1, "random-vector rates " + std::to_string(rand_e) + "/" + std::to_string(rand_d));
    const auto z = zero_vector(v);
    const auto ze = run_flip_test(s, eng, z, +1).rate(), zd = run_flip_test(s, dis, z, -1).rate();
    c.require(ze == 0.0 && zd == 0.0, "zero-vector rate not 0");

    const std::vector<std::pair<double, double>> bands = {{0.0, 0.03}, {0.3, 0.6}, {0.9, 1.0}};
    const auto abl = threshold_ablation(s, corpus, scores, bands, sets.decorative, eng, gate);
    std::string rates;
    std::optional<double> prev;
    for (const auto& b : abl) {
        const auto r = b.result ? b.result->rate() : std::nullopt;
        rates += (rates.empty() ? "" : ",") + (r ? std::to_string(*r).substr(0, 4) : std::string("-"));
        if (!r) continue;
        c.require(!prev || *r >= *prev, "ablation not monotone: " + rates);
        prev = r;
    }
    char info[220];
    std::snprintf(info, sizeof info,
                  "%zu engagement / %zu disengagement cases: rates 1/1 at layer %d; random %.3f/%.3f over %zu seeds; "
                  "zero 0/0; ablation [%s]",
                  eng.size(), dis.size(), gate, rand_e, rand_d, seeds, rates.c_str());
    report(4, "steering causality on the synthetic backend", c, info);
}

void criterion5() {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    Gen g(505);

    for (int i = 0; i < 20000; ++i) {
        const double a = g.unit(), b = g.unit(), x = g.unit(), y = g.unit();
        const double t = tts::tts(a, b, x, y);
        c.require(t >= 0.0 && t <= 1.0, "TTS out of [0,1]");
        c.require(std::abs(t - 0.5 * (std::abs(a - b) + std::abs(x - y))) <= 1e-12, "TTS averaging identity");
    }

    SynthSetup setup(testing_support::stock_specs({Regime::Mixed, Regime::Steering}, 8), 505);
    BackendSession s(setup.model);
    const auto corpus = setup.corpus();
    std::vector<StepRef> engaged, idle;
    for (const auto& w : setup.worlds)
        for (std::size_t i = 0; i < w.steps.size(); ++i)
            (w.steps[i].engaged ? engaged : idle).push_back(step_ref(corpus, w.problem.id, i));
    for (int l = 1; l <= 6; ++l) {
        const auto ab = extract_direction(s, engaged, idle, l), ba = extract_direction(s, idle, engaged, l);
        for (std::size_t i = 0; i < ab.vector.size(); ++i) c.require(ab.vector[i] == -ba.vector[i], "antisymmetry");
    }

    for (int i = 0; i < 300; ++i) {
        const Step st = make_step(0, g.sentence(1 + g.below(4)));
        const auto p = perturb_step(st, g.rng.next_u64());
        const auto spans = find_numeric_spans(p.text);
        c.require(spans.size() == st.numeric_spans.size(), "span count changed: " + st.text);
        std::size_t ca = 0, cb = 0;
        for (std::size_t k = 0; k < spans.size() && k < st.numeric_spans.size(); ++k) {
            c.require(st.text.substr(ca, st.numeric_spans[k].begin - ca) == p.text.substr(cb, spans[k].begin - cb),
                      "non-numeric text changed: " + st.text);
            std::int64_t unit = 1;
            for (int f = 0; f < st.numeric_spans[k].frac_digits; ++f) unit *= 10;
            c.require(spans[k].scaled == st.numeric_spans[k].scaled + p.plan.span_offsets[k].second.value() * unit,
                      "literal moved by the wrong amount: " + st.text);
            ca = st.numeric_spans[k].end;
            cb = spans[k].end;
        }
        c.require(st.text.substr(ca) == p.text.substr(cb), "tail changed: " + st.text);
    }

    for (const auto& w : setup.worlds) {
        const auto steps = w.cot.step_texts();
        const auto lay = s.layout(w.problem.question, steps);
        const TokenRange r = lay.steps[0];
        const Answer y = s.early_exit_answer(w.problem.question, steps);
        const double conf = s.early_exit_confidence(w.problem.question, steps, y);
        for (int l = 1; l <= 6; ++l) {
            const auto h = s.capture_hidden(w.problem.question, steps, l, {r.end - 1});
            const auto att = s.capture_attention(w.problem.question, steps, l).matrix;
            s.with_steering({l, Vec(128, 0.0), r, 1}, [&] {
                c.require(s.early_exit_confidence(w.problem.question, steps, y) == conf, "zero vector changed confidence");
                c.require(s.capture_hidden(w.problem.question, steps, l, {r.end - 1})[0].vector == h[0].vector,
                          "zero vector changed hidden state");
                return 0;
            });
            s.with_attention_scale({l, r, 1.0}, [&] {
                c.require(s.early_exit_confidence(w.problem.question, steps, y) == conf, "scale 1 changed confidence");
                c.require(s.capture_attention(w.problem.question, steps, l).matrix == att, "scale 1 changed attention");
                return 0;
            });
        }
    }

    for (int i = 0; i < 100; ++i) {
        std::vector<Problem> ps;
        const std::size_t n = 3 + g.below(100);
        for (std::size_t k = 0; k < n; ++k) ps.push_back({"id" + std::to_string(k), "q", "1"});
        const auto sp = split_dataset(ps, {0.6, 0.1, 0.3}, g.rng.next_u64());
        std::set<std::string> all;
        for (const auto* part : {&sp.train, &sp.val, &sp.test}) all.insert(part->begin(), part->end());
        c.require(all.size() == n && sp.train.size() + sp.val.size() + sp.test.size() == n, "split not a partition");
    }

    TempDir dir("accept");
    runner::cmd_synth_fixtures(dir.path, 9, 9, {Regime::And, Regime::Or, Regime::SelfVerify});
    const auto a = runner::load_run_config(dir.path / "config.json", {{"output_dir", (dir.path / "a").string()}});
    const auto b = runner::load_run_config(dir.path / "config.json", {{"output_dir", (dir.path / "b").string()}});
    c.require(runner::cmd_score(a) == 0 && runner::cmd_score(b) == 0, "score run failed");
    c.require(runner::cmd_score(a) == 0, "warm rerun failed");
    const std::string ra = slurp(a.output_dir / "records" / "score.jsonl");
    c.require(!ra.empty() && ra == slurp(b.output_dir / "records" / "score.jsonl"), "cold replay differs");
    c.require(slurp(a.output_dir / "scores.csv") == slurp(b.output_dir / "scores.csv"), "scores.csv differs");

    const double secs = seconds_since(t0);
    c.require(secs < 60.0, "took " + std::to_string(secs) + " s");
    char info[120];
    std::snprintf(info, sizeof info, "all six invariant families hold, %.2f s", secs);
    report(5, "invariant suites", c, info);
}

void criterion6() {
    std::printf("SKIP criterion 6: small-model smoke test needs a <=2B open reasoning checkpoint and a MATH-style "
                "problem set, neither of which ships with this build (informative, not gating)\n");
}

}  // namespace

int main() {
    const std::vector<std::pair<int, std::function<void()>>> all = {
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5}, {6, criterion6}};
    for (const auto& [n, fn] : all) {
        try {
            fn();
        } catch (const std::exception& e) {
            std::printf("FAIL criterion %d: exception: %s\n", n, e.what());
            ++failures;
        }
    }
    std::printf("%s: %d failing criteria\n", failures ? "FAILED" : "OK", failures);
    return failures ? 1 : 0;
}
