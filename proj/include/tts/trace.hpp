#pragma once

// Problems, chains of thought, sentence segmentation, answer canonicalization,
// dataset ingestion and seeded splitting.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "tts/error.hpp"
#include "tts/util.hpp"

namespace tts {

using json = nlohmann::json;

struct Problem {
    std::string id;
    std::string question;
    std::string gold_answer;
};

/// Half-open token interval [begin, end) within one prompt.
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end > begin ? end - begin : 0; }
    bool empty() const { return end <= begin; }
    bool contains(std::size_t t) const { return t >= begin && t < end; }
    bool intersects(const TokenRange& o) const { return begin < o.end && o.begin < end; }
    friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

/// A model answer. `canonical` is empty when nothing answer-like could be
/// extracted; such an answer compares unequal to every answer, itself included.
struct Answer {
    std::string raw;
    std::optional<std::string> canonical;

    bool parsable() const { return canonical.has_value(); }

    friend bool operator==(const Answer& a, const Answer& b) {
        return a.canonical && b.canonical && *a.canonical == *b.canonical;
    }
};

/// A decimal literal inside a step. The value is kept as an exact scaled
/// integer so offsets never pick up binary rounding.
struct NumericSpan {
    std::size_t begin = 0;  // char offset within the step text
    std::size_t end = 0;
    std::int64_t scaled = 0;  // value * 10^frac_digits
    int frac_digits = 0;

    double value() const { return static_cast<double>(scaled) / std::pow(10.0, frac_digits); }
    friend bool operator==(const NumericSpan&, const NumericSpan&) = default;
};

struct Step {
    std::size_t index = 0;
    std::string text;
    std::vector<NumericSpan> numeric_spans;
    bool is_self_verification = false;
    std::optional<TokenRange> token_range;
};

struct ChainOfThought {
    std::string problem_id;
    std::vector<Step> steps;
    std::string raw_text;
    Answer final_answer;

    std::vector<std::string> step_texts() const {
        std::vector<std::string> out;
        out.reserve(steps.size());
        for (const auto& s : steps) out.push_back(s.text);
        return out;
    }
};

struct DatasetSplit {
    std::set<std::string> train;
    std::set<std::string> val;
    std::set<std::string> test;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Numeric literals
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// A '-' directly before a digit run is a sign only when it cannot be a binary minus.
inline bool minus_is_sign(std::string_view text, std::size_t minus_pos) {
    if (minus_pos == 0) return true;
    const char p = text[minus_pos - 1];
    if (is_space(p)) return true;
    static constexpr std::string_view openers = "([{=,:;$<>+*/^";
    return openers.find(p) != std::string_view::npos;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// Finds the decimal literals of a step in ascending, non-overlapping order.
/// Digits glued to a preceding letter or underscore (x1, a_2) are identifiers, not numbers.
inline std::vector<NumericSpan> find_numeric_spans(std::string_view text) {
    using namespace detail;
    std::vector<NumericSpan> spans;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i])) {
            ++i;
            continue;
        }
        const bool glued = i > 0 && (is_alpha(text[i - 1]) || text[i - 1] == '_' || text[i - 1] == '.');
        std::size_t j = i;
        while (j < text.size() && is_digit(text[j])) ++j;
        if (glued) {
            i = j;
            continue;
        }
        std::size_t begin = i;
        bool negative = false;
        if (i > 0 && text[i - 1] == '-' && minus_is_sign(text, i - 1)) {
            begin = i - 1;
            negative = true;
        }
        std::string digits(text.substr(i, j - i));
        int frac = 0;
        if (j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1])) {
            std::size_t k = j + 1;
            while (k < text.size() && is_digit(text[k])) ++k;
            digits += text.substr(j + 1, k - j - 1);
            frac = static_cast<int>(k - j - 1);
            j = k;
        }
        if (digits.size() <= 17) {
            std::int64_t v = std::stoll(digits);
            spans.push_back({begin, j, negative ? -v : v, frac});
        }
        i = j;
    }
    return spans;
}

/// Renders `scaled / 10^frac_digits` keeping exactly `frac_digits` fraction digits.
inline std::string render_scaled(std::int64_t scaled, int frac_digits) {
    const bool neg = scaled < 0;
    std::string mag = std::to_string(neg ? -scaled : scaled);
    if (frac_digits > 0) {
        if (static_cast<int>(mag.size()) <= frac_digits)
            mag.insert(0, static_cast<std::size_t>(frac_digits) - mag.size() + 1, '0');
        mag.insert(mag.size() - static_cast<std::size_t>(frac_digits), ".");
    }
    return neg ? "-" + mag : mag;
}

/// Replaces every maximal run of digits and minus signs that contains a digit with '#'.
/// Two texts differing only in their numeric literals mask identically.
inline std::string mask_digits(std::string_view text) {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (detail::is_digit(text[i]) || text[i] == '-') {
            std::size_t j = i;
            bool has_digit = false;
            while (j < text.size() && (detail::is_digit(text[j]) || text[j] == '-')) {
                has_digit = has_digit || detail::is_digit(text[j]);
                ++j;
            }
            if (has_digit)
                out += '#';
            else
                out.append(text.substr(i, j - i));
            i = j;
        } else {
            out += text[i++];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Self-verification cues
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& default_self_verification_lexicon() {
    static const std::vector<std::string> lexicon = {
        "wait", "let me re", "double-check", "re-evaluate", "verify", "hold on", "but let me compute",
    };
    return lexicon;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Case-insensitive cue match against the step text only.
inline bool flag_self_verification(std::string_view text,
                                   const std::vector<std::string>& lexicon = default_self_verification_lexicon()) {
    const std::string lower = to_lower(text);
    return std::any_of(lexicon.begin(), lexicon.end(),
                       [&](const std::string& cue) { return lower.find(to_lower(cue)) != std::string::npos; });
}

inline bool flag_self_verification(const Step& step,
                                   const std::vector<std::string>& lexicon = default_self_verification_lexicon()) {
    return flag_self_verification(step.text, lexicon);
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

inline Step make_step(std::size_t index, std::string text,
                      const std::vector<std::string>& lexicon = default_self_verification_lexicon()) {
    Step s;
    s.index = index;
    s.numeric_spans = find_numeric_spans(text);
    s.is_self_verification = flag_self_verification(text, lexicon);
    s.text = std::move(text);
    return s;
}

/// Splits a raw trace into sentence steps. Boundaries sit after . ! ? followed
/// by whitespace and at blank lines; nothing splits inside $...$, \(...\) or \[...\].
inline std::vector<Step> segment(std::string_view raw,
                                 const std::vector<std::string>& lexicon = default_self_verification_lexicon()) {
    using namespace detail;
    std::vector<std::string> pieces;
    std::size_t start = 0;
    bool in_dollar = false;
    int bracket_depth = 0;

    auto cut = [&](std::size_t end) {
        std::string piece = trim(raw.substr(start, end - start));
        if (!piece.empty()) pieces.push_back(std::move(piece));
        start = end;
    };

    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char c = raw[i];
        if (c == '\\' && i + 1 < raw.size()) {
            const char n = raw[i + 1];
            if (n == '(' || n == '[') ++bracket_depth;
            if ((n == ')' || n == ']') && bracket_depth > 0) --bracket_depth;
            ++i;
            continue;
        }
        if (c == '$') {
            if (i + 1 < raw.size() && raw[i + 1] == '$') ++i;
            in_dollar = !in_dollar;
            continue;
        }
        if (c == '\n') {
            std::size_t j = i + 1;
            while (j < raw.size() && (raw[j] == ' ' || raw[j] == '\t' || raw[j] == '\r')) ++j;
            if (j < raw.size() && raw[j] == '\n') {
                cut(i);
                in_dollar = false;
                bracket_depth = 0;
                i = j;
                continue;
            }
        }
        if ((c == '.' || c == '!' || c == '?') && !in_dollar && bracket_depth == 0) {
            if (i + 1 == raw.size() || is_space(raw[i + 1])) cut(i + 1);
        }
    }
    cut(raw.size());

    std::vector<Step> steps;
    steps.reserve(pieces.size());
    for (auto& p : pieces) steps.push_back(make_step(steps.size(), std::move(p), lexicon));
    return steps;
}

inline ChainOfThought make_chain(std::string problem_id, std::string raw_text, Answer final_answer,
                                 const std::vector<std::string>& lexicon = default_self_verification_lexicon()) {
    ChainOfThought cot;
    cot.problem_id = std::move(problem_id);
    cot.steps = segment(raw_text, lexicon);
    cot.raw_text = std::move(raw_text);
    cot.final_answer = std::move(final_answer);
    return cot;
}

// ---------------------------------------------------------------------------
// Answers
// ---------------------------------------------------------------------------

/// Canonical decimal form of a numeric literal: no leading zeros, no trailing
/// fraction zeros, no "-0". Returns nullopt if `lit` is not a plain literal.
inline std::optional<std::string> canonical_number(std::string_view lit) {
    std::string s;
    for (char c : lit)
        if (c != ',') s += c;
    if (s.empty()) return std::nullopt;
    bool neg = false;
    std::size_t i = 0;
    if (s[0] == '-' || s[0] == '+') {
        neg = s[0] == '-';
        i = 1;
    }
    std::string int_part, frac_part;
    while (i < s.size() && detail::is_digit(s[i])) int_part += s[i++];
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && detail::is_digit(s[i])) frac_part += s[i++];
    }
    if (i != s.size() || (int_part.empty() && frac_part.empty())) return std::nullopt;
    int_part.erase(0, std::min(int_part.find_first_not_of('0'), int_part.size()));
    if (int_part.empty()) int_part = "0";
    while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
    std::string out = int_part;
    if (!frac_part.empty()) out += "." + frac_part;
    if (neg && out != "0") out = "-" + out;
    return out;
}

namespace detail {

inline std::string strip_trailing_punct(std::string s) {
    while (!s.empty() && std::string_view(".,;:!?").find(s.back()) != std::string_view::npos) s.pop_back();
    return s;
}

// Canonical form of a single answer token: numeric when it parses, else the
// token with whitespace and '$' removed and trailing punctuation stripped.
inline std::optional<std::string> canonical_token(std::string_view raw) {
    std::string s;
    for (char c : raw)
        if (!is_space(c) && c != '$') s += c;
    s = strip_trailing_punct(std::move(s));
    if (s.empty()) return std::nullopt;
    if (auto n = canonical_number(s)) return n;
    return s;
}

inline std::optional<std::string> last_boxed(std::string_view text) {
    const std::string_view key = "\\boxed{";
    const auto pos = text.rfind(key);
    if (pos == std::string_view::npos) return std::nullopt;
    int depth = 1;
    std::size_t i = pos + key.size();
    const std::size_t begin = i;
    for (; i < text.size(); ++i) {
        if (text[i] == '{') ++depth;
        if (text[i] == '}' && --depth == 0) return std::string(text.substr(begin, i - begin));
    }
    return std::nullopt;
}

inline std::optional<std::string> last_number_literal(std::string_view text) {
    std::optional<std::string> last;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i]) || (i > 0 && (is_alpha(text[i - 1]) || text[i - 1] == '_'))) {
            if (is_digit(text[i])) {
                while (i < text.size() && is_digit(text[i])) ++i;
            } else {
                ++i;
            }
            continue;
        }
        std::size_t b = i;
        if (i > 0 && text[i - 1] == '-' && minus_is_sign(text, i - 1)) b = i - 1;
        std::size_t j = i;
        while (j < text.size() && is_digit(text[j])) ++j;
        // thousands groups: 1,000,000
        while (j + 3 < text.size() && text[j] == ',' && is_digit(text[j + 1]) && is_digit(text[j + 2]) &&
               is_digit(text[j + 3]) && (j + 4 >= text.size() || !is_digit(text[j + 4])))
            j += 4;
        if (j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1])) {
            j += 1;
            while (j < text.size() && is_digit(text[j])) ++j;
        }
        last = std::string(text.substr(b, j - b));
        i = j;
    }
    return last;
}

}  // namespace detail

/// Extracts the final answer from decoded text. Rules, first match wins: a
/// single-token text is itself the answer; else the last \boxed{...}; else the
/// last numeric literal; else a one-word answer after "final result is".
inline Answer canonicalize_answer(std::string_view raw) {
    using namespace detail;
    Answer a;
    a.raw = std::string(raw);
    const std::string t = trim(raw);
    if (t.empty()) return a;
    if (t.find_first_of(" \t\r\n") == std::string::npos) {
        a.canonical = canonical_token(t);
        return a;
    }
    if (auto boxed = last_boxed(t)) {
        a.canonical = canonical_token(*boxed);
        return a;
    }
    if (auto num = last_number_literal(t)) {
        a.canonical = canonical_number(*num);
        return a;
    }
    const std::string lower = to_lower(t);
    const std::string_view cue = "final result is";
    if (auto p = lower.rfind(cue); p != std::string::npos) {
        std::istringstream rest(t.substr(p + cue.size()));
        std::string word;
        if (rest >> word) a.canonical = canonical_token(word);
    }
    return a;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Parses line-delimited {id, question, answer} records. Blank lines are skipped.
inline std::vector<Problem> parse_dataset(std::istream& in) {
    std::vector<Problem> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        }
        if (!rec.is_object()) throw ParseError("record is not an object", lineno);
        Problem p;
        for (auto [field, dest] : {std::pair{"id", &p.id}, {"question", &p.question}, {"answer", &p.gold_answer}}) {
            auto it = rec.find(field);
            if (it == rec.end() || !it->is_string())
                throw ParseError(std::string("missing string field '") + field + "'", lineno);
            *dest = it->get<std::string>();
        }
        if (p.gold_answer.empty()) throw ParseError("empty answer", lineno);
        if (!seen.insert(p.id).second) throw DatasetError("duplicate problem id '" + p.id + "'");
        out.push_back(std::move(p));
    }
    return out;
}

inline std::vector<Problem> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open dataset '" + path + "'");
    return parse_dataset(in);
}

inline void write_dataset(std::ostream& out, const std::vector<Problem>& problems) {
    for (const auto& p : problems)
        out << json{{"id", p.id}, {"question", p.question}, {"answer", p.gold_answer}}.dump() << '\n';
}

/// Deterministic 60/10/30-style split. Ids are sorted before shuffling, so the
/// result depends only on the id set and the seed. Sizes use largest remainders.
inline DatasetSplit split_dataset(const std::vector<Problem>& problems,
                                  std::array<double, 3> ratios = {0.6, 0.1, 0.3}, std::uint64_t seed = 0) {
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9 ||
        std::any_of(ratios.begin(), ratios.end(), [](double r) { return r < 0.0; }))
        throw SplitError("split ratios must be non-negative and sum to 1");
    if (problems.size() < 3) throw SplitError("need at least 3 problems to split, got " + std::to_string(problems.size()));

    std::vector<std::string> ids;
    ids.reserve(problems.size());
    for (const auto& p : problems) ids.push_back(p.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DatasetError("duplicate problem id in split input");

    const double n = static_cast<double>(ids.size());
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = n * ratios[static_cast<std::size_t>(k)];
        sizes[static_cast<std::size_t>(k)] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[static_cast<std::size_t>(k)] = exact - static_cast<double>(sizes[static_cast<std::size_t>(k)]);
        assigned += sizes[static_cast<std::size_t>(k)];
    }
    while (assigned < ids.size()) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 3; ++k)
            if (rem[k] > rem[best] + 1e-12) best = k;
        ++sizes[best];
        rem[best] = -1.0;
        ++assigned;
    }

    Rng rng(derive_seed({seed, 0x53504c4954ULL}));  // "SPLIT"
    rng.shuffle(ids);

    DatasetSplit split;
    split.seed = seed;
    auto it = ids.begin();
    split.train.insert(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
    it += static_cast<std::ptrdiff_t>(sizes[0]);
    split.val.insert(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
    it += static_cast<std::ptrdiff_t>(sizes[1]);
    split.test.insert(it, ids.end());
    return split;
}

inline json to_json(const DatasetSplit& s) {
    return json{{"seed", s.seed}, {"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline DatasetSplit split_from_json(const json& j) {
    DatasetSplit s;
    try {
        s.seed = j.at("seed").get<std::uint64_t>();
        s.train = j.at("train").get<std::set<std::string>>();
        s.val = j.at("val").get<std::set<std::string>>();
        s.test = j.at("test").get<std::set<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad split file: ") + e.what(), 0);
    }
    return s;
}

}  // namespace tts
