#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "taar/util.hpp"

namespace taar::verify {

enum class Method { boxed, last_number, exact, numeric, rational };

inline std::string_view method_name(Method m) {
    switch (m) {
        case Method::boxed: return "boxed";
        case Method::last_number: return "last_number";
        case Method::exact: return "exact";
        case Method::numeric: return "numeric";
        case Method::rational: return "rational";
    }
    return "exact";
}

struct VerifierOutcome {
    std::optional<std::string> extracted;
    bool is_correct = false;
    Method method = Method::exact;
};

namespace detail {

// Content of the last \boxed{...}, with balanced inner braces.
inline std::optional<std::string> last_boxed(std::string_view text) {
    constexpr std::string_view marker = "\\boxed{";
    std::size_t pos = text.rfind(marker);
    if (pos == std::string_view::npos) return std::nullopt;
    std::size_t i = pos + marker.size();
    int depth = 1;
    std::string content;
    while (i < text.size() && depth > 0) {
        char c = text[i];
        if (c == '{') ++depth;
        if (c == '}') {
            --depth;
            if (depth == 0) break;
        }
        content.push_back(c);
        ++i;
    }
    if (depth != 0) return std::nullopt;
    return content;
}

inline bool digit(char c) { return c >= '0' && c <= '9'; }

// Last standalone number in the text (optionally signed, decimal point and
// exponent allowed). "x17" does not count; "x = 17" does.
inline std::optional<std::string> last_number(std::string_view text) {
    std::optional<std::string> best;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!digit(text[i])) {
            ++i;
            continue;
        }
        const std::size_t digits_start = i;
        std::size_t start = digits_start;
        // A sign counts as part of the number only when it is not itself
        // preceded by an operand ("= -17" yes, "3-2" no).
        if (start > 0 && (text[start - 1] == '-' || text[start - 1] == '+')) {
            const bool sign_free =
                start == 1 || (!digit(text[start - 2]) &&
                               !std::isalpha(static_cast<unsigned char>(text[start - 2])) &&
                               text[start - 2] != '.' && text[start - 2] != '_' &&
                               text[start - 2] != ')');
            if (sign_free) start -= 1;
        }
        bool attached = false;
        if (start == digits_start && start > 0) {
            char prev = text[start - 1];
            if (std::isalpha(static_cast<unsigned char>(prev)) || prev == '_') attached = true;
            if (prev == '.' && start > 1 && digit(text[start - 2])) attached = true;
        }
        std::size_t end = i;
        while (end < text.size() && digit(text[end])) ++end;
        if (end < text.size() && text[end] == '.' && end + 1 < text.size() && digit(text[end + 1])) {
            ++end;
            while (end < text.size() && digit(text[end])) ++end;
        }
        if (end < text.size() && (text[end] == 'e' || text[end] == 'E')) {
            std::size_t exp = end + 1;
            if (exp < text.size() && (text[exp] == '+' || text[exp] == '-')) ++exp;
            if (exp < text.size() && digit(text[exp])) {
                ++exp;
                while (exp < text.size() && digit(text[exp])) ++exp;
                end = exp;
            }
        }
        bool trailing_attached =
            end < text.size() &&
            (std::isalpha(static_cast<unsigned char>(text[end])) || text[end] == '_');
        if (!attached && !trailing_attached) {
            best = std::string(text.substr(start, end - start));
        }
        i = end;
    }
    return best;
}

struct Rational {
    long double num = 0.0L;
    long double den = 1.0L;
    long double value() const { return num / den; }
};

// Parses integers, decimals, scientific notation, and a/b fractions.
inline std::optional<Rational> parse_rational(std::string_view s) {
    std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    // strip $...$ math wrappers and thousands separators
    if (t.size() >= 2 && t.front() == '$' && t.back() == '$') t = t.substr(1, t.size() - 2);
    t = replace_all(t, ",", "");
    t = replace_all(t, " ", "");
    std::size_t slash = t.find('/');
    auto parse_double = [](const std::string& str) -> std::optional<long double> {
        if (str.empty()) return std::nullopt;
        char* end = nullptr;
        errno = 0;
        long double v = std::strtold(str.c_str(), &end);
        if (errno != 0 || end != str.c_str() + str.size()) return std::nullopt;
        return v;
    };
    if (slash != std::string::npos && slash > 0 && slash + 1 < t.size() &&
        t.find('/', slash + 1) == std::string::npos) {
        auto num = parse_double(t.substr(0, slash));
        auto den = parse_double(t.substr(slash + 1));
        if (num && den && *den != 0.0L) return Rational{*num, *den};
        return std::nullopt;
    }
    auto v = parse_double(t);
    if (!v) return std::nullopt;
    return Rational{*v, 1.0L};
}

inline std::string normalize_answer(std::string_view s) {
    std::string t = trim(s);
    // strip common LaTeX/text decoration
    t = replace_all(t, "\\text{", "");
    t = replace_all(t, "\\!", "");
    t = replace_all(t, "$", "");
    std::string out;
    for (char c : t) {
        if (c == '}' || c == ' ') continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    while (!out.empty() && (out.back() == '.' || out.back() == ',')) out.pop_back();
    return out;
}

// Multiple-choice answers: "(A)" / "a." / "C" normalize to one letter.
inline std::optional<char> single_letter(std::string_view s) {
    char letter = 0;
    for (char c : s) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            if (letter != 0) return std::nullopt;
            letter = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!std::ispunct(static_cast<unsigned char>(c)) &&
                   !std::isspace(static_cast<unsigned char>(c))) {
            return std::nullopt;
        }
    }
    if (letter == 0) return std::nullopt;
    return letter;
}

} // namespace detail

// Last \boxed{...} content if present, else the last standalone number,
// else absent.
inline std::optional<std::string> extract_final_answer(std::string_view text) {
    if (auto boxed = detail::last_boxed(text)) return boxed;
    return detail::last_number(text);
}

// Equivalence used by Correct(.): normalized string match, numeric/rational
// match within relative tolerance 1e-9, or multiple-choice letter match.
inline bool answers_equivalent(std::string_view candidate, std::string_view truth) {
    const std::string norm_c = detail::normalize_answer(candidate);
    const std::string norm_t = detail::normalize_answer(truth);
    if (!norm_t.empty() && norm_c == norm_t) return true;

    auto rc = detail::parse_rational(candidate);
    auto rt = detail::parse_rational(truth);
    if (rc && rt) {
        const long double a = rc->value();
        const long double b = rt->value();
        const long double scale = std::max<long double>({1.0L, std::fabs(a), std::fabs(b)});
        return std::fabs(a - b) <= 1e-9L * scale;
    }

    auto lc = detail::single_letter(candidate);
    auto lt = detail::single_letter(truth);
    if (lc && lt) return *lc == *lt;

    return false;
}

class Verifier {
public:
    virtual ~Verifier() = default;
    virtual std::string name() const = 0;
    virtual VerifierOutcome verify(const std::string& generated_text,
                                   const std::string& ground_truth) const = 0;
};

// Built-in math verifier: boxed / last-number extraction plus numeric,
// rational and multiple-choice equivalence. Absent extraction is incorrect.
class MathVerifier final : public Verifier {
public:
    std::string name() const override { return "math"; }

    VerifierOutcome verify(const std::string& generated_text,
                           const std::string& ground_truth) const override {
        VerifierOutcome out;
        auto boxed = detail::last_boxed(generated_text);
        if (boxed) {
            out.extracted = boxed;
            out.method = Method::boxed;
        } else if (auto num = detail::last_number(generated_text)) {
            out.extracted = num;
            out.method = Method::last_number;
        } else {
            out.is_correct = false;
            return out;
        }
        if (ground_truth.empty()) return out;

        if (detail::normalize_answer(*out.extracted) == detail::normalize_answer(ground_truth)) {
            out.is_correct = true;
            out.method = Method::exact;
            return out;
        }
        auto rc = detail::parse_rational(*out.extracted);
        auto rt = detail::parse_rational(ground_truth);
        if (rc && rt) {
            const long double a = rc->value();
            const long double b = rt->value();
            const long double scale = std::max<long double>({1.0L, std::fabs(a), std::fabs(b)});
            if (std::fabs(a - b) <= 1e-9L * scale) {
                out.is_correct = true;
                out.method = (rc->den != 1.0L || rt->den != 1.0L) ? Method::rational
                                                                  : Method::numeric;
                return out;
            }
        }
        if (answers_equivalent(*out.extracted, ground_truth)) {
            out.is_correct = true;
            out.method = Method::exact;
        }
        return out;
    }
};

using VerifierFactory = std::function<std::unique_ptr<Verifier>()>;

inline std::map<std::string, VerifierFactory>& verifier_registry() {
    static std::map<std::string, VerifierFactory> registry = {
        {"math", [] { return std::make_unique<MathVerifier>(); }},
    };
    return registry;
}

inline void register_verifier(const std::string& name, VerifierFactory factory) {
    verifier_registry()[name] = std::move(factory);
}

inline std::unique_ptr<Verifier> make_verifier(const std::string& name = "math") {
    auto it = verifier_registry().find(name);
    if (it == verifier_registry().end()) {
        throw std::invalid_argument("unknown verifier: " + name);
    }
    return it->second();
}

} // namespace taar::verify
