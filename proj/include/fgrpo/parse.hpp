// Response template parsing, sentence splitting, and trivial-sentence classification.
#pragma once

#include <cstdlib>
#include <string>
#include <unordered_set>
#include <vector>

#include "core.hpp"

namespace fgrpo {

enum class SentenceKind { visual, trivial };
enum class SentenceVerdict { correct, incorrect, skip, unscored };

inline std::string to_string(SentenceKind k) {
    return k == SentenceKind::visual ? "VISUAL" : "TRIVIAL";
}

inline std::string to_string(SentenceVerdict v) {
    switch (v) {
        case SentenceVerdict::correct: return "CORRECT";
        case SentenceVerdict::incorrect: return "INCORRECT";
        case SentenceVerdict::skip: return "SKIP";
        default: return "UNSCORED";
    }
}

struct Sentence {
    std::string text;
    int index = 0;
    SentenceKind kind = SentenceKind::visual;
    SentenceVerdict verdict = SentenceVerdict::unscored;
};

// ---------------------------------------------------------------- lexicons

struct Lexicons {
    std::vector<std::string> trivial_prefixes;          // case-insensitive sentence openers
    std::unordered_set<std::string> visual_keywords;    // lowercase single tokens
};

inline Lexicons default_lexicons() {
    Lexicons lx;
    lx.trivial_prefixes = {"Let me", "Therefore", "Wait", "So,", "Now", "First",
                           "Next", "Thus", "In conclusion"};
    for (const char* w :
         {// object nouns
          "ball", "chair", "lamp", "tree", "car", "door", "sign", "cup", "marker",
          "region", "box", "object", "image", "person", "cat", "dog", "table", "window",
          // colors
          "red", "blue", "green", "black", "white", "yellow", "orange", "brown",
          // spatial terms
          "left", "right", "above", "below", "near", "behind", "front", "inside",
          "between", "closer", "farther", "top", "bottom", "center"})
        lx.visual_keywords.insert(w);
    return lx;
}

// One term per line, '#' starts a comment, blank lines ignored.
inline std::vector<std::string> load_lexicon_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<std::string> terms;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (!line.empty()) terms.push_back(line);
    }
    return terms;
}

inline Lexicons load_lexicons(const std::string& prefix_path, const std::string& keyword_path) {
    Lexicons lx;
    lx.trivial_prefixes = load_lexicon_file(prefix_path);
    for (auto& t : load_lexicon_file(keyword_path)) lx.visual_keywords.insert(lower(t));
    return lx;
}

// ---------------------------------------------------------------- template parsing

namespace detail {

inline bool is_blank(const std::string& s) {
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    return true;
}

inline std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
    std::size_t n = 0, pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string::npos) { ++n; pos += needle.size(); }
    return n;
}

// best-effort span between the first open tag and the first close tag after it;
// an unclosed open tag captures the rest of the text
inline std::string span_between(const std::string& raw, const std::string& open,
                                const std::string& close) {
    const auto a = raw.find(open);
    if (a == std::string::npos) return "";
    const auto start = a + open.size();
    const auto b = raw.find(close, start);
    if (b == std::string::npos) return raw.substr(start);
    return raw.substr(start, b - start);
}

// numeric payload "[x1,y1,x2,y2]" -> box, rejecting malformed or degenerate input
inline bool parse_bbox_payload(const std::string& payload, BBox& out) {
    const std::string t = trim(payload);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']') return false;
    const std::string inner = t.substr(1, t.size() - 2);
    double vals[4];
    std::size_t pos = 0;
    for (int k = 0; k < 4; ++k) {
        std::size_t comma = k < 3 ? inner.find(',', pos) : inner.size();
        if (comma == std::string::npos) return false;
        const std::string piece = trim(inner.substr(pos, comma - pos));
        if (piece.empty()) return false;
        char* end = nullptr;
        vals[k] = std::strtod(piece.c_str(), &end);
        if (end != piece.c_str() + piece.size()) return false;
        pos = comma + 1;
    }
    out = BBox{vals[0], vals[1], vals[2], vals[3]};
    return out.valid();
}

} // namespace detail

// Total function: never throws, malformed input degrades to best-effort fields.
inline StructuredResponse parse_response(const std::string& raw) {
    static const std::string kThinkOpen = "<think>", kThinkClose = "</think>";
    static const std::string kAnswerOpen = "<answer>", kAnswerClose = "</answer>";

    StructuredResponse resp;
    resp.think_text = detail::span_between(raw, kThinkOpen, kThinkClose);
    resp.answer_text = detail::span_between(raw, kAnswerOpen, kAnswerClose);

    // strict template: one occurrence of each tag, in order, only whitespace outside
    const auto to = raw.find(kThinkOpen), tc = raw.find(kThinkClose);
    const auto ao = raw.find(kAnswerOpen), ac = raw.find(kAnswerClose);
    resp.format_ok =
        detail::count_occurrences(raw, kThinkOpen) == 1 &&
        detail::count_occurrences(raw, kThinkClose) == 1 &&
        detail::count_occurrences(raw, kAnswerOpen) == 1 &&
        detail::count_occurrences(raw, kAnswerClose) == 1 &&
        to < tc && tc < ao && ao < ac &&
        detail::is_blank(raw.substr(0, to)) &&
        detail::is_blank(raw.substr(tc + kThinkClose.size(), ao - tc - kThinkClose.size())) &&
        detail::is_blank(raw.substr(ac + kAnswerClose.size()));

    // box tags live inside the reasoning span
    static const std::string kBoxOpen = "<bbox>", kBoxClose = "</bbox>";
    std::size_t pos = 0;
    while ((pos = resp.think_text.find(kBoxOpen, pos)) != std::string::npos) {
        const auto start = pos + kBoxOpen.size();
        const auto end = resp.think_text.find(kBoxClose, start);
        if (end == std::string::npos) { ++resp.dropped_bboxes; break; }
        BBox b;
        if (detail::parse_bbox_payload(resp.think_text.substr(start, end - start), b))
            resp.bboxes.push_back(b);
        else
            ++resp.dropped_bboxes;
        pos = end + kBoxClose.size();
    }
    return resp;
}

// Split on sentence-final . ! ? followed by whitespace; periods inside bracketed
// coordinate lists do not split. Sentences come back trimmed, indexed in order.
inline std::vector<Sentence> split_sentences(const std::string& think_text) {
    std::vector<Sentence> out;
    std::string cur;
    int bracket_depth = 0;
    auto flush = [&]() {
        const std::string t = trim(cur);
        if (!t.empty()) {
            Sentence s;
            s.text = t;
            s.index = static_cast<int>(out.size());
            out.push_back(std::move(s));
        }
        cur.clear();
    };
    for (std::size_t i = 0; i < think_text.size(); ++i) {
        const char c = think_text[i];
        cur += c;
        if (c == '[') {
            ++bracket_depth;
        } else if (c == ']') {
            if (bracket_depth > 0) --bracket_depth;
        } else if ((c == '.' || c == '!' || c == '?') && bracket_depth == 0) {
            if (i + 1 < think_text.size() &&
                std::isspace(static_cast<unsigned char>(think_text[i + 1])))
                flush();
        }
    }
    flush();
    return out;
}

// TRIVIAL only when a trivial prefix matches AND nothing visual appears.
inline SentenceKind classify_trivial(const std::string& text, const Lexicons& lx) {
    if (text.find("<bbox>") != std::string::npos) return SentenceKind::visual;

    std::string token;
    const std::string low = lower(text);
    for (std::size_t i = 0; i <= low.size(); ++i) {
        const char c = i < low.size() ? low[i] : ' ';
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token += c;
        } else if (!token.empty()) {
            if (lx.visual_keywords.count(token)) return SentenceKind::visual;
            token.clear();
        }
    }

    for (const auto& p : lx.trivial_prefixes) {
        if (low.size() >= p.size() && low.compare(0, p.size(), lower(p)) == 0)
            return SentenceKind::trivial;
    }
    return SentenceKind::visual;
}

inline void classify_sentences(std::vector<Sentence>& sentences, const Lexicons& lx) {
    for (auto& s : sentences) s.kind = classify_trivial(s.text, lx);
}

// whitespace-normalized view used by the splitting round-trip checks
inline std::string normalize_whitespace(const std::string& s) {
    std::string out;
    bool in_ws = true;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_ws = true;
        } else {
            if (in_ws && !out.empty()) out += ' ';
            out += c;
            in_ws = false;
        }
    }
    return out;
}

} // namespace fgrpo
