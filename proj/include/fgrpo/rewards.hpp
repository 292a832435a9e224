// Reward assembly: accuracy/format scoring, judged constraint signals, corpus metrics.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "geometry.hpp"
#include "parse.hpp"

namespace fgrpo {

// ---------------------------------------------------------------- judge abstraction

enum class ConsistencyVerdict { yes, no };
enum class SentenceJudgement { correct, incorrect, skip };

struct ConsistencyQuery {
    std::string question;
    std::string reasoning;
    std::string answer;
};

struct SentenceQuery {
    std::string image_ref; // opaque scene handle
    std::string question;
    std::vector<std::string> context_sentences; // everything before the target, in order
    std::string target_sentence;
};

// nullopt = judge failure (transport error or unparseable verdict)
struct ConsistencyJudge {
    virtual ~ConsistencyJudge() = default;
    virtual std::optional<ConsistencyVerdict> judge(const ConsistencyQuery& q) = 0;
};

struct SentenceJudge {
    virtual ~SentenceJudge() = default;
    virtual std::optional<SentenceJudgement> judge(const SentenceQuery& q) = 0;
};

struct JudgeDiagnostics {
    int consistency_calls = 0;
    int consistency_failures = 0;
    int sentence_calls = 0;
    int sentence_failures = 0;
};

// ---------------------------------------------------------------- task reward

// lowercase, strip punctuation, collapse whitespace
inline std::string normalize_answer(const std::string& s) {
    std::string kept;
    kept.reserve(s.size());
    for (char c : s)
        if (!std::ispunct(static_cast<unsigned char>(c))) kept += c;
    return lower(normalize_whitespace(kept));
}

inline double accuracy_reward(const StructuredResponse& resp, const std::string& gt_answer) {
    return normalize_answer(resp.answer_text) == normalize_answer(gt_answer) ? 1.0 : 0.0;
}

inline double format_reward(const StructuredResponse& resp) { return resp.format_ok ? 1.0 : 0.0; }

inline double task_reward(double r_acc, double r_fmt) { return 0.5 * r_acc + 0.5 * r_fmt; }

// ---------------------------------------------------------------- constraint signals

// Applicable only to correct-answer rollouts; the judge is not consulted otherwise.
inline std::optional<double> consistency_reward(ConsistencyJudge& judge, const ConsistencyQuery& q,
                                                double r_acc, JudgeDiagnostics* diag = nullptr) {
    if (!(r_acc > 0.0)) return std::nullopt;
    if (diag) ++diag->consistency_calls;
    const auto v = judge.judge(q);
    if (!v) {
        if (diag) ++diag->consistency_failures;
        return std::nullopt;
    }
    return *v == ConsistencyVerdict::yes ? 1.0 : 0.0;
}

// Judges every VISUAL sentence with its preceding trace as context, writes verdicts
// in place, and returns #CORRECT / (#CORRECT + #INCORRECT). SKIP and judge failures
// leave the denominator untouched; no scorable sentence means no value.
inline std::optional<double> sentence_grounding_score(SentenceJudge& judge,
                                                      const std::string& image_ref,
                                                      const std::string& question,
                                                      std::vector<Sentence>& sentences,
                                                      JudgeDiagnostics* diag = nullptr) {
    int n_correct = 0, n_scored = 0;
    std::vector<std::string> context;
    for (auto& s : sentences) {
        if (s.kind == SentenceKind::visual) {
            SentenceQuery q;
            q.image_ref = image_ref;
            q.question = question;
            q.context_sentences = context;
            q.target_sentence = s.text;
            if (diag) ++diag->sentence_calls;
            const auto v = judge.judge(q);
            if (!v) {
                if (diag) ++diag->sentence_failures;
            } else if (*v == SentenceJudgement::skip) {
                s.verdict = SentenceVerdict::skip;
            } else {
                s.verdict = *v == SentenceJudgement::correct ? SentenceVerdict::correct
                                                             : SentenceVerdict::incorrect;
                ++n_scored;
                if (*v == SentenceJudgement::correct) ++n_correct;
            }
        }
        context.push_back(s.text);
    }
    if (n_scored == 0) return std::nullopt;
    return static_cast<double>(n_correct) / static_cast<double>(n_scored);
}

inline std::optional<double> semantic_grounding_reward(SentenceJudge& judge,
                                                       const std::string& image_ref,
                                                       const std::string& question,
                                                       std::vector<Sentence>& sentences,
                                                       double r_acc,
                                                       JudgeDiagnostics* diag = nullptr) {
    if (!(r_acc > 0.0)) return std::nullopt;
    return sentence_grounding_score(judge, image_ref, question, sentences, diag);
}

// ---------------------------------------------------------------- full assembly

struct RewardContext {
    std::string image_ref;
    std::string question;
};

struct AssembledReward {
    RewardVector rewards;
    std::vector<Sentence> sentences;
};

inline AssembledReward assemble_reward_vector(const StructuredResponse& resp,
                                              const std::string& gt_answer,
                                              const std::optional<std::vector<BBox>>& gt_boxes,
                                              SourceTag source_tag, const RewardContext& ctx,
                                              ConsistencyJudge& cjudge, SentenceJudge& sjudge,
                                              const Lexicons& lexicons,
                                              JudgeDiagnostics* diag = nullptr) {
    AssembledReward out;
    out.rewards.r_acc = accuracy_reward(resp, gt_answer);
    out.rewards.r_fmt = format_reward(resp);
    out.rewards.r_task = task_reward(out.rewards.r_acc, out.rewards.r_fmt);

    out.sentences = split_sentences(resp.think_text);
    classify_sentences(out.sentences, lexicons);

    ConsistencyQuery cq{ctx.question, resp.think_text, resp.answer_text};
    out.rewards.r_c = consistency_reward(cjudge, cq, out.rewards.r_acc, diag);
    out.rewards.r_s = semantic_grounding_reward(sjudge, ctx.image_ref, ctx.question,
                                                out.sentences, out.rewards.r_acc, diag);

    if (source_tag == SourceTag::has_gt_boxes) {
        if (!gt_boxes || gt_boxes->empty())
            throw std::invalid_argument("gt boxes required for HAS_GT_BOXES source");
        out.rewards.r_g = spatial_grounding_reward(resp.bboxes, *gt_boxes);
    }
    return out;
}

// ---------------------------------------------------------------- corpus metrics

inline double inconsistency_rate(const std::vector<ConsistencyVerdict>& verdicts) {
    if (verdicts.empty()) throw std::invalid_argument("inconsistency_rate: empty input");
    std::size_t n_no = 0;
    for (auto v : verdicts)
        if (v == ConsistencyVerdict::no) ++n_no;
    return static_cast<double>(n_no) / static_cast<double>(verdicts.size());
}

// Binary-label chance-corrected agreement. Degenerate all-agree marginals score 1.
inline double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || a.size() != b.size())
        throw std::invalid_argument("cohen_kappa: need equal-length nonempty label vectors");
    const double n = static_cast<double>(a.size());
    double agree = 0.0, a1 = 0.0, b1 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if ((a[i] != 0) == (b[i] != 0)) agree += 1.0;
        if (a[i] != 0) a1 += 1.0;
        if (b[i] != 0) b1 += 1.0;
    }
    const double po = agree / n;
    const double pe = (a1 / n) * (b1 / n) + (1.0 - a1 / n) * (1.0 - b1 / n);
    if (pe == 1.0) return 1.0;
    return (po - pe) / (1.0 - pe);
}

struct MetricsReport {
    double accuracy = 0.0;
    double inconsistency_rate = 0.0;
    double mean_semantic_grounding = 0.0;
    int n_total = 0;
    int n_correct = 0;
    int n_inconsistent = 0;
    int n_consistency_judged = 0;
    int n_no_answer = 0;
    int n_semantic_defined = 0;
    int n_sentences_correct = 0;
    int n_sentences_incorrect = 0;
    int n_sentences_skipped = 0;
};

inline json to_json(const MetricsReport& m) {
    return json{{"accuracy", m.accuracy},
                {"inconsistency_rate", m.inconsistency_rate},
                {"mean_semantic_grounding", m.mean_semantic_grounding},
                {"n_total", m.n_total},
                {"n_correct", m.n_correct},
                {"n_inconsistent", m.n_inconsistent},
                {"n_consistency_judged", m.n_consistency_judged},
                {"n_no_answer", m.n_no_answer},
                {"n_semantic_defined", m.n_semantic_defined},
                {"n_sentences_correct", m.n_sentences_correct},
                {"n_sentences_incorrect", m.n_sentences_incorrect},
                {"n_sentences_skipped", m.n_sentences_skipped}};
}

} // namespace fgrpo
