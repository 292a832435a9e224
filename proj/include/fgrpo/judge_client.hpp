// Remote judge wire client: fills the judge prompt templates, POSTs
// JSON-over-HTTP, and parses strict verdict tokens with retry/backoff.
#pragma once

#include <chrono>
#include <cstdlib>
#include <map>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"

#include "core.hpp"
#include "rewards.hpp"

namespace fgrpo {

// ------------------------------------------------------------- prompt templates

inline constexpr const char* kConsistencyTemplateId = "consistency";
inline constexpr const char* kSemanticGroundingTemplateId = "semantic_grounding";

inline constexpr const char* kConsistencyPromptTemplate =
    "You are an impartial evaluator that judges whether a model's FINAL ANSWER logically "
    "follows from its REASONING TRACE.\n"
    "\n"
    "You will be given:\n"
    "  -- A QUESTION (for context only)\n"
    "  -- The model's REASONING\n"
    "  -- The model's FINAL ANSWER\n"
    "\n"
    "Your task:\n"
    "1. Evaluate only the internal textual logic between the reasoning and the answer.\n"
    "2. Ignore all visual, spatial, numeric, or coordinate-based information. Treat references "
    "to image positions or coordinates as ordinary text, not evidence.\n"
    "3. Do not check factual accuracy with respect to the question or the real world.\n"
    "4. If the reasoning explicitly argues toward a conclusion and the final answer matches that "
    "conclusion, mark it as consistent even if the reasoning itself might be incorrect or "
    "uncertain.\n"
    "5. If the reasoning ends ambiguously, contradicts itself, or draws a different conclusion "
    "than the final answer, mark it as inconsistent.\n"
    "6. If the reasoning is too vague or incomplete to tell whether the answer follows, mark it "
    "as uncertain.\n"
    "7. If the reasoning shows best-effort deliberation (e.g., comparing options and making a "
    "justified choice), count that as consistent as long as the final answer matches the "
    "reasoning's chosen option.\n"
    "\n"
    "Output strictly \"YES\" or \"NO\" only:\n"
    "  -- \"YES\" if the final answer is logically consistent with the reasoning trace following "
    "the rules above.\n"
    "  -- \"NO\" if the final answer is not logically consistent with the reasoning trace "
    "following the rules above.\n"
    "\n"
    "Now evaluate the following model output:\n"
    "\n"
    "Question: {question}\n"
    "Reasoning: {think_part}\n"
    "Answer: {answer_part}\n"
    "\n"
    "Is the final answer logically consistent with the reasoning trace, following the rules "
    "above? Answer strictly YES or NO.";

inline constexpr const char* kSemanticGroundingPromptTemplate =
    "You are a visual grounding and spatial verification judge.\n"
    "\n"
    "You will receive:\n"
    "  -- An IMAGE to reference\n"
    "  -- A QUESTION that was posed about the image(s)\n"
    "  -- REASONING CONTEXT: the chain of reasoning sentences produced so far\n"
    "  -- LATEST SENTENCE: the specific sentence you must evaluate\n"
    "\n"
    "Evaluate ONLY the LATEST SENTENCE. Classify it into exactly one category:\n"
    "\n"
    "CORRECT --- The sentence makes a visual claim about the image(s) AND that claim is "
    "factually accurate when checked against the image(s). A sentence is still CORRECT even if "
    "it restates or elaborates on a prior observation, as long as the visual claim it makes is "
    "accurate. To verify:\n"
    "  1. ENTITY GROUNDING: Named objects/people/entities are present and visible.\n"
    "  2. ATTRIBUTE VERIFICATION: Claimed colors, sizes, counts, text content match the "
    "image(s).\n"
    "  3. SPATIAL RELATIONSHIP CHECK: Claimed left/right, above/below, inside, between, etc. "
    "match actual positions of referenced objects.\n"
    "  4. BOUNDING BOX VERIFICATION: If coordinates like [x1,y1,x2,y2] are referenced, the "
    "region contains the described object and reasonably bounds it.\n"
    "  5. IMPLICIT VISUAL CLAIMS: Conclusions depending on visual facts (counts, groupings, "
    "relative sizes) --- verify the underlying visual facts.\n"
    "  6. MULTI-IMAGE REFERENCES: If the sentence refers to 'image 1', 'image 2', 'the first "
    "image', 'the second image', etc., verify the claim against the correct image.\n"
    "\n"
    "INCORRECT --- The sentence makes a visual claim that is factually inaccurate when checked "
    "against the image(s). Only mark INCORRECT if the core visual claim is wrong --- e.g., wrong "
    "object identity, wrong spatial relationship, wrong count, wrong color, or referencing "
    "content not present in the image(s).\n"
    "\n"
    "SKIP --- The sentence makes NO verifiable visual claim. This includes: planning statements "
    "('let me examine...'), meta-reasoning, logical deductions not dependent on image content, "
    "filler, hedging, pure arithmetic, or restatements of the question. Also SKIP sentences that "
    "only repeat prior observations without adding any new visual detail.\n"
    "\n"
    "IMPORTANT: Focus on whether the visual facts in the sentence are accurate. Do NOT penalize "
    "a sentence for being verbose, repetitive, or for restating a correct observation. "
    "Repetition of a correct claim is SKIP, not INCORRECT.\n"
    "\n"
    "Answer strictly CORRECT, INCORRECT, or SKIP.\n"
    "\n"
    "---\n"
    "\n"
    "QUESTION: {question}\n"
    "\n"
    "{context_block}";

// Single left-to-right pass; substituted values are never re-scanned, so a
// value containing a slot token stays literal.
inline std::string fill_template(const std::string& tmpl,
                                 const std::map<std::string, std::string>& slots) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            const std::size_t close = tmpl.find('}', i + 1);
            if (close != std::string::npos) {
                auto it = slots.find(tmpl.substr(i + 1, close - i - 1));
                if (it != slots.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

inline std::string sentence_context_block(const SentenceQuery& q) {
    std::string block = "REASONING CONTEXT:\n";
    for (const std::string& s : q.context_sentences) {
        block += s;
        block += '\n';
    }
    block += "LATEST SENTENCE: ";
    block += q.target_sentence;
    return block;
}

inline std::string fill_consistency_prompt(const ConsistencyQuery& q) {
    return fill_template(kConsistencyPromptTemplate, {{"question", q.question},
                                                      {"think_part", q.reasoning},
                                                      {"answer_part", q.answer}});
}

inline std::string fill_sentence_prompt(const SentenceQuery& q) {
    return fill_template(kSemanticGroundingPromptTemplate,
                         {{"question", q.question}, {"context_block", sentence_context_block(q)}});
}

// --------------------------------------------------------------- wire protocol

inline constexpr int kJudgeMaxCompletionTokens = 1024;

struct RemoteJudgeConfig {
    std::string endpoint; // http://host[:port][/path]
    int max_attempts = 3;
    int backoff_ms = 100; // doubles per retry
    int timeout_s = 30;
    int pool = 4; // max in-flight requests
};

inline std::string judge_endpoint_from_env() {
    const char* v = std::getenv("FGRPO_JUDGE_ENDPOINT");
    return v == nullptr ? std::string() : std::string(v);
}

struct ParsedEndpoint {
    std::string host;
    int port = 80;
    std::string path = "/judge";
};

inline ParsedEndpoint parse_endpoint(const std::string& url) {
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0)
        throw std::invalid_argument("judge endpoint must start with http://: " + url);
    std::string rest = url.substr(scheme.size());
    ParsedEndpoint ep;
    const std::size_t slash = rest.find('/');
    if (slash != std::string::npos) {
        ep.path = rest.substr(slash);
        rest = rest.substr(0, slash);
    }
    const std::size_t colon = rest.find(':');
    if (colon != std::string::npos) {
        ep.host = rest.substr(0, colon);
        try {
            ep.port = std::stoi(rest.substr(colon + 1));
        } catch (const std::exception&) {
            throw std::invalid_argument("judge endpoint has a bad port: " + url);
        }
    } else {
        ep.host = rest;
    }
    if (ep.host.empty()) throw std::invalid_argument("judge endpoint has no host: " + url);
    return ep;
}

inline json consistency_request_payload(const ConsistencyQuery& q) {
    return json{{"prompt_template_id", kConsistencyTemplateId},
                {"question", q.question},
                {"reasoning", q.reasoning},
                {"answer", q.answer},
                {"prompt", fill_consistency_prompt(q)},
                {"max_completion_tokens", kJudgeMaxCompletionTokens}};
}

inline json sentence_request_payload(const SentenceQuery& q) {
    return json{{"prompt_template_id", kSemanticGroundingTemplateId},
                {"image_ref", q.image_ref},
                {"question", q.question},
                {"context_sentences", q.context_sentences},
                {"target_sentence", q.target_sentence},
                {"prompt", fill_sentence_prompt(q)},
                {"max_completion_tokens", kJudgeMaxCompletionTokens}};
}

inline std::optional<ConsistencyVerdict> parse_consistency_verdict(const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "YES") return ConsistencyVerdict::yes;
    if (v == "NO") return ConsistencyVerdict::no;
    return std::nullopt;
}

inline std::optional<SentenceJudgement> parse_sentence_verdict(const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "CORRECT") return SentenceJudgement::correct;
    if (v == "INCORRECT") return SentenceJudgement::incorrect;
    if (v == "SKIP") return SentenceJudgement::skip;
    return std::nullopt;
}

// Transport-level failures (no response, non-2xx status) are retried with
// exponential backoff; a well-formed reply with an unusable verdict is a
// definitive judge failure and is not retried.
inline std::optional<std::string> remote_judge_call(const RemoteJudgeConfig& cfg,
                                                    const json& payload) {
    const ParsedEndpoint ep = parse_endpoint(cfg.endpoint);
    const std::string body = payload.dump();
    int backoff = cfg.backoff_ms;
    for (int attempt = 0; attempt < std::max(1, cfg.max_attempts); ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
        httplib::Client client(ep.host, ep.port);
        client.set_connection_timeout(cfg.timeout_s, 0);
        client.set_read_timeout(cfg.timeout_s, 0);
        client.set_write_timeout(cfg.timeout_s, 0);
        httplib::Result res = client.Post(ep.path, body, "application/json");
        if (!res || res->status < 200 || res->status >= 300) continue;
        try {
            const json reply = json::parse(res->body);
            return reply.at("verdict").get<std::string>();
        } catch (const std::exception&) {
            return std::nullopt; // server answered, reply unusable
        }
    }
    return std::nullopt;
}

// --------------------------------------------------------- judge implementations

namespace judge_detail {

class CallGate {
public:
    explicit CallGate(int slots) : sem_(std::max(1, slots)) {}
    class Ticket {
    public:
        explicit Ticket(std::counting_semaphore<256>& s) : sem_(s) { sem_.acquire(); }
        ~Ticket() { sem_.release(); }
        Ticket(const Ticket&) = delete;
        Ticket& operator=(const Ticket&) = delete;

    private:
        std::counting_semaphore<256>& sem_;
    };
    Ticket ticket() { return Ticket(sem_); }

private:
    std::counting_semaphore<256> sem_;
};

} // namespace judge_detail

class RemoteConsistencyJudge : public ConsistencyJudge {
public:
    explicit RemoteConsistencyJudge(RemoteJudgeConfig cfg)
        : cfg_(std::move(cfg)), gate_(cfg_.pool) {}

    std::optional<ConsistencyVerdict> judge(const ConsistencyQuery& q) override {
        auto ticket = gate_.ticket();
        const std::optional<std::string> raw =
            remote_judge_call(cfg_, consistency_request_payload(q));
        if (!raw) return std::nullopt;
        return parse_consistency_verdict(*raw);
    }

private:
    RemoteJudgeConfig cfg_;
    judge_detail::CallGate gate_;
};

class RemoteSentenceJudge : public SentenceJudge {
public:
    explicit RemoteSentenceJudge(RemoteJudgeConfig cfg)
        : cfg_(std::move(cfg)), gate_(cfg_.pool) {}

    std::optional<SentenceJudgement> judge(const SentenceQuery& q) override {
        auto ticket = gate_.ticket();
        const std::optional<std::string> raw = remote_judge_call(cfg_, sentence_request_payload(q));
        if (!raw) return std::nullopt;
        return parse_sentence_verdict(*raw);
    }

private:
    RemoteJudgeConfig cfg_;
    judge_detail::CallGate gate_;
};

} // namespace fgrpo
