// Core value types, configuration, deterministic RNG, and record (de)serialization.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace fgrpo {

using json = nlohmann::json;

// ---------------------------------------------------------------- geometry-free basics

struct BBox {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double w() const { return x2 - x1; }
    double h() const { return y2 - y1; }
    bool valid() const {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
               x1 < x2 && y1 < y2;
    }
    bool operator==(const BBox& o) const {
        return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
    }
};

enum class SourceTag { has_gt_boxes, no_gt_boxes };

inline std::string to_string(SourceTag t) {
    return t == SourceTag::has_gt_boxes ? "HAS_GT_BOXES" : "NO_GT_BOXES";
}

inline SourceTag source_tag_from_string(const std::string& s) {
    if (s == "HAS_GT_BOXES") return SourceTag::has_gt_boxes;
    if (s == "NO_GT_BOXES") return SourceTag::no_gt_boxes;
    throw std::invalid_argument("unknown source_tag: " + s);
}

// ---------------------------------------------------------------- deterministic RNG

// mt19937_64 output is pinned by the standard; the draw helpers below avoid
// std::*_distribution, whose results vary across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    // unbiased uniform in [0, n)
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: n == 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return static_cast<std::size_t>(x % n);
    }

    // index draw from an unnormalized nonnegative weight vector
    std::size_t categorical(const std::vector<double>& probs) {
        double total = 0.0;
        for (double p : probs) total += p;
        if (!(total > 0.0)) throw std::invalid_argument("categorical: nonpositive total mass");
        double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        return probs.size() - 1;
    }

    // independent substream, e.g. for held-out split generation
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 eng_;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

// ---------------------------------------------------------------- parsed response

struct StructuredResponse {
    std::string think_text;
    std::string answer_text;
    std::vector<BBox> bboxes;
    bool format_ok = false;
    int dropped_bboxes = 0; // parse diagnostic, not serialized
};

// ---------------------------------------------------------------- rewards

// Masked signals are absent optionals, never a sentinel value.
struct RewardVector {
    double r_acc = 0.0;
    double r_fmt = 0.0;
    double r_task = 0.0; // always 0.5*r_acc + 0.5*r_fmt
    std::optional<double> r_c;
    std::optional<double> r_s;
    std::optional<double> r_g;

    bool m_c() const { return r_c.has_value(); }
    bool m_s() const { return r_s.has_value(); }
    bool m_g() const { return r_g.has_value(); }
};

// Index order of the three constrained signals everywhere in this library:
// 0 = consistency, 1 = sentence grounding, 2 = spatial grounding.
enum class Constraint : int { consistency = 0, sentence = 1, spatial = 2 };
inline constexpr std::array<Constraint, 3> kConstraints = {
    Constraint::consistency, Constraint::sentence, Constraint::spatial};

inline const std::optional<double>& constraint_value(const RewardVector& rv, Constraint k) {
    switch (k) {
        case Constraint::consistency: return rv.r_c;
        case Constraint::sentence: return rv.r_s;
        default: return rv.r_g;
    }
}

// ---------------------------------------------------------------- rollouts

struct RolloutRecord {
    std::int64_t prompt_id = 0;
    SourceTag source_tag = SourceTag::no_gt_boxes;
    std::vector<int> action_sequence;
    StructuredResponse response;
    RewardVector rewards;
    std::vector<double> old_logprob_per_step;
    double advantage = 0.0;
};

struct RolloutGroup {
    std::int64_t prompt_id = 0;
    std::vector<RolloutRecord> rollouts;
};

inline std::vector<std::string> validate_record(const RolloutRecord& r) {
    std::vector<std::string> bad;
    if (r.old_logprob_per_step.size() != r.action_sequence.size())
        bad.push_back("old_logprob_per_step length mismatch");
    for (double lp : r.old_logprob_per_step)
        if (!(lp <= 0.0)) bad.push_back("positive log-probability");
    const double expect = 0.5 * r.rewards.r_acc + 0.5 * r.rewards.r_fmt;
    if (r.rewards.r_task != expect) bad.push_back("r_task != 0.5*r_acc + 0.5*r_fmt");
    return bad;
}

inline std::vector<std::string> validate_group(const RolloutGroup& g) {
    std::vector<std::string> bad;
    if (g.rollouts.size() < 2) bad.push_back("group smaller than 2");
    for (const auto& r : g.rollouts) {
        if (r.prompt_id != g.prompt_id) bad.push_back("prompt_id mismatch inside group");
        if (r.source_tag != g.rollouts.front().source_tag) bad.push_back("source_tag mismatch inside group");
        auto sub = validate_record(r);
        bad.insert(bad.end(), sub.begin(), sub.end());
    }
    return bad;
}

// ---------------------------------------------------------------- dual state

struct LagrangeState {
    std::array<double, 3> lambda{1.0, 1.0, 1.0};
    std::array<double, 3> tau{0.95, 0.95, 0.65};
    std::array<std::optional<double>, 3> last_cbar{};
    std::array<int, 3> last_applicable{0, 0, 0};
    double eta_lambda = 0.05;
    double lambda_max = 5.0;
    int min_applicable = 8;
};

// ---------------------------------------------------------------- training config

enum class TrainMode {
    task_only,
    fgrpo,
    fgrpo_fixed,
    coupled_additive,
    coupled_multiplicative,
};

inline std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::task_only: return "task_only";
        case TrainMode::fgrpo: return "fgrpo";
        case TrainMode::fgrpo_fixed: return "fgrpo_fixed";
        case TrainMode::coupled_additive: return "coupled_additive";
        default: return "coupled_multiplicative";
    }
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "task_only") return TrainMode::task_only;
    if (s == "fgrpo") return TrainMode::fgrpo;
    if (s == "fgrpo_fixed") return TrainMode::fgrpo_fixed;
    if (s == "coupled_additive") return TrainMode::coupled_additive;
    if (s == "coupled_multiplicative") return TrainMode::coupled_multiplicative;
    throw std::invalid_argument("unknown mode: " + s);
}

enum class WhitenScope { batch, group };
enum class KlReference { init, old };
enum class OptimizerKind { sgd, adamw };

struct TrainConfig {
    int group_size = 5;
    int batch_prompts = 128;
    double clip_ratio = 0.28;
    double kl_coef = 0.001;
    double group_norm_eps = 1e-4;
    double policy_lr = 1e-6;
    TrainMode mode = TrainMode::fgrpo;
    std::uint64_t seed = 0;
    int total_steps = 100;

    double tau_c = 0.95;
    double tau_s = 0.95;
    double tau_g = 0.65;
    double lambda_c = 1.0;
    double lambda_s = 1.0;
    double lambda_g = 1.0;
    double eta_lambda = 0.05;
    double lambda_max = 5.0;
    int min_applicable = 8;

    WhitenScope whiten_scope = WhitenScope::batch;
    KlReference kl_reference = KlReference::init;
    OptimizerKind optimizer = OptimizerKind::sgd;
    int inner_iters = 1; // primal steps per batch, reusing frozen old log-probs
    int eval_every = 0;  // 0 = final evaluation only
    int eval_tasks = 400;
};

inline TrainConfig new_default_config() { return TrainConfig{}; }

// One violation string per offending key; empty means usable.
inline std::vector<std::string> validate_config(const TrainConfig& c) {
    std::vector<std::string> bad;
    if (c.group_size < 2) bad.push_back("group_size");
    if (c.batch_prompts < 1) bad.push_back("batch_prompts");
    if (!(c.clip_ratio > 0.0)) bad.push_back("clip_ratio");
    if (!(c.kl_coef >= 0.0)) bad.push_back("kl_coef");
    if (!(c.group_norm_eps > 0.0)) bad.push_back("group_norm_eps");
    if (!(c.policy_lr > 0.0)) bad.push_back("policy_lr");
    if (c.total_steps < 0) bad.push_back("total_steps"); // 0 = evaluate the initial policy only
    if (!(c.tau_c >= 0.0 && c.tau_c <= 1.0)) bad.push_back("tau_c");
    if (!(c.tau_s >= 0.0 && c.tau_s <= 1.0)) bad.push_back("tau_s");
    if (!(c.tau_g >= 0.0 && c.tau_g <= 1.0)) bad.push_back("tau_g");
    if (!(c.eta_lambda >= 0.0)) bad.push_back("eta_lambda");
    if (!(c.lambda_max > 0.0)) bad.push_back("lambda_max");
    if (c.min_applicable < 1) bad.push_back("min_applicable");
    if (!(c.lambda_c >= 0.0 && c.lambda_c <= c.lambda_max)) bad.push_back("lambda_c");
    if (!(c.lambda_s >= 0.0 && c.lambda_s <= c.lambda_max)) bad.push_back("lambda_s");
    if (!(c.lambda_g >= 0.0 && c.lambda_g <= c.lambda_max)) bad.push_back("lambda_g");
    if (c.inner_iters < 1) bad.push_back("inner_iters");
    if (c.eval_every < 0) bad.push_back("eval_every");
    if (c.eval_tasks < 1) bad.push_back("eval_tasks");
    return bad;
}

inline LagrangeState make_lagrange_state(const TrainConfig& c) {
    LagrangeState s;
    s.lambda = {c.lambda_c, c.lambda_s, c.lambda_g};
    s.tau = {c.tau_c, c.tau_s, c.tau_g};
    s.eta_lambda = c.eta_lambda;
    s.lambda_max = c.lambda_max;
    s.min_applicable = c.min_applicable;
    return s;
}

// ---------------------------------------------------------------- small string utils

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// ---------------------------------------------------------------- record JSON schema

inline json to_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline BBox bbox_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("bbox: expected [x1,y1,x2,y2]");
    return BBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline json to_json(const RewardVector& rv) {
    json j;
    j["r_acc"] = rv.r_acc;
    j["r_fmt"] = rv.r_fmt;
    j["r_task"] = rv.r_task;
    j["r_c"] = rv.r_c ? json(*rv.r_c) : json(nullptr);
    j["m_c"] = rv.m_c() ? 1 : 0;
    j["r_s"] = rv.r_s ? json(*rv.r_s) : json(nullptr);
    j["m_s"] = rv.m_s() ? 1 : 0;
    j["r_g"] = rv.r_g ? json(*rv.r_g) : json(nullptr);
    j["m_g"] = rv.m_g() ? 1 : 0;
    return j;
}

inline RewardVector reward_vector_from_json(const json& j) {
    RewardVector rv;
    rv.r_acc = j.at("r_acc").get<double>();
    rv.r_fmt = j.at("r_fmt").get<double>();
    rv.r_task = j.at("r_task").get<double>();
    if (!j.at("r_c").is_null()) rv.r_c = j.at("r_c").get<double>();
    if (!j.at("r_s").is_null()) rv.r_s = j.at("r_s").get<double>();
    if (!j.at("r_g").is_null()) rv.r_g = j.at("r_g").get<double>();
    return rv;
}

inline json to_json(const StructuredResponse& r) {
    json boxes = json::array();
    for (const auto& b : r.bboxes) boxes.push_back(to_json(b));
    return json{{"think_text", r.think_text},
                {"answer_text", r.answer_text},
                {"bboxes", boxes},
                {"format_ok", r.format_ok}};
}

inline StructuredResponse structured_response_from_json(const json& j) {
    StructuredResponse r;
    r.think_text = j.at("think_text").get<std::string>();
    r.answer_text = j.at("answer_text").get<std::string>();
    for (const auto& b : j.at("bboxes")) r.bboxes.push_back(bbox_from_json(b));
    r.format_ok = j.at("format_ok").get<bool>();
    return r;
}

inline json to_json(const RolloutRecord& r) {
    return json{{"prompt_id", r.prompt_id},
                {"source_tag", to_string(r.source_tag)},
                {"action_sequence", r.action_sequence},
                {"response", to_json(r.response)},
                {"rewards", to_json(r.rewards)},
                {"old_logprob_per_step", r.old_logprob_per_step},
                {"advantage", r.advantage}};
}

inline RolloutRecord rollout_record_from_json(const json& j) {
    RolloutRecord r;
    r.prompt_id = j.at("prompt_id").get<std::int64_t>();
    r.source_tag = source_tag_from_string(j.at("source_tag").get<std::string>());
    r.action_sequence = j.at("action_sequence").get<std::vector<int>>();
    r.response = structured_response_from_json(j.at("response"));
    r.rewards = reward_vector_from_json(j.at("rewards"));
    r.old_logprob_per_step = j.at("old_logprob_per_step").get<std::vector<double>>();
    r.advantage = j.at("advantage").get<double>();
    return r;
}

// ---------------------------------------------------------------- JSONL + key=value files

inline void write_jsonl(const std::string& path, const std::vector<json>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& j : lines) out << j.dump() << "\n";
}

inline std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        out.push_back(json::parse(line));
    }
    return out;
}

// "key = value" per line, '#' starts a comment, blank lines ignored.
inline std::map<std::string, std::string> parse_key_value(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = val;
    }
    return kv;
}

inline std::map<std::string, std::string> load_key_value_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_key_value(ss.str());
}

} // namespace fgrpo
