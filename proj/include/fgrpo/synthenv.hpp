// Synthetic multiple-choice scene environment with a tunable context shortcut,
// template rendering of action sequences, and programmatic judges.
#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "core.hpp"
#include "parse.hpp"
#include "rewards.hpp"

namespace fgrpo {

struct EnvConfig {
    int n_contexts = 8;
    int reasoning_slots = 3; // R
    int n_options = 4;       // A
    int n_background_facts = 8;
    int facts_per_context = 2;
    double shortcut_bias = 0.9;    // P(context alone reveals the answer)
    double gt_box_fraction = 0.5;  // P(task carries annotated boxes)
    int grid_dim = 3;              // candidate boxes on a grid_dim x grid_dim layout
    double box_size = 48.0;
    double box_stride = 24.0;

    int n_boxes() const { return grid_dim * grid_dim; }
    int n_facts() const { return n_background_facts + n_options; } // background + indicators
};

inline std::vector<std::string> validate_env_config(const EnvConfig& c) {
    std::vector<std::string> bad;
    if (c.n_contexts < 1) bad.push_back("env_contexts");
    if (c.reasoning_slots < 1) bad.push_back("env_reasoning_slots");
    if (c.n_options < 2 || c.n_options > 26) bad.push_back("env_options");
    if (c.n_background_facts < 1 || c.n_background_facts > 32) bad.push_back("env_background_facts");
    if (c.facts_per_context < 1 || c.facts_per_context > c.n_background_facts)
        bad.push_back("env_facts_per_context");
    if (!(c.shortcut_bias >= 0.0 && c.shortcut_bias <= 1.0)) bad.push_back("env_shortcut_bias");
    if (!(c.gt_box_fraction >= 0.0 && c.gt_box_fraction <= 1.0)) bad.push_back("env_gt_box_fraction");
    if (c.grid_dim < 1) bad.push_back("env_grid_dim");
    if (!(c.box_size > 0.0)) bad.push_back("env_box_size");
    if (!(c.box_stride > 0.0)) bad.push_back("env_box_stride");
    return bad;
}

struct SynthTask {
    std::int64_t task_id = 0;
    int context_id = 0;
    std::vector<int> fact_set; // sorted fact ids: context background + answer indicator
    std::vector<int> options;  // 0..A-1
    int gt_answer = 0;
    BBox gt_box;
    std::vector<BBox> candidate_boxes;
    double shortcut_bias = 0.0;
    SourceTag source_tag = SourceTag::no_gt_boxes;
};

// ---------------------------------------------------------------- planted structure

inline int planted_answer(const EnvConfig& cfg, int context_id) {
    return context_id % cfg.n_options;
}

inline int planted_box_index(const EnvConfig& cfg, int context_id) {
    return context_id % cfg.n_boxes();
}

inline std::vector<BBox> candidate_box_grid(const EnvConfig& cfg) {
    std::vector<BBox> boxes;
    boxes.reserve(cfg.n_boxes());
    for (int r = 0; r < cfg.grid_dim; ++r)
        for (int c = 0; c < cfg.grid_dim; ++c)
            boxes.push_back(BBox{c * cfg.box_stride, r * cfg.box_stride,
                                 c * cfg.box_stride + cfg.box_size,
                                 r * cfg.box_stride + cfg.box_size});
    return boxes;
}

inline std::vector<int> context_background_facts(const EnvConfig& cfg, int context_id) {
    std::vector<int> facts;
    const int n = cfg.n_background_facts;
    const int step = std::max(1, n / cfg.facts_per_context);
    for (int j = 0; j < cfg.facts_per_context; ++j) {
        int f = (context_id + j * step) % n;
        while (std::find(facts.begin(), facts.end(), f) != facts.end()) f = (f + 1) % n;
        facts.push_back(f);
    }
    std::sort(facts.begin(), facts.end());
    return facts;
}

inline int indicator_fact(const EnvConfig& cfg, int answer) {
    return cfg.n_background_facts + answer;
}

// Draw order is part of the deterministic contract: context, answer, source tag.
inline SynthTask sample_task(Rng& rng, const EnvConfig& cfg, std::int64_t task_id) {
    SynthTask t;
    t.task_id = task_id;
    t.context_id = static_cast<int>(rng.uniform_index(cfg.n_contexts));
    const bool shortcut = rng.bernoulli(cfg.shortcut_bias);
    const int noise_answer = static_cast<int>(rng.uniform_index(cfg.n_options));
    t.gt_answer = shortcut ? planted_answer(cfg, t.context_id) : noise_answer;
    t.source_tag = rng.bernoulli(cfg.gt_box_fraction) ? SourceTag::has_gt_boxes
                                                      : SourceTag::no_gt_boxes;
    t.fact_set = context_background_facts(cfg, t.context_id);
    t.fact_set.push_back(indicator_fact(cfg, t.gt_answer));
    std::sort(t.fact_set.begin(), t.fact_set.end());
    for (int j = 0; j < cfg.n_options; ++j) t.options.push_back(j);
    t.candidate_boxes = candidate_box_grid(cfg);
    t.gt_box = t.candidate_boxes[planted_box_index(cfg, t.context_id)];
    t.shortcut_bias = cfg.shortcut_bias;
    return t;
}

// ---------------------------------------------------------------- action schema

// Slot layout: reasoning_slots tokens (fact claim or conclusion), one answer id,
// one candidate-box index or NONE.
struct ActionSchema {
    int reasoning_slots = 0;
    int n_facts = 0;
    int n_options = 0;
    int n_boxes = 0;

    int slots() const { return reasoning_slots + 2; }
    int answer_slot() const { return reasoning_slots; }
    int box_slot() const { return reasoning_slots + 1; }
    int none_box() const { return n_boxes; }
    int actions_in_slot(int slot) const {
        if (slot < reasoning_slots) return n_facts + n_options;
        if (slot == answer_slot()) return n_options;
        return n_boxes + 1;
    }
    bool is_conclusion_token(int action) const { return action >= n_facts; }
    int conclusion_answer(int action) const { return action - n_facts; }
    int conclusion_token(int answer) const { return n_facts + answer; }
};

inline ActionSchema make_schema(const EnvConfig& cfg) {
    return ActionSchema{cfg.reasoning_slots, cfg.n_facts(), cfg.n_options, cfg.n_boxes()};
}

// ---------------------------------------------------------------- text rendering

inline char option_letter(int answer) { return static_cast<char>('A' + answer); }

namespace synth_detail {

inline const char* kObjects[8] = {"ball", "chair", "lamp", "tree", "car", "door", "sign", "cup"};
inline const char* kColors[4] = {"red", "blue", "green", "black"};
inline const char* kRelations[4] = {"left of", "right of", "above", "below"};

inline std::string format_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

} // namespace synth_detail

inline std::string fact_sentence(const EnvConfig& cfg, int fact_id) {
    using namespace synth_detail;
    if (fact_id < cfg.n_background_facts) {
        const int k = fact_id;
        std::string s = "The ";
        s += kColors[k % 4];
        s += " ";
        s += kObjects[k % 8];
        s += " is ";
        s += kRelations[(k / 2) % 4];
        s += " the ";
        s += kObjects[(k + 3) % 8];
        s += ".";
        return s;
    }
    const int answer = fact_id - cfg.n_background_facts;
    return std::string("The marker is near option ") + option_letter(answer) + ".";
}

inline std::string conclusion_sentence(int answer) {
    return std::string("Therefore the answer is ") + option_letter(answer) + ".";
}

inline std::string box_sentence(const BBox& b) {
    using synth_detail::format_coord;
    return "The key region is <bbox>[" + format_coord(b.x1) + "," + format_coord(b.y1) + "," +
           format_coord(b.x2) + "," + format_coord(b.y2) + "]</bbox>.";
}

inline std::string render_question(const SynthTask& t) {
    return "Which option does scene " + std::to_string(t.context_id) + " indicate?";
}

inline std::string scene_ref(const SynthTask& t) { return "scene:" + std::to_string(t.task_id); }

namespace synth_detail {

inline void check_sequence(const ActionSchema& schema, const std::vector<int>& seq) {
    if (static_cast<int>(seq.size()) != schema.slots())
        throw std::invalid_argument("action sequence: expected " + std::to_string(schema.slots()) +
                                    " actions, got " + std::to_string(seq.size()));
    for (int s = 0; s < schema.slots(); ++s)
        if (seq[s] < 0 || seq[s] >= schema.actions_in_slot(s))
            throw std::invalid_argument("action sequence: slot " + std::to_string(s) +
                                        " action out of range");
}

inline std::string render_think(const EnvConfig& cfg, const ActionSchema& schema,
                                const SynthTask& task, const std::vector<int>& seq) {
    std::string think;
    for (int s = 0; s < schema.reasoning_slots; ++s) {
        if (!think.empty()) think += " ";
        const int a = seq[s];
        think += schema.is_conclusion_token(a) ? conclusion_sentence(schema.conclusion_answer(a))
                                               : fact_sentence(cfg, a);
    }
    const int box = seq[schema.box_slot()];
    if (box != schema.none_box()) {
        if (!think.empty()) think += " ";
        think += box_sentence(task.candidate_boxes[box]);
    }
    return think;
}

} // namespace synth_detail

// Renders a full legal action sequence into the canonical response template.
// Malformed sequences are a hard error.
inline std::string decode_actions(const EnvConfig& cfg, const SynthTask& task,
                                  const std::vector<int>& seq) {
    const ActionSchema schema = make_schema(cfg);
    synth_detail::check_sequence(schema, seq);
    return "<think>" + synth_detail::render_think(cfg, schema, task, seq) + "</think><answer>" +
           option_letter(seq[schema.answer_slot()]) + "</answer>";
}

// Deliberately broken template (unterminated reasoning block) for negative tests.
inline std::string decode_actions_malformed(const EnvConfig& cfg, const SynthTask& task,
                                            const std::vector<int>& seq) {
    const ActionSchema schema = make_schema(cfg);
    synth_detail::check_sequence(schema, seq);
    return "<think>" + synth_detail::render_think(cfg, schema, task, seq) + "<answer>" +
           option_letter(seq[schema.answer_slot()]) + "</answer>";
}

// ---------------------------------------------------------------- programmatic judges

// Conclusion sentences are "Therefore the answer is X." lines; the trace is
// consistent when exactly one exists and it names the final answer.
inline ConsistencyVerdict programmatic_consistency_verdict(const ConsistencyQuery& q) {
    static const std::string kPrefix = "therefore the answer is ";
    std::vector<std::string> conclusions;
    for (const auto& s : split_sentences(q.reasoning)) {
        const std::string low = lower(s.text);
        if (low.compare(0, kPrefix.size(), kPrefix) == 0)
            conclusions.push_back(normalize_answer(s.text.substr(kPrefix.size())));
    }
    if (conclusions.size() != 1) return ConsistencyVerdict::no;
    const std::string answer = normalize_answer(q.answer);
    if (answer.empty()) return ConsistencyVerdict::no;
    return conclusions[0] == answer ? ConsistencyVerdict::yes : ConsistencyVerdict::no;
}

class ProgrammaticConsistencyJudge : public ConsistencyJudge {
public:
    std::optional<ConsistencyVerdict> judge(const ConsistencyQuery& q) override {
        return programmatic_consistency_verdict(q);
    }
};

// Sentence-level programmatic verdicts against a known scene:
//   verbatim repeat of an earlier sentence        -> SKIP
//   conclusion / meta sentence                    -> SKIP
//   fact claim                                    -> CORRECT iff in the task fact set
//   box mention                                   -> CORRECT iff exactly the scene box
//   anything unrecognized                         -> SKIP
inline SentenceJudgement programmatic_sentence_judge(const SentenceQuery& q, const SynthTask& task,
                                                     const EnvConfig& cfg,
                                                     int* unrecognized = nullptr) {
    const std::string target = trim(q.target_sentence);
    for (const auto& prev : q.context_sentences)
        if (trim(prev) == target) return SentenceJudgement::skip;

    static const std::string kConclusion = "therefore the answer is ";
    if (lower(target).compare(0, kConclusion.size(), kConclusion) == 0)
        return SentenceJudgement::skip;

    for (int f = 0; f < cfg.n_facts(); ++f) {
        if (target == fact_sentence(cfg, f)) {
            const bool present =
                std::find(task.fact_set.begin(), task.fact_set.end(), f) != task.fact_set.end();
            return present ? SentenceJudgement::correct : SentenceJudgement::incorrect;
        }
    }

    if (target.find("<bbox>") != std::string::npos) {
        const StructuredResponse boxed = parse_response("<think>" + target + "</think><answer></answer>");
        if (boxed.bboxes.size() == 1)
            return boxed.bboxes[0] == task.gt_box ? SentenceJudgement::correct
                                                  : SentenceJudgement::incorrect;
    }

    if (unrecognized) ++*unrecognized;
    return SentenceJudgement::skip;
}

class SynthJudgeRegistry {
public:
    void add(const SynthTask& t) { tasks_[scene_ref(t)] = t; }
    void clear() { tasks_.clear(); }
    const SynthTask* find(const std::string& ref) const {
        const auto it = tasks_.find(ref);
        return it == tasks_.end() ? nullptr : &it->second;
    }

private:
    std::map<std::string, SynthTask> tasks_;
};

class ProgrammaticSentenceJudge : public SentenceJudge {
public:
    ProgrammaticSentenceJudge(const EnvConfig& cfg, const SynthJudgeRegistry& registry)
        : cfg_(&cfg), registry_(&registry) {}

    std::optional<SentenceJudgement> judge(const SentenceQuery& q) override {
        const SynthTask* task = registry_->find(q.image_ref);
        if (!task) {
            ++unknown_scenes_;
            return std::nullopt; // judge failure: scene unavailable
        }
        return programmatic_sentence_judge(q, *task, *cfg_, &unrecognized_);
    }

    int unknown_scenes() const { return unknown_scenes_; }
    int unrecognized_sentences() const { return unrecognized_; }

private:
    const EnvConfig* cfg_;
    const SynthJudgeRegistry* registry_;
    int unknown_scenes_ = 0;
    int unrecognized_ = 0;
};

// ---------------------------------------------------------------- task serialization

inline json to_json(const SynthTask& t) {
    json boxes = json::array();
    for (const auto& b : t.candidate_boxes) boxes.push_back(to_json(b));
    return json{{"task_id", t.task_id},
                {"context_id", t.context_id},
                {"fact_set", t.fact_set},
                {"options", t.options},
                {"gt_answer", t.gt_answer},
                {"gt_box", to_json(t.gt_box)},
                {"candidate_boxes", boxes},
                {"shortcut_bias", t.shortcut_bias},
                {"source_tag", to_string(t.source_tag)}};
}

inline SynthTask synth_task_from_json(const json& j) {
    SynthTask t;
    t.task_id = j.at("task_id").get<std::int64_t>();
    t.context_id = j.at("context_id").get<int>();
    t.fact_set = j.at("fact_set").get<std::vector<int>>();
    t.options = j.at("options").get<std::vector<int>>();
    t.gt_answer = j.at("gt_answer").get<int>();
    t.gt_box = bbox_from_json(j.at("gt_box"));
    for (const auto& b : j.at("candidate_boxes")) t.candidate_boxes.push_back(bbox_from_json(b));
    t.shortcut_bias = j.at("shortcut_bias").get<double>();
    t.source_tag = source_tag_from_string(j.at("source_tag").get<std::string>());
    return t;
}

} // namespace fgrpo
