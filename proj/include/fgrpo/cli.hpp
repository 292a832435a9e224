// Run configuration (key=value files plus overrides), run-directory artifacts,
// and the train / score / mcts-gen / eval entry points.
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "judge_client.hpp"
#include "mcts.hpp"
#include "trainer.hpp"

namespace fgrpo {

struct MctsGenConfig {
    int n_sim = 8;
    double c_puct = 2.0;
    int k = 3;
    int n_rollouts = 2;
    int d_max = 10;
    int quota_direct = 8;
    int quota_corrected = 2;
    double teacher_skill = 0.7;
    int tasks = 16;
};

struct RunConfig {
    TrainConfig train;
    EnvConfig env;
    MctsGenConfig mcts;
};

// ----------------------------------------------------------- key=value mapping

namespace cli_detail {

inline long long parse_ll(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': bad integer '" + v + "'");
    }
}

inline int parse_int(const std::string& key, const std::string& v) {
    return static_cast<int>(parse_ll(key, v));
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': bad integer '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': bad number '" + v + "'");
    }
}

inline std::string format_double(double v) { return json(v).dump(); }

} // namespace cli_detail

inline void apply_config_entry(RunConfig& rc, const std::string& key, const std::string& value) {
    using cli_detail::parse_double;
    using cli_detail::parse_int;
    using cli_detail::parse_u64;
    TrainConfig& t = rc.train;
    EnvConfig& e = rc.env;
    MctsGenConfig& m = rc.mcts;

    if (key == "mode") {
        try {
            t.mode = train_mode_from_string(value);
        } catch (const std::exception&) {
            throw std::invalid_argument("config key 'mode': unknown mode '" + value + "'");
        }
    } else if (key == "seed") t.seed = parse_u64(key, value);
    else if (key == "group_size") t.group_size = parse_int(key, value);
    else if (key == "batch_prompts") t.batch_prompts = parse_int(key, value);
    else if (key == "total_steps") t.total_steps = parse_int(key, value);
    else if (key == "clip_ratio") t.clip_ratio = parse_double(key, value);
    else if (key == "kl_coef") t.kl_coef = parse_double(key, value);
    else if (key == "group_norm_eps") t.group_norm_eps = parse_double(key, value);
    else if (key == "policy_lr") t.policy_lr = parse_double(key, value);
    else if (key == "tau_c") t.tau_c = parse_double(key, value);
    else if (key == "tau_s") t.tau_s = parse_double(key, value);
    else if (key == "tau_g") t.tau_g = parse_double(key, value);
    else if (key == "lambda_c") t.lambda_c = parse_double(key, value);
    else if (key == "lambda_s") t.lambda_s = parse_double(key, value);
    else if (key == "lambda_g") t.lambda_g = parse_double(key, value);
    else if (key == "eta_lambda") t.eta_lambda = parse_double(key, value);
    else if (key == "lambda_max") t.lambda_max = parse_double(key, value);
    else if (key == "min_applicable") t.min_applicable = parse_int(key, value);
    else if (key == "whiten_scope") {
        if (value == "batch") t.whiten_scope = WhitenScope::batch;
        else if (value == "group") t.whiten_scope = WhitenScope::group;
        else throw std::invalid_argument("config key 'whiten_scope': expected batch|group, got '" +
                                         value + "'");
    } else if (key == "kl_reference") {
        if (value == "init") t.kl_reference = KlReference::init;
        else if (value == "old") t.kl_reference = KlReference::old;
        else throw std::invalid_argument("config key 'kl_reference': expected init|old, got '" +
                                         value + "'");
    } else if (key == "optimizer") {
        if (value == "sgd") t.optimizer = OptimizerKind::sgd;
        else if (value == "adamw") t.optimizer = OptimizerKind::adamw;
        else throw std::invalid_argument("config key 'optimizer': expected sgd|adamw, got '" +
                                         value + "'");
    } else if (key == "inner_iters") t.inner_iters = parse_int(key, value);
    else if (key == "eval_every") t.eval_every = parse_int(key, value);
    else if (key == "eval_tasks") t.eval_tasks = parse_int(key, value);
    else if (key == "env_contexts") e.n_contexts = parse_int(key, value);
    else if (key == "env_reasoning_slots") e.reasoning_slots = parse_int(key, value);
    else if (key == "env_options") e.n_options = parse_int(key, value);
    else if (key == "env_background_facts") e.n_background_facts = parse_int(key, value);
    else if (key == "env_facts_per_context") e.facts_per_context = parse_int(key, value);
    else if (key == "env_shortcut_bias") e.shortcut_bias = parse_double(key, value);
    else if (key == "env_gt_box_fraction") e.gt_box_fraction = parse_double(key, value);
    else if (key == "env_grid_dim") e.grid_dim = parse_int(key, value);
    else if (key == "env_box_size") e.box_size = parse_double(key, value);
    else if (key == "env_box_stride") e.box_stride = parse_double(key, value);
    else if (key == "mcts_n_sim") m.n_sim = parse_int(key, value);
    else if (key == "mcts_c_puct") m.c_puct = parse_double(key, value);
    else if (key == "mcts_k") m.k = parse_int(key, value);
    else if (key == "mcts_n_rollouts") m.n_rollouts = parse_int(key, value);
    else if (key == "mcts_d_max") m.d_max = parse_int(key, value);
    else if (key == "mcts_quota_direct") m.quota_direct = parse_int(key, value);
    else if (key == "mcts_quota_corrected") m.quota_corrected = parse_int(key, value);
    else if (key == "mcts_teacher_skill") m.teacher_skill = parse_double(key, value);
    else if (key == "mcts_tasks") m.tasks = parse_int(key, value);
    else throw std::invalid_argument("unknown config key: " + key);
}

inline void apply_config_file(RunConfig& rc, const std::string& path) {
    for (const auto& [k, v] : load_key_value_file(path)) apply_config_entry(rc, k, v);
}

inline std::vector<std::string> validate_run_config(const RunConfig& rc) {
    std::vector<std::string> bad = validate_config(rc.train);
    const auto env_bad = validate_env_config(rc.env);
    bad.insert(bad.end(), env_bad.begin(), env_bad.end());
    const MctsGenConfig& m = rc.mcts;
    if (m.n_sim < 0) bad.push_back("mcts_n_sim");
    if (!(m.c_puct >= 0.0)) bad.push_back("mcts_c_puct");
    if (m.k < 1) bad.push_back("mcts_k");
    if (m.n_rollouts < 1) bad.push_back("mcts_n_rollouts");
    if (m.d_max < 0) bad.push_back("mcts_d_max");
    if (m.quota_direct < 0) bad.push_back("mcts_quota_direct");
    if (m.quota_corrected < 0) bad.push_back("mcts_quota_corrected");
    if (!(m.teacher_skill >= 0.0 && m.teacher_skill <= 1.0)) bad.push_back("mcts_teacher_skill");
    if (m.tasks < 0) bad.push_back("mcts_tasks");
    return bad;
}

// Full canonical snapshot; feeding it back through apply_config_file
// reconstructs the same RunConfig bit for bit.
inline std::string config_snapshot(const RunConfig& rc) {
    using cli_detail::format_double;
    const TrainConfig& t = rc.train;
    const EnvConfig& e = rc.env;
    const MctsGenConfig& m = rc.mcts;
    std::string out;
    auto put = [&out](const std::string& k, const std::string& v) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    };
    put("mode", to_string(t.mode));
    put("seed", std::to_string(t.seed));
    put("group_size", std::to_string(t.group_size));
    put("batch_prompts", std::to_string(t.batch_prompts));
    put("total_steps", std::to_string(t.total_steps));
    put("clip_ratio", format_double(t.clip_ratio));
    put("kl_coef", format_double(t.kl_coef));
    put("group_norm_eps", format_double(t.group_norm_eps));
    put("policy_lr", format_double(t.policy_lr));
    put("tau_c", format_double(t.tau_c));
    put("tau_s", format_double(t.tau_s));
    put("tau_g", format_double(t.tau_g));
    put("lambda_c", format_double(t.lambda_c));
    put("lambda_s", format_double(t.lambda_s));
    put("lambda_g", format_double(t.lambda_g));
    put("eta_lambda", format_double(t.eta_lambda));
    put("lambda_max", format_double(t.lambda_max));
    put("min_applicable", std::to_string(t.min_applicable));
    put("whiten_scope", t.whiten_scope == WhitenScope::batch ? "batch" : "group");
    put("kl_reference", t.kl_reference == KlReference::init ? "init" : "old");
    put("optimizer", t.optimizer == OptimizerKind::sgd ? "sgd" : "adamw");
    put("inner_iters", std::to_string(t.inner_iters));
    put("eval_every", std::to_string(t.eval_every));
    put("eval_tasks", std::to_string(t.eval_tasks));
    put("env_contexts", std::to_string(e.n_contexts));
    put("env_reasoning_slots", std::to_string(e.reasoning_slots));
    put("env_options", std::to_string(e.n_options));
    put("env_background_facts", std::to_string(e.n_background_facts));
    put("env_facts_per_context", std::to_string(e.facts_per_context));
    put("env_shortcut_bias", format_double(e.shortcut_bias));
    put("env_gt_box_fraction", format_double(e.gt_box_fraction));
    put("env_grid_dim", std::to_string(e.grid_dim));
    put("env_box_size", format_double(e.box_size));
    put("env_box_stride", format_double(e.box_stride));
    put("mcts_n_sim", std::to_string(m.n_sim));
    put("mcts_c_puct", format_double(m.c_puct));
    put("mcts_k", std::to_string(m.k));
    put("mcts_n_rollouts", std::to_string(m.n_rollouts));
    put("mcts_d_max", std::to_string(m.d_max));
    put("mcts_quota_direct", std::to_string(m.quota_direct));
    put("mcts_quota_corrected", std::to_string(m.quota_corrected));
    put("mcts_teacher_skill", format_double(m.teacher_skill));
    put("mcts_tasks", std::to_string(m.tasks));
    return out;
}

// ------------------------------------------------------------------ file helpers

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline json sentence_to_json(const Sentence& s) {
    return json{{"index", s.index},
                {"text", s.text},
                {"kind", to_string(s.kind)},
                {"verdict", to_string(s.verdict)}};
}

// ------------------------------------------------------------------------ train

inline int cmd_train(const RunConfig& rc, const std::string& out_dir, std::ostream& err) {
    const auto bad = validate_run_config(rc);
    if (!bad.empty()) {
        err << "invalid config:";
        for (const auto& k : bad) err << " " << k;
        err << "\n";
        return 1;
    }
    std::filesystem::create_directories(out_dir);
    Trainer trainer(rc.train, rc.env);
    const TrainResult result = trainer.run();

    write_text_file(out_dir + "/config.snapshot", config_snapshot(rc));
    write_text_file(out_dir + "/dynamics.csv", dynamics_csv(result.logs));
    write_text_file(out_dir + "/metrics.json", to_json(result.final_metrics).dump(2) + "\n");
    write_text_file(out_dir + "/params.json", policy_params_to_json(trainer.params()).dump() + "\n");

    std::vector<json> rollout_lines;
    for (const RolloutGroup& g : trainer.last_batch())
        for (const RolloutRecord& r : g.rollouts) rollout_lines.push_back(to_json(r));
    write_jsonl(out_dir + "/rollouts.jsonl", rollout_lines);
    return 0;
}

// ------------------------------------------------------------------------- eval

inline std::vector<SynthTask> load_task_file(const std::string& path) {
    std::vector<SynthTask> tasks;
    for (const json& j : read_jsonl(path)) tasks.push_back(synth_task_from_json(j));
    return tasks;
}

inline std::vector<SynthTask> generate_eval_tasks(const RunConfig& rc) {
    Rng rng = Rng::derive(rc.train.seed, Trainer::kEvalRngStream);
    std::vector<SynthTask> tasks;
    tasks.reserve(static_cast<std::size_t>(rc.train.eval_tasks));
    for (int i = 0; i < rc.train.eval_tasks; ++i)
        tasks.push_back(sample_task(rng, rc.env, Trainer::kEvalTaskIdBase + i));
    return tasks;
}

inline int cmd_eval(const RunConfig& rc, const std::string& params_path,
                    const std::string& tasks_path, const std::string& out_path, std::ostream& out,
                    std::ostream& err) {
    try {
        const PolicyParams params = policy_params_from_json(json::parse(read_text_file(params_path)));
        const std::vector<SynthTask> tasks =
            tasks_path.empty() ? generate_eval_tasks(rc) : load_task_file(tasks_path);
        SynthJudgeRegistry registry;
        for (const SynthTask& t : tasks) registry.add(t);
        ProgrammaticConsistencyJudge cjudge;
        ProgrammaticSentenceJudge sjudge(rc.env, registry);
        const Lexicons lexicons = default_lexicons();
        const MetricsReport report = evaluate(params, rc.env, tasks, cjudge, sjudge, lexicons);
        const std::string text = to_json(report).dump(2) + "\n";
        if (out_path.empty()) out << text;
        else write_text_file(out_path, text);
        return 0;
    } catch (const std::exception& ex) {
        err << "eval failed: " << ex.what() << "\n";
        return 1;
    }
}

// ------------------------------------------------------------------------ score

struct ScoreOptions {
    std::string in_path;
    std::string out_path;
    std::string judge = "programmatic"; // programmatic | remote
    std::string endpoint;               // remote only; falls back to FGRPO_JUDGE_ENDPOINT
    std::string tasks_path;             // scene definitions for the programmatic judges
    std::string prefix_lexicon_path;    // overrides the built-in trivial-prefix list
    std::string keyword_lexicon_path;   // overrides the built-in visual-keyword list
    bool judge_all = false;             // also judge wrong-answer records for the unmasked IR
};

// Scoring follows the training mask contract: the consistency judge runs only
// on correct-answer records, so the summary's inconsistency numbers count
// explicit NO verdicts. --judge-all adds the evaluation-style unmasked rate.
inline int cmd_score(const RunConfig& rc, const ScoreOptions& opts, std::ostream& out,
                     std::ostream& err) {
    std::ifstream in(opts.in_path, std::ios::binary);
    if (!in) {
        err << "cannot read " << opts.in_path << "\n";
        return 1;
    }

    SynthJudgeRegistry registry;
    if (!opts.tasks_path.empty())
        for (const SynthTask& t : load_task_file(opts.tasks_path)) registry.add(t);

    ProgrammaticConsistencyJudge prog_cjudge;
    ProgrammaticSentenceJudge prog_sjudge(rc.env, registry);
    std::unique_ptr<RemoteConsistencyJudge> remote_cjudge;
    std::unique_ptr<RemoteSentenceJudge> remote_sjudge;
    ConsistencyJudge* cjudge = &prog_cjudge;
    SentenceJudge* sjudge = &prog_sjudge;
    if (opts.judge == "remote") {
        RemoteJudgeConfig jc;
        jc.endpoint = opts.endpoint.empty() ? judge_endpoint_from_env() : opts.endpoint;
        if (jc.endpoint.empty()) {
            err << "remote judge requested but no endpoint given "
                   "(--endpoint or FGRPO_JUDGE_ENDPOINT)\n";
            return 1;
        }
        remote_cjudge = std::make_unique<RemoteConsistencyJudge>(jc);
        remote_sjudge = std::make_unique<RemoteSentenceJudge>(jc);
        cjudge = remote_cjudge.get();
        sjudge = remote_sjudge.get();
    } else if (opts.judge != "programmatic") {
        err << "unknown judge backend: " << opts.judge << "\n";
        return 1;
    }

    Lexicons lexicons = default_lexicons();
    if (!opts.prefix_lexicon_path.empty())
        lexicons.trivial_prefixes = load_lexicon_file(opts.prefix_lexicon_path);
    if (!opts.keyword_lexicon_path.empty()) {
        lexicons.visual_keywords.clear();
        for (auto& t : load_lexicon_file(opts.keyword_lexicon_path))
            lexicons.visual_keywords.insert(lower(t));
    }
    JudgeDiagnostics diag;
    MetricsReport report;
    double grounding_sum = 0.0;
    int unmasked_inconsistent = 0, unmasked_judged = 0, unmasked_no_answer = 0;
    std::vector<json> out_lines;
    std::vector<std::string> malformed;
    int lineno = 0, total_records = 0;

    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        ++total_records;
        try {
            const json j = json::parse(line);
            const std::int64_t prompt_id = j.at("prompt_id").get<std::int64_t>();
            const std::string question = j.at("question").get<std::string>();
            const std::string raw = j.at("raw_response").get<std::string>();
            const std::string gt_answer = j.at("gt_answer").get<std::string>();
            const SourceTag tag = source_tag_from_string(j.at("source_tag").get<std::string>());
            std::optional<std::vector<BBox>> gt_boxes;
            if (j.contains("gt_boxes") && !j.at("gt_boxes").is_null()) {
                std::vector<BBox> boxes;
                for (const json& b : j.at("gt_boxes")) boxes.push_back(bbox_from_json(b));
                gt_boxes = std::move(boxes);
            }

            const StructuredResponse resp = parse_response(raw);
            const RewardContext ctx{"scene:" + std::to_string(prompt_id), question};
            AssembledReward assembled = assemble_reward_vector(resp, gt_answer, gt_boxes, tag, ctx,
                                                               *cjudge, *sjudge, lexicons, &diag);
            const RewardVector& rv = assembled.rewards;

            ++report.n_total;
            if (rv.r_acc > 0.0) ++report.n_correct;
            if (rv.r_c) {
                ++report.n_consistency_judged;
                if (*rv.r_c == 0.0) ++report.n_inconsistent;
            }
            if (rv.r_s) {
                ++report.n_semantic_defined;
                grounding_sum += *rv.r_s;
            }
            for (const Sentence& s : assembled.sentences) {
                if (s.verdict == SentenceVerdict::correct) ++report.n_sentences_correct;
                else if (s.verdict == SentenceVerdict::incorrect) ++report.n_sentences_incorrect;
                else if (s.verdict == SentenceVerdict::skip) ++report.n_sentences_skipped;
            }

            if (opts.judge_all) {
                if (normalize_answer(resp.answer_text).empty()) {
                    ++unmasked_no_answer;
                    ++unmasked_inconsistent;
                } else {
                    const ConsistencyQuery cq{question, resp.think_text, resp.answer_text};
                    const auto v = consistency_reward(*cjudge, cq, 1.0, &diag);
                    if (v) {
                        ++unmasked_judged;
                        if (*v == 0.0) ++unmasked_inconsistent;
                    }
                }
            }

            json rec{{"prompt_id", prompt_id},
                     {"format_ok", resp.format_ok},
                     {"rewards", to_json(rv)}};
            json sentences = json::array();
            for (const Sentence& s : assembled.sentences) sentences.push_back(sentence_to_json(s));
            rec["sentences"] = std::move(sentences);
            out_lines.push_back(std::move(rec));
        } catch (const std::exception& ex) {
            malformed.push_back("line " + std::to_string(lineno) + ": " + ex.what());
        }
    }

    if (report.n_total > 0)
        report.accuracy = static_cast<double>(report.n_correct) / report.n_total;
    if (report.n_consistency_judged > 0)
        report.inconsistency_rate =
            static_cast<double>(report.n_inconsistent) / report.n_consistency_judged;
    if (report.n_semantic_defined > 0)
        report.mean_semantic_grounding = grounding_sum / report.n_semantic_defined;
    report.n_no_answer = unmasked_no_answer;

    if (!opts.out_path.empty()) write_jsonl(opts.out_path, out_lines);

    json summary = to_json(report);
    summary["consistency_judge_calls"] = diag.consistency_calls;
    summary["consistency_judge_failures"] = diag.consistency_failures;
    summary["sentence_judge_calls"] = diag.sentence_calls;
    summary["sentence_judge_failures"] = diag.sentence_failures;
    summary["malformed_lines"] = static_cast<int>(malformed.size());
    summary["warnings"] = diag.consistency_failures + diag.sentence_failures +
                          static_cast<int>(malformed.size());
    if (opts.judge_all) {
        const int denom = unmasked_no_answer + unmasked_judged;
        summary["unmasked_inconsistency_rate"] =
            denom > 0 ? static_cast<double>(unmasked_inconsistent) / denom : 0.0;
        summary["unmasked_judged"] = denom;
    }
    out << summary.dump(2) << "\n";

    for (const std::string& m : malformed) err << m << "\n";
    if (total_records > 0 &&
        static_cast<double>(malformed.size()) / static_cast<double>(total_records) >= 0.01)
        return 1;
    return 0;
}

// --------------------------------------------------------------------- mcts-gen

inline int cmd_mcts_gen(const RunConfig& rc, const std::string& out_path, std::ostream& err) {
    const auto bad = validate_run_config(rc);
    if (!bad.empty()) {
        err << "invalid config:";
        for (const auto& k : bad) err << " " << k;
        err << "\n";
        return 1;
    }
    static constexpr std::uint64_t kMctsRngStream = 3;
    Rng rng = Rng::derive(rc.train.seed, kMctsRngStream);
    SearchParams sp;
    sp.n_sim = rc.mcts.n_sim;
    sp.c_puct = rc.mcts.c_puct;
    sp.k = rc.mcts.k;
    sp.n_rollouts = rc.mcts.n_rollouts;
    sp.d_max = rc.mcts.d_max;
    const LinearizeQuota quota{rc.mcts.quota_direct, rc.mcts.quota_corrected};

    std::vector<json> lines;
    for (int i = 1; i <= rc.mcts.tasks; ++i) {
        const SynthTask task = sample_task(rng, rc.env, i);
        SynthTeacher teacher(rc.env, task, rc.mcts.teacher_skill);
        const SearchResult result = run_search(teacher, sp, rng);
        for (const Chain& chain : linearize(*result.root, quota))
            lines.push_back(json{{"task_id", task.task_id},
                                 {"kind", chain.kind == ChainKind::direct ? "direct" : "corrected"},
                                 {"text", render_chain(rc.env, task, chain)}});
    }
    write_jsonl(out_path, lines);
    return 0;
}

} // namespace fgrpo
