// Alternating primal-dual training loop over the synthetic environment,
// greedy-decoding evaluation, and the training-dynamics CSV.
#pragma once

#include <array>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "advantage.hpp"
#include "core.hpp"
#include "dual.hpp"
#include "policy.hpp"
#include "rewards.hpp"
#include "synthenv.hpp"

namespace fgrpo {

struct StepLog {
    int step = 0;
    double acc = 0.0; // mean exact-match over all rollouts in the batch
    std::array<std::optional<double>, 3> cbar{};   // consistency, sentence, spatial
    std::array<std::optional<double>, 3> lambda{}; // absent for modes without multipliers
    double loss = 0.0;
    double clip_fraction = 0.0;
    double kl = 0.0;
    std::optional<double> ir_eval; // periodic held-out inconsistency rate
};

// --------------------------------------------------------------------- evaluation

// Greedy decoding over a task split. Consistency is judged for every sample
// (no accuracy mask); a sample with an empty normalized answer counts as
// inconsistent without a judge call. Judge failures drop out of the IR
// denominator instead of masquerading as verdicts.
inline MetricsReport evaluate(const PolicyParams& params, const EnvConfig& cfg,
                              const std::vector<SynthTask>& tasks, ConsistencyJudge& cjudge,
                              SentenceJudge& sjudge, const Lexicons& lexicons,
                              JudgeDiagnostics* diag = nullptr) {
    MetricsReport m;
    m.n_total = static_cast<int>(tasks.size());
    double grounding_sum = 0.0;
    for (const SynthTask& task : tasks) {
        const std::vector<int> actions = greedy_actions(params, task.context_id);
        const StructuredResponse resp = parse_response(decode_actions(cfg, task, actions));
        const std::string gt(1, option_letter(task.gt_answer));
        if (accuracy_reward(resp, gt) > 0.0) ++m.n_correct;

        if (normalize_answer(resp.answer_text).empty()) {
            ++m.n_no_answer;
            ++m.n_inconsistent;
        } else {
            const ConsistencyQuery cq{render_question(task), resp.think_text, resp.answer_text};
            const auto verdict = consistency_reward(cjudge, cq, 1.0, diag);
            if (verdict) {
                ++m.n_consistency_judged;
                if (*verdict == 0.0) ++m.n_inconsistent;
            }
        }

        std::vector<Sentence> sentences = split_sentences(resp.think_text);
        classify_sentences(sentences, lexicons);
        const auto score =
            sentence_grounding_score(sjudge, scene_ref(task), render_question(task), sentences, diag);
        if (score) {
            ++m.n_semantic_defined;
            grounding_sum += *score;
        }
        for (const Sentence& s : sentences) {
            if (s.verdict == SentenceVerdict::correct) ++m.n_sentences_correct;
            else if (s.verdict == SentenceVerdict::incorrect) ++m.n_sentences_incorrect;
            else if (s.verdict == SentenceVerdict::skip) ++m.n_sentences_skipped;
        }
    }
    if (m.n_total > 0)
        m.accuracy = static_cast<double>(m.n_correct) / static_cast<double>(m.n_total);
    const int ir_denom = m.n_no_answer + m.n_consistency_judged;
    if (ir_denom > 0)
        m.inconsistency_rate = static_cast<double>(m.n_inconsistent) / static_cast<double>(ir_denom);
    if (m.n_semantic_defined > 0)
        m.mean_semantic_grounding = grounding_sum / static_cast<double>(m.n_semantic_defined);
    return m;
}

// ------------------------------------------------------------------------ trainer

struct TrainResult {
    std::vector<StepLog> logs;
    MetricsReport final_metrics;
};

class Trainer {
public:
    static constexpr std::uint64_t kTrainRngStream = 1;
    static constexpr std::uint64_t kEvalRngStream = 2;
    static constexpr std::int64_t kEvalTaskIdBase = 1000000000;

    // Optional externally-owned judges override the built-in programmatic
    // pair (registry-backed) for both training rewards and evaluation.
    Trainer(const TrainConfig& cfg, const EnvConfig& env, ConsistencyJudge* cjudge = nullptr,
            SentenceJudge* sjudge = nullptr)
        : cfg_(cfg),
          env_(env),
          rng_(Rng::derive(cfg.seed, kTrainRngStream)),
          params_(make_policy_params(env)),
          lagrange_(make_lagrange_state(cfg)),
          lexicons_(default_lexicons()),
          train_sjudge_(env_, train_registry_),
          eval_sjudge_(env_, eval_registry_),
          external_cjudge_(cjudge),
          external_sjudge_(sjudge) {
        throw_on_bad_config();
        if (cfg_.optimizer == OptimizerKind::adamw) adam_ = make_adam_state(params_.logits);
        Rng eval_rng = Rng::derive(cfg_.seed, kEvalRngStream);
        eval_tasks_.reserve(static_cast<std::size_t>(cfg_.eval_tasks));
        for (int i = 0; i < cfg_.eval_tasks; ++i) {
            SynthTask t = sample_task(eval_rng, env_, kEvalTaskIdBase + i);
            eval_registry_.add(t);
            eval_tasks_.push_back(std::move(t));
        }
    }

    StepLog step() {
        ++step_index_;
        train_registry_.clear();
        std::vector<SynthTask> tasks;
        tasks.reserve(static_cast<std::size_t>(cfg_.batch_prompts));
        for (int i = 0; i < cfg_.batch_prompts; ++i) {
            tasks.push_back(sample_task(rng_, env_, next_task_id_++));
            train_registry_.add(tasks.back());
        }

        std::vector<RolloutGroup> batch;
        batch.reserve(tasks.size());
        for (const SynthTask& t : tasks)
            batch.push_back(sample_rollouts(params_, env_, t, cfg_.group_size, rng_));

        ConsistencyJudge& cj = external_cjudge_ ? *external_cjudge_
                                                : static_cast<ConsistencyJudge&>(train_cjudge_);
        SentenceJudge& sj = external_sjudge_ ? *external_sjudge_
                                             : static_cast<SentenceJudge&>(train_sjudge_);
        for (std::size_t g = 0; g < batch.size(); ++g) {
            const SynthTask& task = tasks[g];
            const std::string gt(1, option_letter(task.gt_answer));
            const std::optional<std::vector<BBox>> gt_boxes =
                task.source_tag == SourceTag::has_gt_boxes
                    ? std::optional<std::vector<BBox>>({task.gt_box})
                    : std::nullopt;
            const RewardContext ctx{scene_ref(task), render_question(task)};
            for (RolloutRecord& rec : batch[g].rollouts)
                rec.rewards = assemble_reward_vector(rec.response, gt, gt_boxes, task.source_tag,
                                                     ctx, cj, sj, lexicons_, &diag_)
                                  .rewards;
        }

        assign_advantages(batch);

        PolicyBatch pb;
        for (std::size_t g = 0; g < batch.size(); ++g)
            for (RolloutRecord& rec : batch[g].rollouts) {
                pb.rollouts.push_back(&rec);
                pb.context_ids.push_back(tasks[g].context_id);
                pb.advantages.push_back(rec.advantage);
            }

        LogitTable old_snapshot;
        const LogitTable* kl_ref = &params_.ref_logits;
        if (cfg_.kl_reference == KlReference::old) {
            old_snapshot = params_.logits;
            kl_ref = &old_snapshot;
        }

        StepLog log;
        log.step = step_index_;
        for (int it = 0; it < cfg_.inner_iters; ++it) {
            const SurrogateResult res =
                clipped_surrogate_loss(params_, pb, cfg_.clip_ratio, cfg_.kl_coef, kl_ref);
            if (it == 0) {
                log.loss = res.stats.loss;
                log.clip_fraction = res.stats.clip_fraction;
                log.kl = res.stats.kl;
            }
            if (cfg_.optimizer == OptimizerKind::sgd)
                apply_gradient(params_.logits, res.grad, cfg_.policy_lr);
            else
                apply_adamw(params_.logits, res.grad, adam_, cfg_.policy_lr);
        }

        for (Constraint k : kConstraints)
            log.cbar[static_cast<int>(k)] = batch_constraint_score(batch, k).cbar;
        if (cfg_.mode == TrainMode::fgrpo) step_duals(lagrange_, batch);
        if (cfg_.mode == TrainMode::fgrpo || cfg_.mode == TrainMode::fgrpo_fixed)
            for (Constraint k : kConstraints)
                log.lambda[static_cast<int>(k)] = lagrange_.lambda[static_cast<int>(k)];

        double acc_sum = 0.0;
        std::size_t n_rollouts = 0;
        for (const RolloutGroup& g : batch)
            for (const RolloutRecord& rec : g.rollouts) {
                acc_sum += rec.rewards.r_acc;
                ++n_rollouts;
            }
        if (n_rollouts > 0) log.acc = acc_sum / static_cast<double>(n_rollouts);

        if (cfg_.eval_every > 0 && step_index_ % cfg_.eval_every == 0)
            log.ir_eval = evaluate_now().inconsistency_rate;

        last_batch_ = std::move(batch);
        return log;
    }

    TrainResult run() {
        TrainResult out;
        out.logs.reserve(static_cast<std::size_t>(cfg_.total_steps));
        for (int s = 0; s < cfg_.total_steps; ++s) out.logs.push_back(step());
        out.final_metrics = evaluate_now();
        return out;
    }

    MetricsReport evaluate_now() {
        ConsistencyJudge& cj = external_cjudge_ ? *external_cjudge_
                                                : static_cast<ConsistencyJudge&>(train_cjudge_);
        SentenceJudge& sj = external_sjudge_ ? *external_sjudge_
                                             : static_cast<SentenceJudge&>(eval_sjudge_);
        return evaluate(params_, env_, eval_tasks_, cj, sj, lexicons_, &diag_);
    }

    const PolicyParams& params() const { return params_; }
    PolicyParams& mutable_params() { return params_; }
    const LagrangeState& lagrange() const { return lagrange_; }
    const std::vector<RolloutGroup>& last_batch() const { return last_batch_; }
    const std::vector<SynthTask>& eval_tasks() const { return eval_tasks_; }
    const JudgeDiagnostics& diagnostics() const { return diag_; }
    const TrainConfig& config() const { return cfg_; }
    const EnvConfig& env_config() const { return env_; }

private:
    void throw_on_bad_config() const {
        auto bad = validate_config(cfg_);
        const auto bad_env = validate_env_config(env_);
        bad.insert(bad.end(), bad_env.begin(), bad_env.end());
        if (!bad.empty()) {
            std::string msg = "invalid config:";
            for (const auto& key : bad) msg += " " + key;
            throw std::invalid_argument(msg);
        }
    }

    void assign_advantages(std::vector<RolloutGroup>& batch) {
        std::vector<std::vector<double>> per_group(batch.size());
        for (std::size_t g = 0; g < batch.size(); ++g) {
            const RolloutGroup& group = batch[g];
            switch (cfg_.mode) {
            case TrainMode::fgrpo:
            case TrainMode::fgrpo_fixed: {
                const auto breakdown = fgrpo_advantage(group, lagrange_, cfg_.group_norm_eps);
                per_group[g].reserve(breakdown.size());
                for (const auto& b : breakdown) per_group[g].push_back(b.combined);
                break;
            }
            case TrainMode::task_only: {
                std::vector<double> r(group.rollouts.size());
                for (std::size_t i = 0; i < r.size(); ++i) r[i] = group.rollouts[i].rewards.r_task;
                per_group[g] = group_normalize(r, cfg_.group_norm_eps);
                break;
            }
            case TrainMode::coupled_additive:
            case TrainMode::coupled_multiplicative: {
                std::vector<double> r(group.rollouts.size());
                for (std::size_t i = 0; i < r.size(); ++i)
                    r[i] = cfg_.mode == TrainMode::coupled_additive
                               ? coupled_additive_reward(group.rollouts[i].rewards)
                               : coupled_multiplicative_reward(group.rollouts[i].rewards);
                per_group[g] = group_normalize(r, cfg_.group_norm_eps);
                break;
            }
            }
        }
        if (cfg_.whiten_scope == WhitenScope::batch) {
            std::vector<double> flat;
            for (const auto& vals : per_group) flat.insert(flat.end(), vals.begin(), vals.end());
            const std::vector<double> white = whiten(flat, cfg_.group_norm_eps);
            std::size_t idx = 0;
            for (std::size_t g = 0; g < batch.size(); ++g)
                for (RolloutRecord& rec : batch[g].rollouts) rec.advantage = white[idx++];
        } else {
            for (std::size_t g = 0; g < batch.size(); ++g) {
                const std::vector<double> white = whiten(per_group[g], cfg_.group_norm_eps);
                for (std::size_t i = 0; i < white.size(); ++i)
                    batch[g].rollouts[i].advantage = white[i];
            }
        }
    }

    TrainConfig cfg_;
    EnvConfig env_;
    Rng rng_;
    std::int64_t next_task_id_ = 1;
    int step_index_ = 0;
    PolicyParams params_;
    LagrangeState lagrange_;
    AdamState adam_;
    Lexicons lexicons_;
    SynthJudgeRegistry train_registry_;
    SynthJudgeRegistry eval_registry_;
    ProgrammaticConsistencyJudge train_cjudge_;
    ProgrammaticSentenceJudge train_sjudge_;
    ProgrammaticSentenceJudge eval_sjudge_;
    ConsistencyJudge* external_cjudge_ = nullptr;
    SentenceJudge* external_sjudge_ = nullptr;
    std::vector<SynthTask> eval_tasks_;
    std::vector<RolloutGroup> last_batch_;
    JudgeDiagnostics diag_;
};

// ----------------------------------------------------------------- dynamics CSV

namespace trainer_detail {

inline std::string csv_cell(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string csv_cell(const std::optional<double>& v) {
    return v ? csv_cell(*v) : std::string();
}

} // namespace trainer_detail

inline constexpr const char* kDynamicsCsvHeader =
    "step,acc,cbar_C,cbar_S,cbar_G,lambda_C,lambda_S,lambda_G,loss,clip_frac,ir_eval";

inline std::string dynamics_csv(const std::vector<StepLog>& logs) {
    using trainer_detail::csv_cell;
    std::string out = kDynamicsCsvHeader;
    out += '\n';
    for (const StepLog& l : logs) {
        out += std::to_string(l.step);
        out += ',';
        out += csv_cell(l.acc);
        for (const auto& c : l.cbar) {
            out += ',';
            out += csv_cell(c);
        }
        for (const auto& c : l.lambda) {
            out += ',';
            out += csv_cell(c);
        }
        out += ',';
        out += csv_cell(l.loss);
        out += ',';
        out += csv_cell(l.clip_fraction);
        out += ',';
        out += csv_cell(l.ir_eval);
        out += '\n';
    }
    return out;
}

} // namespace fgrpo
