#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fgrpo/cli.hpp"

namespace {

// --config file first, then repeatable --set key=value overrides, then the
// dedicated convenience flags. Later sources win.
struct CommonConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value configuration file");
    cmd->add_option("--set", args.overrides, "override a single config key (key=value)")
        ->type_name("KEY=VALUE");
}

void apply_overrides(fgrpo::RunConfig& rc, const CommonConfigArgs& args) {
    if (!args.config_path.empty()) fgrpo::apply_config_file(rc, args.config_path);
    for (const std::string& kv : args.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        fgrpo::apply_config_entry(rc, fgrpo::trim(kv.substr(0, eq)),
                                  fgrpo::trim(kv.substr(eq + 1)));
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained group-relative policy optimization on a synthetic "
                 "verifiable environment"};
    app.require_subcommand(1);

    CommonConfigArgs train_args, score_args, mcts_args, eval_args;
    std::string train_out = "fgrpo_run";
    std::string train_mode, mcts_out = "chains.jsonl", eval_params, eval_tasks, eval_out;
    std::uint64_t train_seed = 0;
    bool train_seed_set = false, train_mode_set = false;
    fgrpo::ScoreOptions score_opts;

    CLI::App* train = app.add_subcommand("train", "Run the training loop and write a run directory");
    add_config_options(train, train_args);
    train->add_option("--out", train_out, "run directory")->capture_default_str();
    train->add_option("--mode", train_mode,
                      "task_only|fgrpo|fgrpo_fixed|coupled_additive|coupled_multiplicative")
        ->each([&train_mode_set](const std::string&) { train_mode_set = true; });
    train->add_option("--seed", train_seed, "run seed")
        ->each([&train_seed_set](const std::string&) { train_seed_set = true; });

    CLI::App* score = app.add_subcommand("score", "Score a response JSONL file offline");
    add_config_options(score, score_args);
    score->add_option("--in", score_opts.in_path, "input JSONL")->required();
    score->add_option("--out", score_opts.out_path, "scored output JSONL");
    score->add_option("--judge", score_opts.judge, "programmatic|remote")->capture_default_str();
    score->add_option("--endpoint", score_opts.endpoint,
                      "remote judge URL (default: FGRPO_JUDGE_ENDPOINT)");
    score->add_option("--tasks", score_opts.tasks_path, "scene-definition JSONL for the judges");
    score->add_option("--prefix-lexicon", score_opts.prefix_lexicon_path,
                      "trivial-prefix lexicon file (one term per line)");
    score->add_option("--keyword-lexicon", score_opts.keyword_lexicon_path,
                      "visual-keyword lexicon file (one term per line)");
    score->add_flag("--judge-all", score_opts.judge_all,
                    "judge every record's consistency, not only correct answers");

    CLI::App* mcts = app.add_subcommand("mcts-gen", "Search reasoning trees and emit SFT chains");
    add_config_options(mcts, mcts_args);
    mcts->add_option("--out", mcts_out, "output JSONL")->capture_default_str();

    CLI::App* eval = app.add_subcommand("eval", "Evaluate saved policy parameters");
    add_config_options(eval, eval_args);
    eval->add_option("--params", eval_params, "params.json from a run directory")->required();
    eval->add_option("--tasks", eval_tasks, "task JSONL (default: generated evaluation split)");
    eval->add_option("--out", eval_out, "metrics output path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        fgrpo::RunConfig rc;
        if (train->parsed()) {
            apply_overrides(rc, train_args);
            if (train_mode_set) fgrpo::apply_config_entry(rc, "mode", train_mode);
            if (train_seed_set) rc.train.seed = train_seed;
            return fgrpo::cmd_train(rc, train_out, std::cerr);
        }
        if (score->parsed()) {
            apply_overrides(rc, score_args);
            return fgrpo::cmd_score(rc, score_opts, std::cout, std::cerr);
        }
        if (mcts->parsed()) {
            apply_overrides(rc, mcts_args);
            return fgrpo::cmd_mcts_gen(rc, mcts_out, std::cerr);
        }
        apply_overrides(rc, eval_args);
        return fgrpo::cmd_eval(rc, eval_params, eval_tasks, eval_out, std::cout, std::cerr);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
}
