// Command-line harness: dataset generation, fold splitting, training,
// grid search, evaluation, and test-time modulation ablations.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "daft/train.hpp"

namespace fs = std::filesystem;

namespace {

// Role assignment depends on the dataset, split file and fold only, so
// checkpoints trained with different run seeds stay comparable.
std::uint64_t role_seed(int fold) {
    return 0x5EEDF01DULL ^ static_cast<std::uint64_t>(fold);
}

std::vector<std::size_t> role_indices(const daft::RoleAssignment& roles, const std::string& role) {
    if (role == "train") return roles.train;
    if (role == "val") return roles.val;
    if (role == "test") return roles.test;
    throw daft::ValueError("unknown role '" + role + "', expected train|val|test");
}

struct CommonArgs {
    std::string config;
    std::string out;
    std::int64_t seed = -1;  // -1: keep the config's seed
    int workers = 0;         // 0: keep the config's worker count
};

daft::RunConfig load_config_with_overrides(const CommonArgs& args) {
    daft::RunConfig cfg = daft::load_run_config(args.config);
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.out.empty()) cfg.out_dir = args.out;
    if (args.workers > 0) cfg.workers = args.workers;
    if (cfg.dataset_dir.empty()) throw daft::ConfigError("paths.dataset is required");
    if (cfg.split_path.empty()) throw daft::ConfigError("paths.split is required");
    if (cfg.out_dir.empty()) throw daft::ConfigError("paths.out (or --out) is required");
    return cfg;
}

void write_run_outputs(const daft::RunConfig& cfg, const daft::RunResult& result, int run_index) {
    fs::create_directories(cfg.out_dir);
    daft::append_results_jsonl((fs::path(cfg.out_dir) / "results.jsonl").string(), result,
                               run_index);
    const auto records = daft::metric_records_from_result(result);
    daft::write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), records);
}

int cmd_train(const CommonArgs& args) {
    const auto cfg = load_config_with_overrides(args);
    const auto ds = daft::load_dataset(cfg.dataset_dir);
    const auto split = daft::load_split(cfg.split_path);
    const auto roles = daft::assign_roles(ds, split, cfg.fold, role_seed(cfg.fold));
    const std::string ckpt = (fs::path(cfg.out_dir) / "ckpt" / "run").string();
    fs::create_directories(ckpt);
    const auto result = daft::train_run(ds, roles, cfg, ckpt);
    write_run_outputs(cfg, result, 0);
    std::cout << "variant=" << to_string(cfg.model.fusion_variant)
              << " best_epoch=" << result.best_epoch << " val_"
              << daft::metric_name(cfg.task) << "=" << result.best_val_metric << " test_"
              << daft::metric_name(cfg.task) << "=" << result.test_metric << "\n";
    return 0;
}

int cmd_gridsearch(const CommonArgs& args) {
    const auto cfg = load_config_with_overrides(args);
    const auto ds = daft::load_dataset(cfg.dataset_dir);
    const auto split = daft::load_split(cfg.split_path);
    const auto roles = daft::assign_roles(ds, split, cfg.fold, role_seed(cfg.fold));
    fs::create_directories(cfg.out_dir);
    const auto grid = daft::grid_search(ds, roles, cfg, cfg.workers, cfg.out_dir);
    for (std::size_t i = 0; i < grid.runs.size(); ++i) {
        daft::append_results_jsonl((fs::path(cfg.out_dir) / "results.jsonl").string(),
                                   grid.runs[i], static_cast<int>(i));
    }
    daft::write_grid_csv((fs::path(cfg.out_dir) / "gridsearch.csv").string(), grid);
    const auto& best = grid.runs[grid.selected];
    {
        std::ofstream selected((fs::path(cfg.out_dir) / "selected_config.ini").string());
        selected << daft::run_config_to_ini(best.config).serialize();
    }
    std::cout << "runs=" << grid.runs.size() << " selected=" << grid.selected
              << " lr0=" << best.config.lr0 << " weight_decay=" << best.config.weight_decay
              << " val_" << daft::metric_name(cfg.task) << "=" << best.best_val_metric
              << " test_" << daft::metric_name(cfg.task) << "=" << best.test_metric << "\n";
    return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& dataset,
                 const std::string& split_path, int fold, const std::string& role,
                 const std::string& out) {
    auto loaded = daft::load_checkpoint<float>(checkpoint);
    const auto ds = daft::load_dataset(dataset);
    if (ds.task != loaded.model.config().task) {
        throw daft::ValueError(std::string("task mismatch: dataset is ") + to_string(ds.task) +
                               ", checkpoint is " + to_string(loaded.model.config().task));
    }
    const auto split = daft::load_split(split_path);
    const auto roles = daft::assign_roles(ds, split, fold, role_seed(fold));
    const auto indices = role_indices(roles, role);
    const auto result = daft::evaluate_split(loaded.model, ds, indices, loaded.stats, 16);

    std::vector<daft::MetricRecord> records;
    records.push_back({daft::metric_name(ds.task), role, fold, 0, result.metric});
    for (const auto& [key, value] : result.details) {
        records.push_back({key, role, fold, 0, value});
    }
    if (!out.empty()) {
        fs::create_directories(out);
        daft::write_metrics_csv((fs::path(out) / "metrics.csv").string(), records);
    }
    std::cout << daft::metric_name(ds.task) << "=" << result.metric;
    for (const auto& [key, value] : result.details) std::cout << ' ' << key << '=' << value;
    std::cout << "\n";
    return 0;
}

int cmd_ablate(const std::string& checkpoint, const std::string& dataset,
               const std::string& split_path, int fold, const std::string& mode_name,
               const std::vector<double>& sigmas, const std::vector<std::uint64_t>& seeds,
               const std::string& out) {
    auto loaded = daft::load_checkpoint<float>(checkpoint);
    const auto ds = daft::load_dataset(dataset);
    const auto split = daft::load_split(split_path);
    const auto roles = daft::assign_roles(ds, split, fold, role_seed(fold));
    const auto mode = daft::ablation_mode_from_string(mode_name);
    const auto rows =
        daft::run_ablation(loaded.model, ds, roles, loaded.stats, mode, sigmas, seeds, 16);

    std::ostringstream table;
    table << "mode,sigma,metric,delta\n";
    table << std::setprecision(17);
    for (const auto& row : rows) {
        table << to_string(row.mode) << ',' << row.sigma << ',' << row.metric << ',' << row.delta
              << "\n";
    }
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream file((fs::path(out) / "ablation.csv").string());
        file << table.str();
    }
    std::cout << table.str();
    return 0;
}

int cmd_generate(const std::string& config, const std::string& out, std::int64_t seed) {
    auto spec = daft::load_generate_spec(config);
    if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
    const auto ds = daft::generate_synthetic(spec);
    daft::save_dataset(ds, out);
    std::cout << "subjects=" << ds.subjects.size() << " task=" << to_string(ds.task)
              << " size=" << ds.volume_size << " dir=" << out << "\n";
    return 0;
}

int cmd_split(const std::string& dataset, std::uint64_t seed, const std::string& out) {
    const auto ds = daft::load_dataset(dataset);
    const auto split = daft::stratified_kfold(ds, 5, seed);
    daft::save_split(split, out);
    std::vector<int> sizes(5, 0);
    for (const auto& [id, fold] : split.fold_of_subject) ++sizes[static_cast<std::size_t>(fold)];
    std::cout << "folds=";
    for (std::size_t i = 0; i < sizes.size(); ++i) std::cout << (i ? "," : "") << sizes[i];
    std::cout << " file=" << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DAFT: 3D image + tabular fusion networks for diagnosis and survival"};
    app.require_subcommand(1);

    CommonArgs train_args, grid_args;
    auto* train = app.add_subcommand("train", "Train one model from a config file");
    train->add_option("--config", train_args.config, "Run config file")->required();
    train->add_option("--seed", train_args.seed, "Override run.seed");
    train->add_option("--out", train_args.out, "Override paths.out");

    auto* gridsearch =
        app.add_subcommand("gridsearch", "Sweep the learning-rate/weight-decay grid");
    gridsearch->add_option("--config", grid_args.config, "Run config file")->required();
    gridsearch->add_option("--seed", grid_args.seed, "Override run.seed");
    gridsearch->add_option("--out", grid_args.out, "Override paths.out");
    gridsearch->add_option("--workers", grid_args.workers, "Concurrent runs");

    std::string eval_ckpt, eval_dataset, eval_split, eval_role = "test", eval_out;
    int eval_fold = 0;
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
    evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
    evaluate->add_option("--dataset", eval_dataset, "Dataset directory")->required();
    evaluate->add_option("--split", eval_split, "Fold split file")->required();
    evaluate->add_option("--fold", eval_fold, "Test fold index");
    evaluate->add_option("--role", eval_role, "train|val|test");
    evaluate->add_option("--out", eval_out, "Output directory for metrics.csv");

    std::string abl_ckpt, abl_dataset, abl_split, abl_mode, abl_out;
    int abl_fold = 0;
    std::vector<double> abl_sigmas{0.0};
    std::vector<std::uint64_t> abl_seeds{1};
    auto* ablate = app.add_subcommand("ablate", "Test-time alpha/beta ablations");
    ablate->add_option("--checkpoint", abl_ckpt, "Checkpoint directory")->required();
    ablate->add_option("--dataset", abl_dataset, "Dataset directory")->required();
    ablate->add_option("--split", abl_split, "Fold split file")->required();
    ablate->add_option("--fold", abl_fold, "Test fold index");
    ablate->add_option("--mode", abl_mode, "mean_alpha|mean_beta|noise_alpha|noise_beta")
        ->required();
    ablate->add_option("--sigmas", abl_sigmas, "Noise standard deviations");
    ablate->add_option("--seeds", abl_seeds, "Noise seeds (averaged)");
    ablate->add_option("--out", abl_out, "Output directory for ablation.csv");

    std::string gen_config, gen_out;
    std::int64_t gen_seed = -1;
    auto* generate = app.add_subcommand("generate", "Create a synthetic dataset");
    generate->add_option("--config", gen_config, "Config file with a [generate] section")
        ->required();
    generate->add_option("--out", gen_out, "Dataset output directory")->required();
    generate->add_option("--seed", gen_seed, "Override generate.seed");

    std::string split_dataset, split_out;
    std::uint64_t split_seed = 0;
    auto* split = app.add_subcommand("split", "Write a stratified 5-fold split");
    split->add_option("--dataset", split_dataset, "Dataset directory")->required();
    split->add_option("--seed", split_seed, "Split seed");
    split->add_option("--out", split_out, "Split file path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return cmd_train(train_args);
        if (gridsearch->parsed()) return cmd_gridsearch(grid_args);
        if (evaluate->parsed()) {
            return cmd_evaluate(eval_ckpt, eval_dataset, eval_split, eval_fold, eval_role,
                                eval_out);
        }
        if (ablate->parsed()) {
            return cmd_ablate(abl_ckpt, abl_dataset, abl_split, abl_fold, abl_mode, abl_sigmas,
                              abl_seeds, abl_out);
        }
        if (generate->parsed()) return cmd_generate(gen_config, gen_out, gen_seed);
        if (split->parsed()) return cmd_split(split_dataset, split_seed, split_out);
    } catch (const daft::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
