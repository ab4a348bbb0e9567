#pragma once

#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "daft/checkpoint.hpp"
#include "daft/config.hpp"
#include "daft/data.hpp"

namespace daft {

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_metric = 0.0;
};

struct RunResult {
    RunConfig config;
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_metric = std::numeric_limits<double>::quiet_NaN();
    /// Computed exactly once, from the checkpoint with the best validation
    /// metric.
    double test_metric = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, double> test_details;
    std::string checkpoint_dir;
    double wall_seconds = 0.0;
    bool failed = false;
    std::string error;
};

struct EvalResult {
    double metric = 0.0;
    std::map<std::string, double> details;
};

/// "bacc" for diagnosis, "cindex" for survival.
const char* metric_name(Task task);

/// Eval-mode metrics over the given subjects: balanced accuracy plus
/// per-class recalls, or the IPCW concordance index.
EvalResult evaluate_split(Model<float>& model, const Dataset& ds,
                          std::span<const std::size_t> indices, const NormalizationStats& stats,
                          int eval_batch);

/// Same, with a test-time modulation override applied to every batch.
EvalResult evaluate_split_with_override(Model<float>& model, const Dataset& ds,
                                        std::span<const std::size_t> indices,
                                        const NormalizationStats& stats, int eval_batch,
                                        const ModulationOverride<float>& override_spec);

/// One full training run: AdamW with the step schedule, per-epoch validation,
/// best-validation checkpointing, test metric from the restored best model.
/// Survival batches are repaired so every batch holds at least one event;
/// an impossible repair (pathological censoring) is an error. Deterministic
/// given cfg.seed. Writes a checkpoint when checkpoint_dir is non-empty.
RunResult train_run(const Dataset& ds, const RoleAssignment& roles, const RunConfig& cfg,
                    const std::string& checkpoint_dir);

struct GridResult {
    std::vector<RunResult> runs;  // lr-major, weight-decay-minor order
    std::size_t selected = 0;
};

/// Runs every (lr0, weight_decay) combination of the config's grids,
/// in parallel up to `workers`. Individual failures are recorded and the
/// search continues; every run failing is an error. Selection: best
/// validation metric, ties broken by lower lr0 then lower weight decay.
GridResult grid_search(const Dataset& ds, const RoleAssignment& roles, const RunConfig& base,
                       int workers, const std::string& out_dir);

enum class AblationMode { mean_alpha, mean_beta, noise_alpha, noise_beta };
const char* to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& s);

struct AblationRow {
    AblationMode mode;
    double sigma = 0.0;
    double metric = 0.0;
    double delta = 0.0;  // metric minus the unmodified baseline
};

/// Test-time ablation: mean substitution uses the per-channel modulation
/// means over the train split; noise modes are averaged over the seeds.
std::vector<AblationRow> run_ablation(Model<float>& model, const Dataset& ds,
                                      const RoleAssignment& roles,
                                      const NormalizationStats& stats, AblationMode mode,
                                      std::span<const double> sigmas,
                                      std::span<const std::uint64_t> seeds, int eval_batch);

/// Appends one line per epoch plus a final line to <path> (JSON lines).
void append_results_jsonl(const std::string& path, const RunResult& result, int run_index);
/// Flat per-run table: run, lr0, weight_decay, val_metric, test_metric, status.
void write_grid_csv(const std::string& path, const GridResult& grid);
std::vector<MetricRecord> metric_records_from_result(const RunResult& result);

}  // namespace daft
