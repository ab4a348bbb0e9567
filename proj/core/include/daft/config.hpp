#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "daft/data.hpp"
#include "daft/fusion.hpp"

namespace daft {

/// Sectioned key-value text document:
///   [section]
///   key = value
/// Duplicate keys are preserved in order; '#' starts a comment line.
struct IniDoc {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;

    static IniDoc parse_file(const std::string& path);
    static IniDoc parse_string(const std::string& text);
    std::string serialize() const;

    bool has(const std::string& section, const std::string& key) const;
    const std::string* find(const std::string& section, const std::string& key) const;
    void set(const std::string& section, const std::string& key, const std::string& value);
};

/// One training run: task, model, optimization settings, seeding and paths.
/// The grids hold the candidate learning rates and weight decays swept by
/// grid search.
struct RunConfig {
    Task task = Task::diagnosis;
    ModelConfig model;
    int epochs = 0;  // 0 -> task default: 30 for diagnosis, 80 for survival
    int batch_size = 16;
    double lr0 = 0.013;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    int fold = 0;
    int workers = 1;
    std::string dataset_dir;
    std::string split_path;
    std::string out_dir;
    std::vector<double> lr_grid = {0.03, 0.013, 0.0055, 0.0023, 1e-3};
    std::vector<double> wd_grid = {0.0, 1e-4, 1e-2};

    int effective_epochs() const {
        if (epochs > 0) return epochs;
        return task == Task::survival ? 80 : 30;
    }
};

/// Parses a [run]/[paths]/[grid]/[model]/[model.daft] config document.
/// Validation collects every offending key before failing.
RunConfig run_config_from_ini(const IniDoc& doc);
RunConfig load_run_config(const std::string& path);
IniDoc run_config_to_ini(const RunConfig& cfg);

/// Model sections alone ([model], [model.daft]); used by checkpoints.
ModelConfig model_config_from_ini(const IniDoc& doc, std::vector<std::string>& problems);
void model_config_to_ini(const ModelConfig& cfg, IniDoc& doc);

/// Parses the [generate] section into a synthetic dataset spec.
SyntheticSpec generate_spec_from_ini(const IniDoc& doc);
SyntheticSpec load_generate_spec(const std::string& path);

}  // namespace daft
