#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daft/fusion.hpp"
#include "daft/metrics.hpp"
#include "daft/rng.hpp"
#include "daft/tensor.hpp"

namespace daft {

/// Per-subject clinical variables. Age, gender and education are always
/// present; the six biomarkers may be missing.
struct RawTabularRecord {
    double age = 0.0;
    double gender = 0.0;  // 0 = female, 1 = male
    double education = 0.0;
    std::optional<double> apoe4;
    std::optional<double> abeta42;
    std::optional<double> ptau181;
    std::optional<double> ttau;
    std::optional<double> fdg_pet;
    std::optional<double> av45_pet;

    std::optional<double> value(int index) const;
};

inline constexpr int kTabularVariableCount = 9;
inline constexpr int kOptionalVariableCount = 6;
/// 9 standardized value slots followed by 6 missingness indicators.
inline constexpr int kTabularEncodedDim = 15;

extern const std::array<const char*, kTabularVariableCount> kTabularVariableNames;

/// Per-variable mean/stddev computed on the training split only.
struct NormalizationStats {
    std::array<double, kTabularVariableCount> mean{};
    std::array<double, kTabularVariableCount> stddev{};
};

NormalizationStats compute_normalization(std::span<const RawTabularRecord> train_records);

/// Encodes a record as [standardized values | missingness indicators].
/// Missing values map to 0 after standardization (the training mean); their
/// indicator slot is 1. Order: age, gender, education, apoe4, abeta42,
/// ptau181, ttau, fdg_pet, av45_pet, then the indicators of the six optional
/// variables in the same order.
std::vector<double> encode_missingness(const RawTabularRecord& rec,
                                       const NormalizationStats& stats);

struct Subject {
    std::string id;
    std::vector<float> volume;  // [size^3] voxels, single channel
    std::int64_t volume_size = 0;
    RawTabularRecord tabular;
    DiagnosisLabel diagnosis;
    std::optional<SurvivalLabel> survival;
    // Ground truth of the synthetic generator; absent on loaded real data.
    std::optional<double> z_img, z_tab, true_risk;
};

struct Dataset {
    Task task = Task::diagnosis;
    std::int64_t volume_size = 0;
    std::vector<Subject> subjects;
};

struct FoldSplit {
    int k = 5;
    std::map<std::string, int> fold_of_subject;
};

/// Deterministic stratified k-fold assignment balanced over
/// (diagnosis x sex x age-quintile) cells: members of every cell are dealt
/// round-robin, so per-fold counts inside a cell differ by at most one.
FoldSplit stratified_kfold(const Dataset& ds, int k, std::uint64_t seed);

struct RoleAssignment {
    std::vector<std::size_t> train, val, test;
};

/// Given a test fold, splits the remaining subjects 80/20 into train and
/// validation, stratified by diagnosis.
RoleAssignment assign_roles(const Dataset& ds, const FoldSplit& split, int test_fold,
                            std::uint64_t seed);

/// Synthetic multimodal generator. The image encodes a latent z_img as a
/// centered spherical blob (radius and intensity), the tabular biomarkers
/// encode z_tab, and the label depends on the interaction
///   score = z_img * gate(z_tab) + tabular_weight * z_tab,
/// so neither modality alone recovers it.
struct SyntheticSpec {
    std::int64_t n = 100;
    std::int64_t size = 16;
    Task task = Task::diagnosis;
    std::uint64_t seed = 0;
    double image_noise = 0.05;    // voxel noise stddev
    double tabular_noise = 0.05;  // relative biomarker noise
    double missing_rate = 0.2;    // per optional variable
    double censoring_rate = 0.6;  // survival task only
    double gate_floor = 0.15;     // 1.0 opens the gate fully
    double tabular_weight = 0.35;
    double hazard_scale = 8.0;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// The generator's noiseless interaction score for given latents.
double synthetic_score(double z_img, double z_tab, const SyntheticSpec& spec);

/// Directory layout: manifest.txt (ids, files, checksums), volumes/<id>.f32
/// + volumes/<id>.meta, tabular.csv, labels.csv, and latents.csv when ground
/// truth is available. Round-trips bit-exactly.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Two-column text table: id, fold.
void save_split(const FoldSplit& split, const std::string& path);
FoldSplit load_split(const std::string& path);

/// Builds an (image, tabular) batch for the given subjects. Volumes are cast
/// to T; tabular vectors are encoded with `stats`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const Dataset& ds,
                                           std::span<const std::size_t> indices,
                                           const NormalizationStats& stats);

std::vector<DiagnosisLabel> gather_diagnosis(const Dataset& ds,
                                             std::span<const std::size_t> indices);
std::vector<SurvivalLabel> gather_survival(const Dataset& ds,
                                           std::span<const std::size_t> indices);
std::vector<RawTabularRecord> gather_tabular(const Dataset& ds,
                                             std::span<const std::size_t> indices);

}  // namespace daft
