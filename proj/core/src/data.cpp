#include "daft/data.hpp"

#include <algorithm>
#include <cmath>

namespace daft {

const std::array<const char*, kTabularVariableCount> kTabularVariableNames = {
    "age", "gender", "education", "apoe4", "abeta42", "ptau181", "ttau", "fdg_pet", "av45_pet",
};

std::optional<double> RawTabularRecord::value(int index) const {
    switch (index) {
        case 0: return age;
        case 1: return gender;
        case 2: return education;
        case 3: return apoe4;
        case 4: return abeta42;
        case 5: return ptau181;
        case 6: return ttau;
        case 7: return fdg_pet;
        case 8: return av45_pet;
        default: throw ValueError("tabular variable index out of range");
    }
}

NormalizationStats compute_normalization(std::span<const RawTabularRecord> train_records) {
    if (train_records.empty()) throw ValueError("compute_normalization: empty training set");
    NormalizationStats stats;
    for (int v = 0; v < kTabularVariableCount; ++v) {
        double sum = 0.0;
        std::int64_t count = 0;
        for (const auto& rec : train_records) {
            if (const auto val = rec.value(v)) {
                sum += *val;
                ++count;
            }
        }
        const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
        double var = 0.0;
        for (const auto& rec : train_records) {
            if (const auto val = rec.value(v)) {
                const double d = *val - mean;
                var += d * d;
            }
        }
        var = count > 0 ? var / static_cast<double>(count) : 0.0;
        stats.mean[v] = mean;
        stats.stddev[v] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return stats;
}

std::vector<double> encode_missingness(const RawTabularRecord& rec,
                                       const NormalizationStats& stats) {
    std::vector<double> out(kTabularEncodedDim, 0.0);
    for (int v = 0; v < kTabularVariableCount; ++v) {
        const auto val = rec.value(v);
        if (v < 3 && !val) {
            throw ValueError(std::string("encode_missingness: always-present variable '") +
                             kTabularVariableNames[v] + "' is missing");
        }
        if (val) {
            out[v] = (*val - stats.mean[v]) / stats.stddev[v];
        } else {
            out[v] = 0.0;  // the training mean after standardization
            out[kTabularVariableCount + (v - 3)] = 1.0;
        }
    }
    return out;
}

FoldSplit stratified_kfold(const Dataset& ds, int k, std::uint64_t seed) {
    const auto n = ds.subjects.size();
    if (k <= 0) throw ValueError("stratified_kfold: k must be positive");
    if (static_cast<std::size_t>(k) > n) {
        throw ValueError("stratified_kfold: k=" + std::to_string(k) + " exceeds " +
                         std::to_string(n) + " subjects");
    }

    // Age quintile edges over the subjects being split.
    std::vector<double> ages;
    ages.reserve(n);
    for (const auto& s : ds.subjects) ages.push_back(s.tabular.age);
    std::sort(ages.begin(), ages.end());
    std::array<double, 4> edges{};
    for (int q = 1; q <= 4; ++q) {
        edges[q - 1] = ages[(n * static_cast<std::size_t>(q)) / 5];
    }
    auto age_bin = [&edges](double age) {
        int bin = 0;
        while (bin < 4 && age >= edges[bin]) ++bin;
        return bin;
    };

    // Cell key: (diagnosis, sex, age bin), iterated in sorted order.
    std::map<std::tuple<int, int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = ds.subjects[i];
        const int sex = s.tabular.gender >= 0.5 ? 1 : 0;
        cells[{s.diagnosis.class_index, sex, age_bin(s.tabular.age)}].push_back(i);
    }

    Rng rng(seed);
    FoldSplit split;
    split.k = k;
    std::size_t assigned_before = 0;
    for (auto& [key, members] : cells) {
        rng.shuffle(members);
        // Rotate the starting fold so remainders spread across folds.
        const int offset = static_cast<int>(assigned_before % static_cast<std::size_t>(k));
        for (std::size_t p = 0; p < members.size(); ++p) {
            const int fold = static_cast<int>((offset + p) % static_cast<std::size_t>(k));
            split.fold_of_subject[ds.subjects[members[p]].id] = fold;
        }
        assigned_before += members.size();
    }
    return split;
}

RoleAssignment assign_roles(const Dataset& ds, const FoldSplit& split, int test_fold,
                            std::uint64_t seed) {
    if (test_fold < 0 || test_fold >= split.k) {
        throw ValueError("assign_roles: test fold " + std::to_string(test_fold) +
                         " out of range for k=" + std::to_string(split.k));
    }
    RoleAssignment roles;
    std::map<int, std::vector<std::size_t>> remaining_by_class;
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        const auto it = split.fold_of_subject.find(ds.subjects[i].id);
        if (it == split.fold_of_subject.end()) {
            throw ValueError("assign_roles: subject '" + ds.subjects[i].id +
                             "' missing from the fold split");
        }
        if (it->second == test_fold) {
            roles.test.push_back(i);
        } else {
            remaining_by_class[ds.subjects[i].diagnosis.class_index].push_back(i);
        }
    }
    Rng rng(seed);
    for (auto& [cls, members] : remaining_by_class) {
        rng.shuffle(members);
        const std::size_t n_val = members.size() / 5;  // 20% to validation
        for (std::size_t p = 0; p < members.size(); ++p) {
            (p < n_val ? roles.val : roles.train).push_back(members[p]);
        }
    }
    std::sort(roles.train.begin(), roles.train.end());
    std::sort(roles.val.begin(), roles.val.end());
    std::sort(roles.test.begin(), roles.test.end());
    return roles;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const Dataset& ds,
                                           std::span<const std::size_t> indices,
                                           const NormalizationStats& stats) {
    if (indices.empty()) throw ValueError("make_batch: empty index list");
    const std::int64_t b = static_cast<std::int64_t>(indices.size());
    const std::int64_t s = ds.volume_size;
    const std::int64_t voxels = s * s * s;
    std::vector<T> image(static_cast<std::size_t>(b * voxels));
    std::vector<T> tabular(static_cast<std::size_t>(b * kTabularEncodedDim));
    for (std::int64_t row = 0; row < b; ++row) {
        const auto& subject = ds.subjects.at(indices[row]);
        if (static_cast<std::int64_t>(subject.volume.size()) != voxels) {
            throw ShapeError("make_batch: subject '" + subject.id + "' volume size mismatch");
        }
        for (std::int64_t v = 0; v < voxels; ++v) {
            image[static_cast<std::size_t>(row * voxels + v)] = static_cast<T>(subject.volume[v]);
        }
        const auto encoded = encode_missingness(subject.tabular, stats);
        for (int v = 0; v < kTabularEncodedDim; ++v) {
            tabular[static_cast<std::size_t>(row * kTabularEncodedDim + v)] =
                static_cast<T>(encoded[v]);
        }
    }
    return {Tensor<T>::from_data({b, 1, s, s, s}, std::move(image)),
            Tensor<T>::from_data({b, kTabularEncodedDim}, std::move(tabular))};
}

std::vector<DiagnosisLabel> gather_diagnosis(const Dataset& ds,
                                             std::span<const std::size_t> indices) {
    std::vector<DiagnosisLabel> out;
    out.reserve(indices.size());
    for (const auto i : indices) out.push_back(ds.subjects.at(i).diagnosis);
    return out;
}

std::vector<SurvivalLabel> gather_survival(const Dataset& ds,
                                           std::span<const std::size_t> indices) {
    std::vector<SurvivalLabel> out;
    out.reserve(indices.size());
    for (const auto i : indices) {
        const auto& s = ds.subjects.at(i);
        if (!s.survival) {
            throw ValueError("subject '" + s.id + "' has no survival label");
        }
        out.push_back(*s.survival);
    }
    return out;
}

std::vector<RawTabularRecord> gather_tabular(const Dataset& ds,
                                             std::span<const std::size_t> indices) {
    std::vector<RawTabularRecord> out;
    out.reserve(indices.size());
    for (const auto i : indices) out.push_back(ds.subjects.at(i).tabular);
    return out;
}

template std::pair<Tensor<float>, Tensor<float>> make_batch(const Dataset&,
                                                            std::span<const std::size_t>,
                                                            const NormalizationStats&);
template std::pair<Tensor<double>, Tensor<double>> make_batch(const Dataset&,
                                                              std::span<const std::size_t>,
                                                              const NormalizationStats&);

}  // namespace daft
