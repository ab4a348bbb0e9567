#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "daft/tensor.hpp"

namespace daft {

/// Diagnosis class: 0 = CN, 1 = MCI, 2 = Dementia.
struct DiagnosisLabel {
    int class_index = 0;
};

/// Right-censored time-to-event observation. `event == true` means onset was
/// observed at `time`; otherwise the subject was censored at `time`.
struct SurvivalLabel {
    double time = 0.0;
    bool event = false;
};

/// Mean over the batch of -log softmax(logits)[label], computed via
/// log-sum-exp. Differentiable w.r.t. logits.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const DiagnosisLabel> labels);

/// Negative partial log likelihood of Cox's proportional hazards model,
/// averaged over events, with Breslow handling of tied event times (tied
/// events share one risk set). Risk sets are formed within the batch.
/// A batch without any event is an error instructing the caller to resample.
template <typename T>
Tensor<T> cox_ph_loss(const Tensor<T>& risk, std::span<const SurvivalLabel> labels);

/// Unweighted mean of per-class recalls. With num_classes == 0 the classes
/// are those present in `truth`; with an explicit count every class in
/// [0, num_classes) must appear in `truth` or the recall is undefined.
double balanced_accuracy(std::span<const int> predicted, std::span<const DiagnosisLabel> truth,
                         int num_classes = 0);

/// Right-continuous step function with value `values[i]` on
/// [times[i], times[i+1]) and 1 before the first breakpoint.
struct StepFunction {
    std::vector<double> times;
    std::vector<double> values;

    double at(double t) const;
    /// Left limit, i.e. the value just before t.
    double at_left(double t) const;
};

/// Kaplan-Meier estimate of the censoring survival function G(t): censorings
/// play the role of events, observed events are treated as censored.
StepFunction km_censoring(std::span<const SurvivalLabel> labels);

/// Inverse-probability-of-censoring-weighted concordance index. Pairs (i, j)
/// with event_i, t_i < tau and t_i < t_j are weighted by G(t_i-)^-2. With a
/// NaN tau it defaults to the largest event time whose weight is finite.
/// Equals ROC-AUC when no censoring is present and the outcome is binary.
double uno_cindex(std::span<const double> risk, std::span<const SurvivalLabel> labels,
                  double tau = std::numeric_limits<double>::quiet_NaN());

/// Flat record for metric serialization: {metric, split, fold, seed, value}.
struct MetricRecord {
    std::string metric;
    std::string split;
    int fold = 0;
    std::uint64_t seed = 0;
    double value = 0.0;
};

void write_metrics_csv(const std::string& path, std::span<const MetricRecord> records);

}  // namespace daft
