#include "daft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

#include "daft/ops.hpp"

namespace daft {

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const DiagnosisLabel> labels) {
    if (logits.ndim() != 2) {
        throw ShapeError("cross_entropy: logits must be [N x K], got " +
                         shape_to_string(logits.shape()));
    }
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    if (n == 0 || labels.empty()) throw ValueError("cross_entropy: empty batch");
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    std::vector<T> onehot(static_cast<std::size_t>(n * k), T(0));
    for (std::int64_t i = 0; i < n; ++i) {
        const int cls = labels[i].class_index;
        if (cls < 0 || cls >= k) {
            throw ValueError("cross_entropy: label " + std::to_string(cls) +
                             " out of range for K=" + std::to_string(k));
        }
        onehot[static_cast<std::size_t>(i * k + cls)] = T(1);
    }
    auto picked = mul(log_softmax_rows(logits),
                      Tensor<T>::from_data({n, k}, std::move(onehot)));
    return mul_scalar(sum(picked), T(-1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> cox_ph_loss(const Tensor<T>& risk, std::span<const SurvivalLabel> labels) {
    Tensor<T> r = risk;
    if (r.ndim() == 1) r = reshape(r, {r.dim(0), 1});
    if (r.ndim() != 2 || r.dim(1) != 1) {
        throw ShapeError("cox_ph_loss: risk must be [N] or [N x 1], got " +
                         shape_to_string(risk.shape()));
    }
    const std::int64_t n = r.dim(0);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ShapeError("cox_ph_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " risk scores");
    }
    std::vector<std::int64_t> events;
    for (std::int64_t i = 0; i < n; ++i) {
        if (!(labels[i].time > 0.0) || !std::isfinite(labels[i].time)) {
            throw ValueError("cox_ph_loss: times must be finite and positive, got " +
                             std::to_string(labels[i].time));
        }
        if (labels[i].event) events.push_back(i);
    }
    if (events.empty()) {
        throw ValueError(
            "cox_ph_loss: batch contains no events; resample the batch until at least one "
            "event is present");
    }
    const auto e = static_cast<std::int64_t>(events.size());

    // Risk-set indicator (Breslow: tied events share one risk set) and the
    // event-row selector, both constants of the graph.
    std::vector<T> riskset(static_cast<std::size_t>(e * n), T(0));
    std::vector<T> selector(static_cast<std::size_t>(e * n), T(0));
    for (std::int64_t row = 0; row < e; ++row) {
        const double t_i = labels[events[row]].time;
        for (std::int64_t j = 0; j < n; ++j) {
            if (labels[j].time >= t_i) riskset[static_cast<std::size_t>(row * n + j)] = T(1);
        }
        selector[static_cast<std::size_t>(row * n + events[row])] = T(1);
    }
    auto riskset_m = Tensor<T>::from_data({e, n}, std::move(riskset));
    auto selector_m = Tensor<T>::from_data({e, n}, std::move(selector));

    // Shift by the max risk so exp stays bounded; the shift cancels exactly.
    T rmax = r.data()[0];
    for (const T v : r.data()) rmax = std::max(rmax, v);

    auto exp_shifted = exp_op(add_scalar(r, -rmax));
    auto log_sums = log_op(matmul(riskset_m, exp_shifted));
    auto event_risks = matmul(selector_m, r);
    auto scaled = mul_scalar(sub(sum(log_sums), sum(event_risks)), T(1) / static_cast<T>(e));
    return add_scalar(scaled, rmax);
}

double balanced_accuracy(std::span<const int> predicted, std::span<const DiagnosisLabel> truth,
                         int num_classes) {
    if (predicted.size() != truth.size()) {
        throw ShapeError("balanced_accuracy: " + std::to_string(predicted.size()) +
                         " predictions for " + std::to_string(truth.size()) + " labels");
    }
    if (truth.empty()) throw ValueError("balanced_accuracy: empty input");

    std::set<int> classes;
    if (num_classes > 0) {
        for (int c = 0; c < num_classes; ++c) classes.insert(c);
    } else {
        for (const auto& t : truth) classes.insert(t.class_index);
    }
    double recall_sum = 0.0;
    for (const int cls : classes) {
        std::int64_t total = 0, correct = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i].class_index != cls) continue;
            ++total;
            if (predicted[i] == cls) ++correct;
        }
        if (total == 0) {
            throw ValueError("balanced_accuracy: class " + std::to_string(cls) +
                             " absent from truth; recall undefined");
        }
        recall_sum += static_cast<double>(correct) / static_cast<double>(total);
    }
    return recall_sum / static_cast<double>(classes.size());
}

double StepFunction::at(double t) const {
    // Value on [times[i], times[i+1]); 1 before the first breakpoint.
    std::size_t lo = 0, hi = times.size();
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (times[mid] <= t) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    return lo == 0 ? 1.0 : values[lo - 1];
}

double StepFunction::at_left(double t) const {
    std::size_t lo = 0, hi = times.size();
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (times[mid] < t) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    return lo == 0 ? 1.0 : values[lo - 1];
}

StepFunction km_censoring(std::span<const SurvivalLabel> labels) {
    for (const auto& l : labels) {
        if (!(l.time > 0.0) || !std::isfinite(l.time)) {
            throw ValueError("km_censoring: times must be finite and positive");
        }
    }
    std::vector<double> sorted_times;
    sorted_times.reserve(labels.size());
    for (const auto& l : labels) sorted_times.push_back(l.time);
    std::sort(sorted_times.begin(), sorted_times.end());

    StepFunction g;
    double prod = 1.0;
    const auto n = static_cast<std::int64_t>(labels.size());
    std::size_t pos = 0;
    while (pos < sorted_times.size()) {
        const double t = sorted_times[pos];
        std::size_t same = pos;
        while (same < sorted_times.size() && sorted_times[same] == t) ++same;
        const auto at_risk = static_cast<std::int64_t>(sorted_times.size() - pos);
        std::int64_t censored_here = 0;
        for (const auto& l : labels) {
            if (l.time == t && !l.event) ++censored_here;
        }
        if (censored_here > 0) {
            prod *= 1.0 - static_cast<double>(censored_here) / static_cast<double>(at_risk);
            g.times.push_back(t);
            g.values.push_back(prod);
        }
        pos = same;
    }
    (void)n;
    return g;
}

double uno_cindex(std::span<const double> risk, std::span<const SurvivalLabel> labels, double tau) {
    if (risk.size() != labels.size()) {
        throw ShapeError("uno_cindex: " + std::to_string(risk.size()) + " risk scores for " +
                         std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw ValueError("uno_cindex: empty input");
    const StepFunction g = km_censoring(labels);

    double max_observed = 0.0;
    for (const auto& l : labels) max_observed = std::max(max_observed, l.time);

    if (std::isnan(tau)) {
        // Largest event time whose IPCW weight is still finite.
        bool found = false;
        for (const auto& l : labels) {
            if (l.event && g.at_left(l.time) > 0.0) {
                tau = found ? std::max(tau, l.time) : l.time;
                found = true;
            }
        }
        if (!found) throw ValueError("uno_cindex: no events with positive censoring survival");
    } else if (tau > max_observed) {
        throw ValueError("uno_cindex: tau " + std::to_string(tau) +
                         " exceeds the largest observed time " + std::to_string(max_observed));
    }

    double numerator = 0.0, denominator = 0.0;
    const std::size_t n = labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!labels[i].event || !(labels[i].time < tau)) continue;
        const double g_i = g.at_left(labels[i].time);
        if (!(g_i > 0.0)) {
            throw ValueError("uno_cindex: censoring survival is 0 at event time " +
                             std::to_string(labels[i].time) + "; choose a smaller tau");
        }
        const double w = 1.0 / (g_i * g_i);
        for (std::size_t j = 0; j < n; ++j) {
            if (!(labels[i].time < labels[j].time)) continue;
            denominator += w;
            if (risk[i] > risk[j]) {
                numerator += w;
            } else if (risk[i] == risk[j]) {
                numerator += 0.5 * w;
            }
        }
    }
    if (denominator == 0.0) {
        throw ValueError("uno_cindex: no comparable pairs before tau");
    }
    return numerator / denominator;
}

void write_metrics_csv(const std::string& path, std::span<const MetricRecord> records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write metrics file " + path);
    out << "metric,split,fold,seed,value\n";
    out << std::setprecision(17);
    for (const auto& r : records) {
        out << r.metric << ',' << r.split << ',' << r.fold << ',' << r.seed << ',' << r.value
            << '\n';
    }
    if (!out.flush()) throw IoError("failed writing metrics file " + path);
}

template Tensor<float> cross_entropy(const Tensor<float>&, std::span<const DiagnosisLabel>);
template Tensor<double> cross_entropy(const Tensor<double>&, std::span<const DiagnosisLabel>);
template Tensor<float> cox_ph_loss(const Tensor<float>&, std::span<const SurvivalLabel>);
template Tensor<double> cox_ph_loss(const Tensor<double>&, std::span<const SurvivalLabel>);

}  // namespace daft
