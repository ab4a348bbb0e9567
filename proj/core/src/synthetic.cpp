#include <algorithm>
#include <cmath>

#include "daft/data.hpp"

namespace daft {

namespace {

double gate(double z_tab, const SyntheticSpec& spec) {
    const double g = spec.gate_floor + (1.0 - spec.gate_floor) * z_tab;
    return std::clamp(g, 0.0, 1.0);
}

void fill_volume(std::vector<float>& volume, std::int64_t s, double z_img, double noise,
                 Rng& rng) {
    volume.resize(static_cast<std::size_t>(s * s * s));
    const double center = static_cast<double>(s - 1) / 2.0;
    const double radius = (0.18 + 0.30 * z_img) * static_cast<double>(s);
    const double intensity = 0.6 + 0.8 * z_img;
    std::size_t idx = 0;
    for (std::int64_t x = 0; x < s; ++x) {
        for (std::int64_t y = 0; y < s; ++y) {
            for (std::int64_t z = 0; z < s; ++z, ++idx) {
                const double dx = static_cast<double>(x) - center;
                const double dy = static_cast<double>(y) - center;
                const double dz = static_cast<double>(z) - center;
                const double dist2 = dx * dx + dy * dy + dz * dz;
                double v = intensity * std::exp(-dist2 / (radius * radius));
                if (noise > 0.0) v += noise * rng.normal();
                volume[idx] = static_cast<float>(v);
            }
        }
    }
}

RawTabularRecord make_tabular(double z_tab, const SyntheticSpec& spec, Rng& rng) {
    RawTabularRecord rec;
    rec.age = rng.normal(74.0, 7.0);
    rec.gender = rng.uniform() < 0.5 ? 0.0 : 1.0;
    rec.education = rng.normal(16.0, 2.5);

    const double noise = spec.tabular_noise;
    auto biomarker = [&](double base, double slope) {
        return base + slope * z_tab + std::fabs(slope) * noise * rng.normal();
    };
    const double apoe_raw = z_tab + 0.25 * noise * rng.normal();
    rec.apoe4 = apoe_raw < 0.45 ? 0.0 : (apoe_raw < 0.8 ? 1.0 : 2.0);
    rec.abeta42 = biomarker(1100.0, -550.0);
    rec.ptau181 = biomarker(18.0, 35.0);
    rec.ttau = biomarker(180.0, 220.0);
    rec.fdg_pet = biomarker(1.35, -0.45);
    rec.av45_pet = biomarker(0.95, 0.75);

    // Missingness pattern over the six optional variables.
    std::optional<double>* optionals[] = {&rec.apoe4, &rec.abeta42, &rec.ptau181,
                                          &rec.ttau,  &rec.fdg_pet, &rec.av45_pet};
    for (auto* opt : optionals) {
        if (rng.uniform() < spec.missing_rate) opt->reset();
    }
    return rec;
}

}  // namespace

double synthetic_score(double z_img, double z_tab, const SyntheticSpec& spec) {
    return z_img * gate(z_tab, spec) + spec.tabular_weight * z_tab;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n < 50) {
        throw ValueError("generate_synthetic: need n >= 50 for usable splits, got " +
                         std::to_string(spec.n));
    }
    if (spec.size < 4) throw ValueError("generate_synthetic: volume size must be at least 4");
    if (spec.missing_rate < 0.0 || spec.missing_rate > 1.0 || spec.censoring_rate < 0.0 ||
        spec.censoring_rate >= 1.0 || spec.gate_floor < 0.0 || spec.gate_floor > 1.0 ||
        spec.image_noise < 0.0 || spec.tabular_noise < 0.0) {
        throw ValueError("generate_synthetic: knob out of range");
    }

    Rng rng(spec.seed);
    Dataset ds;
    ds.task = spec.task;
    ds.volume_size = spec.size;
    ds.subjects.resize(static_cast<std::size_t>(spec.n));

    std::vector<double> scores(static_cast<std::size_t>(spec.n));
    for (std::int64_t i = 0; i < spec.n; ++i) {
        auto& subject = ds.subjects[static_cast<std::size_t>(i)];
        subject.id = "s" + std::to_string(i);
        subject.volume_size = spec.size;
        const double z_img = rng.uniform();
        const double z_tab = rng.uniform();
        subject.z_img = z_img;
        subject.z_tab = z_tab;
        fill_volume(subject.volume, spec.size, z_img, spec.image_noise, rng);
        subject.tabular = make_tabular(z_tab, spec, rng);
        scores[static_cast<std::size_t>(i)] = synthetic_score(z_img, z_tab, spec);
    }

    // Diagnosis labels from empirical tertiles of the interaction score.
    std::vector<double> sorted_scores = scores;
    std::sort(sorted_scores.begin(), sorted_scores.end());
    const double t1 = sorted_scores[sorted_scores.size() / 3];
    const double t2 = sorted_scores[(2 * sorted_scores.size()) / 3];
    for (std::int64_t i = 0; i < spec.n; ++i) {
        const double y = scores[static_cast<std::size_t>(i)];
        ds.subjects[static_cast<std::size_t>(i)].diagnosis.class_index =
            y < t1 ? 0 : (y < t2 ? 1 : 2);
    }

    // Standardized interaction score is the true log hazard ratio.
    double mean = 0.0;
    for (const double y : scores) mean += y;
    mean /= static_cast<double>(spec.n);
    double var = 0.0;
    for (const double y : scores) var += (y - mean) * (y - mean);
    var /= static_cast<double>(spec.n);
    const double stddev = var > 0.0 ? std::sqrt(var) : 1.0;
    for (std::int64_t i = 0; i < spec.n; ++i) {
        ds.subjects[static_cast<std::size_t>(i)].true_risk =
            spec.hazard_scale * (scores[static_cast<std::size_t>(i)] - mean) / stddev;
    }

    if (spec.task == Task::survival) {
        const double base_rate = std::log(2.0);  // median event time 1 year at risk 0
        std::vector<double> event_times(static_cast<std::size_t>(spec.n));
        std::vector<double> censor_draws(static_cast<std::size_t>(spec.n));
        for (std::int64_t i = 0; i < spec.n; ++i) {
            const double risk = *ds.subjects[static_cast<std::size_t>(i)].true_risk;
            const double u = std::max(rng.uniform(), 1e-12);
            event_times[static_cast<std::size_t>(i)] =
                -std::log(u) / (base_rate * std::exp(risk));
            censor_draws[static_cast<std::size_t>(i)] = std::max(rng.uniform(), 1e-12);
        }
        double c_max = 0.0;
        if (spec.censoring_rate > 0.0) {
            // Calibrate the uniform censoring horizon to the target fraction.
            auto censored_fraction = [&](double horizon) {
                std::int64_t censored = 0;
                for (std::int64_t i = 0; i < spec.n; ++i) {
                    if (censor_draws[static_cast<std::size_t>(i)] * horizon <
                        event_times[static_cast<std::size_t>(i)]) {
                        ++censored;
                    }
                }
                return static_cast<double>(censored) / static_cast<double>(spec.n);
            };
            double lo = 1e-9, hi = 1e9;
            for (int iter = 0; iter < 200; ++iter) {
                const double mid = 0.5 * (lo + hi);
                if (censored_fraction(mid) > spec.censoring_rate) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            c_max = 0.5 * (lo + hi);
        }
        for (std::int64_t i = 0; i < spec.n; ++i) {
            auto& subject = ds.subjects[static_cast<std::size_t>(i)];
            const double t_event = event_times[static_cast<std::size_t>(i)];
            if (spec.censoring_rate <= 0.0) {
                subject.survival = SurvivalLabel{t_event, true};
            } else {
                const double t_censor = censor_draws[static_cast<std::size_t>(i)] * c_max;
                subject.survival = SurvivalLabel{std::min(t_event, t_censor), t_event <= t_censor};
            }
        }
    }
    return ds;
}

}  // namespace daft
