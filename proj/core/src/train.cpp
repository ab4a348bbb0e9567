#include "daft/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "daft/metrics.hpp"
#include "daft/optim.hpp"

namespace daft {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* metric_name(Task task) {
    return task == Task::survival ? "cindex" : "bacc";
}

namespace {

std::vector<std::vector<std::size_t>> plan_batches(std::vector<std::size_t> order,
                                                   int batch_size) {
    std::vector<std::vector<std::size_t>> chunks;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(order.size(), pos + static_cast<std::size_t>(batch_size));
        chunks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                            order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return chunks;
}

/// Ensures every chunk holds at least one event by swapping events in from
/// chunks that have spares. Bounded; failure signals a pathological
/// censoring rate.
void repair_survival_batches(std::vector<std::vector<std::size_t>>& chunks, const Dataset& ds) {
    auto is_event = [&ds](std::size_t idx) {
        const auto& s = ds.subjects.at(idx);
        return s.survival && s.survival->event;
    };
    auto event_count = [&](const std::vector<std::size_t>& chunk) {
        std::size_t count = 0;
        for (const auto idx : chunk) count += is_event(idx) ? 1 : 0;
        return count;
    };
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::size_t deficient = chunks.size();
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            if (event_count(chunks[i]) == 0) {
                deficient = i;
                break;
            }
        }
        if (deficient == chunks.size()) return;
        std::size_t donor = chunks.size();
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            if (event_count(chunks[i]) >= 2) {
                donor = i;
                break;
            }
        }
        if (donor == chunks.size()) break;
        auto& needy = chunks[deficient];
        auto& giving = chunks[donor];
        const auto event_it = std::find_if(giving.begin(), giving.end(), is_event);
        const auto censored_it =
            std::find_if(needy.begin(), needy.end(), [&](std::size_t i) { return !is_event(i); });
        std::swap(*event_it, *censored_it);
    }
    throw ValueError(
        "survival batching: could not place an event in every batch after 100 attempts; "
        "the censoring rate is pathological for this batch size");
}

struct ModelSnapshot {
    std::vector<std::vector<float>> params;
    std::vector<std::vector<float>> buffers;
};

ModelSnapshot take_snapshot(Model<float>& model) {
    ModelSnapshot snap;
    for (auto& [name, tensor] : model.named_parameters()) {
        snap.params.emplace_back(tensor.data().begin(), tensor.data().end());
    }
    for (auto& [name, buffer] : model.named_buffers()) {
        snap.buffers.emplace_back(buffer->begin(), buffer->end());
    }
    return snap;
}

void restore_snapshot(Model<float>& model, const ModelSnapshot& snap) {
    auto params = model.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.data_mut();
        std::copy(snap.params[i].begin(), snap.params[i].end(), dst.begin());
    }
    auto buffers = model.named_buffers();
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        *buffers[i].data = snap.buffers[i];
    }
}

EvalResult evaluate_impl(Model<float>& model, const Dataset& ds,
                         std::span<const std::size_t> indices, const NormalizationStats& stats,
                         int eval_batch, const ModulationOverride<float>* override_spec) {
    if (indices.empty()) throw ValueError("evaluate: empty index set");
    const bool was_training = model.training();
    model.set_training(false);

    std::vector<int> predictions;
    std::vector<double> risks;
    for (std::size_t pos = 0; pos < indices.size();
         pos += static_cast<std::size_t>(eval_batch)) {
        const auto end = std::min(indices.size(), pos + static_cast<std::size_t>(eval_batch));
        const std::span<const std::size_t> chunk(indices.data() + pos, end - pos);
        auto [image, tabular] = make_batch<float>(ds, chunk, stats);
        const auto out = override_spec
                             ? model.forward_with_override(image, tabular, *override_spec)
                             : model.forward(image, tabular);
        if (model.config().task == Task::diagnosis) {
            const auto k = out.dim(1);
            for (std::int64_t row = 0; row < out.dim(0); ++row) {
                const float* logits = out.data().data() + row * k;
                int best = 0;
                for (std::int64_t c = 1; c < k; ++c) {
                    if (logits[c] > logits[best]) best = static_cast<int>(c);
                }
                predictions.push_back(best);
            }
        } else {
            for (std::int64_t row = 0; row < out.dim(0); ++row) {
                risks.push_back(static_cast<double>(out.data()[row]));
            }
        }
    }
    model.set_training(was_training);

    EvalResult result;
    if (model.config().task == Task::diagnosis) {
        const auto truth = gather_diagnosis(ds, indices);
        result.metric = balanced_accuracy(predictions, truth);
        std::map<int, std::pair<std::int64_t, std::int64_t>> per_class;  // correct, total
        for (std::size_t i = 0; i < truth.size(); ++i) {
            auto& [correct, total] = per_class[truth[i].class_index];
            ++total;
            if (predictions[i] == truth[i].class_index) ++correct;
        }
        for (const auto& [cls, counts] : per_class) {
            result.details["recall_" + std::to_string(cls)] =
                static_cast<double>(counts.first) / static_cast<double>(counts.second);
        }
    } else {
        const auto labels = gather_survival(ds, indices);
        result.metric = uno_cindex(risks, labels);
    }
    return result;
}

}  // namespace

EvalResult evaluate_split(Model<float>& model, const Dataset& ds,
                          std::span<const std::size_t> indices, const NormalizationStats& stats,
                          int eval_batch) {
    return evaluate_impl(model, ds, indices, stats, eval_batch, nullptr);
}

EvalResult evaluate_split_with_override(Model<float>& model, const Dataset& ds,
                                        std::span<const std::size_t> indices,
                                        const NormalizationStats& stats, int eval_batch,
                                        const ModulationOverride<float>& override_spec) {
    return evaluate_impl(model, ds, indices, stats, eval_batch, &override_spec);
}

RunResult train_run(const Dataset& ds, const RoleAssignment& roles, const RunConfig& cfg,
                    const std::string& checkpoint_dir) {
    const auto start = std::chrono::steady_clock::now();
    RunResult result;
    result.config = cfg;

    if (ds.task != cfg.task) {
        throw ValueError(std::string("train: dataset task is ") + to_string(ds.task) +
                         " but the run config asks for " + to_string(cfg.task));
    }
    if (cfg.model.task != cfg.task) {
        throw ValueError("train: model.task disagrees with run.task");
    }
    if (roles.train.empty() || roles.val.empty() || roles.test.empty()) {
        throw ValueError("train: train/val/test splits must all be non-empty");
    }

    const auto stats = compute_normalization(gather_tabular(ds, roles.train));

    Rng base(cfg.seed);
    const std::uint64_t model_seed = base.fork(0x11).next_u64();
    Rng data_rng = base.fork(0x22);

    auto model = build_model<float>(cfg.model, model_seed);
    if (!cfg.model.frozen_backbone_checkpoint.empty()) {
        load_backbone_from_checkpoint(model, cfg.model.frozen_backbone_checkpoint);
    }

    AdamW<float> optimizer({cfg.lr0, 0.9, 0.999, 1e-8, cfg.weight_decay});
    auto params = model.trainable_parameters();

    const int total_epochs = cfg.effective_epochs();
    ModelSnapshot best_snapshot;
    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        const double lr = lr_schedule(epoch, total_epochs, cfg.lr0);
        optimizer.set_lr(lr);

        std::vector<std::size_t> order = roles.train;
        data_rng.shuffle(order);
        auto batches = plan_batches(std::move(order), cfg.batch_size);
        if (cfg.task == Task::survival) repair_survival_batches(batches, ds);

        model.set_training(true);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (const auto& batch : batches) {
            auto [image, tabular] = make_batch<float>(ds, batch, stats);
            auto out = model.forward(image, tabular);
            Tensor<float> loss;
            if (cfg.task == Task::diagnosis) {
                const auto labels = gather_diagnosis(ds, batch);
                loss = cross_entropy(out, labels);
            } else {
                const auto labels = gather_survival(ds, batch);
                loss = cox_ph_loss(out, labels);
            }
            backward(loss);
            optimizer.step(params);
            zero_grads<float>(params);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
            seen += batch.size();
        }

        const auto val = evaluate_split(model, ds, roles.val, stats, cfg.batch_size);
        result.epochs.push_back(
            {epoch, lr, loss_sum / static_cast<double>(seen), val.metric});
        if (result.best_epoch < 0 || val.metric > result.best_val_metric) {
            result.best_epoch = epoch;
            result.best_val_metric = val.metric;
            best_snapshot = take_snapshot(model);
        }
    }

    restore_snapshot(model, best_snapshot);
    const auto test = evaluate_split(model, ds, roles.test, stats, cfg.batch_size);
    result.test_metric = test.metric;
    result.test_details = test.details;

    if (!checkpoint_dir.empty()) {
        save_checkpoint(model, stats, checkpoint_dir);
        result.checkpoint_dir = checkpoint_dir;
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

GridResult grid_search(const Dataset& ds, const RoleAssignment& roles, const RunConfig& base,
                       int workers, const std::string& out_dir) {
    if (base.lr_grid.empty() || base.wd_grid.empty()) {
        throw ValueError("grid_search: empty grid");
    }
    std::vector<RunConfig> configs;
    for (const double lr : base.lr_grid) {
        for (const double wd : base.wd_grid) {
            RunConfig cfg = base;
            cfg.lr0 = lr;
            cfg.weight_decay = wd;
            configs.push_back(std::move(cfg));
        }
    }

    GridResult grid;
    grid.runs.resize(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= configs.size()) return;
            std::string ckpt;
            if (!out_dir.empty()) {
                ckpt = (fs::path(out_dir) / "ckpt" / ("grid_" + std::to_string(i))).string();
            }
            try {
                grid.runs[i] = train_run(ds, roles, configs[i], ckpt);
            } catch (const std::exception& e) {
                grid.runs[i].config = configs[i];
                grid.runs[i].failed = true;
                grid.runs[i].error = e.what();
            }
        }
    };
    const int thread_count =
        std::max(1, std::min<int>(workers, static_cast<int>(configs.size())));
    if (thread_count == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(thread_count));
        for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    bool found = false;
    for (std::size_t i = 0; i < grid.runs.size(); ++i) {
        const auto& run = grid.runs[i];
        if (run.failed) continue;
        if (!found) {
            grid.selected = i;
            found = true;
            continue;
        }
        const auto& best = grid.runs[grid.selected];
        const bool better =
            run.best_val_metric > best.best_val_metric ||
            (run.best_val_metric == best.best_val_metric &&
             (run.config.lr0 < best.config.lr0 ||
              (run.config.lr0 == best.config.lr0 &&
               run.config.weight_decay < best.config.weight_decay)));
        if (better) grid.selected = i;
    }
    if (!found) {
        std::string msg = "grid_search: every run failed;";
        for (const auto& run : grid.runs) msg += " [" + run.error + "]";
        throw Error(msg);
    }
    return grid;
}

const char* to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::mean_alpha: return "mean_alpha";
        case AblationMode::mean_beta: return "mean_beta";
        case AblationMode::noise_alpha: return "noise_alpha";
        case AblationMode::noise_beta: return "noise_beta";
    }
    return "?";
}

AblationMode ablation_mode_from_string(const std::string& s) {
    for (const auto m : {AblationMode::mean_alpha, AblationMode::mean_beta,
                         AblationMode::noise_alpha, AblationMode::noise_beta}) {
        if (s == to_string(m)) return m;
    }
    throw ValueError("unknown ablation mode '" + s + "'");
}

std::vector<AblationRow> run_ablation(Model<float>& model, const Dataset& ds,
                                      const RoleAssignment& roles,
                                      const NormalizationStats& stats, AblationMode mode,
                                      std::span<const double> sigmas,
                                      std::span<const std::uint64_t> seeds, int eval_batch) {
    if (!model.config().has_modulation()) {
        throw ValueError(std::string("ablation requires a modulated variant, got ") +
                         to_string(model.config().fusion_variant));
    }
    const auto baseline = evaluate_split(model, ds, roles.test, stats, eval_batch);

    std::vector<AblationRow> rows;
    if (mode == AblationMode::mean_alpha || mode == AblationMode::mean_beta) {
        std::vector<std::pair<Tensor<float>, Tensor<float>>> batches;
        for (std::size_t pos = 0; pos < roles.train.size();
             pos += static_cast<std::size_t>(eval_batch)) {
            const auto end =
                std::min(roles.train.size(), pos + static_cast<std::size_t>(eval_batch));
            const std::span<const std::size_t> chunk(roles.train.data() + pos, end - pos);
            batches.push_back(make_batch<float>(ds, chunk, stats));
        }
        const auto [mean_alpha, mean_beta] = modulation_stats<float>(model, batches);
        ModulationOverride<float> override_spec;
        if (mode == AblationMode::mean_alpha) {
            override_spec.fix_alpha = mean_alpha;
        } else {
            override_spec.fix_beta = mean_beta;
        }
        const auto r =
            evaluate_split_with_override(model, ds, roles.test, stats, eval_batch, override_spec);
        rows.push_back({mode, 0.0, r.metric, r.metric - baseline.metric});
        return rows;
    }

    if (sigmas.empty()) throw ValueError("ablation: noise mode needs at least one sigma");
    if (seeds.empty()) throw ValueError("ablation: noise mode needs at least one seed");
    for (const double sigma : sigmas) {
        double metric_sum = 0.0;
        for (const auto seed : seeds) {
            ModulationOverride<float> override_spec;
            if (mode == AblationMode::noise_alpha) {
                override_spec.noise_alpha = {sigma, seed};
            } else {
                override_spec.noise_beta = {sigma, seed};
            }
            metric_sum +=
                evaluate_split_with_override(model, ds, roles.test, stats, eval_batch,
                                             override_spec)
                    .metric;
        }
        const double metric = metric_sum / static_cast<double>(seeds.size());
        rows.push_back({mode, sigma, metric, metric - baseline.metric});
    }
    return rows;
}

void append_results_jsonl(const std::string& path, const RunResult& result, int run_index) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot write results file " + path);
    for (const auto& e : result.epochs) {
        json rec{{"type", "epoch"},
                 {"run", run_index},
                 {"epoch", e.epoch},
                 {"lr", e.lr},
                 {"train_loss", e.train_loss},
                 {"val_metric", e.val_metric}};
        out << rec.dump() << "\n";
    }
    json final_rec{{"type", "final"},
                   {"run", run_index},
                   {"task", to_string(result.config.task)},
                   {"variant", to_string(result.config.model.fusion_variant)},
                   {"lr0", result.config.lr0},
                   {"weight_decay", result.config.weight_decay},
                   {"seed", result.config.seed},
                   {"fold", result.config.fold},
                   {"best_epoch", result.best_epoch},
                   {"best_val_metric", result.best_val_metric},
                   {"test_metric", result.test_metric},
                   {"wall_seconds", result.wall_seconds},
                   {"failed", result.failed}};
    if (result.failed) final_rec["error"] = result.error;
    if (!result.checkpoint_dir.empty()) final_rec["checkpoint"] = result.checkpoint_dir;
    for (const auto& [key, value] : result.test_details) final_rec[key] = value;
    out << final_rec.dump() << "\n";
    if (!out.flush()) throw IoError("failed writing results file " + path);
}

void write_grid_csv(const std::string& path, const GridResult& grid) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write grid table " + path);
    out << "run,lr0,weight_decay,val_metric,test_metric,selected,status\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < grid.runs.size(); ++i) {
        const auto& run = grid.runs[i];
        out << i << ',' << run.config.lr0 << ',' << run.config.weight_decay << ','
            << run.best_val_metric << ',' << run.test_metric << ','
            << (i == grid.selected ? 1 : 0) << ',' << (run.failed ? "failed" : "ok") << "\n";
    }
    if (!out.flush()) throw IoError("failed writing grid table " + path);
}

std::vector<MetricRecord> metric_records_from_result(const RunResult& result) {
    std::vector<MetricRecord> records;
    const std::string name = metric_name(result.config.task);
    records.push_back(
        {name, "val", result.config.fold, result.config.seed, result.best_val_metric});
    records.push_back({name, "test", result.config.fold, result.config.seed, result.test_metric});
    for (const auto& [key, value] : result.test_details) {
        records.push_back({key, "test", result.config.fold, result.config.seed, value});
    }
    return records;
}

}  // namespace daft
