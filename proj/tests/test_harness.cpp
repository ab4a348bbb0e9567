#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "daft/train.hpp"

using namespace daft;
namespace fs = std::filesystem;

namespace {

SyntheticSpec tiny_spec(Task task, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n = task == Task::survival ? 64 : 50;
    spec.size = 8;
    spec.task = task;
    spec.seed = seed;
    // Keep enough events that the tiny validation split has comparable pairs.
    if (task == Task::survival) spec.censoring_rate = 0.4;
    return spec;
}

RunConfig tiny_run_config(Task task, FusionVariant variant) {
    RunConfig cfg;
    cfg.task = task;
    cfg.model.task = task;
    cfg.model.fusion_variant = variant;
    cfg.model.stem_channels = 4;
    cfg.model.block_channels = {4, 8};
    cfg.model.block_strides = {2, 2};
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.lr0 = 0.005;
    cfg.seed = 7;
    return cfg;
}

struct TinyWorld {
    Dataset ds;
    RoleAssignment roles;
};

TinyWorld tiny_world(Task task, std::uint64_t seed) {
    TinyWorld world;
    world.ds = generate_synthetic(tiny_spec(task, seed));
    const auto split = stratified_kfold(world.ds, 5, seed);
    world.roles = assign_roles(world.ds, split, 0, seed);
    return world;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::path(DAFT_TEST_TMPDIR) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("run config: defaults and round trip") {
    RunConfig cfg;
    CHECK(cfg.effective_epochs() == 30);
    cfg.task = Task::survival;
    CHECK(cfg.effective_epochs() == 80);
    cfg.epochs = 12;
    CHECK(cfg.effective_epochs() == 12);

    REQUIRE(cfg.lr_grid == std::vector<double>{0.03, 0.013, 0.0055, 0.0023, 1e-3});
    REQUIRE(cfg.wd_grid == std::vector<double>{0.0, 1e-4, 1e-2});

    cfg.model.fusion_variant = FusionVariant::film;
    cfg.model.daft.location = ResBlockHook::before_conv2;
    cfg.dataset_dir = "/tmp/ds";
    const auto text = run_config_to_ini(cfg).serialize();
    const auto parsed = run_config_from_ini(IniDoc::parse_string(text));
    CHECK(parsed.task == Task::survival);
    CHECK(parsed.epochs == 12);
    CHECK(parsed.model.fusion_variant == FusionVariant::film);
    CHECK(parsed.model.daft.location == ResBlockHook::before_conv2);
    CHECK(parsed.dataset_dir == "/tmp/ds");
}

TEST_CASE("run config: validation lists every offending key") {
    const std::string text =
        "[run]\n"
        "task = diagnosis\n"
        "epochs = banana\n"
        "mystery_key = 1\n"
        "[model]\n"
        "fusion_variant = nonsense\n"
        "[weird]\n"
        "x = 1\n";
    try {
        (void)run_config_from_ini(IniDoc::parse_string(text));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("run.epochs") != std::string::npos);
        CHECK(msg.find("run.mystery_key") != std::string::npos);
        CHECK(msg.find("model.fusion_variant") != std::string::npos);
        CHECK(msg.find("weird") != std::string::npos);
    }
}

TEST_CASE("train_run: one-epoch smoke on 50 synthetic subjects") {
    auto world = tiny_world(Task::diagnosis, 3);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::daft);
    const auto result = train_run(world.ds, world.roles, cfg, "");
    REQUIRE(result.epochs.size() == 1);
    CHECK(result.best_epoch == 0);
    CHECK(std::isfinite(result.epochs[0].train_loss));
    CHECK(result.test_metric >= 0.0);
    CHECK(result.test_metric <= 1.0);
    CHECK(result.wall_seconds > 0.0);
}

TEST_CASE("train_run: identical config and seed reproduce the test metric") {
    auto world = tiny_world(Task::diagnosis, 5);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::concat_1fc);
    cfg.epochs = 2;
    const auto a = train_run(world.ds, world.roles, cfg, "");
    const auto b = train_run(world.ds, world.roles, cfg, "");
    CHECK(a.test_metric == b.test_metric);
    CHECK(a.best_epoch == b.best_epoch);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
        CHECK(a.epochs[i].val_metric == b.epochs[i].val_metric);
    }
}

TEST_CASE("train_run: survival smoke with batch repair") {
    auto world = tiny_world(Task::survival, 11);
    auto cfg = tiny_run_config(Task::survival, FusionVariant::daft);
    const auto result = train_run(world.ds, world.roles, cfg, "");
    CHECK(result.test_metric > 0.0);
    CHECK(result.test_metric <= 1.0);
}

TEST_CASE("train_run: pathological censoring is an explicit error") {
    auto world = tiny_world(Task::survival, 13);
    for (auto& s : world.ds.subjects) s.survival->event = false;
    auto cfg = tiny_run_config(Task::survival, FusionVariant::tabular_linear);
    try {
        (void)train_run(world.ds, world.roles, cfg, "");
        FAIL("expected ValueError");
    } catch (const ValueError& e) {
        CHECK(std::string(e.what()).find("censoring") != std::string::npos);
    }
}

TEST_CASE("train_run: too few events for the batch count is the same error") {
    auto world = tiny_world(Task::survival, 17);
    // Leave exactly one event among ~32 training subjects (2+ batches of 16).
    bool kept = false;
    for (auto& s : world.ds.subjects) {
        if (!kept && s.survival->event) {
            kept = true;
            continue;
        }
        s.survival->event = false;
    }
    auto cfg = tiny_run_config(Task::survival, FusionVariant::tabular_linear);
    CHECK_THROWS_AS(train_run(world.ds, world.roles, cfg, ""), ValueError);
}

TEST_CASE("train_run: the test metric never influences model selection") {
    auto world = tiny_world(Task::diagnosis, 19);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::concat_1fc);
    cfg.epochs = 3;
    const auto a = train_run(world.ds, world.roles, cfg, "");

    auto corrupted = world;
    for (const auto idx : corrupted.roles.test) {
        auto& label = corrupted.ds.subjects[idx].diagnosis.class_index;
        label = (label + 1) % 3;
    }
    const auto b = train_run(corrupted.ds, corrupted.roles, cfg, "");
    CHECK(a.best_epoch == b.best_epoch);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        CHECK(a.epochs[i].val_metric == b.epochs[i].val_metric);
        CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
    }
}

TEST_CASE("checkpoint: evaluate replays the recorded test metric") {
    auto world = tiny_world(Task::diagnosis, 23);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::daft);
    cfg.epochs = 2;
    const auto dir = fresh_dir("ckpt_replay");
    const auto result = train_run(world.ds, world.roles, cfg, dir.string());

    auto loaded = load_checkpoint<float>(dir.string());
    const auto replay =
        evaluate_split(loaded.model, world.ds, world.roles.test, loaded.stats, cfg.batch_size);
    CHECK(std::fabs(replay.metric - result.test_metric) < 1e-12);

    // Bit-exact parameter round trip.
    auto again = load_checkpoint<float>(dir.string());
    auto p1 = loaded.model.named_parameters();
    auto p2 = again.model.named_parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].name == p2[i].name);
        for (std::int64_t j = 0; j < p1[i].tensor.numel(); ++j) {
            CHECK(p1[i].tensor.data()[static_cast<std::size_t>(j)] ==
                  p2[i].tensor.data()[static_cast<std::size_t>(j)]);
        }
    }
    CHECK_THROWS_AS(load_checkpoint<float>((dir / "nope").string()), IoError);
}

TEST_CASE("train_run: a heavily overfit tiny run reaches 0.95 train bACC") {
    auto world = tiny_world(Task::diagnosis, 29);
    // Select on the training subjects themselves: pure memorization.
    world.roles.val = world.roles.train;
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::daft);
    cfg.epochs = 60;
    cfg.lr0 = 0.0055;
    const auto dir = fresh_dir("overfit");
    const auto result = train_run(world.ds, world.roles, cfg, dir.string());
    auto loaded = load_checkpoint<float>(dir.string());
    const auto train_eval =
        evaluate_split(loaded.model, world.ds, world.roles.train, loaded.stats, cfg.batch_size);
    CHECK(train_eval.metric >= 0.95);
    CHECK(result.epochs.size() == 60);
}

TEST_CASE("grid_search: single-point grid equals train_run") {
    auto world = tiny_world(Task::diagnosis, 31);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::tabular_linear);
    cfg.lr_grid = {0.005};
    cfg.wd_grid = {0.0};
    cfg.lr0 = 0.005;
    cfg.weight_decay = 0.0;
    const auto grid = grid_search(world.ds, world.roles, cfg, 1, "");
    REQUIRE(grid.runs.size() == 1);
    const auto solo = train_run(world.ds, world.roles, cfg, "");
    CHECK(grid.runs[0].test_metric == solo.test_metric);
    CHECK(grid.runs[0].best_val_metric == solo.best_val_metric);
}

TEST_CASE("grid_search: full default grid emits 15 rows in lr-major order") {
    auto world = tiny_world(Task::diagnosis, 37);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::tabular_linear);
    const auto grid = grid_search(world.ds, world.roles, cfg, 2, "");
    REQUIRE(grid.runs.size() == 15);
    std::size_t i = 0;
    for (const double lr : cfg.lr_grid) {
        for (const double wd : cfg.wd_grid) {
            CHECK(grid.runs[i].config.lr0 == lr);
            CHECK(grid.runs[i].config.weight_decay == wd);
            ++i;
        }
    }
}

TEST_CASE("grid_search: ties break toward lower lr0 then lower weight decay") {
    auto world = tiny_world(Task::diagnosis, 41);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::concat_1fc);
    // Learning rates too small to change any prediction: all runs tie.
    cfg.lr_grid = {1e-7, 1e-8};
    cfg.wd_grid = {1e-4, 0.0};
    const auto grid = grid_search(world.ds, world.roles, cfg, 2, "");
    REQUIRE(grid.runs.size() == 4);
    const double v = grid.runs[0].best_val_metric;
    for (const auto& run : grid.runs) REQUIRE(run.best_val_metric == v);
    CHECK(grid.runs[grid.selected].config.lr0 == 1e-8);
    CHECK(grid.runs[grid.selected].config.weight_decay == 0.0);
}

TEST_CASE("grid_search: individual failures are recorded and the search continues") {
    auto world = tiny_world(Task::diagnosis, 43);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::daft);
    cfg.epochs = 2;
    cfg.lr_grid = {1e9, 0.005};  // the first run diverges to non-finite values
    cfg.wd_grid = {0.0};
    const auto grid = grid_search(world.ds, world.roles, cfg, 2, "");
    REQUIRE(grid.runs.size() == 2);
    CHECK(grid.runs[0].failed);
    CHECK_FALSE(grid.runs[0].error.empty());
    CHECK_FALSE(grid.runs[1].failed);
    CHECK(grid.selected == 1);

    cfg.lr_grid = {1e9, 1e10};
    CHECK_THROWS_AS(grid_search(world.ds, world.roles, cfg, 2, ""), Error);
}

TEST_CASE("run_ablation: zero sigma rows have exactly zero delta") {
    auto world = tiny_world(Task::diagnosis, 47);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::daft);
    cfg.epochs = 2;
    const auto dir = fresh_dir("ablate");
    (void)train_run(world.ds, world.roles, cfg, dir.string());
    auto loaded = load_checkpoint<float>(dir.string());

    const std::vector<double> sigmas{0.0, 0.5};
    const std::vector<std::uint64_t> seeds{1, 2};
    const auto rows = run_ablation(loaded.model, world.ds, world.roles, loaded.stats,
                                   AblationMode::noise_alpha, sigmas, seeds, 16);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].sigma == 0.0);
    CHECK(rows[0].delta == 0.0);

    const auto mean_rows = run_ablation(loaded.model, world.ds, world.roles, loaded.stats,
                                        AblationMode::mean_beta, {}, {}, 16);
    REQUIRE(mean_rows.size() == 1);
    CHECK(std::isfinite(mean_rows[0].metric));
}

TEST_CASE("run_ablation: mean_beta row matches a recompute-by-hand pass on held-out subjects") {
    auto world = tiny_world(Task::diagnosis, 59);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::daft);
    cfg.epochs = 4;
    const auto dir = fresh_dir("ablate_replay");
    (void)train_run(world.ds, world.roles, cfg, dir.string());
    auto loaded = load_checkpoint<float>(dir.string());

    const auto rows = run_ablation(loaded.model, world.ds, world.roles, loaded.stats,
                                   AblationMode::mean_beta, {}, {}, 16);
    REQUIRE(rows.size() == 1);

    // Replay by hand: per-channel beta means over the train split, then
    // per-subject overridden predictions on the held-out test subjects.
    std::vector<std::pair<TensorF, TensorF>> train_batches;
    for (const auto idx : world.roles.train) {
        const std::size_t one[] = {idx};
        train_batches.push_back(make_batch<float>(world.ds, one, loaded.stats));
    }
    const auto [mean_alpha, mean_beta] = modulation_stats<float>(loaded.model, train_batches);
    ModulationOverride<float> override_spec;
    override_spec.fix_beta = mean_beta;

    loaded.model.set_training(false);
    std::vector<int> pred;
    for (const auto idx : world.roles.test) {
        const std::size_t one[] = {idx};
        auto [image, tabular] = make_batch<float>(world.ds, one, loaded.stats);
        const auto out = loaded.model.forward_with_override(image, tabular, override_spec);
        int best = 0;
        for (std::int64_t c = 1; c < out.dim(1); ++c) {
            if (out.data()[static_cast<std::size_t>(c)] >
                out.data()[static_cast<std::size_t>(best)]) {
                best = static_cast<int>(c);
            }
        }
        pred.push_back(best);
    }
    const auto truth = gather_diagnosis(world.ds, world.roles.test);
    CHECK(rows[0].metric == doctest::Approx(balanced_accuracy(pred, truth)).epsilon(1e-12));
}

TEST_CASE("run_ablation: constant alpha model has zero mean_alpha delta") {
    auto world = tiny_world(Task::diagnosis, 53);
    auto cfg = tiny_run_config(Task::diagnosis, FusionVariant::daft);
    cfg.model.daft.scale_enabled = false;  // alpha is constant 1
    cfg.epochs = 2;
    const auto dir = fresh_dir("ablate_const");
    (void)train_run(world.ds, world.roles, cfg, dir.string());
    auto loaded = load_checkpoint<float>(dir.string());
    const auto rows = run_ablation(loaded.model, world.ds, world.roles, loaded.stats,
                                   AblationMode::mean_alpha, {}, {}, 16);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].delta == 0.0);

    auto concat_cfg = tiny_run_config(Task::diagnosis, FusionVariant::concat_1fc);
    const auto cdir = fresh_dir("ablate_concat");
    (void)train_run(world.ds, world.roles, concat_cfg, cdir.string());
    auto concat_loaded = load_checkpoint<float>(cdir.string());
    CHECK_THROWS_AS(run_ablation(concat_loaded.model, world.ds, world.roles, concat_loaded.stats,
                                 AblationMode::mean_alpha, {}, {}, 16),
                    ValueError);
}

TEST_CASE("cli: generate, split, train, evaluate pipeline") {
    const auto dir = fresh_dir("cli");
    const auto ds_dir = dir / "ds";
    const auto split_file = dir / "split.txt";
    const auto out_dir = dir / "out";

    {
        std::ofstream cfg(dir / "gen.ini");
        cfg << "[generate]\nn = 50\nsize = 8\ntask = diagnosis\nseed = 5\n";
    }
    {
        std::ofstream cfg(dir / "run.ini");
        cfg << "[run]\ntask = diagnosis\nepochs = 1\nbatch_size = 16\nlr0 = 0.005\nseed = 3\n"
            << "[paths]\ndataset = " << ds_dir.string() << "\nsplit = " << split_file.string()
            << "\nout = " << out_dir.string() << "\n"
            << "[model]\nfusion_variant = daft\nstem_channels = 4\nblock_channels = 4, 8\n"
            << "block_strides = 2, 2\n";
    }
    auto run = [](const std::string& cmd) {
        return std::system((std::string(DAFT_CLI_PATH) + " " + cmd + " >/dev/null 2>&1").c_str());
    };
    CHECK(run("generate --config " + (dir / "gen.ini").string() + " --out " + ds_dir.string()) ==
          0);
    CHECK(run("split --dataset " + ds_dir.string() + " --seed 1 --out " + split_file.string()) ==
          0);
    CHECK(run("train --config " + (dir / "run.ini").string()) == 0);
    CHECK(fs::exists(out_dir / "results.jsonl"));
    CHECK(fs::exists(out_dir / "metrics.csv"));
    CHECK(fs::exists(out_dir / "ckpt" / "run" / "manifest.txt"));
    CHECK(run("evaluate --checkpoint " + (out_dir / "ckpt" / "run").string() + " --dataset " +
              ds_dir.string() + " --split " + split_file.string() + " --role test") == 0);
    CHECK(run("ablate --checkpoint " + (out_dir / "ckpt" / "run").string() + " --dataset " +
              ds_dir.string() + " --split " + split_file.string() +
              " --mode noise_beta --sigmas 0 0.5 --seeds 1 2") == 0);

    // Exit code contract: 1 for usage/config problems, 2 for runtime failures.
    CHECK(run("train") != 0);
    {
        std::ofstream bad(dir / "bad.ini");
        bad << "[run]\nepochs = banana\n";
    }
    const int config_error =
        std::system((std::string(DAFT_CLI_PATH) + " train --config " + (dir / "bad.ini").string() +
                     " >/dev/null 2>&1")
                        .c_str());
    CHECK(WEXITSTATUS(config_error) == 1);
    const int missing_ckpt =
        std::system((std::string(DAFT_CLI_PATH) + " evaluate --checkpoint " +
                     (dir / "missing").string() + " --dataset " + ds_dir.string() + " --split " +
                     split_file.string() + " >/dev/null 2>&1")
                        .c_str());
    CHECK(WEXITSTATUS(missing_ckpt) == 2);
}
