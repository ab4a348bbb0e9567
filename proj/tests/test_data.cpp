#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "daft/data.hpp"

using namespace daft;
namespace fs = std::filesystem;

namespace {

RawTabularRecord complete_record(double z = 0.5) {
    RawTabularRecord rec;
    rec.age = 70.0 + 10.0 * z;
    rec.gender = 1.0;
    rec.education = 16.0;
    rec.apoe4 = 1.0;
    rec.abeta42 = 800.0;
    rec.ptau181 = 30.0;
    rec.ttau = 250.0;
    rec.fdg_pet = 1.2;
    rec.av45_pet = 1.4;
    return rec;
}

Dataset tiny_dataset(int n, int classes = 3) {
    Dataset ds;
    ds.task = Task::diagnosis;
    ds.volume_size = 4;
    for (int i = 0; i < n; ++i) {
        Subject s;
        s.id = "t" + std::to_string(i);
        s.volume.assign(64, static_cast<float>(i));
        s.volume_size = 4;
        s.tabular = complete_record(static_cast<double>(i) / n);
        s.diagnosis.class_index = i % classes;
        ds.subjects.push_back(std::move(s));
    }
    return ds;
}

}  // namespace

TEST_CASE("encode_missingness: complete record") {
    const auto rec = complete_record();
    std::vector<RawTabularRecord> train{complete_record(0.0), complete_record(0.5),
                                        complete_record(1.0)};
    const auto stats = compute_normalization(train);
    const auto encoded = encode_missingness(rec, stats);
    REQUIRE(encoded.size() == 15);
    for (int i = 9; i < 15; ++i) CHECK(encoded[static_cast<std::size_t>(i)] == 0.0);
}

TEST_CASE("encode_missingness: missing abeta42 zeroes the slot and sets its indicator") {
    auto rec = complete_record();
    rec.abeta42.reset();
    std::vector<RawTabularRecord> train{complete_record(0.0), complete_record(1.0)};
    const auto stats = compute_normalization(train);
    const auto encoded = encode_missingness(rec, stats);
    CHECK(encoded[4] == 0.0);   // abeta42 value slot
    CHECK(encoded[10] == 1.0);  // abeta42 indicator
    for (int i = 9; i < 15; ++i) {
        if (i != 10) CHECK(encoded[static_cast<std::size_t>(i)] == 0.0);
    }
    for (const double v : encoded) CHECK((v == 0.0 || v == 1.0 || std::isfinite(v)));
}

TEST_CASE("encode_missingness: standardization against the training mean") {
    std::vector<RawTabularRecord> train;
    for (const double age : {70.0, 74.0, 78.0}) {
        auto rec = complete_record();
        rec.age = age;
        train.push_back(rec);
    }
    const auto stats = compute_normalization(train);
    auto probe = complete_record();
    probe.age = 74.0;
    CHECK(encode_missingness(probe, stats)[0] == doctest::Approx(0.0));
    probe.age = 78.0;
    CHECK(encode_missingness(probe, stats)[0] > 0.0);
}

TEST_CASE("encode_missingness: indicators are exactly 0 or 1 under random missingness") {
    SyntheticSpec spec;
    spec.n = 60;
    spec.size = 4;
    spec.seed = 5;
    spec.missing_rate = 0.5;
    const auto ds = generate_synthetic(spec);
    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < 30; ++i) train_idx.push_back(i);
    const auto stats = compute_normalization(gather_tabular(ds, train_idx));
    for (const auto& s : ds.subjects) {
        const auto encoded = encode_missingness(s.tabular, stats);
        REQUIRE(encoded.size() == 15);
        for (int i = 9; i < 15; ++i) {
            CHECK((encoded[static_cast<std::size_t>(i)] == 0.0 ||
                   encoded[static_cast<std::size_t>(i)] == 1.0));
        }
    }
}

TEST_CASE("stratified_kfold: ten subjects in one stratum split 2/2/2/2/2") {
    auto ds = tiny_dataset(10, 1);
    for (auto& s : ds.subjects) {
        s.tabular.age = 70.0;  // one age bin
        s.tabular.gender = 0.0;
    }
    const auto split = stratified_kfold(ds, 5, 3);
    std::vector<int> sizes(5, 0);
    for (const auto& [id, fold] : split.fold_of_subject) ++sizes[static_cast<std::size_t>(fold)];
    for (const int s : sizes) CHECK(s == 2);
}

TEST_CASE("stratified_kfold: 40/40/20 class mix gives 8/8/4 per fold") {
    Dataset ds;
    ds.task = Task::diagnosis;
    ds.volume_size = 4;
    for (int i = 0; i < 100; ++i) {
        Subject s;
        s.id = "p" + std::to_string(i);
        s.volume.assign(64, 0.0f);
        s.volume_size = 4;
        s.tabular = complete_record();
        s.tabular.age = 70.0;
        s.tabular.gender = 0.0;
        s.diagnosis.class_index = i < 40 ? 0 : (i < 80 ? 1 : 2);
        ds.subjects.push_back(std::move(s));
    }
    const auto split = stratified_kfold(ds, 5, 11);
    std::map<std::pair<int, int>, int> count;  // (fold, class) -> n
    for (const auto& s : ds.subjects) {
        ++count[{split.fold_of_subject.at(s.id), s.diagnosis.class_index}];
    }
    for (int fold = 0; fold < 5; ++fold) {
        CHECK(count[{fold, 0}] == 8);
        CHECK(count[{fold, 1}] == 8);
        CHECK(count[{fold, 2}] == 4);
    }
}

TEST_CASE("stratified_kfold: deterministic, partitioning, per-cell balance") {
    SyntheticSpec spec;
    spec.n = 120;
    spec.size = 4;
    spec.seed = 9;
    const auto ds = generate_synthetic(spec);
    const auto split_a = stratified_kfold(ds, 5, 7);
    const auto split_b = stratified_kfold(ds, 5, 7);
    CHECK(split_a.fold_of_subject == split_b.fold_of_subject);

    // Partition: every subject appears exactly once.
    CHECK(split_a.fold_of_subject.size() == ds.subjects.size());
    for (const auto& s : ds.subjects) {
        REQUIRE(split_a.fold_of_subject.count(s.id) == 1);
        const int fold = split_a.fold_of_subject.at(s.id);
        CHECK(fold >= 0);
        CHECK(fold < 5);
    }

    // Per-fold class counts deviate by at most 1 per (class) group since the
    // dealing is round-robin within each finer cell.
    std::map<std::pair<int, int>, int> count;
    for (const auto& s : ds.subjects) {
        ++count[{split_a.fold_of_subject.at(s.id), s.diagnosis.class_index}];
    }
    for (int cls = 0; cls < 3; ++cls) {
        int lo = 1 << 20, hi = 0;
        for (int fold = 0; fold < 5; ++fold) {
            lo = std::min(lo, count[{fold, cls}]);
            hi = std::max(hi, count[{fold, cls}]);
        }
        CHECK(hi - lo <= 5);  // at most one per underlying (sex x age-bin) cell
    }

    CHECK_THROWS_AS(stratified_kfold(tiny_dataset(3), 5, 1), ValueError);
}

TEST_CASE("assign_roles: disjoint cover with a 20% validation share") {
    SyntheticSpec spec;
    spec.n = 100;
    spec.size = 4;
    spec.seed = 13;
    const auto ds = generate_synthetic(spec);
    const auto split = stratified_kfold(ds, 5, 13);
    const auto roles = assign_roles(ds, split, 0, 99);

    std::set<std::size_t> seen;
    for (const auto& group : {roles.train, roles.val, roles.test}) {
        for (const auto i : group) CHECK(seen.insert(i).second);
    }
    CHECK(seen.size() == ds.subjects.size());
    CHECK(roles.test.size() == 20);
    CHECK(roles.val.size() >= 12);
    CHECK(roles.val.size() <= 20);
    for (const auto i : roles.test) {
        CHECK(split.fold_of_subject.at(ds.subjects[i].id) == 0);
    }
    CHECK_THROWS_AS(assign_roles(ds, split, 7, 99), ValueError);
}

TEST_CASE("generate_synthetic: noiseless open gate is perfectly recoverable from latents") {
    SyntheticSpec spec;
    spec.n = 300;
    spec.size = 4;
    spec.seed = 21;
    spec.image_noise = 0.0;
    spec.tabular_noise = 0.0;
    spec.gate_floor = 1.0;
    const auto ds = generate_synthetic(spec);

    // A Bayes classifier on the latents: thresholds at the empirical
    // tertiles of the recomputed score recover every label.
    std::vector<double> scores;
    for (const auto& s : ds.subjects) {
        scores.push_back(synthetic_score(*s.z_img, *s.z_tab, spec));
    }
    auto sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const double t1 = sorted[sorted.size() / 3];
    const double t2 = sorted[(2 * sorted.size()) / 3];
    std::vector<int> pred;
    std::vector<DiagnosisLabel> truth;
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        pred.push_back(scores[i] < t1 ? 0 : (scores[i] < t2 ? 1 : 2));
        truth.push_back(ds.subjects[i].diagnosis);
    }
    CHECK(balanced_accuracy(pred, truth) == doctest::Approx(1.0));
}

TEST_CASE("generate_synthetic: zero censoring rate means every label is an event") {
    SyntheticSpec spec;
    spec.n = 200;
    spec.size = 4;
    spec.task = Task::survival;
    spec.seed = 23;
    spec.censoring_rate = 0.0;
    const auto ds = generate_synthetic(spec);
    for (const auto& s : ds.subjects) {
        REQUIRE(s.survival.has_value());
        CHECK(s.survival->event);
        CHECK(s.survival->time > 0.0);
    }
}

TEST_CASE("generate_synthetic: empirical censoring fraction tracks the knob") {
    for (const double target : {0.3, 0.6}) {
        SyntheticSpec spec;
        spec.n = 600;
        spec.size = 4;
        spec.task = Task::survival;
        spec.seed = 29;
        spec.censoring_rate = target;
        const auto ds = generate_synthetic(spec);
        std::int64_t censored = 0;
        for (const auto& s : ds.subjects) censored += s.survival->event ? 0 : 1;
        const double fraction = static_cast<double>(censored) / 600.0;
        CHECK(fraction > target - 0.05);
        CHECK(fraction < target + 0.05);
    }
}

TEST_CASE("generate_synthetic: true-risk c-index ceiling at defaults") {
    SyntheticSpec spec;
    spec.n = 2000;
    spec.size = 4;  // volumes do not matter for the ceiling
    spec.task = Task::survival;
    spec.seed = 31;
    const auto ds = generate_synthetic(spec);
    std::vector<double> risk;
    std::vector<SurvivalLabel> labels;
    for (const auto& s : ds.subjects) {
        risk.push_back(*s.true_risk);
        labels.push_back(*s.survival);
    }
    CHECK(uno_cindex(risk, labels) >= 0.95);
}

TEST_CASE("generate_synthetic: knob validation and determinism") {
    SyntheticSpec bad;
    bad.n = 10;
    CHECK_THROWS_AS(generate_synthetic(bad), ValueError);
    SyntheticSpec bad2;
    bad2.n = 60;
    bad2.missing_rate = 1.5;
    CHECK_THROWS_AS(generate_synthetic(bad2), ValueError);

    SyntheticSpec spec;
    spec.n = 60;
    spec.size = 4;
    spec.seed = 37;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    for (std::size_t i = 0; i < a.subjects.size(); ++i) {
        CHECK(a.subjects[i].volume == b.subjects[i].volume);
        CHECK(a.subjects[i].diagnosis.class_index == b.subjects[i].diagnosis.class_index);
    }
}

TEST_CASE("save/load dataset: bit-exact round trip") {
    SyntheticSpec spec;
    spec.n = 53;
    spec.size = 4;
    spec.seed = 41;
    spec.missing_rate = 0.3;
    const auto ds = generate_synthetic(spec);
    const auto dir = fs::temp_directory_path() / "daft_ds_roundtrip";
    fs::remove_all(dir);
    save_dataset(ds, dir.string());
    const auto back = load_dataset(dir.string());

    REQUIRE(back.subjects.size() == ds.subjects.size());
    CHECK(back.task == ds.task);
    CHECK(back.volume_size == ds.volume_size);
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        const auto& a = ds.subjects[i];
        const auto& b = back.subjects[i];
        CHECK(a.id == b.id);
        CHECK(a.volume == b.volume);  // float32 bit-exact
        CHECK(a.diagnosis.class_index == b.diagnosis.class_index);
        for (int v = 0; v < kTabularVariableCount; ++v) {
            const auto av = a.tabular.value(v);
            const auto bv = b.tabular.value(v);
            CHECK(av.has_value() == bv.has_value());
            if (av) CHECK(*av == *bv);
        }
        REQUIRE(b.z_img.has_value());
        CHECK(*a.z_img == *b.z_img);
        CHECK(*a.true_risk == *b.true_risk);
    }
    fs::remove_all(dir);
}

TEST_CASE("load_dataset: hand-written tabular file with an empty abeta42 field") {
    SyntheticSpec spec;
    spec.n = 52;
    spec.size = 4;
    spec.seed = 43;
    spec.missing_rate = 0.0;
    auto ds = generate_synthetic(spec);
    ds.subjects[1].tabular.abeta42.reset();
    const auto dir = fs::temp_directory_path() / "daft_ds_missing";
    fs::remove_all(dir);
    save_dataset(ds, dir.string());

    // The saved cell must be empty, and load must bring it back as missing.
    {
        std::ifstream tab(dir / "tabular.csv");
        std::string line;
        std::getline(tab, line);
        std::getline(tab, line);
        std::getline(tab, line);  // subject s1
        CHECK(line.find(",,") != std::string::npos);
    }
    const auto back = load_dataset(dir.string());
    CHECK_FALSE(back.subjects[1].tabular.abeta42.has_value());
    CHECK(back.subjects[0].tabular.abeta42.has_value());

    std::vector<std::size_t> train{0, 2, 3};
    const auto stats = compute_normalization(gather_tabular(back, train));
    const auto encoded = encode_missingness(back.subjects[1].tabular, stats);
    CHECK(encoded[10] == 1.0);
    fs::remove_all(dir);
}

TEST_CASE("load_dataset: corrupted volume file is an error naming the file") {
    SyntheticSpec spec;
    spec.n = 51;
    spec.size = 4;
    spec.seed = 47;
    const auto ds = generate_synthetic(spec);
    const auto dir = fs::temp_directory_path() / "daft_ds_corrupt";
    fs::remove_all(dir);
    save_dataset(ds, dir.string());
    fs::resize_file(dir / "volumes" / "s3.f32", 16);
    try {
        (void)load_dataset(dir.string());
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("s3") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("load_dataset: checksum mismatch is an error naming the file") {
    SyntheticSpec spec;
    spec.n = 51;
    spec.size = 4;
    spec.seed = 49;
    const auto ds = generate_synthetic(spec);
    const auto dir = fs::temp_directory_path() / "daft_ds_checksum";
    fs::remove_all(dir);
    save_dataset(ds, dir.string());
    {
        std::ofstream tamper(dir / "tabular.csv", std::ios::app);
        tamper << "# tampered\n";
    }
    try {
        (void)load_dataset(dir.string());
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("tabular.csv") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("stratified_kfold: 100 subjects split into 5 folds of 20") {
    SyntheticSpec spec;
    spec.n = 100;
    spec.size = 4;
    spec.seed = 59;
    const auto ds = generate_synthetic(spec);
    const auto split = stratified_kfold(ds, 5, 59);
    std::vector<int> sizes(5, 0);
    for (const auto& [id, fold] : split.fold_of_subject) ++sizes[static_cast<std::size_t>(fold)];
    for (const int s : sizes) CHECK(s == 20);
}

TEST_CASE("generate: identical seeds produce identical dataset files") {
    SyntheticSpec spec;
    spec.n = 51;
    spec.size = 4;
    spec.seed = 61;
    const auto dir_a = fs::temp_directory_path() / "daft_ds_twin_a";
    const auto dir_b = fs::temp_directory_path() / "daft_ds_twin_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    save_dataset(generate_synthetic(spec), dir_a.string());
    save_dataset(generate_synthetic(spec), dir_b.string());
    // Same seed, same bytes: compare the checksums recorded in the manifests.
    auto manifest_body = [](const fs::path& dir) {
        std::ifstream in(dir / "manifest.txt");
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return buffer.str();
    };
    CHECK(manifest_body(dir_a) == manifest_body(dir_b));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("split file round-trips") {
    auto ds = tiny_dataset(10);
    const auto split = stratified_kfold(ds, 5, 3);
    const auto path = (fs::temp_directory_path() / "daft_split.txt").string();
    save_split(split, path);
    const auto back = load_split(path);
    CHECK(back.fold_of_subject == split.fold_of_subject);
    CHECK(back.k == split.k);
    fs::remove(path);
}

TEST_CASE("normalization statistics ignore val/test contents") {
    SyntheticSpec spec;
    spec.n = 80;
    spec.size = 4;
    spec.seed = 53;
    auto ds = generate_synthetic(spec);
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < 40; ++i) train.push_back(i);
    const auto before = compute_normalization(gather_tabular(ds, train));
    // Mutate every non-train subject.
    for (std::size_t i = 40; i < 80; ++i) {
        ds.subjects[i].tabular.age += 1000.0;
        ds.subjects[i].tabular.abeta42 = 1.0;
    }
    const auto after = compute_normalization(gather_tabular(ds, train));
    for (int v = 0; v < kTabularVariableCount; ++v) {
        CHECK(before.mean[v] == after.mean[v]);
        CHECK(before.stddev[v] == after.stddev[v]);
    }
}
