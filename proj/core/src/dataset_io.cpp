#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "daft/data.hpp"
#include "daft/serialize.hpp"

namespace daft {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string current;
    for (const char c : line) {
        if (c == ',') {
            fields.push_back(current);
            current.clear();
        } else if (c != '\r') {
            current += c;
        }
    }
    fields.push_back(current);
    return fields;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("cannot parse number '" + s + "' in " + context);
    }
}

std::string checksum_hex(const std::string& path) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << file_checksum(path);
    return os.str();
}

void verify_checksum(const fs::path& dir, const std::string& rel, const std::string& expected) {
    const std::string full = (dir / rel).string();
    if (!fs::exists(full)) throw IoError("dataset file missing: " + full);
    if (checksum_hex(full) != expected) {
        throw IoError("checksum mismatch for file " + rel);
    }
}

const std::string kTabularHeader =
    "id,age,gender,education,apoe4,abeta42,ptau181,ttau,fdg_pet,av45_pet";

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "volumes");

    bool have_latents = !ds.subjects.empty();
    for (const auto& s : ds.subjects) {
        if (!s.z_img || !s.z_tab || !s.true_risk) have_latents = false;
    }

    {
        std::ofstream tab(root / "tabular.csv");
        if (!tab) throw IoError("cannot write tabular.csv in " + dir);
        tab << kTabularHeader << "\n";
        for (const auto& s : ds.subjects) {
            tab << s.id;
            for (int v = 0; v < kTabularVariableCount; ++v) {
                tab << ',';
                if (const auto val = s.tabular.value(v)) tab << format_double(*val);
            }
            tab << "\n";
        }
    }
    {
        std::ofstream lab(root / "labels.csv");
        if (!lab) throw IoError("cannot write labels.csv in " + dir);
        if (ds.task == Task::diagnosis) {
            lab << "id,diagnosis\n";
            for (const auto& s : ds.subjects) {
                lab << s.id << ',' << s.diagnosis.class_index << "\n";
            }
        } else {
            lab << "id,time,event\n";
            for (const auto& s : ds.subjects) {
                if (!s.survival) {
                    throw ValueError("save_dataset: survival task but subject '" + s.id +
                                     "' has no survival label");
                }
                lab << s.id << ',' << format_double(s.survival->time) << ','
                    << (s.survival->event ? 1 : 0) << "\n";
            }
        }
    }
    if (have_latents) {
        std::ofstream lat(root / "latents.csv");
        if (!lat) throw IoError("cannot write latents.csv in " + dir);
        lat << "id,z_img,z_tab,true_risk\n";
        for (const auto& s : ds.subjects) {
            lat << s.id << ',' << format_double(*s.z_img) << ',' << format_double(*s.z_tab) << ','
                << format_double(*s.true_risk) << "\n";
        }
    }

    for (const auto& s : ds.subjects) {
        const auto vol = Tensor<float>::from_data(
            {1, ds.volume_size, ds.volume_size, ds.volume_size},
            std::vector<float>(s.volume.begin(), s.volume.end()));
        save_tensor(vol, (root / "volumes" / (s.id + ".f32")).string(),
                    (root / "volumes" / (s.id + ".meta")).string());
    }

    std::ofstream manifest(root / "manifest.txt");
    if (!manifest) throw IoError("cannot write manifest.txt in " + dir);
    manifest << "daft-dataset 1\n";
    manifest << "task " << to_string(ds.task) << "\n";
    manifest << "volume_size " << ds.volume_size << "\n";
    manifest << "count " << ds.subjects.size() << "\n";
    manifest << "file tabular.csv " << checksum_hex((root / "tabular.csv").string()) << "\n";
    manifest << "file labels.csv " << checksum_hex((root / "labels.csv").string()) << "\n";
    if (have_latents) {
        manifest << "file latents.csv " << checksum_hex((root / "latents.csv").string()) << "\n";
    }
    for (const auto& s : ds.subjects) {
        const std::string rel = "volumes/" + s.id + ".f32";
        manifest << "subject " << s.id << ' ' << rel << ' '
                 << checksum_hex((root / rel).string()) << "\n";
    }
    if (!manifest.flush()) throw IoError("failed writing manifest.txt in " + dir);
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream manifest(root / "manifest.txt");
    if (!manifest) throw IoError("cannot read manifest.txt in " + dir);

    Dataset ds;
    std::vector<std::pair<std::string, std::string>> subject_files;  // id, rel path
    std::string line;
    std::size_t expected_count = 0;
    bool have_latents = false;
    {
        std::getline(manifest, line);
        if (line != "daft-dataset 1") throw IoError("unrecognized dataset manifest in " + dir);
    }
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "task") {
            std::string task;
            is >> task;
            ds.task = task_from_string(task);
        } else if (key == "volume_size") {
            is >> ds.volume_size;
        } else if (key == "count") {
            is >> expected_count;
        } else if (key == "file") {
            std::string rel, checksum;
            is >> rel >> checksum;
            verify_checksum(root, rel, checksum);
            if (rel == "latents.csv") have_latents = true;
        } else if (key == "subject") {
            std::string id, rel, checksum;
            is >> id >> rel >> checksum;
            verify_checksum(root, rel, checksum);
            subject_files.emplace_back(id, rel);
        } else {
            throw IoError("malformed manifest line: " + line);
        }
    }
    if (subject_files.size() != expected_count) {
        throw IoError("manifest count " + std::to_string(expected_count) + " disagrees with " +
                      std::to_string(subject_files.size()) + " subject entries");
    }

    // Tabular table.
    std::map<std::string, RawTabularRecord> tabular;
    {
        std::ifstream tab(root / "tabular.csv");
        if (!tab) throw IoError("cannot read tabular.csv in " + dir);
        std::getline(tab, line);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line != kTabularHeader) {
            throw IoError("tabular.csv header mismatch, expected '" + kTabularHeader + "'");
        }
        while (std::getline(tab, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != 1 + kTabularVariableCount) {
                throw IoError("tabular.csv row with " + std::to_string(fields.size()) +
                              " fields: " + line);
            }
            RawTabularRecord rec;
            const std::string& id = fields[0];
            for (int v = 0; v < kTabularVariableCount; ++v) {
                const std::string& cell = fields[static_cast<std::size_t>(v + 1)];
                if (cell.empty()) {
                    if (v < 3) {
                        throw ValueError(std::string("tabular.csv: always-present variable '") +
                                         kTabularVariableNames[v] + "' missing for subject " + id);
                    }
                    continue;
                }
                const double value = parse_double(cell, "tabular.csv");
                switch (v) {
                    case 0: rec.age = value; break;
                    case 1: rec.gender = value; break;
                    case 2: rec.education = value; break;
                    case 3: rec.apoe4 = value; break;
                    case 4: rec.abeta42 = value; break;
                    case 5: rec.ptau181 = value; break;
                    case 6: rec.ttau = value; break;
                    case 7: rec.fdg_pet = value; break;
                    case 8: rec.av45_pet = value; break;
                    default: break;
                }
            }
            tabular[id] = rec;
        }
    }

    // Labels.
    std::map<std::string, DiagnosisLabel> diagnosis;
    std::map<std::string, SurvivalLabel> survival;
    {
        std::ifstream lab(root / "labels.csv");
        if (!lab) throw IoError("cannot read labels.csv in " + dir);
        std::getline(lab, line);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const bool is_survival = line == "id,time,event";
        if (!is_survival && line != "id,diagnosis") {
            throw IoError("labels.csv header mismatch: " + line);
        }
        while (std::getline(lab, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (is_survival) {
                if (fields.size() != 3) throw IoError("labels.csv bad row: " + line);
                survival[fields[0]] = SurvivalLabel{parse_double(fields[1], "labels.csv"),
                                                    fields[2] == "1"};
            } else {
                if (fields.size() != 2) throw IoError("labels.csv bad row: " + line);
                diagnosis[fields[0]] =
                    DiagnosisLabel{static_cast<int>(parse_double(fields[1], "labels.csv"))};
            }
        }
    }

    // Latents (synthetic ground truth), optional.
    std::map<std::string, std::array<double, 3>> latents;
    if (have_latents) {
        std::ifstream lat(root / "latents.csv");
        if (!lat) throw IoError("cannot read latents.csv in " + dir);
        std::getline(lat, line);
        while (std::getline(lat, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != 4) throw IoError("latents.csv bad row: " + line);
            latents[fields[0]] = {parse_double(fields[1], "latents.csv"),
                                  parse_double(fields[2], "latents.csv"),
                                  parse_double(fields[3], "latents.csv")};
        }
    }

    ds.subjects.reserve(subject_files.size());
    for (const auto& [id, rel] : subject_files) {
        Subject s;
        s.id = id;
        const auto vol = load_tensor<float>((root / rel).string(),
                                            (root / (rel.substr(0, rel.size() - 4) + ".meta")).string());
        const Shape expected{1, ds.volume_size, ds.volume_size, ds.volume_size};
        if (vol.shape() != expected) {
            throw IoError("volume " + rel + " has shape " + shape_to_string(vol.shape()) +
                          ", expected " + shape_to_string(expected));
        }
        s.volume.assign(vol.data().begin(), vol.data().end());
        s.volume_size = ds.volume_size;
        const auto tab_it = tabular.find(id);
        if (tab_it == tabular.end()) throw IoError("subject " + id + " missing from tabular.csv");
        s.tabular = tab_it->second;
        if (ds.task == Task::diagnosis) {
            const auto it = diagnosis.find(id);
            if (it == diagnosis.end()) throw IoError("subject " + id + " missing from labels.csv");
            s.diagnosis = it->second;
        } else {
            const auto it = survival.find(id);
            if (it == survival.end()) throw IoError("subject " + id + " missing from labels.csv");
            s.survival = it->second;
        }
        if (const auto it = latents.find(id); it != latents.end()) {
            s.z_img = it->second[0];
            s.z_tab = it->second[1];
            s.true_risk = it->second[2];
        }
        ds.subjects.push_back(std::move(s));
    }
    return ds;
}

void save_split(const FoldSplit& split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write split file " + path);
    out << "id fold\n";
    for (const auto& [id, fold] : split.fold_of_subject) {
        out << id << ' ' << fold << "\n";
    }
    if (!out.flush()) throw IoError("failed writing split file " + path);
}

FoldSplit load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read split file " + path);
    std::string line;
    std::getline(in, line);
    FoldSplit split;
    int max_fold = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string id;
        int fold = 0;
        if (!(is >> id >> fold)) throw IoError("malformed split line: " + line);
        split.fold_of_subject[id] = fold;
        max_fold = std::max(max_fold, fold);
    }
    split.k = max_fold + 1 > 5 ? max_fold + 1 : 5;
    return split;
}

}  // namespace daft
