#include "daft/config.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace daft {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string current;
    for (const char c : s) {
        if (c == ',') {
            out.push_back(trim(current));
            current.clear();
        } else {
            current += c;
        }
    }
    const auto last = trim(current);
    if (!last.empty() || !out.empty()) out.push_back(last);
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

/// Collects typed values from one section, recording missing/invalid keys.
class SectionReader {
public:
    SectionReader(const IniDoc& doc, std::string section, std::vector<std::string>& problems)
        : doc_(doc), section_(std::move(section)), problems_(problems) {}

    void read(const std::string& key, std::string& into) {
        if (const auto* v = doc_.find(section_, key)) into = *v;
        seen_.push_back(key);
    }
    void read(const std::string& key, bool& into) {
        if (const auto* v = doc_.find(section_, key)) {
            if (*v == "true" || *v == "1") {
                into = true;
            } else if (*v == "false" || *v == "0") {
                into = false;
            } else {
                problems_.push_back(section_ + "." + key + ": expected boolean, got '" + *v + "'");
            }
        }
        seen_.push_back(key);
    }
    template <typename T>
    void read_number(const std::string& key, T& into) {
        if (const auto* v = doc_.find(section_, key)) {
            try {
                std::size_t pos = 0;
                const double parsed = std::stod(*v, &pos);
                if (pos != v->size()) throw std::invalid_argument(*v);
                into = static_cast<T>(parsed);
            } catch (const std::exception&) {
                problems_.push_back(section_ + "." + key + ": expected number, got '" + *v + "'");
            }
        }
        seen_.push_back(key);
    }
    template <typename T>
    void read_number_list(const std::string& key, std::vector<T>& into) {
        if (const auto* v = doc_.find(section_, key)) {
            std::vector<T> values;
            for (const auto& item : split_list(*v)) {
                try {
                    std::size_t pos = 0;
                    const double parsed = std::stod(item, &pos);
                    if (pos != item.size()) throw std::invalid_argument(item);
                    values.push_back(static_cast<T>(parsed));
                } catch (const std::exception&) {
                    problems_.push_back(section_ + "." + key + ": bad list entry '" + item + "'");
                    return;
                }
            }
            into = std::move(values);
        }
        seen_.push_back(key);
    }
    template <typename Enum, typename Parser>
    void read_enum(const std::string& key, Enum& into, Parser parser) {
        if (const auto* v = doc_.find(section_, key)) {
            try {
                into = parser(*v);
            } catch (const std::exception& e) {
                problems_.push_back(section_ + "." + key + ": " + e.what());
            }
        }
        seen_.push_back(key);
    }

    /// Any key in the section that was never requested is an error.
    void finish() {
        const auto it = doc_.sections.find(section_);
        if (it == doc_.sections.end()) return;
        for (const auto& [key, value] : it->second) {
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
                problems_.push_back(section_ + "." + key + ": unknown key");
            }
        }
    }

private:
    const IniDoc& doc_;
    std::string section_;
    std::vector<std::string>& problems_;
    std::vector<std::string> seen_;
};

void throw_if_problems(const std::vector<std::string>& problems, const std::string& what) {
    if (problems.empty()) return;
    std::string msg = what + ":";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
}

}  // namespace

IniDoc IniDoc::parse_string(const std::string& text) {
    IniDoc doc;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section '" + t +
                                  "'");
            }
            section = trim(t.substr(1, t.size() - 2));
            doc.sections.try_emplace(section);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" +
                              t + "'");
        }
        doc.sections[section].emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return doc;
}

IniDoc IniDoc::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str());
}

std::string IniDoc::serialize() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& [section, entries] : sections) {
        if (!first) out << "\n";
        first = false;
        out << '[' << section << "]\n";
        for (const auto& [key, value] : entries) out << key << " = " << value << "\n";
    }
    return out.str();
}

bool IniDoc::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

const std::string* IniDoc::find(const std::string& section, const std::string& key) const {
    const auto it = sections.find(section);
    if (it == sections.end()) return nullptr;
    for (const auto& [k, v] : it->second) {
        if (k == key) return &v;
    }
    return nullptr;
}

void IniDoc::set(const std::string& section, const std::string& key, const std::string& value) {
    auto& entries = sections[section];
    for (auto& [k, v] : entries) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries.emplace_back(key, value);
}

ModelConfig model_config_from_ini(const IniDoc& doc, std::vector<std::string>& problems) {
    ModelConfig cfg;
    {
        SectionReader model(doc, "model", problems);
        model.read_enum("fusion_variant", cfg.fusion_variant, fusion_variant_from_string);
        model.read_enum("task", cfg.task, task_from_string);
        model.read_number("in_channels", cfg.in_channels);
        model.read_number("stem_channels", cfg.stem_channels);
        model.read_number_list("block_channels", cfg.block_channels);
        model.read_number_list("block_strides", cfg.block_strides);
        model.read_number("tabular_dim", cfg.tabular_dim);
        model.read_number("num_classes", cfg.num_classes);
        model.read_number("concat_bottleneck_dim", cfg.concat_bottleneck_dim);
        model.read("frozen_backbone_checkpoint", cfg.frozen_backbone_checkpoint);
        model.finish();
    }
    {
        SectionReader daft(doc, "model.daft", problems);
        daft.read_number("bottleneck_dim", cfg.daft.bottleneck_dim);
        daft.read_number("squeeze_factor", cfg.daft.squeeze_factor);
        daft.read_enum("scale_activation", cfg.daft.scale_activation,
                       scale_activation_from_string);
        daft.read("scale_enabled", cfg.daft.scale_enabled);
        daft.read("shift_enabled", cfg.daft.shift_enabled);
        daft.read_enum("location", cfg.daft.location, hook_from_string);
        daft.read("condition_on_image", cfg.daft.condition_on_image);
        daft.finish();
    }
    return cfg;
}

void model_config_to_ini(const ModelConfig& cfg, IniDoc& doc) {
    doc.set("model", "fusion_variant", to_string(cfg.fusion_variant));
    doc.set("model", "task", to_string(cfg.task));
    doc.set("model", "in_channels", std::to_string(cfg.in_channels));
    doc.set("model", "stem_channels", std::to_string(cfg.stem_channels));
    auto join = [](const std::vector<std::int64_t>& v) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ", ";
            out += std::to_string(v[i]);
        }
        return out;
    };
    doc.set("model", "block_channels", join(cfg.block_channels));
    doc.set("model", "block_strides", join(cfg.block_strides));
    doc.set("model", "tabular_dim", std::to_string(cfg.tabular_dim));
    doc.set("model", "num_classes", std::to_string(cfg.num_classes));
    doc.set("model", "concat_bottleneck_dim", std::to_string(cfg.concat_bottleneck_dim));
    if (!cfg.frozen_backbone_checkpoint.empty()) {
        doc.set("model", "frozen_backbone_checkpoint", cfg.frozen_backbone_checkpoint);
    }
    doc.set("model.daft", "bottleneck_dim", std::to_string(cfg.daft.bottleneck_dim));
    doc.set("model.daft", "squeeze_factor", std::to_string(cfg.daft.squeeze_factor));
    doc.set("model.daft", "scale_activation", to_string(cfg.daft.scale_activation));
    doc.set("model.daft", "scale_enabled", cfg.daft.scale_enabled ? "true" : "false");
    doc.set("model.daft", "shift_enabled", cfg.daft.shift_enabled ? "true" : "false");
    doc.set("model.daft", "location", to_string(cfg.daft.location));
    doc.set("model.daft", "condition_on_image", cfg.daft.condition_on_image ? "true" : "false");
}

RunConfig run_config_from_ini(const IniDoc& doc) {
    std::vector<std::string> problems;
    RunConfig cfg;
    {
        SectionReader run(doc, "run", problems);
        run.read_enum("task", cfg.task, task_from_string);
        run.read_number("epochs", cfg.epochs);
        run.read_number("batch_size", cfg.batch_size);
        run.read_number("lr0", cfg.lr0);
        run.read_number("weight_decay", cfg.weight_decay);
        run.read_number("seed", cfg.seed);
        run.read_number("fold", cfg.fold);
        run.read_number("workers", cfg.workers);
        run.finish();
    }
    {
        SectionReader paths(doc, "paths", problems);
        paths.read("dataset", cfg.dataset_dir);
        paths.read("split", cfg.split_path);
        paths.read("out", cfg.out_dir);
        paths.finish();
    }
    {
        SectionReader grid(doc, "grid", problems);
        grid.read_number_list("lr0", cfg.lr_grid);
        grid.read_number_list("weight_decay", cfg.wd_grid);
        grid.finish();
    }
    cfg.model = model_config_from_ini(doc, problems);
    if (!doc.has("model", "task")) cfg.model.task = cfg.task;
    if (cfg.model.task != cfg.task) {
        problems.push_back("model.task disagrees with run.task");
    }
    if (cfg.batch_size <= 0) problems.push_back("run.batch_size: must be positive");
    if (cfg.epochs < 0) problems.push_back("run.epochs: must be non-negative");
    if (cfg.workers <= 0) problems.push_back("run.workers: must be positive");
    if (cfg.lr0 <= 0) problems.push_back("run.lr0: must be positive");
    if (cfg.weight_decay < 0) problems.push_back("run.weight_decay: must be non-negative");
    if (cfg.lr_grid.empty()) problems.push_back("grid.lr0: empty grid");
    if (cfg.wd_grid.empty()) problems.push_back("grid.weight_decay: empty grid");
    for (const auto& [section, entries] : doc.sections) {
        if (section != "run" && section != "paths" && section != "grid" && section != "model" &&
            section != "model.daft" && section != "generate") {
            problems.push_back(section + ": unknown section");
        }
    }
    throw_if_problems(problems, "invalid run config");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_ini(IniDoc::parse_file(path));
}

IniDoc run_config_to_ini(const RunConfig& cfg) {
    IniDoc doc;
    doc.set("run", "task", to_string(cfg.task));
    doc.set("run", "epochs", std::to_string(cfg.epochs));
    doc.set("run", "batch_size", std::to_string(cfg.batch_size));
    doc.set("run", "lr0", format_double(cfg.lr0));
    doc.set("run", "weight_decay", format_double(cfg.weight_decay));
    doc.set("run", "seed", std::to_string(cfg.seed));
    doc.set("run", "fold", std::to_string(cfg.fold));
    doc.set("run", "workers", std::to_string(cfg.workers));
    if (!cfg.dataset_dir.empty()) doc.set("paths", "dataset", cfg.dataset_dir);
    if (!cfg.split_path.empty()) doc.set("paths", "split", cfg.split_path);
    if (!cfg.out_dir.empty()) doc.set("paths", "out", cfg.out_dir);
    auto join_doubles = [](const std::vector<double>& v) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ", ";
            out += format_double(v[i]);
        }
        return out;
    };
    doc.set("grid", "lr0", join_doubles(cfg.lr_grid));
    doc.set("grid", "weight_decay", join_doubles(cfg.wd_grid));
    ModelConfig model = cfg.model;
    model.task = cfg.task;  // run.task is the single source of truth
    model_config_to_ini(model, doc);
    return doc;
}

SyntheticSpec generate_spec_from_ini(const IniDoc& doc) {
    std::vector<std::string> problems;
    SyntheticSpec spec;
    SectionReader gen(doc, "generate", problems);
    gen.read_number("n", spec.n);
    gen.read_number("size", spec.size);
    gen.read_enum("task", spec.task, task_from_string);
    gen.read_number("seed", spec.seed);
    gen.read_number("image_noise", spec.image_noise);
    gen.read_number("tabular_noise", spec.tabular_noise);
    gen.read_number("missing_rate", spec.missing_rate);
    gen.read_number("censoring_rate", spec.censoring_rate);
    gen.read_number("gate_floor", spec.gate_floor);
    gen.read_number("tabular_weight", spec.tabular_weight);
    gen.read_number("hazard_scale", spec.hazard_scale);
    gen.finish();
    throw_if_problems(problems, "invalid generate config");
    return spec;
}

SyntheticSpec load_generate_spec(const std::string& path) {
    return generate_spec_from_ini(IniDoc::parse_file(path));
}

}  // namespace daft
