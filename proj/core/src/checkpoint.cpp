#include "daft/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "daft/serialize.hpp"

namespace daft {

namespace fs = std::filesystem;

namespace {

std::string shape_entry(const Shape& shape) {
    std::string out;
    for (const auto d : shape) out += " " + std::to_string(d);
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string stats_line(const std::array<double, kTabularVariableCount>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        out += format_double(values[i]);
    }
    return out;
}

std::array<double, kTabularVariableCount> parse_stats_line(const std::string& line) {
    std::array<double, kTabularVariableCount> out{};
    std::istringstream is(line);
    std::string item;
    std::size_t idx = 0;
    while (std::getline(is, item, ',')) {
        if (idx >= out.size()) throw IoError("checkpoint: too many normalization entries");
        out[idx++] = std::stod(item);
    }
    if (idx != out.size()) throw IoError("checkpoint: missing normalization entries");
    return out;
}

}  // namespace

template <typename T>
void save_checkpoint(Model<T>& model, const NormalizationStats& stats, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "tensors");

    IniDoc doc;
    doc.set("checkpoint", "format", "daft-checkpoint 1");
    doc.set("checkpoint", "dtype", dtype_name<T>());
    model_config_to_ini(model.config(), doc);
    doc.set("normalization", "mean", stats_line(stats.mean));
    doc.set("normalization", "stddev", stats_line(stats.stddev));

    for (auto& [name, tensor] : model.named_parameters()) {
        doc.sections["tensors"].emplace_back(
            "param", name + " " + dtype_name<T>() + shape_entry(tensor.shape()));
        save_tensor(tensor, (root / "tensors" / (name + ".bin")).string(),
                    (root / "tensors" / (name + ".meta")).string());
    }
    for (auto& [name, buffer] : model.named_buffers()) {
        const Shape shape{static_cast<std::int64_t>(buffer->size())};
        doc.sections["tensors"].emplace_back(
            "buffer", name + " " + dtype_name<T>() + shape_entry(shape));
        save_tensor(Tensor<T>::from_data(shape, *buffer),
                    (root / "tensors" / (name + ".bin")).string(),
                    (root / "tensors" / (name + ".meta")).string());
    }

    std::ofstream manifest(root / "manifest.txt");
    if (!manifest) throw IoError("cannot write checkpoint manifest in " + dir);
    manifest << doc.serialize();
    if (!manifest.flush()) throw IoError("failed writing checkpoint manifest in " + dir);
}

namespace {

template <typename T>
void load_tensors_into(Model<T>& model, const fs::path& root, const IniDoc& doc,
                       bool backbone_only) {
    const auto it = doc.sections.find("tensors");
    if (it == doc.sections.end()) throw IoError("checkpoint manifest lists no tensors");

    auto params = model.named_parameters();
    auto buffers = model.named_buffers();
    auto is_backbone = [](const std::string& name) {
        return name.rfind("stem", 0) == 0 || name.rfind("block", 0) == 0;
    };

    std::size_t restored = 0;
    for (const auto& [kind, entry] : it->second) {
        std::istringstream is(entry);
        std::string name, dtype;
        is >> name >> dtype;
        Shape shape;
        std::int64_t d;
        while (is >> d) shape.push_back(d);
        if (dtype != dtype_name<T>()) {
            throw IoError("checkpoint tensor " + name + " has dtype " + dtype + ", expected " +
                          dtype_name<T>());
        }
        if (backbone_only && !is_backbone(name)) continue;
        const auto loaded = load_tensor<T>((root / "tensors" / (name + ".bin")).string(),
                                           (root / "tensors" / (name + ".meta")).string());
        if (loaded.shape() != shape) {
            throw IoError("checkpoint tensor " + name + " shape mismatch between manifest and file");
        }
        if (kind == "param") {
            bool found = false;
            for (auto& [pname, tensor] : params) {
                if (pname != name) continue;
                if (tensor.shape() != shape) {
                    throw IoError("checkpoint param " + name + " has shape " +
                                  shape_to_string(shape) + ", model expects " +
                                  shape_to_string(tensor.shape()));
                }
                auto dst = tensor.data_mut();
                std::copy(loaded.data().begin(), loaded.data().end(), dst.begin());
                found = true;
                break;
            }
            if (!found && !backbone_only) {
                throw IoError("checkpoint param " + name + " has no matching model parameter");
            }
            restored += found ? 1 : 0;
        } else if (kind == "buffer") {
            bool found = false;
            for (auto& [bname, buffer] : buffers) {
                if (bname != name) continue;
                if (static_cast<std::int64_t>(buffer->size()) != shape_numel(shape)) {
                    throw IoError("checkpoint buffer " + name + " size mismatch");
                }
                std::copy(loaded.data().begin(), loaded.data().end(), buffer->begin());
                found = true;
                break;
            }
            if (!found && !backbone_only) {
                throw IoError("checkpoint buffer " + name + " has no matching model buffer");
            }
            restored += found ? 1 : 0;
        } else {
            throw IoError("checkpoint manifest has unknown tensor kind '" + kind + "'");
        }
    }
    if (restored == 0) throw IoError("checkpoint restored no tensors");
}

}  // namespace

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root / "manifest.txt")) {
        throw IoError("checkpoint manifest not found: " + (root / "manifest.txt").string());
    }
    const IniDoc doc = IniDoc::parse_file((root / "manifest.txt").string());
    const auto* format = doc.find("checkpoint", "format");
    if (!format || *format != "daft-checkpoint 1") {
        throw IoError("unrecognized checkpoint format in " + dir);
    }
    const auto* dtype = doc.find("checkpoint", "dtype");
    if (!dtype || *dtype != dtype_name<T>()) {
        throw IoError("checkpoint dtype mismatch in " + dir);
    }

    std::vector<std::string> problems;
    const ModelConfig cfg = model_config_from_ini(doc, problems);
    if (!problems.empty()) {
        std::string msg = "invalid model config in checkpoint:";
        for (const auto& p : problems) msg += " [" + p + "]";
        throw IoError(msg);
    }

    LoadedCheckpoint<T> out{build_model<T>(cfg, 0), NormalizationStats{}};
    const auto* mean = doc.find("normalization", "mean");
    const auto* stddev = doc.find("normalization", "stddev");
    if (!mean || !stddev) throw IoError("checkpoint lacks normalization stats");
    out.stats.mean = parse_stats_line(*mean);
    out.stats.stddev = parse_stats_line(*stddev);

    load_tensors_into(out.model, root, doc, /*backbone_only=*/false);
    return out;
}

template <typename T>
void load_backbone_from_checkpoint(Model<T>& model, const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root / "manifest.txt")) {
        throw IoError("checkpoint manifest not found: " + (root / "manifest.txt").string());
    }
    const IniDoc doc = IniDoc::parse_file((root / "manifest.txt").string());
    load_tensors_into(model, root, doc, /*backbone_only=*/true);
}

template void save_checkpoint(Model<float>&, const NormalizationStats&, const std::string&);
template void save_checkpoint(Model<double>&, const NormalizationStats&, const std::string&);
template LoadedCheckpoint<float> load_checkpoint(const std::string&);
template LoadedCheckpoint<double> load_checkpoint(const std::string&);
template void load_backbone_from_checkpoint(Model<float>&, const std::string&);
template void load_backbone_from_checkpoint(Model<double>&, const std::string&);

}  // namespace daft
