#include "daft/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace daft {

namespace {

template <typename T>
void swap_to_little_endian(std::vector<T>& data) {
    if constexpr (std::endian::native == std::endian::little) {
        (void)data;
    } else {
        for (auto& v : data) {
            auto* bytes = reinterpret_cast<unsigned char*>(&v);
            std::reverse(bytes, bytes + sizeof(T));
        }
    }
}

}  // namespace

template <typename T>
void save_tensor(const Tensor<T>& t, const std::string& data_path, const std::string& meta_path) {
    std::ofstream meta(meta_path);
    if (!meta) throw IoError("cannot write sidecar " + meta_path);
    meta << "dtype " << dtype_name<T>() << "\n";
    meta << "shape";
    for (auto d : t.shape()) meta << ' ' << d;
    meta << "\n";
    if (!meta.flush()) throw IoError("failed writing sidecar " + meta_path);

    std::vector<T> buffer(t.data().begin(), t.data().end());
    swap_to_little_endian(buffer);
    std::ofstream data(data_path, std::ios::binary);
    if (!data) throw IoError("cannot write tensor file " + data_path);
    data.write(reinterpret_cast<const char*>(buffer.data()),
               static_cast<std::streamsize>(buffer.size() * sizeof(T)));
    if (!data.flush()) throw IoError("failed writing tensor file " + data_path);
}

template <typename T>
Tensor<T> load_tensor(const std::string& data_path, const std::string& meta_path) {
    std::ifstream meta(meta_path);
    if (!meta) throw IoError("cannot read sidecar " + meta_path);
    std::string line, key, dtype;
    Shape shape;
    {
        std::getline(meta, line);
        std::istringstream is(line);
        is >> key >> dtype;
        if (key != "dtype") throw IoError("malformed sidecar " + meta_path);
    }
    {
        std::getline(meta, line);
        std::istringstream is(line);
        is >> key;
        if (key != "shape") throw IoError("malformed sidecar " + meta_path);
        std::int64_t d;
        while (is >> d) shape.push_back(d);
    }
    if (dtype != dtype_name<T>()) {
        throw IoError("sidecar " + meta_path + " declares dtype " + dtype + ", expected " +
                      dtype_name<T>());
    }
    const std::int64_t n = shape_numel(shape);
    const auto expected_bytes = static_cast<std::uintmax_t>(n) * sizeof(T);
    std::error_code ec;
    const auto actual_bytes = std::filesystem::file_size(data_path, ec);
    if (ec) throw IoError("cannot stat tensor file " + data_path);
    if (actual_bytes != expected_bytes) {
        throw IoError("tensor file " + data_path + " holds " + std::to_string(actual_bytes) +
                      " bytes, expected " + std::to_string(expected_bytes));
    }
    std::vector<T> buffer(static_cast<std::size_t>(n));
    std::ifstream data(data_path, std::ios::binary);
    if (!data) throw IoError("cannot read tensor file " + data_path);
    data.read(reinterpret_cast<char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(T)));
    if (data.gcount() != static_cast<std::streamsize>(expected_bytes)) {
        throw IoError("short read on tensor file " + data_path);
    }
    swap_to_little_endian(buffer);
    return Tensor<T>::from_data(std::move(shape), std::move(buffer));
}

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read file for checksum: " + path);
    std::uint64_t hash = 1469598103934665603ULL;
    char chunk[4096];
    while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
        const auto got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            hash ^= static_cast<unsigned char>(chunk[i]);
            hash *= 1099511628211ULL;
        }
        if (!in) break;
    }
    return hash;
}

template void save_tensor(const Tensor<float>&, const std::string&, const std::string&);
template void save_tensor(const Tensor<double>&, const std::string&, const std::string&);
template Tensor<float> load_tensor(const std::string&, const std::string&);
template Tensor<double> load_tensor(const std::string&, const std::string&);

}  // namespace daft
