#include "nik/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace nik {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'N', 'I', 'K', 'T', 'N', 'S', 'R', '1'};
constexpr const char* kFormatVersion = "1";

template <typename T>
const char* precision_tag() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <typename T>
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, TensorT<T>>>& tensors,
                  const nlohmann::json& meta) {
    nlohmann::json header;
    header["version"] = kFormatVersion;
    header["precision"] = precision_tag<T>();
    header["meta"] = meta;
    uint64_t offset = 0;
    auto manifest = nlohmann::json::array();
    for (const auto& [name, tensor] : tensors) {
        manifest.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}});
        offset += static_cast<uint64_t>(tensor.numel()) * sizeof(T);
    }
    header["tensors"] = std::move(manifest);
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : tensors)
        out.write(reinterpret_cast<const char*>(tensor.data().data()),
                  static_cast<std::streamsize>(tensor.data().size() * sizeof(T)));
    if (!out) throw DataError("write failed: " + path);
}

namespace {

template <typename Stored, typename T>
std::vector<T> read_scalars(std::ifstream& in, int64_t count, const std::string& path) {
    std::vector<Stored> raw(static_cast<size_t>(count));
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(Stored)));
    if (!in) throw DataError("truncated tensor payload in " + path);
    if constexpr (std::is_same_v<Stored, T>) {
        return raw;
    } else {
        std::vector<T> out(raw.size());
        for (size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<T>(raw[i]);
        return out;
    }
}

}  // namespace

template <typename T>
TensorFileT<T> load_tensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointMismatch("not a tensor container: " + path);
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw CheckpointMismatch("truncated header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointMismatch("bad header JSON in " + path + ": " + e.what());
    }
    if (header.value("version", "") != kFormatVersion)
        throw CheckpointMismatch("unsupported container version in " + path);

    TensorFileT<T> file;
    file.stored_precision = header.value("precision", "");
    file.meta = header.value("meta", nlohmann::json::object());
    if (file.stored_precision != "f32" && file.stored_precision != "f64")
        throw CheckpointMismatch("unknown precision tag '" + file.stored_precision + "' in " +
                                 path);
    const bool stored_f32 = file.stored_precision == "f32";

    // Manifest offsets are sequential by construction; read in order.
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        const int64_t count = shape_numel(shape);
        std::vector<T> data = stored_f32 ? read_scalars<float, T>(in, count, path)
                                         : read_scalars<double, T>(in, count, path);
        file.tensors.emplace_back(name, TensorT<T>::from_data(shape, std::move(data)));
    }
    return file;
}

template void save_tensors<float>(const std::string&,
                                  const std::vector<std::pair<std::string, TensorT<float>>>&,
                                  const nlohmann::json&);
template void save_tensors<double>(const std::string&,
                                   const std::vector<std::pair<std::string, TensorT<double>>>&,
                                   const nlohmann::json&);
template TensorFileT<float> load_tensors<float>(const std::string&);
template TensorFileT<double> load_tensors<double>(const std::string&);

}  // namespace nik
