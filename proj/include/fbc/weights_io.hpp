#pragma once

// Weights on disk: a JSON manifest (names, shapes, dtype, byte offsets)
// next to one raw little-endian blob. Round trips are bit-exact.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <type_traits>

#include <json.hpp>

#include "fbc/params.hpp"

namespace fbc {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class T>
const char* dtype_name() {
    if constexpr (std::is_same_v<T, double>) {
        return "f64";
    } else {
        static_assert(std::is_same_v<T, float>, "unsupported dtype");
        return "f32";
    }
}

inline bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    unsigned char byte;
    std::memcpy(&byte, &probe, 1);
    return byte == 1;
}

template <class T>
void byteswap_values(std::vector<T>& values) {
    for (auto& v : values) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        std::reverse(bytes, bytes + sizeof(T));
        std::memcpy(&v, bytes, sizeof(T));
    }
}

template <class T>
void save_weights(const std::string& manifest_path, const ParamList<T>& params,
                  const nlohmann::json& meta = {}) {
    namespace fs = std::filesystem;
    const fs::path manifest(manifest_path);
    const fs::path blob_path = fs::path(manifest).replace_extension(".bin");

    nlohmann::json j;
    j["format"] = "fbca-weights-v1";
    j["dtype"] = dtype_name<T>();
    j["byte_order"] = "little";
    j["blob"] = blob_path.filename().string();
    if (!meta.is_null()) {
        j["meta"] = meta;
    }

    std::ofstream blob(blob_path, std::ios::binary);
    if (!blob) {
        throw IoError("cannot write " + blob_path.string());
    }
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& p : params) {
        nlohmann::json t;
        t["name"] = p.name;
        t["shape"] = p.tensor->shape;
        t["buffer"] = p.is_buffer;
        t["offset"] = offset;
        const std::uint64_t bytes = p.tensor->data.size() * sizeof(T);
        t["bytes"] = bytes;
        tensors.push_back(std::move(t));
        if (host_is_little_endian()) {
            blob.write(reinterpret_cast<const char*>(p.tensor->data.data()),
                       static_cast<std::streamsize>(bytes));
        } else {
            auto copy = p.tensor->data;
            byteswap_values(copy);
            blob.write(reinterpret_cast<const char*>(copy.data()),
                       static_cast<std::streamsize>(bytes));
        }
        offset += bytes;
    }
    j["tensors"] = std::move(tensors);

    std::ofstream out(manifest);
    if (!out) {
        throw IoError("cannot write " + manifest_path);
    }
    out << j.dump(2) << "\n";
}

// Loads into an existing parameter list; every name and shape must match.
// Returns the manifest's meta object.
template <class T>
nlohmann::json load_weights(const std::string& manifest_path, const ParamList<T>& params) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) {
        throw IoError("missing weights manifest " + manifest_path);
    }
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != "fbca-weights-v1") {
        throw IoError("unrecognized weights format in " + manifest_path);
    }
    if (j.at("dtype").get<std::string>() != dtype_name<T>()) {
        throw IoError("weights dtype " + j.at("dtype").get<std::string>() +
                      " does not match requested " + dtype_name<T>());
    }
    const fs::path blob_path =
        fs::path(manifest_path).parent_path() / j.at("blob").get<std::string>();
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) {
        throw IoError("missing weights blob " + blob_path.string());
    }

    const auto& tensors = j.at("tensors");
    if (tensors.size() != params.size()) {
        throw IoError("weights manifest lists " + std::to_string(tensors.size()) +
                      " tensors, model has " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = tensors[i];
        if (t.at("name").get<std::string>() != params[i].name) {
            throw IoError("weights name mismatch at index " + std::to_string(i) + ": " +
                          t.at("name").get<std::string>() + " vs " + params[i].name);
        }
        const auto shape = t.at("shape").get<Shape>();
        if (shape != params[i].tensor->shape) {
            throw IoError("weights shape mismatch for " + params[i].name);
        }
        const auto offset = t.at("offset").get<std::uint64_t>();
        const auto bytes = t.at("bytes").get<std::uint64_t>();
        if (bytes != params[i].tensor->data.size() * sizeof(T)) {
            throw IoError("weights byte count mismatch for " + params[i].name);
        }
        blob.seekg(static_cast<std::streamoff>(offset));
        blob.read(reinterpret_cast<char*>(params[i].tensor->data.data()),
                  static_cast<std::streamsize>(bytes));
        if (!blob) {
            throw IoError("truncated weights blob " + blob_path.string());
        }
        if (!host_is_little_endian()) {
            byteswap_values(params[i].tensor->data);
        }
    }
    return j.contains("meta") ? j.at("meta") : nlohmann::json{};
}

}  // namespace fbc
