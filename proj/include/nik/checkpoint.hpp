#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nik/tensor.hpp"

namespace nik {

// Single-file named-tensor container.
//
//   magic "NIKTNSR1" | u64 header length | header JSON | payload
//
// The header carries the format version, a precision tag ("f32"/"f64"), a
// manifest of (name, shape, byte offset into the payload) and free-form
// user metadata. The payload is raw little-endian scalars in manifest
// order. Names are module-qualified parameter paths such as
// "encoder.layer0.attn.wq".
template <typename T>
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, TensorT<T>>>& tensors,
                  const nlohmann::json& meta);

template <typename T>
struct TensorFileT {
    std::vector<std::pair<std::string, TensorT<T>>> tensors;  // manifest order
    std::string stored_precision;                             // "f32" or "f64"
    nlohmann::json meta;

    const TensorT<T>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

// Loads a container, converting scalars to T if the stored precision
// differs.
template <typename T>
TensorFileT<T> load_tensors(const std::string& path);

}  // namespace nik
