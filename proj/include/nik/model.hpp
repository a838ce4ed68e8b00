#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nik/ops.hpp"
#include "nik/tensor.hpp"

namespace nik {

struct ModelConfig {
    int d_model = 128;
    int layers = 6;
    int heads = 4;
    int ff_dim = 0;  // 0 -> 4 * d_model
    int keypoints = 25;
    int joints = 24;
    int shape_dims = 10;
    int max_len = 64;
    double dropout = 0.0;  // reserved; only 0 is supported

    int effective_ff() const { return ff_dim > 0 ? ff_dim : 4 * d_model; }
    int input_dim() const { return 3 * keypoints; }
    int readout_dim() const { return 3 + 6 * joints; }
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Sinusoidal table [len, d_model]: PE(t, 2i) = sin(t / 10000^(2i/d)),
// PE(t, 2i+1) = cos(t / 10000^(2i/d)).
template <typename T>
TensorT<T> positional_encoding(int len, int d_model);

// The network: linear read-in, additive positional encoding, pre-norm
// transformer encoder, per-frame MLP read-out, and single-query attention
// pooling for the shape vector.
template <typename T>
class ModelT {
public:
    explicit ModelT(ModelConfig cfg);  // zero weights
    static ModelT init(ModelConfig cfg, uint64_t seed);

    struct Output {
        TensorT<T> trans;  // [B, T, 3], standardized space, relative to frame centroid
        TensorT<T> rot6d;  // [B, T, J, 6]
        TensorT<T> shape;  // [B, S]
        TensorT<T> attn;   // [B, T] pooling weights
    };

    // chunk: [B, T, 3K] standardized keypoints, 1 <= T <= max_len.
    Output forward(const TensorT<T>& chunk) const;

    const ModelConfig& config() const { return cfg_; }
    const std::vector<std::pair<std::string, TensorT<T>>>& parameters() const {
        return params_;
    }
    std::vector<TensorT<T>> parameter_tensors() const;
    TensorT<T> param(const std::string& name) const;

    void save(const std::string& path) const;
    static ModelT load(const std::string& path);

private:
    TensorT<T> add_param(const std::string& name, Shape shape);

    ModelConfig cfg_;
    std::vector<std::pair<std::string, TensorT<T>>> params_;
    std::unordered_map<std::string, size_t> index_;
    TensorT<T> pe_;  // [max_len, d_model] constant
};

using Model = ModelT<double>;

extern template class ModelT<float>;
extern template class ModelT<double>;
extern template TensorT<float> positional_encoding<float>(int, int);
extern template TensorT<double> positional_encoding<double>(int, int);

}  // namespace nik
