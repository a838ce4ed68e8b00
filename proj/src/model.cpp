#include "nik/model.hpp"

#include <cmath>

#include "nik/checkpoint.hpp"
#include "nik/rng.hpp"

namespace nik {

void ModelConfig::validate() const {
    if (d_model < 1 || layers < 1 || heads < 1 || keypoints < 1 || joints < 1 ||
        shape_dims < 1 || max_len < 1)
        throw ContractViolation("model config: dimensions must be positive");
    if (d_model % heads != 0)
        throw ContractViolation("model config: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
    if (dropout != 0.0)
        throw ContractViolation("model config: only dropout = 0 is supported");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"d_model", d_model},   {"layers", layers},
            {"heads", heads},       {"ff_dim", ff_dim},
            {"keypoints", keypoints}, {"joints", joints},
            {"shape_dims", shape_dims}, {"max_len", max_len},
            {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.d_model = j.value("d_model", cfg.d_model);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.ff_dim = j.value("ff_dim", cfg.ff_dim);
    cfg.keypoints = j.value("keypoints", cfg.keypoints);
    cfg.joints = j.value("joints", cfg.joints);
    cfg.shape_dims = j.value("shape_dims", cfg.shape_dims);
    cfg.max_len = j.value("max_len", cfg.max_len);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.validate();
    return cfg;
}

template <typename T>
TensorT<T> positional_encoding(int len, int d_model) {
    TensorT<T> pe = TensorT<T>::zeros({len, d_model});
    auto& v = pe.data();
    for (int t = 0; t < len; ++t)
        for (int i = 0; i < d_model; ++i) {
            const double exponent = 2.0 * (i / 2) / static_cast<double>(d_model);
            const double arg = t / std::pow(10000.0, exponent);
            v[static_cast<size_t>(t * d_model + i)] =
                static_cast<T>((i % 2 == 0) ? std::sin(arg) : std::cos(arg));
        }
    return pe;
}

template <typename T>
TensorT<T> ModelT<T>::add_param(const std::string& name, Shape shape) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    index_[name] = params_.size();
    params_.emplace_back(name, t);
    return t;
}

template <typename T>
ModelT<T>::ModelT(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.d_model;
    const int ff = cfg_.effective_ff();
    add_param("read_in.w", {cfg_.input_dim(), d});
    add_param("read_in.b", {d});
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "encoder.layer" + std::to_string(l) + ".";
        add_param(p + "ln1.gamma", {d});
        add_param(p + "ln1.beta", {d});
        add_param(p + "attn.wq", {d, d});
        add_param(p + "attn.bq", {d});
        add_param(p + "attn.wk", {d, d});
        add_param(p + "attn.bk", {d});
        add_param(p + "attn.wv", {d, d});
        add_param(p + "attn.bv", {d});
        add_param(p + "attn.wo", {d, d});
        add_param(p + "attn.bo", {d});
        add_param(p + "ln2.gamma", {d});
        add_param(p + "ln2.beta", {d});
        add_param(p + "ff.w1", {d, ff});
        add_param(p + "ff.b1", {ff});
        add_param(p + "ff.w2", {ff, d});
        add_param(p + "ff.b2", {d});
    }
    add_param("encoder.final_ln.gamma", {d});
    add_param("encoder.final_ln.beta", {d});
    add_param("head.w1", {d, d});
    add_param("head.b1", {d});
    add_param("head.w2", {d, cfg_.readout_dim()});
    add_param("head.b2", {cfg_.readout_dim()});
    add_param("pool.query", {d, 1});
    add_param("pool.wk", {d, d});
    add_param("pool.bk", {d});
    add_param("pool.wv", {d, d});
    add_param("pool.bv", {d});
    add_param("shape_out.w", {d, cfg_.shape_dims});
    add_param("shape_out.b", {cfg_.shape_dims});
    pe_ = positional_encoding<T>(cfg_.max_len, d);
}

template <typename T>
ModelT<T> ModelT<T>::init(ModelConfig cfg, uint64_t seed) {
    ModelT model(std::move(cfg));
    Rng rng(seed);
    for (auto& [name, tensor] : model.params_) {
        const auto& shape = tensor.shape();
        const bool is_gamma = name.ends_with("gamma");
        const bool is_bias = shape.size() == 1 && !is_gamma;
        if (is_gamma) {
            for (auto& x : tensor.data()) x = T(1);
        } else if (is_bias) {
            // biases stay zero
        } else {
            const int fan_in = shape[0];
            const int fan_out = shape[1];
            // Output layers start small so the identity rotation bias
            // dominates the initial predictions.
            const double gain =
                (name == "head.w2" || name == "shape_out.w") ? 0.1 : 1.0;
            const double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& x : tensor.data()) x = static_cast<T>(rng.uniform(-limit, limit));
        }
    }
    // Rotation read-out bias starts at the 6D identity so the initial pose
    // is near identity.
    auto b2 = model.param("head.b2");
    for (int j = 0; j < model.cfg_.joints; ++j) {
        b2.data()[static_cast<size_t>(3 + 6 * j + 0)] = T(1);
        b2.data()[static_cast<size_t>(3 + 6 * j + 4)] = T(1);
    }
    return model;
}

template <typename T>
TensorT<T> ModelT<T>::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("unknown parameter: " + name);
    return params_[it->second].second;
}

template <typename T>
std::vector<TensorT<T>> ModelT<T>::parameter_tensors() const {
    std::vector<TensorT<T>> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(t);
    return out;
}

template <typename T>
typename ModelT<T>::Output ModelT<T>::forward(const TensorT<T>& chunk) const {
    if (chunk.rank() != 3 || chunk.dim(2) != cfg_.input_dim())
        throw ContractViolation("forward: chunk must be [B,T," +
                                std::to_string(cfg_.input_dim()) + "], got " +
                                shape_str(chunk.shape()));
    const int B = chunk.dim(0);
    const int Tn = chunk.dim(1);
    if (Tn < 1 || Tn > cfg_.max_len)
        throw ChunkTooLong("forward: chunk length " + std::to_string(Tn) +
                           " outside [1, max_len=" + std::to_string(cfg_.max_len) + "]");
    const int d = cfg_.d_model;
    const int dh = d / cfg_.heads;

    auto x = linear(chunk, param("read_in.w"), param("read_in.b"));
    auto pe = repeat_axis(reshape(slice(pe_, 0, 0, Tn), {1, Tn, d}), 0, B);
    x = add(x, pe);

    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "encoder.layer" + std::to_string(l) + ".";
        auto h = layer_norm(x, param(p + "ln1.gamma"), param(p + "ln1.beta"));
        auto q = linear(h, param(p + "attn.wq"), param(p + "attn.bq"));
        auto k = linear(h, param(p + "attn.wk"), param(p + "attn.bk"));
        auto v = linear(h, param(p + "attn.wv"), param(p + "attn.bv"));
        std::vector<TensorT<T>> heads;
        heads.reserve(static_cast<size_t>(cfg_.heads));
        const T inv_sqrt_dh = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
        for (int hh = 0; hh < cfg_.heads; ++hh) {
            auto qh = slice(q, 2, hh * dh, dh);
            auto kh = slice(k, 2, hh * dh, dh);
            auto vh = slice(v, 2, hh * dh, dh);
            auto scores = mul_scalar(matmul(qh, transpose_last(kh)), inv_sqrt_dh);
            auto weights = softmax(scores, 2);
            heads.push_back(matmul(weights, vh));
        }
        auto ctx = concat(heads, 2);
        x = add(x, linear(ctx, param(p + "attn.wo"), param(p + "attn.bo")));
        auto h2 = layer_norm(x, param(p + "ln2.gamma"), param(p + "ln2.beta"));
        auto inner = gelu(linear(h2, param(p + "ff.w1"), param(p + "ff.b1")));
        x = add(x, linear(inner, param(p + "ff.w2"), param(p + "ff.b2")));
        if (!x.all_finite())
            throw NumericalFault("non-finite activations in encoder layer " + std::to_string(l),
                                 l);
    }
    auto y = layer_norm(x, param("encoder.final_ln.gamma"), param("encoder.final_ln.beta"));

    Output out;
    auto hidden = gelu(linear(y, param("head.w1"), param("head.b1")));
    auto readout = linear(hidden, param("head.w2"), param("head.b2")); // [B,T,3+6J]
    out.trans = slice(readout, 2, 0, 3);
    out.rot6d = reshape(slice(readout, 2, 3, 6 * cfg_.joints), {B, Tn, cfg_.joints, 6});

    auto keys = linear(y, param("pool.wk"), param("pool.bk"));
    auto scores = mul_scalar(matmul(keys, param("pool.query")),
                             T(1) / static_cast<T>(std::sqrt(static_cast<double>(d))));
    auto attw = softmax(scores, 1);  // [B,T,1]
    auto vals = linear(y, param("pool.wv"), param("pool.bv"));
    auto pooled = reshape(matmul(transpose_last(attw), vals), {B, d});
    out.shape = linear(pooled, param("shape_out.w"), param("shape_out.b"));
    out.attn = reshape(attw, {B, Tn});
    if (!out.trans.all_finite() || !out.rot6d.all_finite() || !out.shape.all_finite())
        throw NumericalFault("non-finite network outputs", cfg_.layers);
    return out;
}

template <typename T>
void ModelT<T>::save(const std::string& path) const {
    nlohmann::json meta;
    meta["model_config"] = cfg_.to_json();
    save_tensors(path, params_, meta);
}

template <typename T>
ModelT<T> ModelT<T>::load(const std::string& path) {
    TensorFileT<T> file = load_tensors<T>(path);
    if (!file.meta.contains("model_config"))
        throw CheckpointMismatch("checkpoint has no embedded model config: " + path);
    ModelT model(ModelConfig::from_json(file.meta["model_config"]));
    if (file.tensors.size() != model.params_.size())
        throw CheckpointMismatch("checkpoint tensor count " +
                                 std::to_string(file.tensors.size()) + " != model parameters " +
                                 std::to_string(model.params_.size()) + " in " + path);
    for (const auto& [name, stored] : file.tensors) {
        auto it = model.index_.find(name);
        if (it == model.index_.end())
            throw CheckpointMismatch("unexpected tensor '" + name + "' in " + path);
        auto& dst = model.params_[it->second].second;
        if (!shapes_equal(dst.shape(), stored.shape()))
            throw CheckpointMismatch("tensor '" + name + "' has shape " +
                                     shape_str(stored.shape()) + ", model wants " +
                                     shape_str(dst.shape()));
        dst.data() = stored.data();
    }
    return model;
}

template class ModelT<float>;
template class ModelT<double>;
template TensorT<float> positional_encoding<float>(int, int);
template TensorT<double> positional_encoding<double>(int, int);

}  // namespace nik
