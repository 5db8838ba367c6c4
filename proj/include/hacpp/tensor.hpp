// Copyright (c) the hacpp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hacpp/common.hpp"
#include "hacpp/rng.hpp"

namespace hacpp {

// Reverse-mode autodiff on dense float32 matrices. Tensors are rank-1 [n] or
// rank-2 [rows, cols]; there is no general broadcasting, only the explicit
// row-vector / column-scale ops below. Ops build a graph of shared nodes;
// backward() walks it once in reverse topological order.

struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<float> value;
    std::vector<float> grad;  // allocated lazily; same length as value
    bool requires_grad = false;
    std::string name;  // set for parameters, used in errors and serialization
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode&)> backward_fn;

    int64_t size() const { return static_cast<int64_t>(value.size()); }
    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static Tensor from_values(std::vector<int64_t> shape, std::vector<float> values,
                              bool requires_grad = false);
    static Tensor scalar(float v);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const { return node_->shape; }
    int64_t size() const { return node_->size(); }
    int64_t rows() const { return node_->rows(); }
    int64_t cols() const { return node_->cols(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<float>& values() const { return node_->value; }
    std::vector<float>& mutable_values() { return node_->value; }
    const std::vector<float>& grad() const { return node_->grad; }

    float item() const {
        HACPP_CHECK(node_ && node_->size() == 1, "item() requires a scalar tensor");
        return node_->value[0];
    }

    const std::string& name() const { return node_->name; }
    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// Leaf parameter: named, grad-enabled, participates in optimizer enumeration.
Tensor make_parameter(const std::string& name, std::vector<int64_t> shape,
                      std::vector<float> values);

// --- graph ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);      // [m,k] x [k,n]
Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor sub(const Tensor& a, const Tensor& b);         // same shape
Tensor mul(const Tensor& a, const Tensor& b);         // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // [m,n] + [n]
Tensor scale_cols(const Tensor& a, const Tensor& s);  // [m,n] * [m,1], broadcast over cols
Tensor add_cols(const Tensor& a, const Tensor& s);    // [m,n] + [m,1], broadcast over cols
Tensor add_scalar(const Tensor& a, float c);
Tensor mul_scalar(const Tensor& a, float c);
Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor erf_op(const Tensor& a);
Tensor square(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor clamp_min(const Tensor& a, float lo);  // gradient zero where clamped
Tensor clamp_max(const Tensor& a, float hi);
Tensor sum_all(const Tensor& a);          // -> scalar
Tensor mean_all(const Tensor& a);         // -> scalar
Tensor row_mean(const Tensor& a);         // [m,n] -> [m,1]
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx);
Tensor repeat_cols(const Tensor& a, int64_t times);  // [m,n] -> [m,n*times], each col repeated

// Forward takes the values of `hard` (treated as data, not part of the
// graph); the gradient flows unchanged to `carrier`. Shapes must match.
Tensor straight_through(const Tensor& hard, const Tensor& carrier);

// Hook for modules that implement fused ops (e.g. grid gathers): returns a
// zero-filled node wired to `inputs`; the caller fills values and the
// backward function accumulates into input grads.
Tensor custom_op(std::vector<int64_t> shape, std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backward_fn);

// Constant tensor wrapper for fixed data entering the graph (no grad).
inline Tensor constant(std::vector<int64_t> shape, std::vector<float> values) {
    return Tensor::from_values(std::move(shape), std::move(values), false);
}

// Accumulates gradients of everything reachable from `loss` (a scalar).
void backward(const Tensor& loss);

// --- dense networks ---------------------------------------------------------

enum class Activation : uint8_t { None = 0, Relu = 1, Tanh = 2, Sigmoid = 3 };

struct DenseLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
    Activation act = Activation::None;
};

// Ordered dense layers. Layer dims chain; parameters enumerate in layer order
// (weight before bias), which fixes the serialization order.
class DenseNet {
public:
    DenseNet() = default;
    // dims = {in, h1, ..., out}; hidden layers get `hidden_act`, the last
    // layer `final_act`. Weights are U(+-sqrt(6/in)) from `rng`; pass
    // zero_init_last to zero the final layer (gives neutral outputs at init).
    DenseNet(const std::string& name, const std::vector<int64_t>& dims, Activation hidden_act,
             Activation final_act, SequentialRng& rng, bool zero_init_last = false);

    Tensor forward(const Tensor& x) const;

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<Tensor> parameters() const;
    int64_t input_dim() const { return layers_.front().weight.shape()[0]; }
    int64_t output_dim() const { return layers_.back().weight.shape()[1]; }

    // Flat little-endian float32 stream in parameter order, preceded by a
    // layer-shape manifest.
    void serialize(std::vector<uint8_t>& out) const;
    static DenseNet deserialize(const std::string& name, const uint8_t* data, size_t size,
                                size_t& cursor);

private:
    std::string name_;
    std::vector<DenseLayer> layers_;
};

// --- optimizer ---------------------------------------------------------------

struct AdamConfig {
    float lr = 2e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

class Adam {
public:
    Adam() = default;
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    // Applies one update from the accumulated grads, then advances moments.
    // Throws on non-finite gradients, naming the parameter.
    void step();
    void zero_grad();
    // Override the learning rate for one named parameter.
    void set_param_lr(const std::string& name, float lr);

    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::vector<float> lr_override_;  // <0 means use cfg
    AdamConfig cfg_;
    int64_t t_ = 0;
};

}  // namespace hacpp
