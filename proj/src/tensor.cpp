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

#include "hacpp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hacpp {

namespace {

int64_t shape_size(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::shared_ptr<TensorNode> new_node(std::vector<int64_t> shape) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.assign(shape_size(n->shape), 0.0f);
    return n;
}

bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape();
}

// Builds a result node wired to its inputs. The backward function sees the
// result node with its grad populated and must accumulate into input grads.
Tensor make_op(std::vector<int64_t> shape, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward_fn) {
    auto n = new_node(std::move(shape));
    for (const Tensor& t : inputs) {
        if (t.node()->requires_grad) n->requires_grad = true;
        n->inputs.push_back(t.node());
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Tensor(n);
}

void check_finite_forward(const TensorNode& n, const char* op) {
    for (float v : n.value) {
        if (!std::isfinite(v)) {
            throw Error(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

}  // namespace

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
    auto n = new_node(std::move(shape));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_values(std::vector<int64_t> shape, std::vector<float> values,
                           bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    HACPP_CHECK(static_cast<int64_t>(values.size()) == shape_size(n->shape),
                "value count does not match shape");
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(float v) {
    return from_values({1}, {v}, false);
}

Tensor make_parameter(const std::string& name, std::vector<int64_t> shape,
                      std::vector<float> values) {
    Tensor t = Tensor::from_values(std::move(shape), std::move(values), true);
    t.node()->name = name;
    t.node()->ensure_grad();
    return t;
}

// --- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    HACPP_CHECK(a.shape().size() == 2 && b.shape().size() == 2, "matmul requires rank-2 tensors");
    const int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    HACPP_CHECK(k == k2, "matmul inner dims mismatch: " + std::to_string(k) + " vs " +
                             std::to_string(k2));

    Tensor out = make_op({m, n}, {a, b}, [m, k, n](TensorNode& node) {
        auto& an = *node.inputs[0];
        auto& bn = *node.inputs[1];
        const float* g = node.grad.data();
        // dA = dC * B^T : each dA row owned by one iteration.
        if (an.requires_grad) {
            an.ensure_grad();
            float* da = an.grad.data();
            const float* bv = bn.value.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    const float gij = g[i * n + j];
                    if (gij == 0.0f) continue;
                    const float* brow = bv + j;
                    float* darow = da + i * k;
                    for (int64_t kk = 0; kk < k; ++kk) {
                        darow[kk] += gij * brow[kk * n];
                    }
                }
            }
        }
        // dB = A^T * dC : each dB row (indexed by kk) owned by one iteration.
        if (bn.requires_grad) {
            bn.ensure_grad();
            float* db = bn.grad.data();
            const float* av = an.value.data();
#pragma omp parallel for schedule(static)
            for (int64_t kk = 0; kk < k; ++kk) {
                float* dbrow = db + kk * n;
                for (int64_t i = 0; i < m; ++i) {
                    const float aik = av[i * k + kk];
                    if (aik == 0.0f) continue;
                    const float* grow = g + i * n;
                    for (int64_t j = 0; j < n; ++j) {
                        dbrow[j] += aik * grow[j];
                    }
                }
            }
        }
    });

    const float* av = a.values().data();
    const float* bv = b.values().data();
    float* cv = out.mutable_values().data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        float* crow = cv + i * n;
        const float* arow = av + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const float aik = arow[kk];
            const float* brow = bv + kk * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    check_finite_forward(*out.node(), "matmul");
    return out;
}

// --- elementwise binary -----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* opname, Fwd fwd, Bwd bwd) {
    HACPP_CHECK(same_shape(a, b), std::string(opname) + ": shape mismatch");
    Tensor out = make_op(a.shape(), {a, b}, [bwd](TensorNode& node) {
        auto& an = *node.inputs[0];
        auto& bn = *node.inputs[1];
        if (an.requires_grad) an.ensure_grad();
        if (bn.requires_grad) bn.ensure_grad();
        const int64_t n = node.size();
        for (int64_t i = 0; i < n; ++i) {
            bwd(node.grad[i], an.value[i], bn.value[i], node.value[i],
                an.requires_grad ? &an.grad[i] : nullptr,
                bn.requires_grad ? &bn.grad[i] : nullptr);
        }
    });
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) {
        out.mutable_values()[i] = fwd(a.values()[i], b.values()[i]);
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](float x, float y) { return x + y; },
        [](float g, float, float, float, float* da, float* db) {
            if (da) *da += g;
            if (db) *db += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](float x, float y) { return x - y; },
        [](float g, float, float, float, float* da, float* db) {
            if (da) *da += g;
            if (db) *db -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](float x, float y) { return x * y; },
        [](float g, float x, float y, float, float* da, float* db) {
            if (da) *da += g * y;
            if (db) *db += g * x;
        });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    HACPP_CHECK(a.shape().size() == 2, "add_rowvec: matrix required");
    HACPP_CHECK(v.size() == a.shape()[1], "add_rowvec: vector length mismatch");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    Tensor out = make_op(a.shape(), {a, v}, [m, n](TensorNode& node) {
        auto& an = *node.inputs[0];
        auto& vn = *node.inputs[1];
        if (an.requires_grad) {
            an.ensure_grad();
            for (int64_t i = 0; i < m * n; ++i) an.grad[i] += node.grad[i];
        }
        if (vn.requires_grad) {
            vn.ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) vn.grad[j] += node.grad[i * n + j];
            }
        }
    });
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            out.mutable_values()[i * n + j] = a.values()[i * n + j] + v.values()[j];
        }
    }
    return out;
}

Tensor scale_cols(const Tensor& a, const Tensor& s) {
    HACPP_CHECK(a.shape().size() == 2, "scale_cols: matrix required");
    HACPP_CHECK(s.shape().size() == 2 && s.shape()[0] == a.shape()[0] && s.shape()[1] == 1,
                "scale_cols: scale must be [rows,1]");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    Tensor out = make_op(a.shape(), {a, s}, [m, n](TensorNode& node) {
        auto& an = *node.inputs[0];
        auto& sn = *node.inputs[1];
        if (an.requires_grad) {
            an.ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                const float si = sn.value[i];
                for (int64_t j = 0; j < n; ++j) an.grad[i * n + j] += node.grad[i * n + j] * si;
            }
        }
        if (sn.requires_grad) {
            sn.ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                float acc = 0.0f;
                for (int64_t j = 0; j < n; ++j) acc += node.grad[i * n + j] * an.value[i * n + j];
                sn.grad[i] += acc;
            }
        }
    });
    for (int64_t i = 0; i < m; ++i) {
        const float si = s.values()[i];
        for (int64_t j = 0; j < n; ++j) {
            out.mutable_values()[i * n + j] = a.values()[i * n + j] * si;
        }
    }
    return out;
}

Tensor add_cols(const Tensor& a, const Tensor& s) {
    HACPP_CHECK(a.shape().size() == 2, "add_cols: matrix required");
    HACPP_CHECK(s.shape().size() == 2 && s.shape()[0] == a.shape()[0] && s.shape()[1] == 1,
                "add_cols: addend must be [rows,1]");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    Tensor out = make_op(a.shape(), {a, s}, [m, n](TensorNode& node) {
        auto& an = *node.inputs[0];
        auto& sn = *node.inputs[1];
        if (an.requires_grad) {
            an.ensure_grad();
            for (int64_t i = 0; i < m * n; ++i) an.grad[i] += node.grad[i];
        }
        if (sn.requires_grad) {
            sn.ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                float acc = 0.0f;
                for (int64_t j = 0; j < n; ++j) acc += node.grad[i * n + j];
                sn.grad[i] += acc;
            }
        }
    });
    for (int64_t i = 0; i < m; ++i) {
        const float si = s.values()[i];
        for (int64_t j = 0; j < n; ++j) {
            out.mutable_values()[i * n + j] = a.values()[i * n + j] + si;
        }
    }
    return out;
}

// --- elementwise unary --------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
    Tensor out = make_op(a.shape(), {a}, [bwd](TensorNode& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        an.ensure_grad();
        const int64_t n = node.size();
        for (int64_t i = 0; i < n; ++i) {
            an.grad[i] += node.grad[i] * bwd(an.value[i], node.value[i]);
        }
    });
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out.mutable_values()[i] = fwd(a.values()[i]);
    return out;
}

constexpr float kTwoOverSqrtPi = 1.1283791670955126f;

}  // namespace

Tensor add_scalar(const Tensor& a, float c) {
    return unary_op(
        a, [c](float x) { return x + c; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& a, float c) {
    return unary_op(
        a, [c](float x) { return x * c; }, [c](float, float) { return c; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, [](float x) { return x > 0.0f ? x : 0.0f; },
        [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor tanh_op(const Tensor& a) {
    return unary_op(
        a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
        [](float, float y) { return y * (1.0f - y); });
}

Tensor softplus(const Tensor& a) {
    // log(1+e^x) with the overflow-safe branch for large x.
    return unary_op(
        a,
        [](float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); },
        [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

Tensor exp_op(const Tensor& a) {
    return unary_op(
        a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor log_op(const Tensor& a) {
    return unary_op(
        a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Tensor erf_op(const Tensor& a) {
    return unary_op(
        a, [](float x) { return std::erf(x); },
        [](float x, float) { return kTwoOverSqrtPi * std::exp(-x * x); });
}

Tensor square(const Tensor& a) {
    return unary_op(
        a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Tensor reciprocal(const Tensor& a) {
    return unary_op(
        a, [](float x) { return 1.0f / x; }, [](float, float y) { return -y * y; });
}

Tensor clamp_min(const Tensor& a, float lo) {
    return unary_op(
        a, [lo](float x) { return x < lo ? lo : x; },
        [lo](float x, float) { return x < lo ? 0.0f : 1.0f; });
}

Tensor clamp_max(const Tensor& a, float hi) {
    return unary_op(
        a, [hi](float x) { return x > hi ? hi : x; },
        [hi](float x, float) { return x > hi ? 0.0f : 1.0f; });
}

// --- reductions / reshapes ----------------------------------------------------

Tensor sum_all(const Tensor& a) {
    Tensor out = make_op({1}, {a}, [](TensorNode& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        an.ensure_grad();
        const float g = node.grad[0];
        for (float& d : an.grad) d += g;
    });
    // Accumulate in double so large sums stay accurate; order is fixed.
    double acc = 0.0;
    for (float v : a.values()) acc += v;
    out.mutable_values()[0] = static_cast<float>(acc);
    return out;
}

Tensor mean_all(const Tensor& a) {
    return mul_scalar(sum_all(a), 1.0f / static_cast<float>(a.size()));
}

Tensor row_mean(const Tensor& a) {
    HACPP_CHECK(a.shape().size() == 2, "row_mean: matrix required");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    Tensor out = make_op({m, 1}, {a}, [m, n](TensorNode& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        an.ensure_grad();
        const float inv = 1.0f / static_cast<float>(n);
        for (int64_t i = 0; i < m; ++i) {
            const float g = node.grad[i] * inv;
            for (int64_t j = 0; j < n; ++j) an.grad[i * n + j] += g;
        }
    });
    const float inv = 1.0f / static_cast<float>(n);
    for (int64_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < n; ++j) acc += a.values()[i * n + j];
        out.mutable_values()[i] = static_cast<float>(acc * inv);
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
    HACPP_CHECK(a.shape().size() == 2, "slice_cols: matrix required");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    HACPP_CHECK(0 <= c0 && c0 <= c1 && c1 <= n, "slice_cols: range out of bounds");
    const int64_t w = c1 - c0;
    Tensor out = make_op({m, w}, {a}, [m, n, c0, w](TensorNode& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        an.ensure_grad();
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                an.grad[i * n + c0 + j] += node.grad[i * w + j];
            }
        }
    });
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            out.mutable_values()[i * w + j] = a.values()[i * n + c0 + j];
        }
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    HACPP_CHECK(!parts.empty(), "concat_cols: empty input");
    const int64_t m = parts[0].shape()[0];
    int64_t total = 0;
    for (const Tensor& p : parts) {
        HACPP_CHECK(p.shape().size() == 2 && p.shape()[0] == m, "concat_cols: row count mismatch");
        total += p.shape()[1];
    }
    std::vector<int64_t> widths;
    for (const Tensor& p : parts) widths.push_back(p.shape()[1]);
    Tensor out = make_op({m, total}, parts, [m, total, widths](TensorNode& node) {
        int64_t off = 0;
        for (size_t pi = 0; pi < node.inputs.size(); ++pi) {
            auto& pn = *node.inputs[pi];
            const int64_t w = widths[pi];
            if (pn.requires_grad) {
                pn.ensure_grad();
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < w; ++j) {
                        pn.grad[i * w + j] += node.grad[i * total + off + j];
                    }
                }
            }
            off += w;
        }
    });
    int64_t off = 0;
    for (const Tensor& p : parts) {
        const int64_t w = p.shape()[1];
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                out.mutable_values()[i * total + off + j] = p.values()[i * w + j];
            }
        }
        off += w;
    }
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx) {
    HACPP_CHECK(a.shape().size() == 2, "gather_rows: matrix required");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    for (int64_t i : idx) HACPP_CHECK(0 <= i && i < m, "gather_rows: index out of range");
    const int64_t r = static_cast<int64_t>(idx.size());
    std::vector<int64_t> copy = idx;
    Tensor out = make_op({r, n}, {a}, [n, copy](TensorNode& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        an.ensure_grad();
        for (size_t i = 0; i < copy.size(); ++i) {
            const int64_t src = static_cast<int64_t>(i), dst = copy[i];
            for (int64_t j = 0; j < n; ++j) an.grad[dst * n + j] += node.grad[src * n + j];
        }
    });
    for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            out.mutable_values()[i * n + j] = a.values()[idx[i] * n + j];
        }
    }
    return out;
}

Tensor repeat_cols(const Tensor& a, int64_t times) {
    HACPP_CHECK(a.shape().size() == 2 && times >= 1, "repeat_cols: bad arguments");
    const int64_t m = a.shape()[0], n = a.shape()[1];
    Tensor out = make_op({m, n * times}, {a}, [m, n, times](TensorNode& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        an.ensure_grad();
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                float acc = 0.0f;
                for (int64_t t = 0; t < times; ++t) {
                    acc += node.grad[i * n * times + j * times + t];
                }
                an.grad[i * n + j] += acc;
            }
        }
    });
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            const float v = a.values()[i * n + j];
            for (int64_t t = 0; t < times; ++t) {
                out.mutable_values()[i * n * times + j * times + t] = v;
            }
        }
    }
    return out;
}

Tensor custom_op(std::vector<int64_t> shape, std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backward_fn) {
    return make_op(std::move(shape), std::move(inputs), std::move(backward_fn));
}

Tensor straight_through(const Tensor& hard, const Tensor& carrier) {
    HACPP_CHECK(same_shape(hard, carrier), "straight_through: shape mismatch");
    Tensor out = make_op(hard.shape(), {carrier}, [](TensorNode& node) {
        auto& cn = *node.inputs[0];
        if (!cn.requires_grad) return;
        cn.ensure_grad();
        const int64_t n = node.size();
        for (int64_t i = 0; i < n; ++i) cn.grad[i] += node.grad[i];
    });
    out.mutable_values() = hard.values();
    return out;
}

// --- backward -----------------------------------------------------------------

void backward(const Tensor& loss) {
    HACPP_CHECK(loss.defined() && loss.size() == 1, "backward requires a scalar loss");
    HACPP_CHECK(loss.requires_grad(), "loss is not connected to any parameter");

    // Iterative DFS for reverse topological order (graphs can be deep).
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorNode* child = node->inputs[next++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

// --- DenseNet -------------------------------------------------------------------

DenseNet::DenseNet(const std::string& name, const std::vector<int64_t>& dims,
                   Activation hidden_act, Activation final_act, SequentialRng& rng,
                   bool zero_init_last)
    : name_(name) {
    HACPP_CHECK(dims.size() >= 2, "DenseNet needs at least one layer");
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        const int64_t in = dims[l], out = dims[l + 1];
        const bool last = (l + 2 == dims.size());
        std::vector<float> w(static_cast<size_t>(in * out), 0.0f);
        if (!(last && zero_init_last)) {
            const double bound = std::sqrt(6.0 / static_cast<double>(in));
            for (float& x : w) x = static_cast<float>(rng.uniform(-bound, bound));
        }
        DenseLayer layer;
        layer.weight = make_parameter(name + ".w" + std::to_string(l), {in, out}, std::move(w));
        layer.bias = make_parameter(name + ".b" + std::to_string(l), {out},
                                    std::vector<float>(static_cast<size_t>(out), 0.0f));
        layer.act = last ? final_act : hidden_act;
        layers_.push_back(std::move(layer));
    }
}

Tensor DenseNet::forward(const Tensor& x) const {
    HACPP_CHECK(!layers_.empty(), "forward on empty net");
    HACPP_CHECK(x.shape().size() == 2, "DenseNet input must be [batch, dim]");
    Tensor h = x;
    for (size_t l = 0; l < layers_.size(); ++l) {
        const DenseLayer& layer = layers_[l];
        if (h.shape()[1] != layer.weight.shape()[0]) {
            throw Error("dimension mismatch at layer " + std::to_string(l) + " of '" + name_ +
                        "': input dim " + std::to_string(h.shape()[1]) + ", expected " +
                        std::to_string(layer.weight.shape()[0]));
        }
        h = add_rowvec(matmul(h, layer.weight), layer.bias);
        switch (layer.act) {
            case Activation::None: break;
            case Activation::Relu: h = relu(h); break;
            case Activation::Tanh: h = tanh_op(h); break;
            case Activation::Sigmoid: h = sigmoid(h); break;
        }
    }
    return h;
}

std::vector<Tensor> DenseNet::parameters() const {
    std::vector<Tensor> ps;
    for (const DenseLayer& l : layers_) {
        ps.push_back(l.weight);
        ps.push_back(l.bias);
    }
    return ps;
}

void DenseNet::serialize(std::vector<uint8_t>& out) const {
    append_le<uint16_t>(out, static_cast<uint16_t>(layers_.size()));
    for (const DenseLayer& l : layers_) {
        append_le<uint32_t>(out, static_cast<uint32_t>(l.weight.shape()[0]));
        append_le<uint32_t>(out, static_cast<uint32_t>(l.weight.shape()[1]));
        append_le<uint8_t>(out, static_cast<uint8_t>(l.act));
    }
    for (const DenseLayer& l : layers_) {
        for (float v : l.weight.values()) append_le<float>(out, v);
        for (float v : l.bias.values()) append_le<float>(out, v);
    }
}

DenseNet DenseNet::deserialize(const std::string& name, const uint8_t* data, size_t size,
                               size_t& cursor) {
    DenseNet net;
    net.name_ = name;
    const uint16_t n_layers = read_le<uint16_t>(data, size, cursor);
    HACPP_STREAM_CHECK(n_layers >= 1, "network manifest: no layers");
    std::vector<std::pair<int64_t, int64_t>> dims;
    std::vector<Activation> acts;
    for (uint16_t l = 0; l < n_layers; ++l) {
        const int64_t in = read_le<uint32_t>(data, size, cursor);
        const int64_t out = read_le<uint32_t>(data, size, cursor);
        const uint8_t act = read_le<uint8_t>(data, size, cursor);
        HACPP_STREAM_CHECK(in >= 1 && out >= 1 && act <= 3, "network manifest: bad layer entry");
        dims.emplace_back(in, out);
        acts.push_back(static_cast<Activation>(act));
    }
    for (uint16_t l = 0; l < n_layers; ++l) {
        const auto [in, out] = dims[l];
        std::vector<float> w(static_cast<size_t>(in * out));
        for (float& v : w) v = read_le<float>(data, size, cursor);
        std::vector<float> b(static_cast<size_t>(out));
        for (float& v : b) v = read_le<float>(data, size, cursor);
        DenseLayer layer;
        layer.weight =
            make_parameter(name + ".w" + std::to_string(l), {in, out}, std::move(w));
        layer.bias = make_parameter(name + ".b" + std::to_string(l), {out}, std::move(b));
        layer.act = acts[l];
        net.layers_.push_back(std::move(layer));
    }
    return net;
}

// --- Adam ------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const Tensor& p : params_) {
        m_.emplace_back(p.size(), 0.0f);
        v_.emplace_back(p.size(), 0.0f);
        lr_override_.push_back(-1.0f);
    }
}

void Adam::set_param_lr(const std::string& name, float lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name() == name) {
            lr_override_[i] = lr;
            return;
        }
    }
    throw Error("set_param_lr: unknown parameter '" + name + "'");
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        p.node()->ensure_grad();
        auto& value = p.node()->value;
        auto& grad = p.node()->grad;
        auto& m = m_[pi];
        auto& v = v_[pi];
        const float lr = lr_override_[pi] > 0.0f ? lr_override_[pi] : cfg_.lr;
        const int64_t n = p.size();
        for (int64_t i = 0; i < n; ++i) {
            const float g = grad[i];
            if (!std::isfinite(g)) {
                throw DivergenceError("NaN/Inf gradient in parameter '" + p.name() + "'");
            }
            m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            value[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) {
        p.node()->ensure_grad();
        std::fill(p.node()->grad.begin(), p.node()->grad.end(), 0.0f);
    }
}

}  // namespace hacpp
