#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace plrn {

// Error taxonomy. Every failure mode in the library maps onto one of these,
// so callers (and the CLI exit-code contract) can tell validation problems
// apart from I/O problems.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Softmax or pooling asked to normalize over a fully masked axis.
struct MaskError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingStateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CompatibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major 64-bit float tensor. Gradients live alongside the data
/// and are accumulated additively by Tape::backward.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // same length as data iff requires_grad
    bool requires_grad = false;

    int rank() const { return static_cast<int>(shape.size()); }

    int64_t size() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

    void set_requires_grad() {
        requires_grad = true;
        grad.assign(data.size(), 0.0);
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    static TensorPtr make(std::vector<int> shape, bool requires_grad = false) {
        auto t = std::make_shared<Tensor>();
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
            n *= d;
        }
        t->shape = std::move(shape);
        t->data.assign(static_cast<size_t>(n), 0.0);
        if (requires_grad) t->set_requires_grad();
        return t;
    }

    static TensorPtr scalar(double v) {
        auto t = make({1});
        t->data[0] = v;
        return t;
    }

    static TensorPtr vec(std::vector<double> values) {
        auto t = std::make_shared<Tensor>();
        t->shape = {static_cast<int>(values.size())};
        t->data = std::move(values);
        return t;
    }

    static TensorPtr matrix(int r, int c, std::vector<double> values) {
        if (static_cast<int64_t>(values.size()) != static_cast<int64_t>(r) * c)
            throw ShapeError("matrix init: " + std::to_string(values.size()) + " values for " +
                             std::to_string(r) + "x" + std::to_string(c));
        auto t = std::make_shared<Tensor>();
        t->shape = {r, c};
        t->data = std::move(values);
        return t;
    }
};

inline void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
}

}  // namespace plrn
