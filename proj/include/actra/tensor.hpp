#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace actra {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor of doubles. The grad buffer is empty until a
// backward pass (or the owner) allocates it; when present it has the same
// number of elements as data.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;

    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)) {
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
        }
        data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    }

    static Tensor from(Shape s, std::vector<double> values) {
        Tensor t(std::move(s));
        if (values.size() != t.data.size()) {
            throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(t.shape));
        }
        t.data = std::move(values);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    int rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? 1 : 0); }
    int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 0); }

    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void zero_grad() { grad.assign(data.size(), 0.0); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace actra
