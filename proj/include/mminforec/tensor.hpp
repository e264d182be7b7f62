#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mminforec {

// Dense row-major matrix of doubles. Vectors are 1xN, scalars 1x1.
// grad is empty until someone asks for it; when present it mirrors data.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
    }
    Tensor(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
        if (data.size() != static_cast<size_t>(r) * c)
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor full(int r, int c, double v) {
        Tensor t(r, c);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor row(std::vector<double> values) {
        int n = static_cast<int>(values.size());
        return Tensor(1, n, std::move(values));
    }
    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

    int64_t size() const { return static_cast<int64_t>(rows) * cols; }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double item() const {
        if (size() != 1) throw std::logic_error("Tensor::item: tensor is not scalar");
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        grad.assign(data.size(), 0.0);
    }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Fill with N(0, stddev) draws from the given engine; used for parameter init.
inline void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data) v = dist(rng);
}

}  // namespace mminforec
