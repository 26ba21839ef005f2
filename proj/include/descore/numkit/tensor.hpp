#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "descore/errors.hpp"

namespace descore::numkit {

/// Dense row-major 64-bit tensor. `node` is an optional handle into the tape
/// that produced it (-1 when the value is detached from any recording).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    int node = -1;

    Tensor() = default;
    Tensor(std::vector<int> shape_in, std::vector<double> data_in);

    static Tensor zeros(std::vector<int> shape_in);
    static Tensor full(std::vector<int> shape_in, double value);
    static Tensor scalar(double value);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return data.size() == 1; }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // 2-D accessors; throw on rank mismatch.
    int rows() const;
    int cols() const;

    double item() const;
    double& at(int r, int c);
    double at(int r, int c) const;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
bool all_finite(const std::vector<double>& values);

}  // namespace descore::numkit
