#include "descore/numkit/tensor.hpp"

#include <cmath>
#include <sstream>

namespace descore::numkit {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream out;
    out << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ",";
        out << shape[i];
    }
    out << "]";
    return out.str();
}

bool all_finite(const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor::Tensor(std::vector<int> shape_in, std::vector<double> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
    for (int d : shape) {
        if (d <= 0) throw NumericError("tensor: non-positive dimension in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw NumericError("tensor: shape " + shape_str(shape) + " does not match data length " +
                           std::to_string(data.size()));
    }
}

Tensor Tensor::zeros(std::vector<int> shape_in) {
    const int64_t n = shape_numel(shape_in);
    return Tensor(std::move(shape_in), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> shape_in, double value) {
    const int64_t n = shape_numel(shape_in);
    return Tensor(std::move(shape_in), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

int Tensor::rows() const {
    if (ndim() != 2) throw NumericError("tensor: rows() on non-matrix " + shape_str(shape));
    return shape[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw NumericError("tensor: cols() on non-matrix " + shape_str(shape));
    return shape[1];
}

double Tensor::item() const {
    if (!is_scalar()) throw NumericError("tensor: item() on non-scalar " + shape_str(shape));
    return data[0];
}

double& Tensor::at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }

double Tensor::at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

}  // namespace descore::numkit
