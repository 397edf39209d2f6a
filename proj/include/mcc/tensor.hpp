#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "mcc/errors.hpp"

namespace mcc {

// Storage/interchange precision tag. Arithmetic is always carried out in
// double; F32 controls the on-disk payload width (values are rounded to
// float on save and widened on load).
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

// Dense n-dimensional array, row-major, extents >= 1. Rank 0 is a scalar.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, DType dtype = DType::F64);
    Tensor(std::vector<std::size_t> dims, std::vector<double> data,
           DType dtype = DType::F64);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> dims);
    static Tensor ones(std::vector<std::size_t> dims);
    static Tensor full(std::vector<std::size_t> dims, double v);

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return dims_.at(axis); }

    bool is_scalar() const { return data_.size() == 1 && dims_.empty(); }
    double scalar_value() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;
    std::size_t offset(std::span<const std::size_t> idx) const;

    DType dtype() const { return dtype_; }
    void set_dtype(DType dt) { dtype_ = dt; }

    void fill(double v);
    bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }
    bool all_finite() const;

    // Max |a-b| over elements; throws ShapeError on dim mismatch.
    static double max_abs_diff(const Tensor& a, const Tensor& b);

    std::string dims_str() const;

private:
    std::vector<std::size_t> dims_;
    std::vector<double> data_;
    DType dtype_ = DType::F64;
};

std::size_t dims_product(std::span<const std::size_t> dims);

// MCCT binary tensor file:
//   magic "MCCT" | u8 dtype (0=f32, 1=f64) | u8 rank | rank x u64 LE extents
//   | row-major LE payload.
void save_mcct(const std::string& path, const Tensor& t);
Tensor load_mcct(const std::string& path);

}  // namespace mcc
