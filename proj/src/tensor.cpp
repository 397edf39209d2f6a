#include "mcc/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mcc {

static_assert(std::endian::native == std::endian::little,
              "MCCT serialization assumes a little-endian host");

std::size_t dims_product(std::span<const std::size_t> dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}

static void check_extents(const std::vector<std::size_t>& dims) {
    for (std::size_t d : dims) {
        if (d == 0) throw ShapeError("tensor extent must be >= 1");
    }
}

Tensor::Tensor(std::vector<std::size_t> dims, DType dtype)
    : dims_(std::move(dims)), dtype_(dtype) {
    check_extents(dims_);
    data_.assign(dims_product(dims_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data, DType dtype)
    : dims_(std::move(dims)), data_(std::move(data)), dtype_(dtype) {
    check_extents(dims_);
    if (dims_product(dims_) != data_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match extents product " +
                         std::to_string(dims_product(dims_)));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

Tensor Tensor::ones(std::vector<std::size_t> dims) {
    Tensor t(std::move(dims));
    t.fill(1.0);
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> dims, double v) {
    Tensor t(std::move(dims));
    t.fill(v);
    return t;
}

double Tensor::scalar_value() const {
    if (data_.size() != 1) {
        throw ShapeError("scalar_value on tensor of size " + std::to_string(data_.size()));
    }
    return data_[0];
}

std::size_t Tensor::offset(std::span<const std::size_t> idx) const {
    if (idx.size() != dims_.size()) throw ShapeError("index rank mismatch");
    std::size_t off = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
        if (idx[a] >= dims_[a]) throw ShapeError("index out of range");
        off = off * dims_[a] + idx[a];
    }
    return off;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
    std::vector<std::size_t> v(idx);
    return data_[offset(v)];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    std::vector<std::size_t> v(idx);
    return data_[offset(v)];
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double Tensor::max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_dims(b)) throw ShapeError("max_abs_diff dims mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a[i] - b[i]));
    }
    return m;
}

std::string Tensor::dims_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << "x";
        os << dims_[i];
    }
    os << "]";
    return os.str();
}

void save_mcct(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write("MCCT", 4);
    const std::uint8_t code = static_cast<std::uint8_t>(t.dtype());
    const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    f.put(static_cast<char>(code));
    f.put(static_cast<char>(rank));
    for (std::size_t a = 0; a < t.rank(); ++a) {
        std::uint64_t e = t.dims()[a];
        f.write(reinterpret_cast<const char*>(&e), sizeof(e));
    }
    if (t.dtype() == DType::F64) {
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else {
        std::vector<float> buf(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw IoError("short write: " + path);
}

Tensor load_mcct(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MCCT", 4) != 0) {
        throw IoError("bad MCCT magic in " + path);
    }
    const int code = f.get();
    const int rank = f.get();
    if (code < 0 || code > 1 || rank < 0) throw IoError("bad MCCT header in " + path);
    std::vector<std::size_t> dims(static_cast<std::size_t>(rank));
    for (auto& d : dims) {
        std::uint64_t e = 0;
        f.read(reinterpret_cast<char*>(&e), sizeof(e));
        d = static_cast<std::size_t>(e);
    }
    if (!f) throw IoError("truncated MCCT header in " + path);
    const std::size_t n = dims_product(dims);
    std::vector<double> data(n);
    if (code == static_cast<int>(DType::F64)) {
        f.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        std::vector<float> buf(n);
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(n * sizeof(float)));
        for (std::size_t i = 0; i < n; ++i) data[i] = buf[i];
    }
    if (!f) throw IoError("truncated MCCT payload in " + path);
    return Tensor(std::move(dims), std::move(data), static_cast<DType>(code));
}

}  // namespace mcc
