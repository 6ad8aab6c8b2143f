#ifndef LBFTI_CORE_TENSOR_HPP_
#define LBFTI_CORE_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lbfti/errors.hpp"

namespace lbfti {

/// Dense row-major float tensor of rank <= 4. Images are stored
/// channel-first as {C, H, W}; vectors as {N}. Small and copyable by value.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0f);
    }

    Tensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<size_t>(count(shape_)) != data_.size())
            throw DimensionError("tensor data size does not match shape");
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw DimensionError("negative dimension");
            n *= d;
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // {C,H,W} accessors
    float& at(int c, int y, int x) {
        return data_[static_cast<size_t>((static_cast<int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
    }
    float at(int c, int y, int x) const {
        return data_[static_cast<size_t>((static_cast<int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0f); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor& add_(const Tensor& o) {
        require_same_shape(o, "add");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& sub_(const Tensor& o) {
        require_same_shape(o, "sub");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& scale_(float a) {
        for (float& v : data_) v *= a;
        return *this;
    }

    /// Mean of all entries, accumulated in double.
    double mean() const {
        if (data_.empty()) return 0.0;
        double s = 0.0;
        for (float v : data_) s += v;
        return s / static_cast<double>(data_.size());
    }

    double sum() const {
        double s = 0.0;
        for (float v : data_) s += v;
        return s;
    }

    float max_abs() const {
        float m = 0.0f;
        for (float v : data_) m = std::max(m, std::fabs(v));
        return m;
    }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double norm2() const {
        double s = 0.0;
        for (float v : data_) s += static_cast<double>(v) * v;
        return std::sqrt(s);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

    void require_same_shape(const Tensor& o, const std::string& what) const {
        if (!same_shape(o))
            throw DimensionError(what + ": shape " + shape_str() + " vs " + o.shape_str());
    }

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    a.require_same_shape(b, "max_abs_diff");
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i)
        m = std::max(m, static_cast<double>(std::fabs(a[i] - b[i])));
    return m;
}

}  // namespace lbfti

#endif  // LBFTI_CORE_TENSOR_HPP_
