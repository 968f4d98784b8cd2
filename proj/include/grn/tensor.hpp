#ifndef GRN_TENSOR_HPP
#define GRN_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace grn {

using Index = Eigen::Index;

/// Row-major 2-D image (H x W) of any scalar type.
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageF = Image<float>;
using LabelImage = Image<std::int32_t>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// NCHW extent. Scalars are stored as (1, 1, 1, 1).
struct Shape4 {
    Index n = 0;
    Index c = 0;
    Index h = 0;
    Index w = 0;

    Index size() const { return n * c * h * w; }
    Index plane() const { return h * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
               std::to_string(w);
    }
};

/// Dense contiguous NCHW tensor backed by an Eigen array.
template <typename Scalar>
class Tensor {
public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using PlaneMap = Eigen::Map<Image<Scalar>>;
    using ConstPlaneMap = Eigen::Map<const Image<Scalar>>;
    using SampleMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstSampleMap = Eigen::Map<const RowMatrix<Scalar>>;

    Tensor() = default;
    explicit Tensor(Shape4 shape) : shape_(shape), data_(Array::Zero(shape.size())) {}
    Tensor(Shape4 shape, Scalar fill) : shape_(shape), data_(Array::Constant(shape.size(), fill)) {}
    Tensor(Index n, Index c, Index h, Index w) : Tensor(Shape4{n, c, h, w}) {}

    static Tensor zeros(Shape4 shape) { return Tensor(shape); }
    static Tensor constant(Shape4 shape, Scalar v) { return Tensor(shape, v); }
    static Tensor scalar(Scalar v) { return Tensor(Shape4{1, 1, 1, 1}, v); }

    const Shape4& shape() const { return shape_; }
    Index n() const { return shape_.n; }
    Index c() const { return shape_.c; }
    Index h() const { return shape_.h; }
    Index w() const { return shape_.w; }
    Index size() const { return shape_.size(); }
    bool empty() const { return shape_.size() == 0; }

    Array& array() { return data_; }
    const Array& array() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Index offset(Index n, Index c, Index h, Index w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    Scalar& operator()(Index n, Index c, Index h, Index w) { return data_[offset(n, c, h, w)]; }
    Scalar operator()(Index n, Index c, Index h, Index w) const { return data_[offset(n, c, h, w)]; }

    Scalar item() const {
        if (size() != 1) throw std::logic_error("item() on tensor of shape " + shape_.str());
        return data_[0];
    }

    /// One H x W channel plane.
    PlaneMap plane(Index n, Index c) {
        return PlaneMap(data_.data() + offset(n, c, 0, 0), shape_.h, shape_.w);
    }
    ConstPlaneMap plane(Index n, Index c) const {
        return ConstPlaneMap(data_.data() + offset(n, c, 0, 0), shape_.h, shape_.w);
    }

    /// Sample n viewed as a C x (H*W) row-major matrix.
    SampleMap sample(Index n) {
        return SampleMap(data_.data() + offset(n, 0, 0, 0), shape_.c, shape_.plane());
    }
    ConstSampleMap sample(Index n) const {
        return ConstSampleMap(data_.data() + offset(n, 0, 0, 0), shape_.c, shape_.plane());
    }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> out(shape_);
        out.array() = data_.template cast<Other>();
        return out;
    }

    void set_zero() { data_.setZero(); }

private:
    Shape4 shape_;
    Array data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
/// B x 1 x H x W integer class labels.
using LabelBatch = Tensor<std::int32_t>;

inline void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (!(a == b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace grn

#endif  // GRN_TENSOR_HPP
