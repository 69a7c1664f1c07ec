#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>

#include "scanet/error.hpp"

namespace scanet {

using Index = Eigen::Index;

/// Extents of a tensor of rank 0..4. Row-major: the last extent varies fastest,
/// so for a rank-4 tensor the layout is N, C, H, W with W contiguous.
class Shape {
public:
    static constexpr int kMaxRank = 4;

    Shape() = default;
    Shape(std::initializer_list<Index> extents) {
        require(extents.size() <= kMaxRank, ErrorKind::shape, "rank exceeds 4");
        for (Index e : extents) {
            require(e >= 1, ErrorKind::shape, "extent " + std::to_string(rank_) + " must be >= 1");
            dims_[rank_++] = e;
        }
    }

    int rank() const { return rank_; }
    Index operator[](int axis) const { return dims_[axis]; }
    Index back() const { return rank_ == 0 ? 1 : dims_[rank_ - 1]; }

    Index numel() const {
        Index n = 1;
        for (int i = 0; i < rank_; ++i) n *= dims_[i];
        return n;
    }

    Shape with(int axis, Index extent) const {
        Shape s = *this;
        require(extent >= 1, ErrorKind::shape, "extent must be >= 1");
        s.dims_[axis] = extent;
        return s;
    }

    bool operator==(const Shape& o) const {
        if (rank_ != o.rank_) return false;
        for (int i = 0; i < rank_; ++i)
            if (dims_[i] != o.dims_[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "[";
        for (int i = 0; i < rank_; ++i) s += (i ? "," : "") + std::to_string(dims_[i]);
        return s + "]";
    }

private:
    std::array<Index, kMaxRank> dims_{1, 1, 1, 1};
    int rank_ = 0;
};

/// Dense contiguous tensor. Storage is an Eigen column vector so whole-tensor
/// arithmetic can go through Eigen expressions via vec().
template <typename Scalar>
class Tensor {
public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Tensor() = default;
    explicit Tensor(const Shape& shape) : shape_(shape), data_(Vector::Zero(shape.numel())) {}
    Tensor(const Shape& shape, Vector data) : shape_(shape), data_(std::move(data)) {
        require(data_.size() == shape_.numel(), ErrorKind::shape,
                "data length " + std::to_string(data_.size()) + " != product of " + shape_.str());
    }
    Tensor(const Shape& shape, std::initializer_list<Scalar> values) : Tensor(shape) {
        require(static_cast<Index>(values.size()) == shape.numel(), ErrorKind::shape,
                "initializer length does not match " + shape.str());
        Index i = 0;
        for (Scalar v : values) data_[i++] = v;
    }

    static Tensor zeros(const Shape& shape) { return Tensor(shape); }
    /// Storage left unset; the caller writes every element.
    static Tensor uninitialized(const Shape& shape) { return Tensor(shape, Vector(shape.numel())); }
    static Tensor constant(const Shape& shape, Scalar value) {
        return Tensor(shape, Vector::Constant(shape.numel(), value));
    }
    static Tensor scalar(Scalar value) { return Tensor(Shape{}, Vector::Constant(1, value)); }

    const Shape& shape() const { return shape_; }
    int rank() const { return shape_.rank(); }
    Index dim(int axis) const { return shape_[axis]; }
    Index size() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    Vector& vec() { return data_; }
    const Vector& vec() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    Scalar& operator()(Index i0) { return data_[i0]; }
    Scalar& operator()(Index i0, Index i1) { return data_[i0 * shape_[1] + i1]; }
    Scalar& operator()(Index i0, Index i1, Index i2) {
        return data_[(i0 * shape_[1] + i1) * shape_[2] + i2];
    }
    Scalar& operator()(Index i0, Index i1, Index i2, Index i3) {
        return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
    }
    Scalar operator()(Index i0) const { return data_[i0]; }
    Scalar operator()(Index i0, Index i1) const { return data_[i0 * shape_[1] + i1]; }
    Scalar operator()(Index i0, Index i1, Index i2) const {
        return data_[(i0 * shape_[1] + i1) * shape_[2] + i2];
    }
    Scalar operator()(Index i0, Index i1, Index i2, Index i3) const {
        return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
    }

    Scalar item() const {
        require(size() == 1, ErrorKind::shape, "item() on tensor of shape " + shape_.str());
        return data_[0];
    }

    Tensor reshaped(const Shape& shape) const {
        require(shape.numel() == size(), ErrorKind::shape,
                "cannot reshape " + shape_.str() + " to " + shape.str());
        return Tensor(shape, data_);
    }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

    void set_zero() { data_.setZero(); }

private:
    Shape shape_;
    Vector data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace scanet
