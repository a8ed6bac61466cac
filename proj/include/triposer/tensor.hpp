// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <vector>

namespace triposer {

// 64-byte-aligned allocator. Keeping every tensor buffer identically aligned
// pins the BLAS kernel entry paths, which is what makes repeated runs of the
// same computation bitwise identical regardless of heap history.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        void* p = ::operator new(n * sizeof(T), std::align_val_t{alignment});
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) noexcept {
        ::operator delete(p, std::align_val_t{alignment});
    }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

// Dense row-major tensor of doubles. All model math runs in double; float32
// appears only at file boundaries (triplane payloads, checkpoints).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(compute_numel(shape_)), 0.0);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    int dim() const { return static_cast<int>(shape_.size()); }
    int size(int d) const { return shape_[static_cast<size_t>(d)]; }
    const std::vector<int>& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int i, int j) {
        assert(dim() == 2);
        return data_[static_cast<size_t>(i) * shape_[1] + j];
    }
    double at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }

    double& at(int i, int j, int k) {
        assert(dim() == 3);
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const { return const_cast<Tensor*>(this)->at(i, j, k); }

    double& at(int i, int j, int k, int l) {
        assert(dim() == 4);
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(int i, int j, int k, int l) const {
        return const_cast<Tensor*>(this)->at(i, j, k, l);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor& operator+=(const Tensor& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(double s) {
        for (double& x : data_) x *= s;
        return *this;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : data_) m = std::max(m, std::abs(x));
        return m;
    }

    static int64_t compute_numel(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int s : shape) {
            assert(s >= 0);
            n *= s;
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<double, AlignedAllocator<double>> data_;
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(Tensor a, double s) { return a *= s; }
inline Tensor operator*(double s, Tensor a) { return a *= s; }

inline double dot(const Tensor& a, const Tensor& b) {
    assert(a.same_shape(b));
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

inline double mse(const Tensor& a, const Tensor& b) {
    assert(a.same_shape(b));
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

}  // namespace triposer
