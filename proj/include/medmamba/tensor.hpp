#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace medmamba {

// Allocator that skips value-initialization on resize; buffers that every
// op fully overwrites need no zero pass.
template <typename T>
struct uninit_allocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = uninit_allocator<U>;
    };
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;  // default-init: no zeroing
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. The buffer is shared so reshapes are free;
// tensors are treated as immutable once filled.
template <typename R>
class Tensor {
public:
    using Buffer = std::vector<R, uninit_allocator<R>>;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        const int64_t n = check_size(shape_);
        buf_ = std::make_shared<Buffer>();
        buf_->resize(n);
        std::fill(buf_->begin(), buf_->end(), R(0));
    }

    Tensor(Shape shape, std::vector<R> values) : shape_(std::move(shape)) {
        if (static_cast<int64_t>(values.size()) != shape_numel(shape_))
            throw std::invalid_argument("tensor: data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape_));
        buf_ = std::make_shared<Buffer>(values.begin(), values.end());
    }

    // Contents are indeterminate; for outputs every element of which the
    // producing op overwrites.
    static Tensor uninit(Shape shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        const int64_t n = check_size(t.shape_);
        t.buf_ = std::make_shared<Buffer>();
        t.buf_->resize(n);
        return t;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, R v) {
        Tensor t(std::move(shape));
        std::fill(t.buf_->begin(), t.buf_->end(), v);
        return t;
    }

    static Tensor scalar(R v) { return Tensor({}, std::vector<R>{v}); }

    static Tensor from(Shape shape, std::initializer_list<R> values) {
        return Tensor(std::move(shape), std::vector<R>(values));
    }

    const Shape& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }
    bool defined() const { return static_cast<bool>(buf_); }

    R* data() { return buf_->data(); }
    const R* data() const { return buf_->data(); }
    R& operator[](int64_t i) { return (*buf_)[i]; }
    const R& operator[](int64_t i) const { return (*buf_)[i]; }

    R& at2(int64_t i, int64_t j) { return (*buf_)[i * shape_[1] + j]; }
    const R& at2(int64_t i, int64_t j) const { return (*buf_)[i * shape_[1] + j]; }
    R& at3(int64_t i, int64_t j, int64_t k) {
        return (*buf_)[(i * shape_[1] + j) * shape_[2] + k];
    }
    const R& at3(int64_t i, int64_t j, int64_t k) const {
        return (*buf_)[(i * shape_[1] + j) * shape_[2] + k];
    }

    // Same buffer, new shape; numel must match.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw std::invalid_argument("reshape: numel mismatch " + shape_str(shape_) + " -> " +
                                        shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.buf_ = buf_;
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.buf_ = std::make_shared<Buffer>(*buf_);
        return t;
    }

    template <typename R2>
    Tensor<R2> cast() const {
        Tensor<R2> t{shape_};
        for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<R2>((*buf_)[i]);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    static int64_t check_size(const Shape& s) {
        for (int64_t d : s)
            if (d < 0) throw std::invalid_argument("tensor: negative extent in " + shape_str(s));
        return shape_numel(s);
    }

    Shape shape_;
    std::shared_ptr<Buffer> buf_;
};

template <typename R>
inline bool all_finite(const Tensor<R>& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

template <typename R>
inline R max_abs_diff(const Tensor<R>& a, const Tensor<R>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    R m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace medmamba
