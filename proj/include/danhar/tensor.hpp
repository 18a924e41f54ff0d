#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "danhar/errors.hpp"

namespace danhar {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major tensor of doubles with optional gradient buffer.
// Copying a Tensor copies the handle; the storage is shared.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    int64_t dim(size_t axis) const;

    std::vector<double>& values();
    const std::vector<double>& values() const;

    bool requires_grad() const;
    void set_requires_grad(bool requires_grad);

    // Gradient buffer, allocated zero-filled on first access.
    bool has_grad() const;
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    // Deep copy of values (and requires_grad flag); grad is not copied.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        bool requires_grad = false;
        std::unique_ptr<std::vector<double>> grad;
    };
    std::shared_ptr<Impl> impl_;

    Impl& impl();
    const Impl& impl() const;
};

// Throws NumericError if any value is NaN or infinite.
void check_finite(const Tensor& t, const char* op_name);

// Record of executed primitives; replaying backward visits them in exact
// reverse execution order. Consumed by exactly one backward() call.
class Tape {
  public:
    void record(std::function<void()> backward_fn);
    void backward(const Tensor& loss);
    bool consumed() const { return consumed_; }
    size_t size() const { return entries_.size(); }

  private:
    std::vector<std::function<void()>> entries_;
    bool consumed_ = false;
};

Tape* active_tape();

// RAII scope that makes `tape` the active recording target on this thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* previous_;
};

}  // namespace danhar
