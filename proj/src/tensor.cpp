#include "danhar/tensor.hpp"

#include <cmath>
#include <sstream>

namespace danhar {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out << "x";
        out << shape[i];
    }
    out << "]";
    return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), value);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor::Impl& Tensor::impl() {
    if (!impl_) throw ShapeError("use of an undefined tensor");
    return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw ShapeError("use of an undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

int64_t Tensor::numel() const { return static_cast<int64_t>(impl().data.size()); }

int64_t Tensor::dim(size_t axis) const {
    const Shape& s = impl().shape;
    if (axis >= s.size()) throw ShapeError("axis out of range for shape " + shape_to_string(s));
    return s[axis];
}

std::vector<double>& Tensor::values() { return impl().data; }
const std::vector<double>& Tensor::values() const { return impl().data; }

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool requires_grad) { impl().requires_grad = requires_grad; }

bool Tensor::has_grad() const { return impl().grad != nullptr; }

std::vector<double>& Tensor::grad() {
    Impl& im = impl();
    if (!im.grad) im.grad = std::make_unique<std::vector<double>>(im.data.size(), 0.0);
    return *im.grad;
}

const std::vector<double>& Tensor::grad() const {
    const Impl& im = impl();
    if (!im.grad) throw ShapeError("tensor has no gradient buffer");
    return *im.grad;
}

void Tensor::zero_grad() { impl().grad.reset(); }

Tensor Tensor::clone() const {
    const Impl& im = impl();
    return from_data(im.shape, im.data, im.requires_grad);
}

void check_finite(const Tensor& t, const char* op_name) {
    const std::vector<double>& data = t.values();
    for (size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw NumericError(std::string(op_name) + " produced non-finite value " +
                               std::to_string(data[i]) + " at flat index " + std::to_string(i) +
                               " (shape " + shape_to_string(t.shape()) + ")");
        }
    }
}

void Tape::record(std::function<void()> backward_fn) {
    if (consumed_) throw NumericError("recording onto a consumed tape");
    entries_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw NumericError("backward called twice on the same tape");
    if (loss.numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " +
                         shape_to_string(loss.shape()));
    }
    consumed_ = true;
    const_cast<Tensor&>(loss).grad()[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

}  // namespace danhar
