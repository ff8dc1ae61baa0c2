#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dualprior {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

// One recorded differentiable operation. `backward` reads the output's grad
// and accumulates into the grads of `inputs` that require grad.
struct TapeNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<TapeNode> node;  // null for leaves

    std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major double tensor taking part in reverse-mode differentiation.
///
/// A Tensor is a cheap handle; copies share the same storage and graph node.
/// Use clone() for an independent leaf copy.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    // Direct write access; meant for parameter init and optimizer updates.
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool is_leaf() const;
    bool has_grad() const;
    /// Gradient buffer; empty span when nothing has been accumulated yet.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    Tensor clone() const;
    const void* id() const { return impl_.get(); }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

   private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse pass from a scalar loss. Leaf grads accumulate across calls;
/// intermediate grads are reset at the start of each call.
void backward(const Tensor& loss);

/// While a guard is alive on this thread, ops record no tape (inference).
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};
bool grad_enabled();

/// Non-finite results raise NumericError while enabled. Defaults to on in
/// builds without NDEBUG.
void set_debug_checks(bool enabled);
bool debug_checks_enabled();

}  // namespace dualprior
