#include "dualprior/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_set>

#include "dualprior/error.hpp"

namespace dualprior {

namespace {
#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif
}  // namespace

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks_enabled() { return g_debug_checks; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::vector<double>& detail::TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) throw ShapeError("axis out of range for " + shape_str(impl_->shape));
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!is_leaf()) throw NumericError("requires_grad can only be changed on leaf tensors");
    impl_->requires_grad = value;
}

bool Tensor::is_leaf() const { return impl_->node == nullptr; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->grad_buffer(); }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const { return from_data(impl_->shape, impl_->data, impl_->requires_grad); }

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Post-order DFS gives a topological order with inputs before outputs.
    using Impl = detail::TensorImpl;
    std::vector<Impl*> order;
    std::unordered_set<Impl*> visited;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    Impl* root = loss.impl().get();
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        if (impl->node && next < impl->node->inputs.size()) {
            Impl* child = impl->node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(impl);
        stack.pop_back();
    }

    for (Impl* impl : order) {
        if (impl->node) impl->grad.assign(impl->data.size(), 0.0);
    }
    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Impl* impl = *it;
        if (impl->node) impl->node->backward(*impl);
    }
}

}  // namespace dualprior
