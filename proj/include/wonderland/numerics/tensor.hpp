#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wonderland/core/error.hpp"

namespace wonderland {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node &self)>;

struct Node {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward;
    std::string_view op = "leaf";

    std::size_t size() const { return data->size(); }

    /// Gradient buffer, zero-filled on first use.
    float *grad_buffer() {
        if (grad.empty()) grad.assign(size(), 0.0f);
        return grad.data();
    }
};

inline bool &grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

   private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major float32 array with optional reverse-mode gradient tracking.
///
/// Tensor is a shared handle: copies alias the same node. Data is treated as
/// immutable once an op has consumed it; only leaves (parameters) are updated in place
/// by optimizers.
class Tensor {
   public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<float> values) {
        if (wonderland::numel(shape) != values.size()) {
            throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                             to_string(shape));
        }
        node_ = std::make_shared<detail::Node>();
        node_->shape = std::move(shape);
        node_->data = std::make_shared<std::vector<float>>(std::move(values));
    }

    static Tensor zeros(const Shape &shape) { return Tensor(shape, std::vector<float>(wonderland::numel(shape), 0.0f)); }
    static Tensor ones(const Shape &shape) { return Tensor(shape, std::vector<float>(wonderland::numel(shape), 1.0f)); }
    static Tensor full(const Shape &shape, float value) { return Tensor(shape, std::vector<float>(wonderland::numel(shape), value)); }
    static Tensor scalar(float value) { return Tensor(Shape{}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape &shape() const { return node().shape; }
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
        return shape()[axis];
    }
    std::size_t numel() const { return node().size(); }

    std::span<const float> data() const { return {node().data->data(), node().data->size()}; }
    /// In-place access for leaves (parameter updates, test hooks).
    std::span<float> mutable_data() { return {node().data->data(), node().data->size()}; }
    float item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
        return (*node().data)[0];
    }
    float at(std::size_t flat) const { return (*node().data)[flat]; }

    bool requires_grad() const { return node().requires_grad; }
    Tensor &set_requires_grad(bool value) {
        node().requires_grad = value;
        return *this;
    }
    bool has_grad() const { return !node().grad.empty(); }
    /// Gradient; all zeros when nothing has been accumulated.
    std::vector<float> grad() const {
        if (node().grad.empty()) return std::vector<float>(numel(), 0.0f);
        return node().grad;
    }
    void zero_grad() { node().grad.clear(); }

    /// Same data, no history.
    Tensor detach() const {
        Tensor out;
        out.node_ = std::make_shared<detail::Node>();
        out.node_->shape = shape();
        out.node_->data = node().data;
        return out;
    }
    /// Independent copy of the data, no history.
    Tensor clone() const { return Tensor(shape(), *node().data); }

    bool all_finite() const {
        for (float v : data())
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Throws NumericError naming `where` if any element is NaN/Inf.
    const Tensor &check_finite(const std::string &where) const {
        if (!all_finite()) throw NumericError("non-finite values in " + where);
        return *this;
    }

    void backward() const;

    detail::Node &node() const {
        if (!node_) throw StateError("use of undefined tensor");
        return *node_;
    }
    const detail::NodePtr &node_ptr() const { return node_; }

    /// Builds an op result; records history only when grad mode is on and a parent needs it.
    static Tensor make(Shape shape, std::vector<float> values, std::vector<Tensor> parents, std::string_view op,
                       detail::BackwardFn backward) {
        Tensor out(std::move(shape), std::move(values));
        out.attach(std::move(parents), op, std::move(backward));
        return out;
    }

    /// Result sharing `storage` (used by reshape).
    static Tensor make_shared_storage(Shape shape, std::shared_ptr<std::vector<float>> storage,
                                      std::vector<Tensor> parents, std::string_view op,
                                      detail::BackwardFn backward) {
        if (wonderland::numel(shape) != storage->size()) throw ShapeError("storage size mismatch for " + to_string(shape));
        Tensor out;
        out.node_ = std::make_shared<detail::Node>();
        out.node_->shape = std::move(shape);
        out.node_->data = std::move(storage);
        out.attach(std::move(parents), op, std::move(backward));
        return out;
    }

   private:
    void attach(std::vector<Tensor> parents, std::string_view op, detail::BackwardFn backward) {
        node_->op = op;
        if (!grad_enabled()) return;
        bool needs = false;
        for (const auto &p : parents) needs = needs || p.requires_grad();
        if (!needs) return;
        node_->requires_grad = true;
        node_->backward = std::move(backward);
        node_->parents.reserve(parents.size());
        for (auto &p : parents) node_->parents.push_back(p.node_);
    }

    detail::NodePtr node_;
};

/// Reverse-topological traversal of the recorded graph below a root.
class GradTape {
   public:
    explicit GradTape(const Tensor &root) {
        // Iterative post-order DFS; order_ ends up topologically sorted (parents first).
        std::unordered_set<const detail::Node *> visited;
        std::vector<std::pair<detail::Node *, std::size_t>> stack;
        detail::Node *start = &root.node();
        if (!start->requires_grad) return;
        stack.emplace_back(start, 0);
        visited.insert(start);
        while (!stack.empty()) {
            auto &[node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node *parent = node->parents[next++].get();
                if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order_.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::span<detail::Node *const> order() const { return order_; }
    bool empty() const { return order_.empty(); }

    /// Runs every backward closure once, root first.
    void run() {
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            detail::Node *node = *it;
            if (node->backward && !node->grad.empty()) node->backward(*node);
        }
    }

   private:
    std::vector<detail::Node *> order_;
};

inline void Tensor::backward() const {
    if (numel() != 1) throw ContractError("backward() requires a scalar loss, got shape " + to_string(shape()));
    GradTape tape(*this);
    if (tape.empty()) return;
    node().grad_buffer()[0] += 1.0f;
    tape.run();
}

/// Seeded generator with platform-independent uniform and normal draws.
class Generator {
   public:
    explicit Generator(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return n == 0 ? 0 : static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }
    /// Derives an independent stream.
    Generator fork() { return Generator(next_u64()); }

   private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Tensor randn(const Shape &shape, Generator &gen, float stddev = 1.0f) {
    std::vector<float> v(numel(shape));
    for (auto &x : v) x = static_cast<float>(gen.normal()) * stddev;
    return Tensor(shape, std::move(v));
}

inline Tensor rand_uniform(const Shape &shape, Generator &gen, float lo = 0.0f, float hi = 1.0f) {
    std::vector<float> v(numel(shape));
    for (auto &x : v) x = static_cast<float>(gen.uniform(lo, hi));
    return Tensor(shape, std::move(v));
}

}  // namespace wonderland
