#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmdiff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class TapeError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct TensorStorage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass touches it
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

/// Dense row-major float64 tensor with shared storage.
///
/// Copies alias the same storage; values produced by Graph ops are never
/// mutated afterwards. Parameters are the exception: the optimizer writes
/// through mutable_data().
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
    std::size_t numel() const { return s_->data.size(); }

    std::span<const double> data() const { return s_->data; }
    std::span<double> mutable_data() { return s_->data; }
    double operator[](std::size_t i) const { return s_->data[i]; }
    double item() const;

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool on) { s_->requires_grad = on; }
    bool has_grad() const { return !s_->grad.empty(); }
    std::span<const double> grad() const { return s_->grad; }
    std::span<double> mutable_grad() {
        s_->ensure_grad();
        return s_->grad;
    }
    void zero_grad() {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
    }

    /// Deep copy that does not participate in any graph.
    Tensor clone(bool requires_grad = false) const;

    const std::shared_ptr<TensorStorage>& storage() const { return s_; }

   private:
    explicit Tensor(std::shared_ptr<TensorStorage> s) : s_(std::move(s)) {}
    std::shared_ptr<TensorStorage> s_;

    friend class Graph;
};

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// Reverse-mode tape. Ops evaluate eagerly; a node is recorded whenever any
/// input requires a gradient, so the node list is topologically ordered by
/// construction. One Graph per thread; instances are not shareable.
class Graph {
   public:
    using BackwardFn = std::function<void(const std::vector<std::shared_ptr<TensorStorage>>& inputs,
                                          const TensorStorage& output)>;

    struct Node {
        std::string name;
        std::vector<std::shared_ptr<TensorStorage>> inputs;
        std::shared_ptr<TensorStorage> output;
        BackwardFn backward;
    };

    /// RAII label prefix applied to node names; error messages use it.
    class Scope {
       public:
        Scope(Graph& g, const std::string& label);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

       private:
        Graph& g_;
        std::size_t prev_len_;
    };
    Scope scope(const std::string& label) { return Scope(*this, label); }

    // [M,K] x [K,N]
    Tensor matmul(const Tensor& a, const Tensor& b);
    // [B,M,K] x [B,K,N], each side optionally transposed in its last two axes
    Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
    // x [N,C,H,W], w [O,C,kh,kw], bias [O] or undefined
    Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt = {});

    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double s);
    // b broadcast onto a: same rank, every dim of b equal to a's or 1
    Tensor add_broadcast(const Tensor& a, const Tensor& b);

    Tensor softmax(const Tensor& x);  // over the last axis
    // x [N,C,...]; gamma/beta [C]
    Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-5);
    Tensor silu(const Tensor& x);

    Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
    Tensor reshape(const Tensor& x, Shape shape);
    Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
    Tensor upsample_nearest2x(const Tensor& x);  // [N,C,H,W] -> [N,C,2H,2W]

    Tensor mse(const Tensor& a, const Tensor& b);  // mean((a-b)^2), scalar
    Tensor sum(const Tensor& x);
    Tensor mean(const Tensor& x);

    /// Records an op computed outside the built-in set. The caller supplies the
    /// forward value and a rule that accumulates into input grads.
    Tensor custom(const std::string& op, std::vector<Tensor> inputs, Tensor value, BackwardFn backward);

    /// Populates .grad on every requires-grad tensor reachable from loss.
    /// Leaf grads accumulate; call zero_grad on parameters between steps.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

    /// Toggle the per-op finiteness scan (on by default).
    void set_check_finite(bool on) { check_finite_ = on; }

   private:
    std::string node_name(const std::string& op) const;
    [[noreturn]] void shape_fail(const std::string& op, const std::string& detail) const;
    Tensor finish(const std::string& op, std::vector<Tensor> inputs, std::shared_ptr<TensorStorage> out,
                  BackwardFn backward);

    std::vector<Node> nodes_;
    std::string label_;
    bool check_finite_ = true;
};

}  // namespace pmdiff
