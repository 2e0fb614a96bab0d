#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mclas {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

struct TensorNode {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(data->size(), 0.0);
        }
    }
};

// Handle to a node of the dynamic autodiff graph. Copies share the node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    // Leaf that aliases external storage. Used to bind parameters into a graph
    // without copying; the leaf owns a private gradient buffer.
    static Tensor alias(Shape shape, std::shared_ptr<std::vector<double>> storage,
                        bool requires_grad);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data->size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return *node_->data; }
    std::span<double> mutable_values() { return *node_->data; }
    std::span<const double> grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    bool requires_grad() const { return node_->requires_grad; }

    double item() const;
    double at(std::size_t i) const { return (*node_->data)[i]; }
    double at(std::size_t r, std::size_t c) const { return (*node_->data)[r * cols() + c]; }

    // Reverse-mode sweep from this scalar; seeds d(self)/d(self) = 1.
    void backward();
    void zero_grad();

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<Tensor> parents,
                              std::function<void(TensorNode&)> backward_fn);

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

// Disables graph recording on the current thread for its lifetime.
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

enum class Reduction { Mean, Sum };

// Dense ops. Matrices are rank-2 row-major; vectors rank-1.
Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// Adds a rank-1 bias to every row of a matrix.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
// Entries (i, j) with j > i + offset are set to -inf (zero gradient).
Tensor causal_mask(const Tensor& scores, std::size_t offset);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor row(const Tensor& x, std::size_t index);
Tensor sum(const Tensor& x);
Tensor add_scalars(const std::vector<Tensor>& parts);

// Negative log-likelihood of `targets` under row-wise softmax of `logits`.
// `keep` selects positions (1 = counted); empty means every position.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> keep = {},
                     Reduction reduction = Reduction::Mean);

// Plain (graph-free) helpers used by decoding.
std::vector<double> log_softmax_row(std::span<const double> logits);

}  // namespace mclas
