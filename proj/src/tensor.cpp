#include "mclas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "mclas/kernels.hpp"

namespace mclas {

namespace {

thread_local bool t_grad_enabled = true;

// Finite stand-in for -inf so masked scores stay finite.
constexpr double kMasked = -1e300;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got shape " + shape_str(t.shape()));
    }
}

TensorNode& parent(TensorNode& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::make_shared<std::vector<double>>(std::move(values));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::alias(Shape shape, std::shared_ptr<std::vector<double>> storage,
                     bool requires_grad) {
    if (shape_numel(shape) != storage->size()) {
        throw ShapeError("alias shape " + shape_str(shape) + " does not match storage of " +
                         std::to_string(storage->size()));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(storage);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from(Shape{}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (rank() != 2) {
        throw ShapeError("rows() on non-matrix " + shape_str(shape()));
    }
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) {
        throw ShapeError("cols() on non-matrix " + shape_str(shape()));
    }
    return node_->shape[1];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return (*node_->data)[0];
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(TensorNode&)> backward_fn) {
    Tensor out = from(std::move(shape), std::move(values), false);
    if (!t_grad_enabled) {
        return out;
    }
    bool any = false;
    for (const auto& p : parents) {
        any = any || p.requires_grad();
    }
    if (!any) {
        return out;
    }
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) {
        out.node_->parents.push_back(p.node_);
    }
    out.node_->backward_fn = std::move(backward_fn);
    return out;
}

void Tensor::backward() {
    if (numel() != 1) {
        throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
    }
    if (!requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    kernels::gemm_nn(a.values(), b.values(), out, m, k, n);
    return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
        TensorNode& pa = parent(self, 0);
        TensorNode& pb = parent(self, 1);
        if (pa.requires_grad) {
            pa.ensure_grad();
            kernels::gemm_nt(self.grad, *pb.data, pa.grad, m, n, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            kernels::gemm_tn(*pa.data, self.grad, pb.grad, m, k, n);
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + "^T");
    }
    std::vector<double> out(m * n, 0.0);
    kernels::gemm_nt(a.values(), b.values(), out, m, k, n);
    return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
        TensorNode& pa = parent(self, 0);
        TensorNode& pb = parent(self, 1);
        if (pa.requires_grad) {
            pa.ensure_grad();
            kernels::gemm_nn(self.grad, *pb.data, pa.grad, m, n, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            kernels::gemm_tn(self.grad, *pa.data, pb.grad, m, n, k);
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(a.numel());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            TensorNode& pn = parent(self, p);
            if (!pn.requires_grad) {
                continue;
            }
            pn.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                pn.grad[i] += self.grad[i];
            }
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_bias");
    require_rank(bias, 1, "add_bias");
    const std::size_t m = x.rows(), n = x.cols();
    if (bias.dim(0) != n) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                         shape_str(x.shape()));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    const auto bv = bias.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += bv[j];
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [m, n](TensorNode& self) {
        TensorNode& px = parent(self, 0);
        TensorNode& pb = parent(self, 1);
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                px.grad[i] += self.grad[i];
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    pb.grad[j] += self.grad[i * n + j];
                }
            }
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) {
        v *= factor;
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](TensorNode& self) {
        TensorNode& px = parent(self, 0);
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            px.grad[i] += factor * self.grad[i];
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) {
        v = v > 0.0 ? v : 0.0;
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [](TensorNode& self) {
        TensorNode& px = parent(self, 0);
        px.ensure_grad();
        const auto& xv = *px.data;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (xv[i] > 0.0) {
                px.grad[i] += self.grad[i];
            }
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    }
    const auto& shape = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= shape[i];
    }
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        inner *= shape[i];
    }
    const std::size_t len = shape[axis];
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < len; ++i) {
                mx = std::max(mx, xv[base + i * inner]);
            }
            double total = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                const double e = std::exp(xv[base + i * inner] - mx);
                out[base + i * inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < len; ++i) {
                out[base + i * inner] /= total;
            }
        }
    }
    return Tensor::make_result(shape, std::move(out), {x}, [outer, inner, len](TensorNode& self) {
        TensorNode& px = parent(self, 0);
        px.ensure_grad();
        const auto& y = *self.data;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    dot += self.grad[base + i * inner] * y[base + i * inner];
                }
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t idx = base + i * inner;
                    px.grad[idx] += y[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor causal_mask(const Tensor& scores, std::size_t offset) {
    require_rank(scores, 2, "causal_mask");
    const std::size_t m = scores.rows(), n = scores.cols();
    std::vector<double> out(scores.values().begin(), scores.values().end());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + offset + 1; j < n; ++j) {
            out[i * n + j] = kMasked;
        }
    }
    return Tensor::make_result(scores.shape(), std::move(out), {scores},
                               [m, n, offset](TensorNode& self) {
                                   TensorNode& px = parent(self, 0);
                                   px.ensure_grad();
                                   for (std::size_t i = 0; i < m; ++i) {
                                       const std::size_t visible = std::min(n, i + offset + 1);
                                       for (std::size_t j = 0; j < visible; ++j) {
                                           px.grad[i * n + j] += self.grad[i * n + j];
                                       }
                                   }
                               });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0) {
        throw ShapeError("layer_norm: scalar input");
    }
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " not congruent with " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    const auto xv = x.values();
    const auto g = gain.values();
    const auto b = bias.values();
    std::vector<double> out(xv.size());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += xr[j];
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (xr[j] - mean) * (xr[j] - mean);
        }
        var /= static_cast<double>(d);
        inv[r] = var + eps > 0.0 ? 1.0 / std::sqrt(var + eps) : 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mean) * inv[r];
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gain, bias},
        [rows, d, xhat = std::move(xhat), inv = std::move(inv)](TensorNode& self) {
            TensorNode& px = parent(self, 0);
            TensorNode& pg = parent(self, 1);
            TensorNode& pb = parent(self, 2);
            const auto& g = *pg.data;
            if (pg.requires_grad) {
                pg.ensure_grad();
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
            }
            if (px.requires_grad) {
                px.ensure_grad();
            }
            const double dd = static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* dy = self.grad.data() + r * d;
                const double* h = xhat.data() + r * d;
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (pg.requires_grad) {
                        pg.grad[j] += dy[j] * h[j];
                    }
                    if (pb.requires_grad) {
                        pb.grad[j] += dy[j];
                    }
                    const double dh = dy[j] * g[j];
                    sum_dh += dh;
                    sum_dh_h += dh * h[j];
                }
                if (px.requires_grad) {
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = dy[j] * g[j];
                        px.grad[r * d + j] += inv[r] / dd * (dd * dh - sum_dh - h[j] * sum_dh_h);
                    }
                }
            }
        });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    require_rank(table, 2, "embedding");
    const std::size_t vocab = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    const auto tv = table.values();
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
            throw IndexError("embedding: token id " + std::to_string(idx[i]) +
                             " outside vocabulary of " + std::to_string(vocab));
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
    }
    const std::size_t count = idx.size();
    return Tensor::make_result({count, d}, std::move(out), {table},
                               [d, idx = std::move(idx)](TensorNode& self) {
                                   TensorNode& pt = parent(self, 0);
                                   pt.ensure_grad();
                                   for (std::size_t i = 0; i < idx.size(); ++i) {
                                       const std::size_t base = static_cast<std::size_t>(idx[i]) * d;
                                       for (std::size_t j = 0; j < d; ++j) {
                                           pt.grad[base + j] += self.grad[i * d + j];
                                       }
                                   }
                               });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
    if (p <= 0.0) {
        return x;
    }
    if (p >= 1.0) {
        throw std::invalid_argument("dropout: probability must be < 1");
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) {
        m = unif(rng) < p ? 0.0 : keep_scale;
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= mask[i];
    }
    return Tensor::make_result(x.shape(), std::move(out), {x},
                               [mask = std::move(mask)](TensorNode& self) {
                                   TensorNode& px = parent(self, 0);
                                   px.ensure_grad();
                                   for (std::size_t i = 0; i < mask.size(); ++i) {
                                       px.grad[i] += mask[i] * self.grad[i];
                                   }
                               });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank(x, 2, "slice_cols");
    const std::size_t m = x.rows(), n = x.cols();
    if (begin + count > n) {
        throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_str(x.shape()));
    }
    std::vector<double> out(m * count);
    const auto xv = x.values();
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(xv.data() + i * n + begin, count, out.data() + i * count);
    }
    return Tensor::make_result({m, count}, std::move(out), {x}, [m, n, begin, count](TensorNode& self) {
        TensorNode& px = parent(self, 0);
        px.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                px.grad[i * n + begin + j] += self.grad[i * count + j];
            }
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no inputs");
    }
    const std::size_t m = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t n = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row counts differ " + shape_str(parts.front().shape()) +
                             " vs " + shape_str(p.shape()));
        }
        widths.push_back(p.cols());
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto pv = p.values();
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(pv.data() + i * w, w, out.data() + i * n + offset);
        }
        offset += w;
    }
    return Tensor::make_result({m, n}, std::move(out), parts,
                               [m, n, widths = std::move(widths)](TensorNode& self) {
                                   std::size_t off = 0;
                                   for (std::size_t p = 0; p < widths.size(); ++p) {
                                       TensorNode& pn = parent(self, p);
                                       const std::size_t w = widths[p];
                                       if (pn.requires_grad) {
                                           pn.ensure_grad();
                                           for (std::size_t i = 0; i < m; ++i) {
                                               for (std::size_t j = 0; j < w; ++j) {
                                                   pn.grad[i * w + j] += self.grad[i * n + off + j];
                                               }
                                           }
                                       }
                                       off += w;
                                   }
                               });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_rows");
    require_rank(b, 2, "concat_rows");
    if (a.cols() != b.cols()) {
        throw ShapeError("concat_rows: column counts differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out;
    out.reserve(a.numel() + b.numel());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    const std::size_t split = a.numel();
    return Tensor::make_result({a.rows() + b.rows(), a.cols()}, std::move(out), {a, b},
                               [split](TensorNode& self) {
                                   TensorNode& pa = parent(self, 0);
                                   TensorNode& pb = parent(self, 1);
                                   if (pa.requires_grad) {
                                       pa.ensure_grad();
                                       for (std::size_t i = 0; i < split; ++i) {
                                           pa.grad[i] += self.grad[i];
                                       }
                                   }
                                   if (pb.requires_grad) {
                                       pb.ensure_grad();
                                       for (std::size_t i = split; i < self.grad.size(); ++i) {
                                           pb.grad[i - split] += self.grad[i];
                                       }
                                   }
                               });
}

Tensor row(const Tensor& x, std::size_t index) {
    require_rank(x, 2, "row");
    const std::size_t n = x.cols();
    if (index >= x.rows()) {
        throw IndexError("row: index " + std::to_string(index) + " out of " + shape_str(x.shape()));
    }
    std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(index * n),
                            x.values().begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
    return Tensor::make_result({n}, std::move(out), {x}, [index, n](TensorNode& self) {
        TensorNode& px = parent(self, 0);
        px.ensure_grad();
        for (std::size_t j = 0; j < n; ++j) {
            px.grad[index * n + j] += self.grad[j];
        }
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) {
        total += v;
    }
    return Tensor::make_result({}, {total}, {x}, [](TensorNode& self) {
        TensorNode& px = parent(self, 0);
        px.ensure_grad();
        for (auto& g : px.grad) {
            g += self.grad[0];
        }
    });
}

Tensor add_scalars(const std::vector<Tensor>& parts) {
    double total = 0.0;
    for (const auto& p : parts) {
        total += p.item();
    }
    return Tensor::make_result({}, {total}, parts, [](TensorNode& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad[0] += self.grad[0];
            }
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> keep, Reduction reduction) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t t_len = logits.rows(), vocab = logits.cols();
    if (targets.size() != t_len) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()) + " logits");
    }
    if (!keep.empty() && keep.size() != t_len) {
        throw ShapeError("cross_entropy: mask length " + std::to_string(keep.size()) +
                         " does not match " + std::to_string(t_len) + " positions");
    }
    const auto lv = logits.values();
    std::vector<double> probs(lv.size());
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> used(t_len, 1);
    if (!keep.empty()) {
        std::copy(keep.begin(), keep.end(), used.begin());
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < t_len; ++t) {
        if (!used[t]) {
            continue;
        }
        if (tgt[t] < 0 || static_cast<std::size_t>(tgt[t]) >= vocab) {
            throw IndexError("cross_entropy: target id " + std::to_string(tgt[t]) +
                             " at position " + std::to_string(t) + " outside [0, " +
                             std::to_string(vocab) + ")");
        }
        const double* row_ptr = lv.data() + t * vocab;
        const double mx = *std::max_element(row_ptr, row_ptr + vocab);
        double z = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
            const double e = std::exp(row_ptr[v] - mx);
            probs[t * vocab + v] = e;
            z += e;
        }
        for (std::size_t v = 0; v < vocab; ++v) {
            probs[t * vocab + v] /= z;
        }
        total += (mx + std::log(z)) - row_ptr[static_cast<std::size_t>(tgt[t])];
        ++count;
    }
    double factor = 1.0;
    if (reduction == Reduction::Mean) {
        factor = count ? 1.0 / static_cast<double>(count) : 0.0;
    }
    return Tensor::make_result(
        {}, {total * factor}, {logits},
        [t_len, vocab, factor, probs = std::move(probs), tgt = std::move(tgt),
         used = std::move(used)](TensorNode& self) {
            TensorNode& pl = parent(self, 0);
            pl.ensure_grad();
            const double g = self.grad[0] * factor;
            for (std::size_t t = 0; t < t_len; ++t) {
                if (!used[t]) {
                    continue;
                }
                for (std::size_t v = 0; v < vocab; ++v) {
                    pl.grad[t * vocab + v] += g * probs[t * vocab + v];
                }
                pl.grad[t * vocab + static_cast<std::size_t>(tgt[t])] -= g;
            }
        });
}

std::vector<double> log_softmax_row(std::span<const double> logits) {
    std::vector<double> out(logits.begin(), logits.end());
    if (out.empty()) {
        return out;
    }
    const double mx = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double v : out) {
        z += std::exp(v - mx);
    }
    const double lse = mx + std::log(z);
    for (auto& v : out) {
        v -= lse;
    }
    return out;
}

}  // namespace mclas
